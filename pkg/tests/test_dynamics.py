import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_presentation
from tropdyn import automata as au
from tropdyn import dynamics as dyn
from tropdyn import extensions as ex
from tropdyn import tropical as tr
from tropdyn.errors import ContractError, InputError

LAMP = au.builtin("lamplighter")
GRIG = au.builtin("grigorchuk")
ID2 = au.builtin("identity2")


def lattice_initials(a, word, symbols):
    x0 = np.asarray(a.alphabet, float)[symbols]
    y0 = np.asarray(a.states, float)[word]
    return x0, y0


def random_mealy(rng, name="random"):
    n_q = int(rng.integers(1, 4))
    n_s = int(rng.integers(2, 4))
    psi = rng.integers(0, n_s, size=(n_q, n_s)).tolist()
    phi = rng.integers(0, n_q, size=(n_q, n_s)).tolist()
    return au.AutomatonSpec(
        tuple(3.0 * k for k in range(n_s)), tuple(3.0 * k for k in range(n_q)), 0, 0, psi, phi, name
    )


def pl_vs_dequantized(psi, phi, t, x0, y0, I, J):
    g_pl = dyn.run(psi, phi, None, x0, y0, I, J, "pl")
    g_dq = dyn.run(psi, phi, t, x0, y0, I, J, "dequantized")
    st_ = tr.pair_stats(psi, phi)
    gamma = max(psi.arity, phi.arity) - 2
    return dyn.check_comparison(g_pl, g_dq, st_.components, st_.lipschitz, gamma, 1.0, 1, t)


class TestRun:
    def test_lamplighter_plateau_reproduces_automaton(self, rng):
        ext = ex.build_stable_extension(LAMP, 1.0)
        I, J = 8, 6
        symbols = rng.integers(0, 2, size=I)
        word = rng.integers(0, 2, size=J)
        x0, y0 = lattice_initials(LAMP, word, symbols)
        g = dyn.run(ext.psi_pres, ext.phi_pres, None, x0, y0, I, J, "pl")
        alphabet = np.asarray(LAMP.alphabet)
        for j in range(J + 1):
            expected = au.act(LAMP, word[:j].tolist(), symbols.tolist())
            np.testing.assert_array_equal(g.x[:, j], alphabet[expected])

    def test_dequantized_and_rational_log_identical(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        x0, y0 = rng.uniform(-2, 2, 10), rng.uniform(-2, 2, 10)
        a = dyn.run(psi, phi, 10.0, x0, y0, 10, 10, "dequantized")
        b = dyn.run(psi, phi, 10.0, x0, y0, 10, 10, "rational-log")
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_shapes_and_residual(self, rng):
        psi = random_presentation(rng, arity=3)
        phi = random_presentation(rng, arity=4)
        I, J = 6, 5
        need = dyn.required_length(psi, phi, I, J)
        assert need == I + 2 * J
        g = dyn.run(psi, phi, 100.0, rng.uniform(-1, 1, need), rng.uniform(-1, 1, J), I, J, "rational-log")
        assert g.x.shape == (I, J + 1) and g.y.shape == (I + 1, J)
        assert g.extents == (need,) + tuple(I + 2 * (J - j - 1) for j in range(J))
        assert dyn.recursion_residual(g, psi, phi) <= 1e-9

    def test_insufficient_initials(self, rng):
        psi = random_presentation(rng, arity=3)
        phi = random_presentation(rng, arity=2)
        with pytest.raises(InputError, match="needs I \\+ gamma\\*J = 9"):
            dyn.run(psi, phi, None, np.zeros(8), np.zeros(4), 5, 4, "pl")

    def test_bad_mode_and_missing_t(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        with pytest.raises(InputError):
            dyn.run(psi, phi, None, [0.0], [0.0], 1, 1, "linear")
        with pytest.raises(InputError):
            dyn.run(psi, phi, None, [0.0], [0.0], 1, 1, "dequantized")

    def test_pl_vs_dequantized_mealy(self):
        ext = ex.build_stable_extension(LAMP, 1.0)
        rng = np.random.default_rng(5)
        x0 = rng.uniform(-1, 4, 30)
        y0 = rng.uniform(-1, 4, 30)
        assert pl_vs_dequantized(ext.psi_pres, ext.phi_pres, 100.0, x0, y0, 30, 30).passed

    def test_grid_csv_header(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        g = dyn.run(psi, phi, None, [0.0, 1.0], [0.5, 0.25], 2, 2, "pl")
        rows = list(csv.reader(io.StringIO(dyn.grid_csv(g))))
        assert rows[0] == ["i", "j", "x", "y"]
        # (I+1)(J+1) points minus the corner where both entries are missing
        assert len(rows) == 1 + 3 * 3 - 1
        assert float(rows[1][2]) == 0.0 and float(rows[1][3]) == 0.5


class TestBoundP:
    def test_values(self):
        assert dyn.bound_P(3, 2) == 15
        assert dyn.bound_P(0, 0) == 1
        for i in range(10):
            assert dyn.bound_P(i, 1) == i + 1

    def test_recurrence(self, rng):
        for _ in range(100):
            i, c = int(rng.integers(0, 30)), float(rng.uniform(0, 3))
            lhs, rhs = c * dyn.bound_P(i, c) + 1, dyn.bound_P(i + 1, c)
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_overflow(self):
        assert dyn.bound_P(5000, 10.0) == math.inf

    def test_bad(self):
        with pytest.raises(InputError):
            dyn.bound_P(-1, 1.0)


class TestInitialRate:
    def test_identical(self):
        assert dyn.initial_rate([1, 2], [3], [1, 2], [3]) == 1

    def test_double(self):
        assert dyn.initial_rate([2, 4], [3], [1, 2], [3]) == 2

    def test_entrywise(self):
        assert dyn.initial_rate([1, 8], [1], [2, 2], [1]) == 4

    def test_nonpositive(self):
        with pytest.raises(InputError):
            dyn.initial_rate([0, 1], [1], [1, 1], [1])

    def test_log_rate_matches(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        z1, z2 = rng.uniform(0.5, 2, 4), rng.uniform(0.5, 2, 4)
        w1, w2 = rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 3)
        t = 10.0
        g1 = dyn.run(psi, phi, t, np.log10(z1), np.log10(w1), 4, 3, "rational-log")
        g2 = dyn.run(psi, phi, t, np.log10(z2), np.log10(w2), 4, 3, "rational-log")
        assert t ** dyn.log_initial_rate(g1, g2) == pytest.approx(dyn.initial_rate(z1, w1, z2, w2), rel=1e-12)


class TestComparison:
    def test_scaled_presentation(self, rng):
        for _ in range(5):
            psi, phi = random_presentation(rng), random_presentation(rng)
            x0, y0 = rng.uniform(-2, 2, 30), rng.uniform(-2, 2, 30)
            t = 10.0
            g1 = dyn.run(psi, phi, t, x0, y0, 30, 30, "rational-log")
            g2 = dyn.run(tr.scale(psi, 3), tr.scale(phi, 3), t, x0, y0, 30, 30, "rational-log")
            s = tr.pair_stats(psi, phi, tr.scale(psi, 3), tr.scale(phi, 3))
            assert dyn.check_comparison(g1, g2, s.components, s.lipschitz, 0, 1.0, 2).passed

    def test_same_grid(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        g = dyn.run(psi, phi, 10.0, rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5), 5, 5, "rational-log")
        r = dyn.check_comparison(g, g, 4, 2.0, 0, 1.0, 2)
        assert r.passed and r.worst_lhs == 0.0

    def test_equivalent_lamplighter_extensions(self):
        e1 = ex.build_stable_extension(LAMP, 1.0)
        # a redundant presentation of the same piecewise-linear maps
        e2 = ex.StableExtension(tr.scale(e1.psi_pres, 2), tr.scale(e1.phi_pres, 2), e1.delta, e1.mu, {})
        box = [(-2.0, 5.0), (-2.0, 5.0)]
        assert tr.check_equivalence(e1.psi_pres, e2.psi_pres, box)
        assert tr.check_equivalence(e1.phi_pres, e2.phi_pres, box)
        rng = np.random.default_rng(9)
        t = 1e6
        x0 = np.asarray(LAMP.alphabet)[rng.integers(0, 2, 30)] + rng.uniform(-0.05, 0.05, 30)
        y0 = np.asarray(LAMP.states)[rng.integers(0, 2, 30)] + rng.uniform(-0.05, 0.05, 30)
        g1 = dyn.run(e1.psi_pres, e1.phi_pres, t, x0, y0, 30, 30, "rational-log")
        g2 = dyn.run(e2.psi_pres, e2.phi_pres, t, x0, y0, 30, 30, "rational-log")
        s = tr.pair_stats(e1.psi_pres, e1.phi_pres, e2.psi_pres, e2.phi_pres)
        assert dyn.check_comparison(g1, g2, s.components, s.lipschitz, 0, 1.0, 2).passed
        # both runs stay in the plateaus, so they agree to within log_t of the component counts
        assert np.max(np.abs(g1.x - g2.x)) <= 2 * math.log(s.components) / math.log(t)

    def test_detects_violation(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        g1 = dyn.run(psi, phi, 10.0, np.zeros(3), np.zeros(3), 3, 3, "rational-log")
        g2 = dyn.run(tr.shift(psi, 5.0), phi, 10.0, np.zeros(3), np.zeros(3), 3, 3, "rational-log")
        r = dyn.check_comparison(g1, g2, 1, 0.0, 0, 1.0, 2)
        assert not r.passed and r.location[0] in ("x", "y")

    def test_extent_mismatch(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        g1 = dyn.run(psi, phi, 10.0, np.zeros(3), np.zeros(3), 3, 3, "rational-log")
        g2 = dyn.run(psi, phi, 10.0, np.zeros(4), np.zeros(3), 4, 3, "rational-log")
        with pytest.raises(InputError):
            dyn.check_comparison(g1, g2, 1, 1.0, 0, 1.0, 2)

    def test_pl_grids_need_t(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        g = dyn.run(psi, phi, None, np.zeros(3), np.zeros(3), 3, 3, "pl")
        with pytest.raises(InputError):
            dyn.check_comparison(g, g, 1, 1.0, 0, 1.0, 2)

    def test_initial_dependence_needs_pl(self, rng):
        psi, phi = random_presentation(rng), random_presentation(rng)
        g = dyn.run(psi, phi, 10.0, np.zeros(3), np.zeros(3), 3, 3, "rational-log")
        with pytest.raises(ContractError):
            dyn.check_initial_dependence(g, g, 1.0, 0)


def sandwich_setup(rng, N=2, I=12, J=12):
    f1, g1 = random_presentation(rng), random_presentation(rng)
    f2, g2 = tr.scale(f1, N), tr.scale(g1, N)
    x0, y0 = rng.uniform(-1, 1, I), rng.uniform(-1, 1, J)
    return f1, f2, g1, g2, x0, y0


class TestSandwich:
    def test_lambda_zero_and_one(self, rng):
        f1, f2, g1, g2, x0, y0 = sandwich_setup(rng)
        t = 10.0
        lo = dyn.sandwich_run(f1, f2, g1, g2, t, x0, y0, 12, 12, 0.0)
        hi = dyn.sandwich_run(f1, f2, g1, g2, t, x0, y0, 12, 12, 1.0)
        p1 = dyn.run(f1, g1, t, x0, y0, 12, 12, "rational-log")
        p2 = dyn.run(f2, g2, t, x0, y0, 12, 12, "rational-log")
        np.testing.assert_array_equal(lo.x, p1.x)
        np.testing.assert_array_equal(lo.y, p1.y)
        np.testing.assert_array_equal(hi.x, p2.x)
        np.testing.assert_array_equal(hi.y, p2.y)

    def test_random_policy_against_pure_orbit(self, rng):
        f1, f2, g1, g2, x0, y0 = sandwich_setup(rng)
        t = 10.0
        gs = dyn.sandwich_run(f1, f2, g1, g2, t, x0, y0, 12, 12, "random", seed=4)
        p1 = dyn.run(f1, g1, t, x0, y0, 12, 12, "rational-log")
        s = tr.pair_stats(f1, f2, g1, g2)
        assert s.components == 2 * tr.pair_stats(f1, g1).components
        assert dyn.check_comparison(p1, gs, s.components, s.lipschitz, 0, 1.0, 2).passed

    def test_seeded_replay(self, rng):
        f1, f2, g1, g2, x0, y0 = sandwich_setup(rng)
        a = dyn.sandwich_run(f1, f2, g1, g2, 10.0, x0, y0, 12, 12, "random", seed=4)
        b = dyn.sandwich_run(f1, f2, g1, g2, 10.0, x0, y0, 12, 12, "random", seed=4)
        assert np.array_equal(a.x, b.x) and a.meta == {"lambda_policy": "random", "seed": 4}

    def test_random_needs_seed(self, rng):
        f1, f2, g1, g2, x0, y0 = sandwich_setup(rng)
        with pytest.raises(InputError):
            dyn.sandwich_run(f1, f2, g1, g2, 10.0, x0, y0, 12, 12, "random")

    def test_bad_lambda(self, rng):
        f1, f2, g1, g2, x0, y0 = sandwich_setup(rng)
        with pytest.raises(InputError):
            dyn.sandwich_run(f1, f2, g1, g2, 10.0, x0, y0, 12, 12, 1.5)

    def test_ordering_violated(self, rng):
        f1, f2, g1, g2, x0, y0 = sandwich_setup(rng)
        with pytest.raises(InputError, match="ordering violated"):
            dyn.sandwich_run(f2, f1, g1, g2, 10.0, x0, y0, 12, 12, 0.5)


class TestQuasiPeriod:
    def test_lyness(self):
        s = dyn.second_order_orbit(dyn.lyness_presentation(), 10.0, 0.0, 0.0, 12)
        np.testing.assert_allclose(10.0**s, [1, 1, 2, 3, 2, 1, 1, 2, 3, 2, 1, 1], rtol=1e-12)
        q = dyn.detect_quasi_period(s, 1 + 1e-9, log_base=10.0)
        assert q.p == 5 and q.max_ratio == pytest.approx(1.0, abs=1e-9)
        assert set(q.evidence) == {1, 2, 3, 4} and min(q.evidence.values()) > 1.4

    def test_lyness_seeded_initials(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            z0, z1 = rng.uniform(0.1, 10, 2)
            s = dyn.second_order_orbit(dyn.lyness_presentation(), math.e, math.log(z0), math.log(z1), 40)
            assert dyn.detect_quasi_period(s, 1 + 1e-9, log_base=math.e).p == 5

    def test_tropical_abs_period_nine(self):
        s = dyn.second_order_orbit(dyn.abs_presentation(), None, 1.0, 2.0, 11, "pl")
        np.testing.assert_array_equal(s, [1, 2, 1, -1, 0, 1, 1, 0, -1, 1, 2])
        q = dyn.detect_quasi_period(dyn.second_order_orbit(dyn.abs_presentation(), None, 1.0, 2.0, 60, "pl"),
                                    1.0, log_base=10.0)
        assert q.p == 9 and q.max_ratio == 1.0

    def test_constant(self):
        q = dyn.detect_quasi_period(np.full(10, 3.0), 1.0)
        assert q.p == 1 and q.max_ratio == 1.0

    def test_rational_abs_quasi_recursive(self):
        C = 2.0
        for t in (10.0, 100.0, 1000.0):
            s = dyn.second_order_orbit(dyn.abs_presentation(), t, 1.0, 2.0, 200)
            q = dyn.detect_quasi_period(s, C, log_base=t)
            assert q.p == 9
            assert 1 + 1e-6 < q.max_ratio <= C

    def test_none_when_no_period(self):
        assert dyn.detect_quasi_period(np.arange(1.0, 20.0), 1.01, p_max=5) is None

    def test_matrix_input(self):
        series = np.tile([1.0, 2.0], (3, 5))
        assert dyn.detect_quasi_period(series, 1.0).p == 2

    def test_nonpositive(self):
        with pytest.raises(InputError):
            dyn.detect_quasi_period([1.0, 0.0, 1.0], 2.0)

    def test_second_order_arity(self, rng):
        with pytest.raises(InputError):
            dyn.second_order_orbit(random_presentation(rng, arity=3), 10.0, 0, 0, 5)


class TestProbe:
    def test_identity(self):
        a = au.with_spacing(ID2, 3)
        ext = ex.build_stable_extension(a, 1.0)
        r = dyn.quasi_recursivity_probe(ext, a, [0], 1e6, 2.0, 4, 40, seed=1)
        assert r.passed and r.details["p"] == 1

    def test_lamplighter_level_4(self):
        ext = ex.build_stable_extension(LAMP, 1.0)
        r = dyn.quasi_recursivity_probe(ext, LAMP, [1], 1e6, 2.0, 4, 40, seed=2)
        assert r.details["p"] == au.order_on_level(LAMP, [1], 4)
        assert r.passed

    def test_grigorchuk_generator(self):
        g3 = au.with_spacing(GRIG, 3)
        ext = ex.build_stable_extension(g3, 1.2)
        r = dyn.quasi_recursivity_probe(ext, g3, [au.GRIGORCHUK_STATES["a"]], 1e6, 2.0, 5, 40, seed=3)
        assert r.details["p"] == 2 and r.passed

    def test_threshold(self):
        ext = ex.build_stable_extension(LAMP, 1.0)
        with pytest.raises(InputError, match="minimal admissible t"):
            dyn.quasi_recursivity_probe(ext, LAMP, [1], 10.0, 2.0, 4, 40, seed=2)

    def test_thresholds_consistent(self):
        ext = ex.build_stable_extension(LAMP, 1.0)
        th = dyn.probe_thresholds(ext, 2.0)
        t = th["t_min"] * 1.01
        r = dyn.quasi_recursivity_probe(ext, LAMP, [1], t, 2.0, 3, 20, seed=2)
        assert r.passed

    def test_non_mealy(self):
        ext = ex.build_stable_extension(LAMP, 1.0)
        with pytest.raises(ContractError):
            dyn.quasi_recursivity_probe(ext, au.builtin("example_4_1"), [0], 1e6, 2.0, 3, 10, seed=0)

    def test_period_exceeds_grid(self):
        ext = ex.build_stable_extension(LAMP, 1.0)
        r = dyn.quasi_recursivity_probe(ext, LAMP, [1], 1e6, 2.0, 5, 4, seed=0)
        assert r.passed and "note" in r.details


# -- properties ---------------------------------------------------------


def test_pl_vs_dequantized_random_mealy():
    rng = np.random.default_rng(20240612)
    for k in range(50):
        a = random_mealy(rng, f"m{k}")
        ext = ex.build_stable_extension(a, 1.0)
        x0, y0 = rng.uniform(-1, 7, 30), rng.uniform(-1, 7, 30)
        r = pl_vs_dequantized(ext.psi_pres, ext.phi_pres, 1e3, x0, y0, 30, 30)
        assert r.margin >= -1e-9, (k, r.render())


def test_pl_vs_dequantized_lookahead():
    rng = np.random.default_rng(20240613)
    for k in range(20):
        psi = random_presentation(rng, arity=2 + int(rng.integers(0, 3)), max_coeff=1)
        phi = random_presentation(rng, arity=2 + int(rng.integers(0, 3)), max_coeff=1)
        need = dyn.required_length(psi, phi, 30, 30)
        r = pl_vs_dequantized(psi, phi, 10.0, rng.uniform(-2, 2, need), rng.uniform(-2, 2, 30), 30, 30)
        assert r.margin >= -1e-9, (k, r.render())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_initial_dependence(seed):
    rng = np.random.default_rng(seed)
    psi = random_presentation(rng, arity=2 + int(rng.integers(0, 2)))
    phi = random_presentation(rng, arity=2 + int(rng.integers(0, 2)))
    I, J = 8, 8
    need = dyn.required_length(psi, phi, I, J)
    x1, y1 = rng.uniform(-2, 2, need), rng.uniform(-2, 2, J)
    x2, y2 = x1 + rng.uniform(-0.3, 0.3, need), y1 + rng.uniform(-0.3, 0.3, J)
    g1 = dyn.run(psi, phi, None, x1, y1, I, J, "pl")
    g2 = dyn.run(psi, phi, None, x2, y2, I, J, "pl")
    gamma = max(psi.arity, phi.arity) - 2
    assert dyn.check_initial_dependence(g1, g2, tr.pair_stats(psi, phi).lipschitz, gamma).passed


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_sandwich_multipliers(seed, N):
    rng = np.random.default_rng(seed)
    I = J = 10
    f1, f2, g1, g2, xa, ya = sandwich_setup(rng, N, I, J)
    xb, yb = xa + rng.uniform(-0.5, 0.5, I), ya + rng.uniform(-0.5, 0.5, J)
    t = 10.0
    s = tr.pair_stats(f1, f2, g1, g2)
    M, c = s.components, s.lipschitz
    pure_a = dyn.run(f1, g1, t, xa, ya, I, J, "rational-log")
    sand_a = dyn.sandwich_run(f1, f2, g1, g2, t, xa, ya, I, J, "random", seed=seed)
    sand_b = dyn.sandwich_run(f1, f2, g1, g2, t, xb, yb, I, J, "random", seed=seed + 1)
    rate = t ** dyn.log_initial_rate(pure_a, sand_b)
    # same initials; different initials against a pure orbit; two sandwiched orbits
    assert dyn.check_comparison(pure_a, sand_a, M, c, 0, 1.0, 2).passed
    assert dyn.check_comparison(pure_a, sand_b, M, c, 0, rate, 4).passed
    assert dyn.check_comparison(sand_a, sand_b, M, c, 0, rate, 6).passed


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recursion_residual_all_modes(seed):
    rng = np.random.default_rng(seed)
    psi = random_presentation(rng, arity=2 + int(rng.integers(0, 3)))
    phi = random_presentation(rng, arity=2 + int(rng.integers(0, 3)))
    need = dyn.required_length(psi, phi, 6, 6)
    x0, y0 = rng.uniform(-2, 2, need), rng.uniform(-2, 2, 6)
    for mode, t in (("pl", None), ("dequantized", 10.0), ("rational-log", 10.0)):
        g = dyn.run(psi, phi, t, x0, y0, 6, 6, mode)
        assert dyn.recursion_residual(g, psi, phi) <= 1e-9
