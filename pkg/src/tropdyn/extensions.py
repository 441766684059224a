"""Real extensions of automata as relative (max,+)-functions.

Three families live here:

* plateau extensions of Mealy automata that are exactly constant on a
  box around every lattice point, so the stability constant is 0;
* the stair functions ``xi_n`` and their rational lifts, which pull an
  orbit onto one of the integers ``L, ..., L+n-1``;
* two-letter refinements, whose orbits sampled every ``N`` steps should
  reproduce the automaton orbit.

Presentations produced here take the state variable first: ``(y, x)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import automata
from . import dynamics as dyn
from . import tropical as tr
from .errors import ContractError, InputError
from .reports import BoundReport, worst
from .tropical import AffineTerm, MaxPlusPresentation, TropicalParam, to_fraction

# -- piecewise-linear building blocks ---------------------------------------


def _convex_pieces(a0: Fraction, a1: Fraction, hinges: dict) -> list[tuple[Fraction, Fraction]]:
    """Affine pieces ``(intercept, slope)`` of ``a0 + a1 u + sum w max(0, u - b)``."""
    pieces = [(a0, a1)]
    c0, c1 = a0, a1
    for b in sorted(hinges):
        w = hinges[b]
        if w == 0:
            continue
        if w < 0:
            raise ContractError("hinge weights must be positive for a convex sum")
        c1 += w
        c0 -= w * b
        pieces.append((c0, c1))
    return pieces


def _add_hinge(h: dict, b: Fraction, w: Fraction) -> None:
    h[b] = h.get(b, Fraction(0)) + w


def _min_gap(values: Sequence[Fraction]) -> Optional[Fraction]:
    v = sorted(set(values))
    if len(v) < 2:
        return None
    return min(b - a for a, b in zip(v, v[1:]))


def plateau_presentation(
    rows: Sequence[float],
    cols: Sequence[float],
    table,
    delta: float,
    sharpness: Optional[float] = None,
    floor_gap: float = 1.0,
    kink: float = 1.0,
) -> MaxPlusPresentation:
    """Two-variable presentation in ``(y, x)`` equal to ``table[r][c]`` near lattice points.

    The result is constant on ``[rows[r] - delta, rows[r] + delta] x
    [cols[c] - delta, cols[c] + delta]``. Along ``x`` each row is the
    piecewise-linear interpolant between its plateaus; along ``y`` a row is
    switched off with slope ``sharpness`` once ``y`` leaves its band. Far
    from every row the value settles at ``min(table) - floor_gap``.

    All rows share the convex summand ``V(x)`` and the selector
    ``Z(y)``, so the numerator is ``max_r[R_r + V + Z - K d_r]`` (plus the
    floor) and the denominator is ``V + Z``.
    """
    d = to_fraction(delta)
    ys = [to_fraction(v) for v in rows]
    xs = [to_fraction(v) for v in cols]
    T = [[to_fraction(table[r][c]) for c in range(len(xs))] for r in range(len(ys))]
    for name, vals in (("row", ys), ("column", xs)):
        if sorted(vals) != list(vals) or len(set(vals)) != len(vals):
            raise InputError(f"{name} lattice values must be strictly increasing")
        gap = _min_gap(vals)
        if gap is not None and 2 * d >= gap:
            raise InputError(
                f"plateaus would overlap: delta = {float(d)} must be below half the "
                f"minimal {name} gap {float(gap)}"
            )
    flat = [v for row in T for v in row]
    lo, hi = min(flat), max(flat)
    row_gap = _min_gap(ys)
    if row_gap is None:
        K = Fraction(1)
    else:
        need = (hi - lo) / (row_gap - 2 * d)
        if sharpness is None:
            K = Fraction(math.ceil((hi - lo + 1) / (row_gap - 2 * d)))
        else:
            K = to_fraction(sharpness)
            if K < need:
                raise InputError(
                    f"sharpness {float(K)} too small: rows would leak into neighbouring "
                    f"plateaus; need at least {float(need):.6g}"
                )

    # x-direction: row interpolants and a common convexifying V
    row_hinges = []
    for r in range(len(ys)):
        h: dict = {}
        for k in range(len(xs) - 1):
            sigma = (T[r][k + 1] - T[r][k]) / (xs[k + 1] - xs[k] - 2 * d)
            _add_hinge(h, xs[k] + d, sigma)
            _add_hinge(h, xs[k + 1] - d, -sigma)
        row_hinges.append(h)
    breaks = sorted({b for h in row_hinges for b in h})
    kink_f = to_fraction(kink)
    lam = {b: max([Fraction(0)] + [-h.get(b, Fraction(0)) for h in row_hinges]) + kink_f for b in breaks}
    V = _convex_pieces(Fraction(0), Fraction(0), lam)

    # y-direction: distance-to-band selectors
    def dist_hinges(indices):
        a0, a1, h = Fraction(0), Fraction(0), {}
        for i in indices:
            a0 += K * (ys[i] - d)
            a1 -= K
            _add_hinge(h, ys[i] - d, K)
            _add_hinge(h, ys[i] + d, K)
        return a0, a1, h

    Z = _convex_pieces(*dist_hinges(range(len(ys))))

    def product(xp, yp, shift=Fraction(0)):
        return [
            AffineTerm(float(cx + cy + shift), (sy, sx)) for (cx, sx) in xp for (cy, sy) in yp
        ]

    num: list[AffineTerm] = []
    for r in range(len(ys)):
        h = dict(lam)
        for b, w in row_hinges[r].items():
            _add_hinge(h, b, w)
        Rx = _convex_pieces(T[r][0], Fraction(0), h)
        Zr = _convex_pieces(*dist_hinges([i for i in range(len(ys)) if i != r]))
        num.extend(product(Rx, Zr))
    num.extend(product(V, Z, lo - to_fraction(floor_gap)))
    den = product(V, Z)
    return tr.merge_terms(MaxPlusPresentation(2, tuple(num), tuple(den)))


# -- stable extensions -------------------------------------------------------


@dataclass(frozen=True)
class StableExtension:
    """Extension pair with its stability radius ``delta`` and constant ``mu``."""

    psi_pres: MaxPlusPresentation
    phi_pres: MaxPlusPresentation
    delta: float
    mu: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not 0 < self.delta < 1e300:
            raise InputError(f"delta must be positive, got {self.delta}")
        if not 0 <= self.mu < 1:
            raise InputError(f"mu must lie in [0, 1), got {self.mu}")


def _sorted_axes(a: automata.AutomatonSpec):
    q_order = np.argsort(a.states, kind="stable")
    s_order = np.argsort(a.alphabet, kind="stable")
    return q_order, s_order


def build_stable_extension(
    a: automata.AutomatonSpec, delta: float, sharpness: Optional[float] = None
) -> StableExtension:
    """Plateau extension of a Mealy automaton, exactly constant near the lattice.

    ``delta`` must be below half the smallest gap between distinct
    embedded values of ``Q`` and ``S`` together. ``sharpness`` is the slope
    of the state selectors; by default the smallest integer that keeps a
    unit separation between rows.
    """
    if not a.is_mealy:
        raise ContractError("plateau extensions are built for Mealy automata only")
    gap = _min_gap([to_fraction(v) for v in tuple(a.states) + tuple(a.alphabet)])
    if gap is not None and 2 * to_fraction(delta) >= gap:
        raise InputError(
            f"plateaus would overlap: delta = {delta} must be below half the minimal "
            f"gap {float(gap)} between embedded states and symbols"
        )
    q_order, s_order = _sorted_axes(a)
    rows = [a.states[q] for q in q_order]
    cols = [a.alphabet[s] for s in s_order]
    psi_t = [[a.alphabet[a.psi[q, s]] for s in s_order] for q in q_order]
    phi_t = [[a.states[a.phi[q, s]] for s in s_order] for q in q_order]
    psi = plateau_presentation(rows, cols, psi_t, delta, sharpness)
    phi = plateau_presentation(rows, cols, phi_t, delta, sharpness)
    return StableExtension(psi, phi, float(delta), 0.0, {"automaton": a.name, "sharpness": sharpness})


def _lattice(a: automata.AutomatonSpec, width: int):
    for q in range(a.n_states):
        for window in itertools.product(range(a.n_symbols), repeat=width):
            yield q, window


def restriction_error(ext: StableExtension, a: automata.AutomatonSpec) -> tuple[float, Optional[tuple]]:
    """Largest deviation from the automaton tables at lattice points, and where."""
    worst_err, where = 0.0, None
    for name, pres, table_val, width in (
        ("psi", ext.psi_pres, a.psi_value, a.alpha + 1),
        ("phi", ext.phi_pres, a.phi_value, a.beta + 1),
    ):
        if pres.arity != width + 1:
            raise InputError(f"{name} arity {pres.arity} does not match automaton ({width + 1})")
        for q, window in _lattice(a, width):
            pt = [a.states[q]] + [a.alphabet[s] for s in window]
            err = abs(tr.eval_maxplus(pres, pt) - table_val(q, window))
            if err > worst_err:
                worst_err, where = err, (name, q, tuple(window))
    return worst_err, where


def stability_check(
    ext: StableExtension, a: automata.AutomatonSpec, samples: int = 200, seed: int = 0
) -> float:
    """Estimated stability constant near the lattice.

    For every lattice point, ``samples`` perturbations are drawn in the
    sup-metric ``delta``-box; the largest ratio ``|df| / |dp|`` over both
    maps is returned.
    """
    rng = np.random.default_rng(seed)
    est = 0.0
    for pres, width in ((ext.psi_pres, a.alpha + 1), (ext.phi_pres, a.beta + 1)):
        for q, window in _lattice(a, width):
            p = np.array([a.states[q]] + [a.alphabet[s] for s in window], dtype=float)
            # mix interior draws with scaled-down ones to probe small distances
            dp = rng.uniform(-ext.delta, ext.delta, size=(samples, p.size))
            dp[: samples // 2] *= rng.uniform(1e-3, 1.0, size=(samples // 2, 1))
            dist = np.abs(dp).max(axis=1)
            keep = dist > 0
            vals = tr.eval_maxplus(pres, p + dp[keep])
            base = tr.eval_maxplus(pres, p)
            ratios = np.abs(vals - base) / dist[keep]
            if ratios.size:
                est = max(est, float(ratios.max()))
    return est


def lamplighter_extension(printed: bool = False, delta: float = 1.0) -> StableExtension:
    """Extension of the lamplighter automaton embedded at 0 and 3.

    By default it is the plateau extension. With ``printed=True`` it is the
    pair ``psi = max(P(s), Q(s - q))``, ``phi = Q(s)`` with
    ``P(k) = min(3, max(0, 6 - 3k))`` and ``Q(k) = min(3, max(0, 3k - 3))``
    written exactly as min/max expressions; that pair does not restrict to
    the automaton (``psi(0, 0) = 3``), which :func:`restriction_error`
    exposes.
    """
    a = automata.builtin("lamplighter")
    if not printed:
        return build_stable_extension(a, delta)

    def P(expr):
        return tr.negate(tr.pmax(tr.constant(-3, 2), tr.negate(tr.pmax(tr.constant(0, 2), expr))))

    # P(k) = -max(-3, -max(0, -3(k-2))), Q(k) = -max(-3, -max(0, 3(k-1)))
    p_of_s = P(tr.affine([0, -3], 6))
    q_of_s = P(tr.affine([0, 3], -3))
    q_of_s_minus_q = P(tr.affine([-3, 3], -3))
    psi = tr.pmax(p_of_s, q_of_s_minus_q)
    return StableExtension(psi, q_of_s, 1.0, 0.0, {"automaton": "lamplighter", "printed": True})


# -- stairs ----------------------------------------------------------------


def make_stairs(n: int, L: float, delta: float) -> MaxPlusPresentation:
    """One-variable presentation of the ``n``-step stair ``xi_n``.

    ``xi_1(x) = max(min(x + delta, L), x - delta)`` and
    ``xi_n(x) = max(min(xi_{n-1}(x), L + n - 1), x - (2n - 1) delta)``.
    Minima are written as negated maxima of negations; terms are not merged.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if not 0 < delta < 0.5:
        raise InputError(f"delta must lie in (0, 1/2), got {delta}")
    x = tr.variable(0, 1)
    xi = tr.pmax(tr.pmin(tr.shift(x, delta), tr.constant(L, 1)), tr.shift(x, -delta))
    for k in range(2, n + 1):
        xi = tr.pmax(tr.pmin(xi, tr.constant(L + k - 1, 1)), tr.shift(x, -(2 * k - 1) * delta))
    return xi


def minimal_N0(t: TropicalParam | float, delta: float) -> int:
    """Smallest integer ``N0`` with ``t^-delta + t^delta / N0 < 1``."""
    tp = tr.as_param(t)
    lo = tp.t ** (-delta)
    if lo >= 1:
        raise InputError(f"t^-delta = {lo} >= 1: no N0 can satisfy the stair condition")
    n0 = math.floor(tp.t**delta / (1.0 - lo)) + 1
    while lo + tp.t**delta / n0 >= 1:
        n0 += 1
    while n0 > 1 and lo + tp.t**delta / (n0 - 1) < 1:
        n0 -= 1
    return n0


def stair_mu(t: TropicalParam | float, delta: float, N0: int) -> float:
    """``mu = 1 - t^-delta - t^delta / N0``."""
    tp = tr.as_param(t)
    return 1.0 - tp.t ** (-delta) - tp.t**delta / N0


def make_stairs_rational(
    n: int, L: float, delta: float, t: TropicalParam | float, N0: int
) -> MaxPlusPresentation:
    """Presentation whose rational lift is the stair map ``f^n``.

    ``f^1(z) = t^-d z + N0^-1 t^L z / (z + t^(L-d))`` and
    ``f^m = t^-(2m-1)d z + N0^-1 t^c f^(m-1) / (t^c + f^(m-1))`` with
    ``c = L + m - 1``. Writing ``f^(m-1) = A/B`` the new denominator is
    ``t^c B + A``; terms are kept unmerged, so the counts grow like
    Fibonacci numbers.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    tp = tr.as_param(t)
    if N0 < 1 or tp.t ** (-delta) + tp.t**delta / N0 >= 1:
        raise InputError(
            f"stair condition t^-delta + t^delta/N0 < 1 fails for N0 = {N0}; "
            f"minimal admissible N0 is {minimal_N0(tp, delta)}"
        )
    log_n0 = math.log(N0) / tp.ln_t

    def term(offset, power):
        return AffineTerm(float(offset), (Fraction(power),))

    def times(terms, offset, power):
        return [term(tm.offset + offset, tm.coeffs[0] + power) for tm in terms]

    den = [term(0, 1), term(L - delta, 0)]
    num = times(den, -delta, 1)[:1] + [term(L - 2 * delta, 1), term(L - log_n0, 1)]
    for m in range(2, n + 1):
        c = L + m - 1
        new_den = times(den, c, 0) + list(num)
        num = times(new_den, -(2 * m - 1) * delta, 1) + times(num, c - log_n0, 0)
        den = new_den
    return MaxPlusPresentation(1, tuple(num), tuple(den))


def stairs_bounds_check(
    n: int, L: float, delta: float, t: TropicalParam | float, N0: int, z
) -> list[BoundReport]:
    """Both two-sided stair estimates at the positive points ``z``.

    Checks ``-1 + t^-(2n-1)d < (f^n - z)' <= -mu`` and
    ``(-1 + t^-(2n-1)d) z < f^n - z <= -mu z``. The strict lower sides are
    checked with margin 0.
    """
    tp = tr.as_param(t)
    pres = make_stairs_rational(n, L, delta, tp, N0)
    z = np.asarray(z, dtype=float).reshape(-1, 1)
    mu = stair_mu(tp, delta, N0)
    low = -1.0 + tp.t ** (-(2 * n - 1) * delta)
    f = tr.eval_rational(pres, tp, z, mode="linear")
    df = tr.rational_gradient(pres, tp, z)[:, 0]
    zz = z[:, 0]
    drift = f - zz
    slope = df - 1.0
    details = {"n": n, "delta": delta, "t": tp.t, "N0": N0, "mu": mu}
    # relative scale so large z do not drown the comparison in rounding
    return [
        BoundReport.from_arrays(low - slope, 0.0, label="slope lower", details=details),
        BoundReport.from_arrays(slope, -mu, label="slope upper", details=details),
        BoundReport.from_arrays((low * zz - drift) / zz, 0.0, label="drift lower", details=details),
        BoundReport.from_arrays(drift / zz, -mu, label="drift upper", details=details),
    ]


# -- bumps ---------------------------------------------------------------


def bump_l(t: TropicalParam | float, delta: float, w):
    """``l_t(w) = [(1 + t^-d w)^-1 + (1 + t^(7d) / w)^-1]^-1``, the lift of the tent ``tau``."""
    tp = tr.as_param(t)
    w = np.asarray(w, dtype=float)
    return 1.0 / (1.0 / (1.0 + tp.t ** (-delta) * w) + 1.0 / (1.0 + tp.t ** (7 * delta) / w))


def _bump_sum(tp, delta, states, w):
    return sum(bump_l(tp, delta, tp.t ** (-q) * w) for q in states)


def bump_K(t: TropicalParam | float, delta: float, states: Sequence[float]) -> int:
    """Smallest integer ``K`` keeping ``h_t <= 1``, found on a dense log grid."""
    tp = tr.as_param(t)
    lo, hi = min(states) - 10 * delta - 5, max(states) + 20 * delta + 5
    y = np.linspace(lo, hi, 20001)
    s = _bump_sum(tp, delta, states, tp.t**y)
    peak = float(np.max(1.0 / (tp.t ** (-2 * delta) + 1.0 / s)))
    return max(1, math.ceil(peak * (1 + 1e-12)))


def bump_h(t: TropicalParam | float, delta: float, states: Sequence[float], w, K: Optional[int] = None):
    """``h_t(w) = K^-1 [t^-2d + (sum_j l_t(t^-q_j w))^-1]^-1``, the lift of ``mu``."""
    tp = tr.as_param(t)
    if K is None:
        K = bump_K(tp, delta, states)
    s = _bump_sum(tp, delta, states, np.asarray(w, dtype=float))
    return 1.0 / (K * (tp.t ** (-2 * delta) + 1.0 / s))


def bump_l_prime(t: TropicalParam | float, delta: float, w):
    """Derivative of :func:`bump_l` in ``w``."""
    tp = tr.as_param(t)
    w = np.asarray(w, dtype=float)
    a = 1.0 + tp.t ** (-delta) * w
    b = 1.0 + tp.t ** (7 * delta) / w
    da, db = tp.t ** (-delta), -tp.t ** (7 * delta) / w**2
    return (da * b**2 + db * a**2) / (a + b) ** 2


def bump_h_prime(t: TropicalParam | float, delta: float, states: Sequence[float], w, K: Optional[int] = None):
    """Derivative of :func:`bump_h` in ``w``."""
    tp = tr.as_param(t)
    if K is None:
        K = bump_K(tp, delta, states)
    w = np.asarray(w, dtype=float)
    s = _bump_sum(tp, delta, states, w)
    ds = sum(tp.t ** (-q) * bump_l_prime(tp, delta, tp.t ** (-q) * w) for q in states)
    return ds / (K * (tp.t ** (-2 * delta) * s + 1.0) ** 2)


# -- refinements ---------------------------------------------------------


@dataclass(frozen=True)
class Refinement:
    """Fine pair meant to reproduce an automaton every ``subdivision`` steps.

    ``symbol_values`` embeds the two letters as ``L, L+1``;
    ``state_values[q]`` and ``bar_values[q]`` are the two fine states that
    stand for coarse state ``q``. A fine state at ``state_values`` pulls the
    column it meets onto ``L``; one at ``bar_values`` pulls it onto ``L+1``.
    """

    psi_bar: MaxPlusPresentation
    phi_bar: MaxPlusPresentation
    subdivision: int
    epsilon: float
    delta: float = 0.25
    symbol_values: tuple = (0.0, 1.0)
    state_values: tuple = ()
    bar_values: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)


def _delta_inverse(delta: float) -> int:
    N = round(1.0 / delta)
    if N < 2 or abs(N * delta - 1.0) > 1e-9:
        raise InputError(f"1/delta must be an integer >= 2, got delta = {delta}")
    return N


def tent(delta: float, center: float = 0.0) -> MaxPlusPresentation:
    """``tau(y - center) = min(max(0, y - c - d), max(0, c + 7d - y))``."""
    up = tr.pmax(tr.constant(0, 1), tr.affine([1], -center - delta))
    down = tr.pmax(tr.constant(0, 1), tr.affine([-1], center + 7 * delta))
    return tr.pmin(up, down)


def selector_mu(delta: float, states: Sequence[float]) -> MaxPlusPresentation:
    """``mu(y) = min(2d, max_j tau(y - q_j))``: 0 near ``q_j``, ``2d`` near ``q_j + 4d``.

    Returned in compact convex-difference form as a function of ``y`` alone.
    """
    d = tr.to_fraction(delta)
    qs = [tr.to_fraction(q) for q in states]

    def mu(y: Fraction) -> Fraction:
        taus = [min(max(Fraction(0), y - q - d), max(Fraction(0), q + 7 * d - y)) for q in qs]
        return min(2 * d, max(taus))

    cands = [q + k * d for q in qs for k in (1, 3, 5, 7)]
    # crossings of a falling side with a rising side, and where either meets 2d
    cands += [(a + b + 6 * d) / 2 for a in qs for b in qs if a < b]
    return tr.presentation_from_hinges(*tr.hinge_from_breakpoints(mu, cands))


def refined_psi(delta: float, L: float, states: Sequence[float]) -> MaxPlusPresentation:
    """``psi_bar(y, x) = xi_2(x + mu(y))``."""
    mu = selector_mu(delta, states)
    mu2 = MaxPlusPresentation(
        2,
        tuple(AffineTerm(t.offset, (t.coeffs[0], Fraction(0))) for t in mu.num),
        tuple(AffineTerm(t.offset, (t.coeffs[0], Fraction(0))) for t in mu.den),
    )
    inner = tr.add(tr.variable(1, 2), mu2)
    return tr.compose_1d(make_stairs(2, L, delta), inner)


def _refinement_embedding(a: automata.AutomatonSpec, delta: float, L: float, q0: Optional[float]):
    if q0 is None:
        q0 = L + 2.0
    if abs(round(q0 / delta) * delta - q0) > 1e-12 or abs(round(L / delta) * delta - L) > 1e-12:
        raise InputError("L and the first state must lie on the delta grid")
    states = tuple(q0 + 8 * delta * j for j in range(a.n_states))
    bars = tuple(q + 4 * delta for q in states)
    return states, bars


def _check_refinable(a: automata.AutomatonSpec) -> None:
    if not a.is_mealy:
        raise ContractError("refinements are built for Mealy automata")
    if a.n_symbols != 2:
        raise ContractError(f"refinements are supported for two letters only, got {a.n_symbols}")
    if not automata.is_invertible_mealy(a):
        raise ContractError("refinements need every state to act by a permutation")


def _moves(a: automata.AutomatonSpec, q: int) -> str:
    return "swap" if a.psi[q, 0] != 0 else "id"


def build_refinement_2alphabet(
    a: automata.AutomatonSpec, delta: float, L: float = 0.0, q0: Optional[float] = None
) -> Refinement:
    """Two-letter refinement with ``psi_bar = xi_2(x + mu(y))``.

    ``phi_bar`` is a plateau interpolant on the fine lattice
    ``states x {L - d, L, ..., L + 1 + d}``: a fine state is left alone on
    non-integer inputs, and on the letters ``L``/``L+1`` it follows the
    letter rule: with ``q = phi(q', s)``, a swapping ``q`` is sent to the
    plain state on ``L`` and the barred state on ``L+1``, an identity ``q``
    the other way round.
    """
    _check_refinable(a)
    N = _delta_inverse(delta)
    states, bars = _refinement_embedding(a, delta, L, q0)
    psi_bar = refined_psi(delta, L, states)

    fine = sorted([(v, q, False) for q, v in enumerate(states)] + [(v, q, True) for q, v in enumerate(bars)])
    rows = [v for v, _, _ in fine]
    cols = [L + delta * k for k in range(-1, N + 2)]
    table = []
    for v, q_prime, _barred in fine:
        row = []
        for k, x in enumerate(cols):
            letter = {1: 0, N + 1: 1}.get(k)
            if letter is None:
                row.append(v)
                continue
            q = int(a.phi[q_prime, letter])
            plain_on_low = _moves(a, q) == "swap"
            plain = (letter == 0) == plain_on_low
            row.append(states[q] if plain else bars[q])
        table.append(row)
    phi_bar = plateau_presentation(rows, cols, table, delta / 4, floor_gap=0.0)
    drift = _drift_constant(phi_bar, states[0], bars[-1] + 3 * delta, L, delta)
    eps = max(delta, bars[-1] - states[0])
    return Refinement(
        psi_bar, phi_bar, N, eps, delta, (L, L + 1.0), states, bars,
        {"automaton": a.name, "drift_k": drift, "construction": "plateau"},
    )


def _drift_constant(phi_bar, y_lo, y_hi, L, delta) -> float:
    """Smallest ``k`` with ``|phi_bar(y, x) - y| <= k delta`` on a sample of the strip."""
    ys = np.linspace(y_lo, y_hi, 121)
    xs = np.linspace(L - 2, L + 3, 201)
    pts = np.array([(y, x) for y in ys for x in xs])
    vals = tr.eval_maxplus(phi_bar, pts)
    return float(np.max(np.abs(vals - pts[:, 0])) / delta)


def one_state_printed_phi(swap: bool, delta: float, L: float = 0.0, q: float = 2.0) -> MaxPlusPresentation:
    """Closed-form one-state ``phi_bar`` with ``q_bar = q + 4 delta``.

    swap: ``min(q_bar, max(y, y + x - (L + 1 - d)))``;
    identity: ``min(q_bar, max(y, y - x + L + d))``.
    """
    y = tr.variable(0, 2)
    if swap:
        moved = tr.affine([1, 1], -(L + 1 - delta))
    else:
        moved = tr.affine([1, -1], L + delta)
    return tr.pmin(tr.constant(q + 4 * delta, 2), tr.pmax(y, moved))


def one_state_printed_refinement(a: automata.AutomatonSpec, delta: float, L: float = 0.0) -> Refinement:
    """Refinement of a one-state automaton using the closed-form ``phi_bar``."""
    _check_refinable(a)
    if a.n_states != 1:
        raise ContractError("closed-form refinement covers one-state automata only")
    N = _delta_inverse(delta)
    states, bars = _refinement_embedding(a, delta, L, None)
    phi_bar = one_state_printed_phi(_moves(a, 0) == "swap", delta, L, states[0])
    return Refinement(
        refined_psi(delta, L, states), phi_bar, N, max(delta, 4 * delta), delta,
        (L, L + 1.0), states, bars, {"automaton": a.name, "construction": "printed"},
    )


def build_one_state_refinement(a: automata.AutomatonSpec, delta: float, L: float = 0.0) -> Refinement:
    """Refinement of a one-state two-letter automaton that works at every depth.

    Intermediate columns are frozen (the fine states crossing them have
    ``mu = delta``) and so keep their initial values, which record the two
    neighbouring letters of the initial word. A row's fine state carries
    the letter it just left, compares it with the frozen record to learn
    whether the letters have flipped so far (a parity bit), and picks the
    target for the next letter column. It then counts the remaining
    intermediate columns before switching to the plain or barred state.
    Extra ``mu`` centres, spaced ``8 delta`` apart, give the counter states
    room on the ``delta`` grid.
    """
    _check_refinable(a)
    if a.n_states != 1:
        raise ContractError("the frozen-column refinement needs a one-state automaton")
    N = _delta_inverse(delta)
    if N < 3:
        raise InputError("the frozen-column refinement needs 1/delta >= 3")
    q = L + 2.0
    centres = [q + 8 * delta * c for c in range(N - 1)]
    plain, bar = q, q + 4 * delta
    # neutral values (mu = delta) sit at centre + 2d and centre + 6d
    neutral = [c + off for c in centres for off in (2 * delta, 6 * delta)]
    carry = {0: neutral[0], 1: neutral[1]}  # letter just left
    count = {(T, r): neutral[2 + 2 * (r - 2) + T] for T in (0, 1) for r in range(2, N)}
    swap = _moves(a, 0) == "swap"
    psi = lambda k: (1 - k) if swap else k  # noqa: E731
    cols = [L + delta * k for k in range(N + 1)]

    def record(x_idx: int) -> Optional[tuple[int, int]]:
        # first intermediate column: (current letter, next letter) of the initial word
        return {0: (0, 0), N: (1, 1), 1: (0, 1), N - 1: (1, 0)}.get(x_idx)

    def pinned(T: int) -> float:
        return bar if T else plain

    def after_count(T: int, r: int) -> float:
        return pinned(T) if r + 1 == N else count[(T, r + 1)]

    rows: dict[float, list[float]] = {}
    for T in (0, 1):
        origin = psi(T)  # involution: the letter that moves to T
        rows[pinned(T)] = [carry[origin]] * len(cols)
    for o in (0, 1):
        row = []
        for k in range(len(cols)):
            rec = record(k)
            if rec is None:
                row.append(after_count(0, 1))
                continue
            parity = o ^ rec[0]
            row.append(after_count(psi(rec[1] ^ parity), 1))
        rows[carry[o]] = row
    for (T, r), v in count.items():
        rows[v] = [after_count(T, r)] * len(cols)
    keys = sorted(rows)
    phi_bar = plateau_presentation(keys, cols, [rows[k] for k in keys], delta / 4, floor_gap=0.0)
    psi_bar = refined_psi(delta, L, centres)
    return Refinement(
        psi_bar, phi_bar, N, 4 * delta, delta, (L, L + 1.0), (plain,), (bar,),
        {"automaton": a.name, "construction": "frozen-parity", "mu_centres": centres},
    )


def _coarse_orbit(a: automata.AutomatonSpec, q_seq: Sequence[int], k_seq: Sequence[int]):
    I, J = len(k_seq), len(q_seq)
    k = np.zeros((I, J + 1), dtype=int)
    q = np.zeros((I + 1, J), dtype=int)
    k[:, 0] = k_seq
    for j in range(J):
        q[0, j] = q_seq[j]
        for i in range(I):
            k[i, j + 1] = a.psi[q[i, j], k[i, j]]
            q[i + 1, j] = a.phi[q[i, j], k[i, j]]
    return k, q


def refinement_paths(r: Refinement, a: automata.AutomatonSpec, q_seq, k_seq):
    """Initial fine row and boundary column for one coarse input.

    Between two different letters the row ramps in steps of ``delta``;
    between equal letters it stays put. The boundary holds the fine
    state of ``q_seq[j]`` for a whole block; it takes the barred copy when
    the first column must move to ``L+1``.
    """
    N, d = r.subdivision, r.delta
    lo, hi = r.symbol_values
    letters = [lo if s == 0 else hi for s in k_seq]
    I = len(letters)
    padded = letters + [letters[-1]]
    x = []
    for i in range(I):
        a_, b_ = padded[i], padded[i + 1]
        x.append(a_)
        for m in range(1, N):
            x.append(a_ + m * d * (b_ - a_))
    k, _ = _coarse_orbit(a, q_seq, k_seq)
    y = []
    for j, qj in enumerate(q_seq):
        target_high = a.psi[qj, k[0, j]] == 1
        y.extend([r.bar_values[qj] if target_high else r.state_values[qj]] * N)
    return np.array(x), np.array(y)


def verify_refinement(r: Refinement, a: automata.AutomatonSpec, max_len: int = 3) -> BoundReport:
    """Brute-force check of the sampled fine orbit against the automaton.

    For every state sequence and word of length ``max_len`` the fine
    dynamics is run in pl mode on ``max_len * N`` columns and rows. At
    ``(iN, jN)`` the fine letter must equal ``k[i, j]`` and the fine state
    must be one of the two copies of ``q[i, j]``. Path steps are checked
    against ``epsilon``.
    """
    N = r.subdivision
    n = max_len
    lo, hi = r.symbol_values
    worst_dev, where, worst_step = -1.0, None, 0.0
    grid_I, grid_J = n * N, n * N
    for q_seq in itertools.product(range(a.n_states), repeat=n):
        for k_seq in itertools.product(range(a.n_symbols), repeat=n):
            x0, y0 = refinement_paths(r, a, q_seq, k_seq)
            worst_step = max(worst_step, float(np.max(np.abs(np.diff(x0)), initial=0.0)),
                             float(np.max(np.abs(np.diff(y0)), initial=0.0)))
            g = dyn.run(r.psi_bar, r.phi_bar, None, x0[:grid_I], y0[:grid_J], grid_I, grid_J, "pl")
            k, q = _coarse_orbit(a, q_seq, k_seq)
            for i in range(n):
                for j in range(n + 1):
                    want = lo if k[i, j] == 0 else hi
                    dev = abs(g.x[i * N, j * N] - want)
                    if dev > worst_dev:
                        worst_dev, where = dev, ("x", i, j, q_seq, k_seq)
            for i in range(n + 1):
                for j in range(n):
                    qq = q[i, j]
                    got = g.y[i * N, j * N]
                    dev = min(abs(got - r.state_values[qq]), abs(got - r.bar_values[qq]))
                    if dev > worst_dev:
                        worst_dev, where = dev, ("y", i, j, q_seq, k_seq)
    orbit = BoundReport.from_margin(
        worst_dev, 0.0, where, "refinement orbit", {"max_len": n, "N": N, "automaton": a.name}
    )
    steps = BoundReport.from_margin(worst_step, r.epsilon, None, "refinement path steps")
    return worst([orbit, steps], label="refinement")


# -- serialization -------------------------------------------------------


def extension_to_json(ext: StableExtension) -> dict:
    return {
        "header": {"delta": ext.delta, "mu": ext.mu, "N": None},
        "psi": tr.to_json_dict(ext.psi_pres),
        "phi": tr.to_json_dict(ext.phi_pres),
    }


def extension_from_json(doc: dict) -> StableExtension:
    try:
        h = doc["header"]
        return StableExtension(
            tr.from_json_dict(doc["psi"]), tr.from_json_dict(doc["phi"]), float(h["delta"]), float(h["mu"])
        )
    except KeyError as exc:
        raise InputError(f"extension document is missing {exc}") from exc


def refinement_to_json(r: Refinement) -> dict:
    return {
        "header": {"delta": r.delta, "mu": None, "N": r.subdivision, "epsilon": r.epsilon},
        "symbols": list(r.symbol_values),
        "states": list(r.state_values),
        "bars": list(r.bar_values),
        "psi": tr.to_json_dict(r.psi_bar),
        "phi": tr.to_json_dict(r.phi_bar),
    }
