"""Two-index state dynamics and the comparison bounds between orbits.

A pair ``(psi, phi)`` of presentations with arities ``alpha+2`` and
``beta+2`` drives the recursion::

    x[i, j+1] = psi(y[i, j], x[i, j], ..., x[i+alpha, j])
    y[i+1, j] = phi(y[i, j], x[i, j], ..., x[i+beta, j])

from a row of initial ``x[i, 0]`` and a column of initial ``y[0, j]``. In
``rational-log`` mode the grid stores ``log_t`` of the rational orbit, so
every comparison below is carried out on logarithms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import automata
from .errors import ContractError, InputError
from .reports import BoundReport
from .tropical import (
    MaxPlusPresentation,
    TropicalParam,
    _lse,
    _scores,
    as_param,
    eval_rational,
    pair_stats,
)

MODES = ("pl", "dequantized", "rational-log")
DEFAULT_P_MAX = 64


@dataclass(frozen=True)
class OrbitGrid:
    """A filled state-dynamics grid.

    ``x`` has shape ``(I, J+1)`` and ``y`` has shape ``(I+1, J)``. With
    lookahead the recursion is computed on a trapezoid that is wider at the
    bottom; ``x_full``/``y_full`` keep it (NaN outside) and ``extents[j]``
    is the number of valid ``x`` entries in row ``j``.
    """

    I: int
    J: int
    x: np.ndarray
    y: np.ndarray
    mode: str
    t: Optional[float]
    x_full: np.ndarray = field(repr=False)
    y_full: np.ndarray = field(repr=False)
    extents: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)


def _kernel(pres: MaxPlusPresentation, mode: str, t: Optional[TropicalParam]) -> Callable:
    num, den = pres._num_arr, pres._den_arr
    if mode == "pl":
        return lambda pts: _scores(num, pts).max(axis=1) - _scores(den, pts).max(axis=1)
    ln_t = t.ln_t
    if mode == "dequantized":
        return lambda pts: _lse(_scores(num, pts), ln_t) - _lse(_scores(den, pts), ln_t)
    # eval_rational in log mode runs the same log-sum-exp path
    return lambda pts: np.atleast_1d(eval_rational(pres, t, pts, mode="log"))


def _lookahead(psi: MaxPlusPresentation, phi: MaxPlusPresentation) -> tuple[int, int]:
    if psi.arity < 2 or phi.arity < 2:
        raise InputError("psi and phi need arity >= 2 (one state and one symbol argument)")
    return psi.arity - 2, phi.arity - 2


def required_length(psi: MaxPlusPresentation, phi: MaxPlusPresentation, I: int, J: int) -> int:
    """Number of initial ``x`` entries ``run`` needs for an ``I x J`` grid."""
    alpha, beta = _lookahead(psi, phi)
    return I + max(alpha, beta) * J


def _prepare(psi, phi, t, x_init, y_init, I, J, mode):
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    if I < 1 or J < 1:
        raise InputError(f"grid extents must be positive, got I={I}, J={J}")
    tp = None
    if mode != "pl":
        if t is None:
            raise InputError(f"mode {mode!r} needs a tropical parameter t")
        tp = as_param(t)
    alpha, beta = _lookahead(psi, phi)
    gamma = max(alpha, beta)
    need = I + gamma * J
    x0 = np.asarray(x_init, dtype=float).ravel()
    y0 = np.asarray(y_init, dtype=float).ravel()
    if x0.size < need:
        raise InputError(
            f"x_init has {x0.size} entries; an {I}x{J} grid with lookahead {gamma} "
            f"needs I + gamma*J = {need}"
        )
    if y0.size < J:
        raise InputError(f"y_init has {y0.size} entries; J = {J} are required")
    return tp, alpha, beta, gamma, need, x0[:need], y0[:J]


def _fill(psi_step, phi_step, alpha, beta, gamma, I, J, x0, y0):
    """Shared grid filling; ``*_step(row, j, points) -> values``."""
    n0 = x0.size
    X = np.full((n0, J + 1), np.nan)
    Y = np.full((n0 + 1, J), np.nan)
    X[:, 0] = x0
    extents = [n0]
    for j in range(J):
        n_next = I + gamma * (J - j - 1)
        xs = X[:, j]
        y = y0[j]
        Y[0, j] = y
        for i in range(n_next):
            pt = np.empty((1, beta + 2))
            pt[0, 0] = y
            pt[0, 1:] = xs[i : i + beta + 1]
            y = float(phi_step(j, i, pt)[0])
            Y[i + 1, j] = y
        cols = [Y[:n_next, j]] + [xs[k : k + n_next] for k in range(alpha + 1)]
        X[:n_next, j + 1] = psi_step(j, None, np.column_stack(cols))
        extents.append(n_next)
    return X, Y, tuple(extents)


def run(
    psi: MaxPlusPresentation,
    phi: MaxPlusPresentation,
    t: TropicalParam | float | None,
    x_init: Sequence[float],
    y_init: Sequence[float],
    I: int,
    J: int,
    mode: str = "pl",
) -> OrbitGrid:
    """Fill an ``I x J`` state-dynamics grid.

    ``x_init`` needs ``I + gamma*J`` entries, ``gamma = max(alpha, beta)``,
    because each row consumes ``gamma`` columns of lookahead.
    """
    tp, alpha, beta, gamma, _, x0, y0 = _prepare(psi, phi, t, x_init, y_init, I, J, mode)
    f_psi = _kernel(psi, mode, tp)
    f_phi = _kernel(phi, mode, tp)
    X, Y, extents = _fill(
        lambda j, i, p: f_psi(p), lambda j, i, p: f_phi(p), alpha, beta, gamma, I, J, x0, y0
    )
    return OrbitGrid(
        I, J, X[:I].copy(), Y[: I + 1].copy(), mode, None if tp is None else tp.t, X, Y, extents
    )


def recursion_residual(grid: OrbitGrid, psi: MaxPlusPresentation, phi: MaxPlusPresentation) -> float:
    """Largest deviation from the defining recursions, re-evaluated per row.

    Deviations are divided by ``max(1, |entry|)`` so that rounding in
    orbits of large magnitude does not register as a violation.
    """
    tp = None if grid.t is None else as_param(grid.t)
    f_psi = _kernel(psi, grid.mode, tp)
    f_phi = _kernel(phi, grid.mode, tp)
    alpha, beta = _lookahead(psi, phi)
    worst = 0.0
    X, Y = grid.x_full, grid.y_full
    for j in range(grid.J):
        n = grid.extents[j + 1]
        px = np.column_stack([Y[:n, j]] + [X[k : k + n, j] for k in range(alpha + 1)])
        py = np.column_stack([Y[:n, j]] + [X[k : k + n, j] for k in range(beta + 1)])
        for got, want in ((f_psi(px), X[:n, j + 1]), (f_phi(py), Y[1 : n + 1, j])):
            rel = np.abs(got - want) / np.maximum(1.0, np.abs(want))
            worst = max(worst, float(np.max(rel)))
    return worst


def bound_P(i: int, c: float) -> float:
    """``P_i(c) = 1 + c + ... + c^i``; ``i + 1`` at ``c = 1``. May return inf."""
    if i < 0 or c < 0:
        raise InputError(f"bound_P needs i >= 0 and c >= 0, got i={i}, c={c}")
    if c == 1:
        return float(i + 1)
    try:
        return (c ** (i + 1) - 1.0) / (c - 1.0)
    except OverflowError:
        return math.inf


def _P_array(idx: np.ndarray, c: float) -> np.ndarray:
    idx = np.asarray(idx, dtype=float)
    if c == 1:
        return idx + 1.0
    with np.errstate(over="ignore"):
        return (np.power(c, idx + 1.0) - 1.0) / (c - 1.0)


def initial_rate(z1, w1, z2, w2) -> float:
    """Sup over entries of the two-sided ratios of two sets of initial values."""
    pairs = [(np.asarray(z1, float), np.asarray(z2, float)), (np.asarray(w1, float), np.asarray(w2, float))]
    worst = 1.0
    for a, b in pairs:
        if a.shape != b.shape:
            raise InputError(f"initial vectors differ in length: {a.shape} vs {b.shape}")
        if np.any(a <= 0) or np.any(b <= 0):
            raise InputError("initial values must be positive")
        if a.size:
            worst = max(worst, float(np.max(np.maximum(a / b, b / a))))
    return worst


def log_initial_rate(g1: OrbitGrid, g2: OrbitGrid) -> float:
    """``log_t`` of the initial rate of two log-domain grids."""
    _same_extent(g1, g2)
    dx = np.abs(g1.x[:, 0] - g2.x[:, 0])
    dy = np.abs(g1.y[0, :] - g2.y[0, :])
    return float(max(dx.max(initial=0.0), dy.max(initial=0.0)))


def _same_extent(g1: OrbitGrid, g2: OrbitGrid) -> None:
    if (g1.I, g1.J) != (g2.I, g2.J):
        raise InputError(f"grid extents differ: {(g1.I, g1.J)} vs {(g2.I, g2.J)}")


def _index_arrays(I: int, J: int, gamma: int):
    ii, jj = np.meshgrid(np.arange(I), np.arange(J), indexing="ij")
    # x[i, j+1] and y[i+1, j] share the index i + j(gamma+1)
    return ii + jj * (gamma + 1)


def _bound_report(g1, g2, log_bound, label, details) -> BoundReport:
    dx = np.abs(g1.x[:, 1:] - g2.x[:, 1:])
    dy = np.abs(g1.y[1:, :] - g2.y[1:, :])
    rx = BoundReport.from_arrays(dx, log_bound, label=label)
    ry = BoundReport.from_arrays(dy, log_bound, label=label)
    # report locations as grid coordinates of the compared entries
    if rx.margin <= ry.margin:
        i, j = rx.location if rx.location else (0, 0)
        loc = ("x", i, j + 1)
        r = rx
    else:
        i, j = ry.location if ry.location else (0, 0)
        loc = ("y", i + 1, j)
        r = ry
    return BoundReport.from_margin(r.worst_lhs, r.bound_rhs, loc, label, details)


def check_comparison(
    g1: OrbitGrid,
    g2: OrbitGrid,
    M: int,
    c: float,
    gamma: int,
    rate: float,
    multiplier: int,
    t: TropicalParam | float | None = None,
) -> BoundReport:
    """Compare two log-domain grids against ``M^{k P} rate^{c~^{e}}``.

    At ``x[i, j+1]`` and ``y[i+1, j]`` the allowed log-distance is
    ``k * P_n(c) * log_t M + c~^(n+1) * log_t rate`` with
    ``n = i + j(gamma+1)``, ``c~ = max(c, 1)`` and ``k = multiplier``.
    """
    _same_extent(g1, g2)
    tval = t if t is not None else (g1.t if g1.t is not None else g2.t)
    if tval is None:
        raise InputError("check_comparison needs t (grids in pl mode carry none)")
    if M < 1 or rate < 1:
        raise InputError(f"M and rate must be >= 1, got M={M}, rate={rate}")
    tp = as_param(tval)
    n = _index_arrays(g1.I, g1.J, gamma)
    ct = max(c, 1.0)
    log_M = math.log(M) / tp.ln_t
    log_rate = math.log(rate) / tp.ln_t
    with np.errstate(over="ignore", invalid="ignore"):
        bound = multiplier * _P_array(n, c) * log_M
        if log_rate > 0:
            bound = bound + np.power(ct, n + 1.0) * log_rate
        bound = np.where(np.isnan(bound), np.inf, bound)
    details = {"M": M, "c": c, "gamma": gamma, "rate": rate, "multiplier": multiplier, "t": tp.t}
    return _bound_report(g1, g2, bound, f"comparison x{multiplier}", details)


def check_initial_dependence(g1: OrbitGrid, g2: OrbitGrid, c: float, gamma: int) -> BoundReport:
    """Piecewise-linear grids: ``|x1 - x2| <= c~^(n+1) * (initial sup-difference)``."""
    _same_extent(g1, g2)
    if g1.mode != "pl" or g2.mode != "pl":
        raise ContractError("initial-dependence bound applies to pl grids")
    diff = log_initial_rate(g1, g2)
    n = _index_arrays(g1.I, g1.J, gamma)
    with np.errstate(over="ignore", invalid="ignore"):
        bound = np.power(max(c, 1.0), n + 1.0) * diff
        bound = np.where(np.isnan(bound), np.inf, bound)
    return _bound_report(g1, g2, bound, "initial dependence", {"c": c, "initial_diff": diff})


def sandwich_run(
    f1: MaxPlusPresentation,
    f2: MaxPlusPresentation,
    g1: MaxPlusPresentation,
    g2: MaxPlusPresentation,
    t: TropicalParam | float,
    x_init: Sequence[float],
    y_init: Sequence[float],
    I: int,
    J: int,
    lambda_policy: float | str = "random",
    seed: Optional[int] = None,
) -> OrbitGrid:
    """An orbit squeezed between two pairs of rational maps.

    Each new cell is ``f1^(1-lam) * f2^lam`` (resp. ``g``) of the current
    inputs, so the dynamical inequalities hold by construction. ``lam`` is
    a constant in ``[0, 1]`` or, with ``lambda_policy='random'``, drawn per
    cell from a generator seeded with ``seed``.
    """
    if f1.arity != f2.arity or g1.arity != g2.arity:
        raise InputError("sandwiching maps must share arities")
    if lambda_policy == "random":
        if seed is None:
            raise InputError("a random lambda policy needs a seed")
        rng = np.random.default_rng(seed)
        draw = lambda n: rng.random(n)  # noqa: E731
    else:
        lam = float(lambda_policy)
        if not 0.0 <= lam <= 1.0:
            raise InputError(f"lambda must lie in [0, 1], got {lam}")
        draw = lambda n: np.full(n, lam)  # noqa: E731
    mode = "rational-log"
    tp, alpha, beta, gamma, _, x0, y0 = _prepare(f1, g1, t, x_init, y_init, I, J, mode)
    k_f1, k_f2 = _kernel(f1, mode, tp), _kernel(f2, mode, tp)
    k_g1, k_g2 = _kernel(g1, mode, tp), _kernel(g2, mode, tp)
    lam_rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def lams(j: int) -> tuple[np.ndarray, np.ndarray]:
        if j not in lam_rows:
            n_next = I + gamma * (J - j - 1)
            lam_rows[j] = (draw(n_next), draw(n_next))
        return lam_rows[j]

    def blend(lo_fn, hi_fn, pts, lam, where):
        lo, hi = lo_fn(pts), hi_fn(pts)
        # relative slack: orbits reach magnitudes where one ulp exceeds 1e-12
        bad = lo > hi + 1e-12 * np.maximum(1.0, np.abs(hi))
        if np.any(bad):
            raise InputError(f"sandwich ordering violated at {where}: {lo[bad][0]} > {hi[bad][0]}")
        return (1.0 - lam) * lo + lam * hi

    def psi_step(j, _i, pts):
        return blend(k_f1, k_f2, pts, lams(j)[0], f"x row {j + 1}")

    def phi_step(j, i, pts):
        return blend(k_g1, k_g2, pts, lams(j)[1][i], f"y cell ({i + 1}, {j})")

    X, Y, extents = _fill(psi_step, phi_step, alpha, beta, gamma, I, J, x0, y0)
    meta = {"lambda_policy": lambda_policy, "seed": seed}
    return OrbitGrid(I, J, X[:I].copy(), Y[: I + 1].copy(), mode, tp.t, X, Y, extents, meta)


# -- recursivity ------------------------------------------------------------


@dataclass(frozen=True)
class QuasiPeriod:
    """Smallest admissible period and the evidence for its minimality.

    ``evidence[p']`` is the largest two-sided ratio reached for each
    rejected ``p' < p``.
    """

    p: int
    max_ratio: float
    evidence: dict


def _log_series(series, log_base: Optional[float]) -> np.ndarray:
    arr = np.asarray(series, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError("series must be a vector or a matrix indexed [i, j]")
    if log_base is not None:
        return arr * math.log(log_base)
    if np.any(arr <= 0):
        raise InputError("series entries must be positive")
    return np.log(arr)


def _max_log_ratio(logs: np.ndarray, p: int) -> float:
    T = logs.shape[1]
    worst = 0.0
    for shift in range(p, T, p):
        d = np.nanmax(np.abs(logs[:, shift:] - logs[:, :-shift]))
        worst = max(worst, float(d))
    return worst


def detect_quasi_period(
    series,
    C: float,
    p_max: int = DEFAULT_P_MAX,
    log_base: Optional[float] = None,
) -> Optional[QuasiPeriod]:
    """Smallest ``p <= p_max`` with ``(z[j + p l] / z[j])^{+-1} <= C`` for all ``j, l``.

    A matrix is read as ``series[i, j]`` with ``j`` the time index. With
    ``log_base`` the entries are logarithms in that base.
    """
    logs = _log_series(series, log_base)
    T = logs.shape[1]
    log_C = math.log(C)
    evidence: dict[int, float] = {}
    for p in range(1, min(p_max, T - 1) + 1):
        r = _max_log_ratio(logs, p)
        if r <= log_C:
            return QuasiPeriod(p, math.exp(r), evidence)
        evidence[p] = math.exp(r) if r < 700 else math.inf
    return None


def second_order_orbit(
    pres: MaxPlusPresentation,
    t: TropicalParam | float | None,
    x0: float,
    x1: float,
    n: int,
    mode: str = "rational-log",
) -> np.ndarray:
    """Iterate ``x[k] = f(x[k-2], x[k-1])`` for a presentation of arity 2."""
    if pres.arity != 2:
        raise InputError(f"second-order recursion needs arity 2, got {pres.arity}")
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    kern = _kernel(pres, mode, None if mode == "pl" else as_param(t))
    out = np.empty(n)
    out[:2] = (x0, x1)[: min(n, 2)]
    for k in range(2, n):
        out[k] = kern(np.array([[out[k - 2], out[k - 1]]]))[0]
    return out


def lyness_presentation() -> MaxPlusPresentation:
    """``max(0, z) - w`` whose rational lift is ``(1 + z) / w`` for every t."""
    return MaxPlusPresentation.from_lists(num=[(0, (0, 0)), (0, (0, 1))], den=[(0, (1, 0))])


def abs_presentation() -> MaxPlusPresentation:
    """``max(z, -z) - w``; the rational lift is ``(z + 1/z) / w``."""
    return MaxPlusPresentation.from_lists(num=[(0, (0, 1)), (0, (0, -1))], den=[(0, (1, 0))])


# -- quasi-recursivity of stable extensions --------------------------------


def probe_thresholds(ext, C: float) -> dict:
    """Smallest t meeting ``log_t C <= delta/2`` and ``mu delta/2 + log_t M < delta/2``."""
    M = pair_stats(ext.psi_pres, ext.phi_pres).components
    delta, mu = ext.delta, ext.mu
    slack = delta * (1.0 - mu) / 2.0
    if slack <= 0:
        raise InputError("stability constant mu must be < 1")
    t_C = math.exp(2.0 * math.log(C) / delta) if C > 1 else 1.0
    t_M = math.exp(math.log(M) / slack) if M > 1 else 1.0
    return {"M": M, "t_min_C": t_C, "t_min_M": t_M, "t_min": max(t_C, t_M)}


def quasi_recursivity_probe(
    ext,
    a: automata.AutomatonSpec,
    state_word: Sequence[int],
    t: TropicalParam | float,
    C: float,
    I: int,
    J: int,
    seed: int,
) -> BoundReport:
    """Check ``(z[i, j] / z[i, j + P l])^{+-1} <= C^4`` on a rational-log run.

    ``P = p * len(state_word)`` where ``p`` is the order of the composite
    state on level ``I``. Initial symbols are drawn at random and perturbed
    within ``log_t C`` of the lattice; the boundary cycles through
    ``state_word`` with the same perturbation.
    """
    if not a.is_mealy:
        raise ContractError("quasi-recursivity probe requires a Mealy automaton")
    if not automata.is_invertible_mealy(a):
        raise ContractError("quasi-recursivity probe requires an invertible automaton")
    if not state_word:
        raise InputError("state_word must be non-empty")
    tp = as_param(t)
    th = probe_thresholds(ext, C)
    log_C = math.log(C) / tp.ln_t
    log_M = math.log(th["M"]) / tp.ln_t
    if log_C > ext.delta / 2 or ext.mu * ext.delta / 2 + log_M >= ext.delta / 2:
        raise InputError(
            f"t = {tp.t:g} is below the threshold: need log_t C <= delta/2 and "
            f"mu*delta/2 + log_t M < delta/2 (M = {th['M']}); minimal admissible t is "
            f"{th['t_min']:.6g}"
        )
    p = automata.order_on_level(a, state_word, I)
    rng = np.random.default_rng(seed)
    symbols = rng.integers(0, a.n_symbols, size=I)
    x0 = np.asarray(a.alphabet, float)[symbols] + rng.uniform(-log_C, log_C, size=I)
    states = np.asarray(a.states, float)[[state_word[j % len(state_word)] for j in range(J)]]
    y0 = states + rng.uniform(-log_C, log_C, size=J)
    grid = run(ext.psi_pres, ext.phi_pres, tp, x0, y0, I, J, mode="rational-log")
    details = {"p": p, "level": I, "M": th["M"], "t_min": th["t_min"], "seed": seed}
    if p == automata.EXCEEDED or p * len(state_word) > J:
        details["note"] = "period does not fit in the grid"
        return BoundReport.vacuous("quasi-recursivity", details)
    period = p * len(state_word)
    details["period"] = period
    worst = _max_log_ratio(grid.x, period)
    # locate the worst pair for the report
    loc = None
    best = -1.0
    for shift in range(period, J + 1, period):
        d = np.abs(grid.x[:, shift:] - grid.x[:, :-shift])
        k = np.unravel_index(int(np.argmax(d)), d.shape)
        if d[k] > best:
            best, loc = float(d[k]), (int(k[0]), int(k[1]), shift // period)
    return BoundReport.from_margin(worst, 4 * log_C, loc, "quasi-recursivity", details)


# -- export ----------------------------------------------------------------


def grid_csv(grid: OrbitGrid) -> str:
    """CSV text with header ``i,j,x,y``; missing entries are left empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "x", "y"])
    for i in range(grid.I + 1):
        for j in range(grid.J + 1):
            xv = repr(float(grid.x[i, j])) if i < grid.I else ""
            yv = repr(float(grid.y[i, j])) if j < grid.J else ""
            if xv or yv:
                w.writerow([i, j, xv, yv])
    return buf.getvalue()
