"""Hyperbolic Mealy systems ``u_s = f(v, u) - u``, ``v_x = g(v, u) - v``.

The right-hand sides are positive rational lifts evaluated in the linear
domain. The solver marches Picard iterations over ``tau x tau`` squares,
left to right along a stripe and then stripe by stripe upward, with the
trapezoidal rule on an ``h`` lattice inside each square.

Arrays are laid out as ``u[k, l] = u(k h, l h)``: the first axis is ``x``,
the second is ``s``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tropical as tr
from .errors import DomainError, InputError, InvariantError, NumericalError
from .reports import BoundReport, worst
from .tropical import MaxPlusPresentation, TropicalParam

CONTRACTION_LIMIT = 0.5 + 1e-6
WINDOW_GRID = 200
_DIFF_FLOOR = 1e-13


class Field(Protocol):
    """A right-hand side ``F(v, u)`` with its two partial derivatives."""

    def value(self, v: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def grad(self, v: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class RationalField:
    """Linear-domain lift ``f_t`` of a two-variable presentation in ``(v, u)``."""

    pres: MaxPlusPresentation
    t: TropicalParam

    def __post_init__(self) -> None:
        if self.pres.arity != 2:
            raise InputError(f"PDE fields take two variables (v, u), got arity {self.pres.arity}")

    def _points(self, v, u) -> tuple[np.ndarray, tuple]:
        v, u = np.broadcast_arrays(np.asarray(v, float), np.asarray(u, float))
        return np.stack([v.ravel(), u.ravel()], axis=1), v.shape

    def value(self, v, u) -> np.ndarray:
        pts, shape = self._points(v, u)
        return np.asarray(tr.eval_rational(self.pres, self.t, pts, mode="linear")).reshape(shape)

    def grad(self, v, u) -> tuple[np.ndarray, np.ndarray]:
        pts, shape = self._points(v, u)
        gr = np.asarray(tr.rational_gradient(self.pres, self.t, pts)).reshape(-1, 2)
        return gr[:, 0].reshape(shape), gr[:, 1].reshape(shape)


@dataclass(frozen=True)
class CallableField:
    """A field given by plain callables; used for composites with no presentation."""

    fn: Callable
    dfn: Callable

    def value(self, v, u) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(v, float), np.asarray(u, float)), dtype=float)

    def grad(self, v, u) -> tuple[np.ndarray, np.ndarray]:
        dv, du = self.dfn(np.asarray(v, float), np.asarray(u, float))
        return np.asarray(dv, float), np.asarray(du, float)


FieldLike = Union[Field, MaxPlusPresentation]


def as_field(f: FieldLike, t: TropicalParam | float) -> Field:
    if isinstance(f, MaxPlusPresentation):
        return RationalField(f, tr.as_param(t))
    return f


@dataclass(frozen=True)
class SelfDynamicsWindow:
    """A window ``[r, R]`` with drift margin ``q`` (``0 < q < r < R``)."""

    r: float
    R: float
    q: float

    def __post_init__(self) -> None:
        if not 0 < self.q < self.r < self.R:
            raise InputError(f"need 0 < q < r < R, got q={self.q}, r={self.r}, R={self.R}")

    @property
    def inner(self) -> tuple[float, float]:
        return self.r + self.q, self.R - self.q


def check_self_dynamics(
    f: FieldLike,
    g: FieldLike,
    t: TropicalParam | float,
    r: float,
    R: float,
    q: float,
    grid: int = 101,
) -> BoundReport:
    """Check the three drift inequalities defining a self-dynamics window.

    For ``F(a, b) - b`` with ``F = f(a, b)`` and ``F = g(b, a)``: at least
    ``q`` for ``b`` in ``[r, r + q]``, at most ``-q`` for ``b`` in
    ``[R - q, R]``, and at most ``R - r`` in absolute value on ``[r, R]``.
    The free variable ``a`` sweeps ``[r, R]`` and the decades
    ``10^-3 .. 10^3``. Lower and upper regions are scanned outward from the
    inner window, so ties report the cell nearest to it.
    """
    SelfDynamicsWindow(r, R, q)
    ff, gg = as_field(f, t), as_field(g, t)
    a = np.unique(np.concatenate([np.linspace(r, R, grid), 10.0 ** np.arange(-3, 4)]))
    b_low = np.linspace(r + q, r, grid)
    b_high = np.linspace(R - q, R, grid)
    b_all = np.linspace(r, R, grid)
    reports = []
    for name, F in (("f", lambda aa, bb: ff.value(aa, bb)), ("g", lambda aa, bb: gg.value(bb, aa))):
        for region, bs, kind in (("low", b_low, "ge"), ("high", b_high, "le"), ("size", b_all, "abs")):
            bb, aa = np.meshgrid(bs, a, indexing="ij")
            drift = F(aa, bb) - bb
            if kind == "ge":
                lhs, rhs = -drift, np.full_like(drift, -q)
            elif kind == "le":
                lhs, rhs = drift, np.full_like(drift, -q)
            else:
                lhs, rhs = np.abs(drift), np.full_like(drift, R - r)
            locs = [(name, region, float(b_), float(a_)) for b_, a_ in zip(bb.ravel(), aa.ravel())]
            reports.append(BoundReport.from_arrays(lhs.ravel(), rhs.ravel(), locs, f"self-dynamics {name} {region}"))
    failing = [rep for rep in reports if not rep.passed]
    if failing:
        return BoundReport(
            failing[0].worst_lhs, failing[0].bound_rhs, failing[0].margin, failing[0].location,
            False, "self-dynamics", {"window": [r, R, q]},
        )
    return worst(reports, label="self-dynamics")


# -- window constants ----------------------------------------------------


def window_constants(f: Field, g: Field, window: SelfDynamicsWindow, grid: int = WINDOW_GRID) -> dict:
    """Sup-norm constants of the pair on ``[r, R]^2`` from a ``grid x grid`` lattice.

    ``D`` bounds the drifts, ``B`` the shifted partials, ``lip`` the sup-norm
    Lipschitz constant of the drifts, ``b``/``d`` the cross terms of the
    energy estimate and ``a_neg``/``c_neg`` the negativity rates (``c_neg``
    is not positive when the drifts are not contracting somewhere).
    """
    ax = np.linspace(window.r, window.R, grid)
    V, U = np.meshgrid(ax, ax, indexing="ij")
    fv, fu = f.grad(V, U)
    gv, gu = g.grad(V, U)
    fbar = f.value(V, U) - U
    gbar = g.value(V, U) - V
    shifted_f, shifted_g = fu - 1.0, gv - 1.0
    return {
        "D": float(max(np.max(np.abs(fbar)), np.max(np.abs(gbar)))),
        "B": float(max(np.max(np.abs(shifted_f)), np.max(np.abs(fv)), np.max(np.abs(shifted_g)), np.max(np.abs(gu)))),
        "lip": float(max(np.max(np.abs(shifted_f) + np.abs(fv)), np.max(np.abs(gu) + np.abs(shifted_g)))),
        "b": float(np.max(np.abs(fv * gbar))),
        "d": float(np.max(np.abs(gu * fbar))),
        "a_neg": float(-min(np.min(shifted_f), np.min(shifted_g))),
        "c_neg": float(-max(np.max(shifted_f), np.max(shifted_g))),
        "grid": grid,
    }


def tau_max(constants: dict, q: float) -> tuple[float, dict]:
    """Largest square size allowed by the three step conditions."""
    limits = {
        "tau*Lip <= 1/2": 0.5 / constants["lip"] if constants["lip"] > 0 else math.inf,
        "tau <= q/D": q / constants["D"] if constants["D"] > 0 else math.inf,
        "tau*B <= 1/4": 0.25 / constants["B"] if constants["B"] > 0 else math.inf,
    }
    return min(limits.values()), limits


# -- solver --------------------------------------------------------------


@dataclass(frozen=True)
class GridSolution:
    """Solution of a hyperbolic Mealy system on ``[0, X] x [0, S]``."""

    h: float
    tau: float
    X: float
    S: float
    u: np.ndarray
    v: np.ndarray
    window: SelfDynamicsWindow
    diagnostics: dict = field(default_factory=dict, compare=False)
    constants: dict = field(default_factory=dict, compare=False)

    @property
    def xs(self) -> np.ndarray:
        return np.arange(self.u.shape[0]) * self.h

    @property
    def ss(self) -> np.ndarray:
        return np.arange(self.u.shape[1]) * self.h

    def steps_per_unit(self) -> int:
        n = round(1.0 / self.h)
        if not math.isclose(n * self.h, 1.0, rel_tol=0, abs_tol=1e-9):
            raise InputError(f"h = {self.h} does not divide 1")
        return n


def _lattice_count(extent: float, h: float, name: str) -> int:
    n = round(extent / h)
    if n < 1 or not math.isclose(n * h, extent, rel_tol=1e-12, abs_tol=1e-12):
        raise InputError(f"h = {h} does not divide {name} = {extent}")
    return n


def _initial(data, coords: np.ndarray, name: str) -> np.ndarray:
    if callable(data):
        vals = np.asarray(data(coords), dtype=float)
        vals = np.broadcast_to(vals, coords.shape).copy()
    else:
        vals = np.asarray(data, dtype=float)
        if vals.ndim == 0:
            vals = np.full(coords.shape, float(vals))
        if vals.shape != coords.shape:
            raise InputError(f"{name} has {vals.size} values, the lattice needs {coords.size}")
    return vals


def _cumtrapz(F: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Cumulative trapezoid integral from index 0 along ``axis``."""
    F = np.moveaxis(F, axis, 0)
    out = np.zeros_like(F)
    out[1:] = np.cumsum(0.5 * h * (F[1:] + F[:-1]), axis=0)
    return np.moveaxis(out, 0, axis)


def _picard_square(f: Field, g: Field, u_bottom, v_left, h, tol, max_iters, tag):
    """Picard iteration on one square; returns ``(u, v, iterations, contraction)``.

    ``u_bottom[k]`` is ``u`` along the bottom edge and ``v_left[l]`` is ``v``
    along the left edge; the square arrays have shape ``(nx, ns)``.
    """
    nx, ns = u_bottom.size, v_left.size
    u0 = np.broadcast_to(u_bottom[:, None], (nx, ns))
    v0 = np.broadcast_to(v_left[None, :], (nx, ns))
    u, v = u0.copy(), v0.copy()
    prev_diff, contraction, strikes = None, 0.0, 0
    for it in range(1, max_iters + 1):
        fbar = f.value(v, u) - u
        gbar = g.value(v, u) - v
        u_new = u0 + _cumtrapz(fbar, h, axis=1)
        v_new = v0 + _cumtrapz(gbar, h, axis=0)
        diff = float(max(np.max(np.abs(u_new - u)), np.max(np.abs(v_new - v))))
        u, v = u_new, v_new
        if prev_diff is not None and prev_diff > _DIFF_FLOOR:
            ratio = diff / prev_diff
            contraction = max(contraction, ratio)
            strikes = strikes + 1 if ratio > CONTRACTION_LIMIT else 0
            if strikes >= 3:
                raise NumericalError(f"Picard contraction {ratio:.4g} > 1/2 persists on square {tag}")
        if diff <= tol:
            return u, v, it, contraction
        prev_diff = diff
    raise NumericalError(f"Picard iteration did not reach tol={tol:g} in {max_iters} steps on square {tag}")


def solve(
    f: FieldLike,
    g: FieldLike,
    t: TropicalParam | float,
    window: SelfDynamicsWindow,
    u0,
    v0,
    X: float,
    S: float,
    h: Optional[float] = None,
    tau: Optional[float] = None,
    tol: float = 1e-12,
    max_iters: int = 200,
    lipschitz: Optional[float] = None,
) -> GridSolution:
    """Solve on ``[0, X] x [0, S]`` from ``u(x, 0) = u0`` and ``v(0, s) = v0``.

    ``u0``/``v0`` are callables on lattice coordinates or arrays of lattice
    values. Without ``tau`` the square size is the largest unit fraction
    meeting the step conditions; without ``h`` it is ``tau / 8``. A given
    ``tau`` must meet the conditions and be a multiple of ``h``.
    ``lipschitz`` overrides the grid estimate of the drifts' Lipschitz
    constant.
    """
    ff, gg = as_field(f, t), as_field(g, t)
    consts = window_constants(ff, gg, window)
    if lipschitz is not None:
        if lipschitz < consts["lip"]:
            raise InputError(f"declared Lipschitz bound {lipschitz} is below the grid estimate {consts['lip']:.6g}")
        consts["lip"] = float(lipschitz)
    tmax, limits = tau_max(consts, window.q)
    if tau is None:
        if h is not None:
            T = math.floor(tmax / h * (1 + 1e-12))
            if T < 1:
                failing = min(limits, key=limits.get)
                raise InputError(f"h = {h} exceeds the largest admissible tau ({failing}: {limits[failing]:.6g})")
            tau = T * h
        else:
            tau = 1.0 / math.ceil(1.0 / tmax) if math.isfinite(tmax) else 1.0
    for name, lim in limits.items():
        if tau > lim * (1 + 1e-12):
            raise InputError(f"tau = {tau:.6g} violates {name} (limit {lim:.6g})")
    if h is None:
        h = tau / 8
    T = round(tau / h)
    if T < 1 or not math.isclose(T * h, tau, rel_tol=1e-9):
        raise InputError(f"h = {h} does not divide tau = {tau}")
    nx, ns = _lattice_count(X, h, "X"), _lattice_count(S, h, "S")
    xs, ss = np.arange(nx + 1) * h, np.arange(ns + 1) * h
    ub, vl = _initial(u0, xs, "u0"), _initial(v0, ss, "v0")
    lo, hi = window.inner
    for name, vals in (("u0", ub), ("v0", vl)):
        if vals.min() < lo - 1e-12 or vals.max() > hi + 1e-12:
            raise InputError(
                f"{name} range [{vals.min():.6g}, {vals.max():.6g}] leaves [r+q, R-q] = [{lo:.6g}, {hi:.6g}]"
            )
    u = np.empty((nx + 1, ns + 1))
    v = np.empty((nx + 1, ns + 1))
    u[:, 0] = ub
    v[0, :] = vl
    iters, contractions = [], []
    for stripe, s_lo in enumerate(range(0, ns, T)):
        s_hi = min(s_lo + T, ns)
        row_iters, row_con = [], []
        for square, x_lo in enumerate(range(0, nx, T)):
            x_hi = min(x_lo + T, nx)
            us, vs, it, con = _picard_square(
                ff, gg, u[x_lo : x_hi + 1, s_lo], v[x_lo, s_lo : s_hi + 1], h, tol, max_iters, (square, stripe)
            )
            if con > CONTRACTION_LIMIT:
                raise NumericalError(f"Picard contraction {con:.6g} > 1/2 on square {(square, stripe)}")
            u[x_lo : x_hi + 1, s_lo : s_hi + 1] = us
            v[x_lo : x_hi + 1, s_lo : s_hi + 1] = vs
            row_iters.append(it)
            row_con.append(con)
        iters.append(row_iters)
        contractions.append(row_con)
    bad = np.argwhere((u < lo - 1e-9) | (u > hi + 1e-9) | (v < lo - 1e-9) | (v > hi + 1e-9))
    if bad.size:
        k, l = bad[0]
        raise InvariantError(
            f"solution leaves [r+q, R-q] at x={k * h:.6g}, s={l * h:.6g}: u={u[k, l]:.6g}, v={v[k, l]:.6g}"
        )
    consts["A"] = float(max(np.max(np.abs(np.gradient(ub, h))), np.max(np.abs(np.gradient(vl, h)))))
    sol = GridSolution(
        h=float(h), tau=float(tau), X=float(X), S=float(S), u=u, v=v, window=window,
        diagnostics={
            "iterations": iters,
            "contractions": contractions,
            "max_contraction": float(max(max(r) for r in contractions)),
            "tol": tol,
            "tau_limits": limits,
        },
        constants=consts,
    )
    res_u, res_v = residual(sol, ff, gg, t)
    residual_tol = 5 * h
    sol.diagnostics.update({"residual": [res_u, res_v], "residual_tol": residual_tol})
    if max(res_u, res_v) > residual_tol:
        raise InvariantError(f"residual {max(res_u, res_v):.3g} exceeds the declared tolerance {residual_tol:.3g}")
    return sol


def reparametrize(data: Callable, scale: float) -> Callable:
    """Initial data for the rescaled pair ``(u, v)(scale x, scale s)``.

    The rescaled fields solve the system with ``epsilon / scale`` in front of
    the derivatives; this only transforms the data, the solver keeps
    ``epsilon = 1``.
    """
    if scale <= 0:
        raise InputError(f"scale must be positive, got {scale}")
    return lambda coords: data(scale * np.asarray(coords, dtype=float))


# -- analysis ------------------------------------------------------------


def _derivatives(sol: GridSolution) -> dict:
    h = sol.h
    return {
        "u_x": np.gradient(sol.u, h, axis=0),
        "u_s": np.gradient(sol.u, h, axis=1),
        "v_x": np.gradient(sol.v, h, axis=0),
        "v_s": np.gradient(sol.v, h, axis=1),
    }


def residual(sol: GridSolution, f: FieldLike, g: FieldLike, t: TropicalParam | float) -> tuple[float, float]:
    """Sup norms of both equation residuals, skipping the outermost layer."""
    ff, gg = as_field(f, t), as_field(g, t)
    der = _derivatives(sol)
    ru = der["u_s"] - (ff.value(sol.v, sol.u) - sol.u)
    rv = der["v_x"] - (gg.value(sol.v, sol.u) - sol.v)
    core = (slice(1, -1), slice(1, -1))
    if ru[core].size == 0:
        return 0.0, 0.0
    return float(np.max(np.abs(ru[core]))), float(np.max(np.abs(rv[core])))


def gronwall_envelope(w0, s, a: float, c: float, b: float):
    """Two-sided bound for ``w' = k w + F`` with ``-a <= k <= -c`` and ``|F| <= b``.

    The upper end solves ``W' = -c W + b`` while ``W >= 0`` and
    ``W' = -a W + b`` below zero; the lower end mirrors it. For ``w0 >= 0``
    this is the lower rate ``a``, upper rate ``c`` envelope.
    """
    if not 0 < c <= a:
        raise InputError(f"need 0 < c <= a, got a={a}, c={c}")
    if b < 0:
        raise InputError(f"b must be non-negative, got {b}")
    w0, s = np.broadcast_arrays(np.asarray(w0, float), np.asarray(s, float))

    def upper(w0):
        pos = b / c + (w0 - b / c) * np.exp(-c * s)
        neg = b / a + (w0 - b / a) * np.exp(-a * s)
        if b > 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                s_star = np.log1p(-a * np.minimum(w0, 0.0) / b) / a
            after = b / c * (1.0 - np.exp(-c * (s - s_star)))
            neg = np.where(s > s_star, after, neg)
        return np.where(w0 >= 0, pos, neg)

    return -upper(-w0), upper(w0)


def energy_report(sol: GridSolution, f: FieldLike, g: FieldLike, t: TropicalParam | float) -> list[BoundReport]:
    """Stripe growth of ``u_x``/``v_s``, the drift bound on ``u_s``/``v_x`` and
    the Grönwall envelope of ``u_x`` and ``v_s``.

    Derivatives are centred differences of the solved fields.
    """
    k = sol.constants
    der = _derivatives(sol)
    X, S = np.meshgrid(sol.xs, sol.ss, indexing="ij")
    A, D = k["A"], k["D"]
    with np.errstate(over="ignore"):
        grow_u = np.exp2(S / sol.tau) * (A + 2 * D)
        grow_v = np.exp2(X / sol.tau) * (A + 2 * D)
    stripe = worst(
        [
            BoundReport.from_arrays(np.abs(der["u_x"]), grow_u, label="u_x stripe growth"),
            BoundReport.from_arrays(np.abs(der["v_s"]), grow_v, label="v_s stripe growth"),
        ],
        label="stripe growth 2^(s/tau)(A+2D)",
    )
    drift = worst(
        [
            BoundReport.from_arrays(np.abs(der["u_s"]), np.full_like(sol.u, D), label="u_s"),
            BoundReport.from_arrays(np.abs(der["v_x"]), np.full_like(sol.u, D), label="v_x"),
        ],
        label="drift |u_s|, |v_x| <= D",
    )
    a, c = k["a_neg"], k["c_neg"]
    if c <= 0:
        env = BoundReport.vacuous("Gronwall envelope", {"applicable": False, "a": a, "c": c})
    else:
        ux, vs = der["u_x"], der["v_s"]
        lo_u, hi_u = gronwall_envelope(ux[:, :1], S, a, c, k["b"])
        lo_v, hi_v = gronwall_envelope(vs[:1, :], X, a, c, k["d"])
        details = {"applicable": True, "a": a, "c": c, "b": k["b"], "d": k["d"]}
        env = worst(
            [
                BoundReport.from_arrays(lo_u, ux, label="u_x lower"),
                BoundReport.from_arrays(ux, hi_u, label="u_x upper"),
                BoundReport.from_arrays(lo_v, vs, label="v_s lower"),
                BoundReport.from_arrays(vs, hi_v, label="v_s upper"),
            ],
            label="Gronwall envelope",
        )
        env = BoundReport(env.worst_lhs, env.bound_rhs, env.margin, env.location, env.passed, env.label, details)
    return [stripe, drift, env]


def second_derivatives(sol: GridSolution, f: FieldLike, g: FieldLike, t: TropicalParam | float):
    """``u_ss`` and ``v_xx`` from the differentiated equations."""
    ff, gg = as_field(f, t), as_field(g, t)
    der = _derivatives(sol)
    fv, fu = ff.grad(sol.v, sol.u)
    gv, gu = gg.grad(sol.v, sol.u)
    u_ss = (ff.value(sol.v, sol.u) - sol.u) * (fu - 1.0) + fv * der["v_s"]
    v_xx = (gg.value(sol.v, sol.u) - sol.v) * (gv - 1.0) + gu * der["u_x"]
    return u_ss, v_xx


def _unit_windows(a: np.ndarray, n: int, axis: int, op) -> np.ndarray:
    """``op`` over ``[i, i + n]`` along ``axis`` for every start with room."""
    return op(sliding_window_view(a, n + 1, axis=axis), axis=-1)


def higher_distortion(sol: GridSolution, f: FieldLike, g: FieldLike, t: TropicalParam | float) -> float:
    """Sup over the grid of the unit-window ratios ``sup|u_ss| / u(x, s+1)``
    and ``sup|v_xx| / v(x+1, s)``."""
    n = sol.steps_per_unit()
    if sol.u.shape[0] <= n or sol.u.shape[1] <= n:
        raise InputError("higher distortion needs extents of at least 1")
    u_ss, v_xx = second_derivatives(sol, f, g, t)
    den_u, den_v = sol.u[:, n:], sol.v[n:, :]
    if min(den_u.min(), den_v.min()) < 1e-12:
        raise DomainError("shifted field below 1e-12 in the distortion ratio")
    r1 = _unit_windows(np.abs(u_ss), n, 1, np.max) / den_u
    r2 = _unit_windows(np.abs(v_xx), n, 0, np.max) / den_v
    return float(max(r1.max(), r2.max()))


def admissibility_check(
    sol: GridSolution, f: FieldLike, g: FieldLike, t: TropicalParam | float, mu: float
) -> BoundReport:
    """Both admissibility inequalities at every node with a unit window above/right.

    The plain form compares the left side with ``(2 - mu)`` times the minimum
    of the shifted field over the window; the sharpened form compares its
    window maximum with ``2 u(x, s+1)`` (``2 v(x+1, s)``).
    """
    if not 0 <= mu < 2:
        raise InputError(f"mu must lie in [0, 2), got {mu}")
    n = sol.steps_per_unit()
    if sol.u.shape[0] <= n or sol.u.shape[1] <= n:
        raise InputError("admissibility needs extents of at least 1")
    ff, gg = as_field(f, t), as_field(g, t)
    der = _derivatives(sol)
    fv, fu = ff.grad(sol.v, sol.u)
    gv, gu = gg.grad(sol.v, sol.u)
    lhs_u = np.abs((ff.value(sol.v, sol.u) - sol.u) * (fu - 1.0)) + np.abs(der["v_s"] * fv)
    lhs_v = np.abs((gg.value(sol.v, sol.u) - sol.v) * (gv - 1.0)) + np.abs(der["u_x"] * gu)
    reports = [
        BoundReport.from_arrays(lhs_u[:, : lhs_u.shape[1] - n],
                                (2 - mu) * _unit_windows(sol.u, n, 1, np.min), label="u plain"),
        BoundReport.from_arrays(lhs_v[: lhs_v.shape[0] - n, :],
                                (2 - mu) * _unit_windows(sol.v, n, 0, np.min), label="v plain"),
        BoundReport.from_arrays(_unit_windows(lhs_u, n, 1, np.max), 2 * sol.u[:, n:], label="u sharpened"),
        BoundReport.from_arrays(_unit_windows(lhs_v, n, 0, np.max), 2 * sol.v[n:, :], label="v sharpened"),
    ]
    rep = worst(reports, label="admissibility")
    details = {"mu": mu, "parts": {r.label: r.margin for r in reports}}
    return BoundReport(rep.worst_lhs, rep.bound_rhs, rep.margin, rep.location, rep.passed, rep.label, details)


def minimal_N0(K: float, C: float = 0.5) -> int:
    """Smallest integer ``N0 >= max(1/delta, 2 - delta)`` with ``delta = 1 - C K``."""
    delta = 1.0 - C * K
    if delta <= 0:
        raise DomainError(f"C K = {C * K:.6g} leaves no room: need C K < 1")
    return math.ceil(max(1.0 / delta, 2.0 - delta) - 1e-12)


def initial_rate(sol1: GridSolution, sol2: GridSolution) -> float:
    """Sup of the two-sided ratios of the initial data of two solutions."""
    _same_lattice(sol1, sol2)
    pairs = [(sol1.u[:, 0], sol2.u[:, 0]), (sol1.v[0, :], sol2.v[0, :])]
    return float(max(np.max(np.maximum(a / b, b / a)) for a, b in pairs))


def _same_lattice(sol1: GridSolution, sol2: GridSolution) -> None:
    if sol1.u.shape != sol2.u.shape or not math.isclose(sol1.h, sol2.h, rel_tol=1e-12):
        raise InputError(
            f"lattice mismatch: {sol1.u.shape} at h={sol1.h} vs {sol2.u.shape} at h={sol2.h}"
        )


def asymptotic_compare(
    sol1: GridSolution,
    sol2: GridSolution,
    M: int,
    c: float,
    gamma: int,
    N0: int,
    rate: float,
) -> BoundReport:
    """Two-sided ratio bound ``(N0 M)^(6 P_n(c)) rate^(c~^(n+1))`` with
    ``n = x + s (gamma + 1)``, checked in logs at every node.

    For ``c < 1`` the uniform limit ``P_n(c) <= 1/(1 - c)`` is used, so the
    bound is constant over the grid.
    """
    _same_lattice(sol1, sol2)
    if M < 1 or N0 < 1 or c < 0 or rate < 1:
        raise InputError(f"need M, N0 >= 1, c >= 0 and rate >= 1, got M={M}, N0={N0}, c={c}, rate={rate}")
    X, S = np.meshgrid(sol1.xs, sol1.ss, indexing="ij")
    n = X + S * (gamma + 1)
    log_nm, log_rate = math.log(N0 * M), math.log(rate)
    details = {"M": M, "N0": N0, "c": c, "gamma": gamma, "rate": rate}
    if c < 1:
        P = np.full_like(n, 1.0 / (1.0 - c))
        details["limit_log_bound"] = 6 * log_nm / (1.0 - c) + log_rate
        c_tilde_pow = np.ones_like(n)
    else:
        with np.errstate(over="ignore"):
            P = n + 1.0 if c == 1 else (np.power(c, n + 1.0) - 1.0) / (c - 1.0)
            c_tilde_pow = np.power(c, n + 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        bound = 6 * P * log_nm + (c_tilde_pow * log_rate if log_rate else 0.0)
    lhs = np.maximum(np.abs(np.log(sol1.u) - np.log(sol2.u)), np.abs(np.log(sol1.v) - np.log(sol2.v)))
    locs = [(float(x), float(s)) for x, s in zip(X.ravel(), S.ravel())]
    return BoundReport.from_arrays(lhs.ravel(), bound.ravel(), locs, "asymptotic comparison", details)


# -- export --------------------------------------------------------------


def solution_csv(sol: GridSolution) -> str:
    """CSV with header ``x,s,u,v``, one row per lattice node."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "s", "u", "v"])
    for k, x in enumerate(sol.xs):
        for l, s in enumerate(sol.ss):
            w.writerow([repr(float(x)), repr(float(s)), repr(float(sol.u[k, l])), repr(float(sol.v[k, l]))])
    return buf.getvalue()


def diagnostics_json(sol: GridSolution) -> dict:
    """Constants and per-square solver data as a JSON-ready dict."""
    return {
        "h": sol.h,
        "tau": sol.tau,
        "X": sol.X,
        "S": sol.S,
        "window": {"r": sol.window.r, "R": sol.window.R, "q": sol.window.q},
        "constants": {k: v for k, v in sol.constants.items()},
        "diagnostics": sol.diagnostics,
    }


def example_field(a: int = 2, which: str = "u") -> MaxPlusPresentation:
    """Presentation of ``a w / (1 + w)`` in ``(v, u)``; ``w`` is ``u`` or ``v``.

    The numerator of ``w / (1 + w)`` is repeated ``a`` times, so the lift
    does not depend on ``t``.
    """
    if which not in ("u", "v"):
        raise InputError(f"which must be 'u' or 'v', got {which!r}")
    e = [0, 1] if which == "u" else [1, 0]
    base = MaxPlusPresentation.from_lists([(0.0, e)], [(0.0, [0, 0]), (0.0, e)])
    return tr.scale(base, a)


def lattice_grid(sol: GridSolution, t: TropicalParam | float):
    """The solution sampled on the integer lattice as a log-domain orbit grid.

    ``x[i, j] = log_t u(i, j)`` and ``y[i, j] = log_t v(i, j)``, shaped like
    an :class:`OrbitGrid` with ``I = floor(X)`` and ``J = floor(S)``.
    """
    from .dynamics import OrbitGrid

    n = sol.steps_per_unit()
    tp = tr.as_param(t)
    I, J = int(sol.X + 1e-9), int(sol.S + 1e-9)
    lu = np.log(sol.u[: I * n + 1 : n, : J * n + 1 : n]) / tp.ln_t
    lv = np.log(sol.v[: I * n + 1 : n, : J * n + 1 : n]) / tp.ln_t
    x, y = lu[:I, :], lv[:, :J]
    return OrbitGrid(I, J, x.copy(), y.copy(), "rational-log", tp.t, x.copy(), y.copy(),
                     tuple([I] * (J + 1)), {"source": "pde lattice"})


def stair_bump_pair(
    t: TropicalParam | float,
    delta: float,
    L: float,
    states: Sequence[float],
    N0: Optional[int] = None,
) -> tuple[CallableField, CallableField]:
    """The pair ``f(w, z) = F(z h(w))``, ``g(w, z) = F(w h(z))``.

    ``F`` is the rational first stair around ``L`` and ``h`` the bump lift of
    the state selector. Both drifts are contracting, so solutions decay and
    are only followed on short strips.
    """
    from . import extensions as ex

    tp = tr.as_param(t)
    if N0 is None:
        N0 = ex.minimal_N0(tp, delta)
    stair = ex.make_stairs_rational(1, L, delta, tp, N0)
    K = ex.bump_K(tp, delta, states)

    def F(z):
        return np.asarray(tr.eval_rational(stair, tp, z.reshape(-1, 1), mode="linear")).reshape(z.shape)

    def dF(z):
        return np.asarray(tr.rational_gradient(stair, tp, z.reshape(-1, 1))).reshape(z.shape)

    def h(w):
        return ex.bump_h(tp, delta, states, w, K)

    def dh(w):
        return ex.bump_h_prime(tp, delta, states, w, K)

    def f_val(w, z):
        return F(z * h(w))

    def f_grad(w, z):
        hw = h(w)
        d = dF(z * hw)
        return d * z * dh(w), d * hw

    def g_val(w, z):
        return F(w * h(z))

    def g_grad(w, z):
        hz = h(z)
        d = dF(w * hz)
        return d * hz, d * w * dh(z)

    return CallableField(f_val, f_grad), CallableField(g_val, g_grad)
