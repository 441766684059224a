"""Relative (max,+)-functions and their three evaluations.

A presentation is a pair of affine term lists (numerator, denominator).
The same data defines

* the piecewise-linear function ``max(num) - max(den)``,
* its dequantization, where ``max`` is replaced by the base-``t``
  log-sum-exp ``x (+)_t y = log_t(t^x + t^y)``,
* the parametrized rational function
  ``sum t^a z^A / sum t^b z^B`` whose log-conjugate is the dequantization.

Exponents are exact :class:`fractions.Fraction` values, offsets are floats.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DomainError, InputError, RangeOverflowError

Number = Union[int, float, Fraction]


def to_fraction(value: Number | str) -> Fraction:
    """Convert ``value`` to an exact rational.

    Floats that are within 1e-12 of a fraction with denominator at most
    10**6 snap to it, so ``0.1`` becomes ``1/10`` rather than its binary
    expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    v = float(value)
    if not math.isfinite(v):
        raise InputError(f"non-finite exponent {value!r}")
    snapped = Fraction(v).limit_denominator(10**6)
    if abs(float(snapped) - v) <= 1e-12 * max(1.0, abs(v)):
        return snapped
    return Fraction(v)


@dataclass(frozen=True)
class AffineTerm:
    """One affine form ``offset + coeffs . x``."""

    offset: float
    coeffs: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "coeffs", tuple(to_fraction(c) for c in self.coeffs))
        if not math.isfinite(self.offset):
            raise InputError(f"term offset must be finite, got {self.offset}")

    @property
    def arity(self) -> int:
        return len(self.coeffs)

    def l1(self) -> Fraction:
        return sum((abs(c) for c in self.coeffs), Fraction(0))


def _term_arrays(terms: Sequence[AffineTerm]) -> tuple[np.ndarray, np.ndarray]:
    offsets = np.array([t.offset for t in terms], dtype=float)
    coeffs = np.array([[float(c) for c in t.coeffs] for t in terms], dtype=float)
    return offsets, coeffs


@dataclass(frozen=True)
class MaxPlusPresentation:
    """``max(num terms) - max(den terms)`` carried with its term lists."""

    arity: int
    num: tuple[AffineTerm, ...]
    den: tuple[AffineTerm, ...]
    _num_arr: tuple = field(init=False, repr=False, compare=False)
    _den_arr: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not isinstance(self.arity, (int, np.integer)) or self.arity < 1:
            raise InputError(f"arity must be a positive integer, got {self.arity!r}")
        object.__setattr__(self, "arity", int(self.arity))
        object.__setattr__(self, "num", tuple(self.num))
        object.__setattr__(self, "den", tuple(self.den))
        if not self.num or not self.den:
            raise InputError("numerator and denominator need at least one term each")
        for term in self.num + self.den:
            if term.arity != self.arity:
                raise InputError(
                    f"term arity {term.arity} does not match presentation arity {self.arity}"
                )
        object.__setattr__(self, "_num_arr", _term_arrays(self.num))
        object.__setattr__(self, "_den_arr", _term_arrays(self.den))

    @classmethod
    def from_lists(
        cls,
        num: Iterable[tuple[Number, Sequence[Number | str]]],
        den: Iterable[tuple[Number, Sequence[Number | str]]],
    ) -> "MaxPlusPresentation":
        """Build from ``[(offset, coeffs), ...]`` pairs."""
        num_terms = tuple(AffineTerm(float(o), tuple(c)) for o, c in num)
        den_terms = tuple(AffineTerm(float(o), tuple(c)) for o, c in den)
        if not num_terms:
            raise InputError("empty numerator")
        return cls(num_terms[0].arity, num_terms, den_terms)

    @property
    def m(self) -> int:
        return len(self.num)

    @property
    def l(self) -> int:  # noqa: E743 - mirrors the usual term-count name
        return len(self.den)

    @property
    def components(self) -> int:
        return len(self.num) * len(self.den)


@dataclass(frozen=True)
class TropicalParam:
    """Dequantization base ``t > 1``."""

    t: float

    def __post_init__(self) -> None:
        t = float(self.t)
        if not (t > 1.0) or not math.isfinite(t):
            raise InputError(f"t must be a finite real > 1, got {self.t!r}")
        object.__setattr__(self, "t", t)

    @property
    def ln_t(self) -> float:
        return math.log(self.t)

    def log(self, value):
        """``log_t`` of a positive scalar or array."""
        return np.log(value) / self.ln_t


def as_param(t: TropicalParam | float) -> TropicalParam:
    return t if isinstance(t, TropicalParam) else TropicalParam(float(t))


@dataclass(frozen=True)
class PresentationStats:
    components: int
    lipschitz: float
    lipschitz_tilde: float


def _as_points(pres: MaxPlusPresentation, point) -> tuple[np.ndarray, bool]:
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != pres.arity:
        raise InputError(
            f"point has shape {np.shape(point)}, expected (..., {pres.arity})"
        )
    return x, single


def _scores(arrays: tuple[np.ndarray, np.ndarray], x: np.ndarray) -> np.ndarray:
    offsets, coeffs = arrays
    # fixed-order sum over coordinates: unlike a BLAS matmul, each term's
    # rounding does not depend on how many other terms there are
    out = np.broadcast_to(offsets, (x.shape[0], offsets.shape[0])).copy()
    for k in range(x.shape[1]):
        out += x[:, k : k + 1] * coeffs[None, :, k]
    return out


def _lse(scores: np.ndarray, ln_t: float) -> np.ndarray:
    top = scores.max(axis=1)
    return top + np.log(np.exp((scores - top[:, None]) * ln_t).sum(axis=1)) / ln_t


def eval_maxplus(pres: MaxPlusPresentation, point):
    """Evaluate the piecewise-linear function.

    ``point`` may be one vector of length ``arity`` (returns a float) or a
    ``(k, arity)`` array (returns an array of length ``k``).
    """
    x, single = _as_points(pres, point)
    out = _scores(pres._num_arr, x).max(axis=1) - _scores(pres._den_arr, x).max(axis=1)
    return float(out[0]) if single else out


def eval_dequantized(pres: MaxPlusPresentation, t: TropicalParam | float, point):
    """Evaluate ``phi_t`` with a max-shifted log-sum-exp in base ``t``."""
    tp = as_param(t)
    x, single = _as_points(pres, point)
    ln_t = tp.ln_t
    out = _lse(_scores(pres._num_arr, x), ln_t) - _lse(_scores(pres._den_arr, x), ln_t)
    return float(out[0]) if single else out


def _linear_terms(arrays, ln_t: float, t: float, z: np.ndarray) -> np.ndarray:
    offsets, coeffs = arrays
    with np.errstate(over="raise", invalid="raise", under="ignore"):
        try:
            scale = np.power(t, offsets)
            powers = np.prod(np.power(z[:, None, :], coeffs[None, :, :]), axis=2)
            terms = scale[None, :] * powers
        except FloatingPointError as exc:
            raise RangeOverflowError(
                "linear-mode evaluation left the float range; use mode='log'"
            ) from exc
    if not np.all(np.isfinite(terms)):
        raise RangeOverflowError("linear-mode evaluation overflowed; use mode='log'")
    return terms


def _check_positive(z: np.ndarray) -> None:
    if np.any(~np.isfinite(z)) or np.any(z <= 0):
        raise DomainError("linear-mode rational evaluation needs every z_i > 0")


def _sums_or_raise(terms: np.ndarray) -> np.ndarray:
    with np.errstate(over="raise"):
        try:
            s = terms.sum(axis=1)
        except FloatingPointError as exc:
            raise RangeOverflowError("term sum overflowed; use mode='log'") from exc
    if np.any(s < np.finfo(float).tiny) or not np.all(np.isfinite(s)):
        raise RangeOverflowError("term sum under- or overflowed; use mode='log'")
    return s


def eval_rational(pres: MaxPlusPresentation, t: TropicalParam | float, z, mode: str = "log"):
    """Evaluate the rational lift ``f_t``.

    In ``mode='linear'`` ``z`` holds positive reals and the ratio of the two
    elementary sums is returned. In ``mode='log'`` ``z`` holds ``log_t z`` and
    the result is ``log_t f_t(t^x)``, computed by the very same code path as
    :func:`eval_dequantized`.
    """
    if mode == "log":
        return eval_dequantized(pres, t, z)
    if mode != "linear":
        raise InputError(f"mode must be 'linear' or 'log', got {mode!r}")
    tp = as_param(t)
    zz, single = _as_points(pres, z)
    _check_positive(zz)
    num = _sums_or_raise(_linear_terms(pres._num_arr, tp.ln_t, tp.t, zz))
    den = _sums_or_raise(_linear_terms(pres._den_arr, tp.ln_t, tp.t, zz))
    out = num / den
    return float(out[0]) if single else out


def rational_gradient(pres: MaxPlusPresentation, t: TropicalParam | float, z) -> np.ndarray:
    """Analytic gradient of ``f_t`` at positive ``z`` (quotient rule)."""
    tp = as_param(t)
    zz, single = _as_points(pres, z)
    _check_positive(zz)
    try:
        a_terms = _linear_terms(pres._num_arr, tp.ln_t, tp.t, zz)
        b_terms = _linear_terms(pres._den_arr, tp.ln_t, tp.t, zz)
        a = _sums_or_raise(a_terms)
        b = _sums_or_raise(b_terms)
    except RangeOverflowError as exc:
        raise RangeOverflowError(
            "gradient evaluation out of range; rescale t or shrink the box"
        ) from exc
    # d/dz_i of sum_k c_k z^{e_k} is sum_k c_k e_ki z^{e_k} / z_i
    da = (a_terms @ pres._num_arr[1]) / zz
    db = (b_terms @ pres._den_arr[1]) / zz
    f = a / b
    grad = f[:, None] * (da / a[:, None] - db / b[:, None])
    return grad[0] if single else grad


def stats(pres: MaxPlusPresentation) -> PresentationStats:
    """Component count and an l1-based Lipschitz bound for the sup metric."""
    c = float(max(t.l1() for t in pres.num) + max(t.l1() for t in pres.den))
    return PresentationStats(pres.components, c, max(c, 1.0))


def pair_stats(*presentations: MaxPlusPresentation) -> PresentationStats:
    """Largest component count and Lipschitz bound over several maps."""
    all_stats = [stats(p) for p in presentations]
    c = max(s.lipschitz for s in all_stats)
    return PresentationStats(max(s.components for s in all_stats), c, max(c, 1.0))


def scale(pres: MaxPlusPresentation, N: int) -> MaxPlusPresentation:
    """Presentation of ``N * f_t``: the numerator list repeated ``N`` times."""
    if int(N) != N or N < 1:
        raise InputError(f"N must be a positive integer, got {N!r}")
    return MaxPlusPresentation(pres.arity, pres.num * int(N), pres.den)


@dataclass(frozen=True)
class EquivalenceVerdict:
    equivalent: bool
    point: tuple[float, ...] | None = None
    v1: float | None = None
    v2: float | None = None

    def __bool__(self) -> bool:
        return self.equivalent


def check_equivalence(
    p1: MaxPlusPresentation,
    p2: MaxPlusPresentation,
    box: Sequence[tuple[float, float]],
    samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-9,
) -> EquivalenceVerdict:
    """Sample the box (plus its corners) looking for a point where the
    two piecewise-linear functions differ by more than ``tol``."""
    if p1.arity != p2.arity:
        raise InputError(f"arity mismatch: {p1.arity} vs {p2.arity}")
    if len(box) != p1.arity:
        raise InputError(f"box has {len(box)} intervals, expected {p1.arity}")
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    rng = np.random.default_rng(seed)
    corners = np.array(
        [[hi[k] if (mask >> k) & 1 else lo[k] for k in range(p1.arity)] for mask in range(2**p1.arity)]
    )
    pts = np.vstack([corners, lo + (hi - lo) * rng.random((int(samples), p1.arity))])
    v1 = eval_maxplus(p1, pts)
    v2 = eval_maxplus(p2, pts)
    bad = np.nonzero(np.abs(v1 - v2) > tol)[0]
    if bad.size == 0:
        return EquivalenceVerdict(True)
    k = int(bad[0])
    return EquivalenceVerdict(False, tuple(float(v) for v in pts[k]), float(v1[k]), float(v2[k]))


# ---------------------------------------------------------------------------
# Presentation algebra. These build new presentations whose piecewise-linear
# functions are the stated combinations; term lists are never simplified
# unless merge_terms() is called explicitly.


def affine(coeffs: Sequence[Number], offset: float = 0.0) -> MaxPlusPresentation:
    """The affine function ``offset + coeffs . x``."""
    n = len(coeffs)
    return MaxPlusPresentation(n, (AffineTerm(offset, tuple(coeffs)),), (AffineTerm(0.0, (0,) * n),))


def constant(value: float, arity: int) -> MaxPlusPresentation:
    return affine((0,) * arity, value)


def variable(index: int, arity: int) -> MaxPlusPresentation:
    coeffs = [0] * arity
    coeffs[index] = 1
    return affine(coeffs)


def _minkowski(a: Sequence[AffineTerm], b: Sequence[AffineTerm]) -> tuple[AffineTerm, ...]:
    return tuple(
        AffineTerm(s.offset + u.offset, tuple(x + y for x, y in zip(s.coeffs, u.coeffs)))
        for s in a
        for u in b
    )


def negate(p: MaxPlusPresentation) -> MaxPlusPresentation:
    return MaxPlusPresentation(p.arity, p.den, p.num)


def add(p: MaxPlusPresentation, q: MaxPlusPresentation) -> MaxPlusPresentation:
    """Pointwise sum: numerators and denominators combine by term products."""
    _same_arity(p, q)
    return MaxPlusPresentation(p.arity, _minkowski(p.num, q.num), _minkowski(p.den, q.den))


def shift(p: MaxPlusPresentation, c: float) -> MaxPlusPresentation:
    return MaxPlusPresentation(
        p.arity, tuple(AffineTerm(t.offset + c, t.coeffs) for t in p.num), p.den
    )


def _scale_terms(terms: Sequence[AffineTerm], c: Fraction) -> tuple[AffineTerm, ...]:
    return tuple(AffineTerm(float(c) * t.offset, tuple(c * x for x in t.coeffs)) for t in terms)


def smul(p: MaxPlusPresentation, c: Number) -> MaxPlusPresentation:
    """Multiply the function by a rational scalar (negative swaps the lists)."""
    cf = to_fraction(c)
    if cf == 0:
        return constant(0.0, p.arity)
    if cf < 0:
        p, cf = negate(p), -cf
    return MaxPlusPresentation(p.arity, _scale_terms(p.num, cf), _scale_terms(p.den, cf))


def pmax(*ps: MaxPlusPresentation) -> MaxPlusPresentation:
    """Pointwise maximum over a common denominator.

    When all denominators are identical the shared list is reused, so a max
    of presentations with equal denominators does not grow it.
    """
    if not ps:
        raise InputError("pmax needs at least one presentation")
    for q in ps[1:]:
        _same_arity(ps[0], q)
    if all(q.den == ps[0].den for q in ps):
        return MaxPlusPresentation(ps[0].arity, tuple(t for q in ps for t in q.num), ps[0].den)
    num: list[AffineTerm] = []
    for k, q in enumerate(ps):
        terms = q.num
        for r, other in enumerate(ps):
            if r != k:
                terms = _minkowski(terms, other.den)
        num.extend(terms)
    den: tuple[AffineTerm, ...] = ps[0].den
    for other in ps[1:]:
        den = _minkowski(den, other.den)
    return MaxPlusPresentation(ps[0].arity, tuple(num), den)


def pmin(*ps: MaxPlusPresentation) -> MaxPlusPresentation:
    """Pointwise minimum, encoded as ``-max(-p, ...)``."""
    return negate(pmax(*(negate(q) for q in ps)))


def merge_terms(p: MaxPlusPresentation) -> MaxPlusPresentation:
    """Collapse terms with identical exponent vectors, keeping the largest
    offset. The piecewise-linear function is unchanged; the rational lift
    and the component count are not."""

    def merged(terms):
        best: dict[tuple[Fraction, ...], float] = {}
        for t in terms:
            if t.coeffs not in best or best[t.coeffs] < t.offset:
                best[t.coeffs] = t.offset
        return tuple(AffineTerm(o, c) for c, o in best.items())

    return MaxPlusPresentation(p.arity, merged(p.num), merged(p.den))


def substitute(p: MaxPlusPresentation, inner: Sequence[MaxPlusPresentation]) -> MaxPlusPresentation:
    """Composition ``p(g_1(x), ..., g_k(x))``; all ``g_i`` share one arity."""
    if len(inner) != p.arity:
        raise InputError(f"need {p.arity} inner presentations, got {len(inner)}")
    n = inner[0].arity
    for g in inner[1:]:
        _same_arity(inner[0], g)

    def term_value(term: AffineTerm) -> MaxPlusPresentation:
        acc = constant(term.offset, n)
        for c, g in zip(term.coeffs, inner):
            if c != 0:
                acc = merge_terms(add(acc, smul(g, c)))
        return acc

    top = pmax(*(term_value(t) for t in p.num))
    bottom = pmax(*(term_value(t) for t in p.den))
    return merge_terms(add(top, negate(bottom)))


def hinge_form(p: MaxPlusPresentation) -> tuple[Fraction, Fraction, dict]:
    """Write a one-variable function as ``c0 + c1 u + sum_b w_b max(0, u - b)``.

    Breakpoints are located among pairwise crossings of terms; slopes are
    read exactly from the active terms between consecutive candidates.
    """
    if p.arity != 1:
        raise InputError(f"hinge_form needs a one-variable presentation, got arity {p.arity}")
    cands: set[Fraction] = set()
    for terms in (p.num, p.den):
        for a, b in itertools.combinations(terms, 2):
            da = a.coeffs[0] - b.coeffs[0]
            if da != 0:
                cands.add(to_fraction((b.offset - a.offset) / float(da)))
    pts = sorted(cands)

    def piece(u: float) -> tuple[Fraction, Fraction]:
        def active(terms):
            return max(terms, key=lambda t: t.offset + float(t.coeffs[0]) * u)

        top, bot = active(p.num), active(p.den)
        return to_fraction(top.offset - bot.offset), top.coeffs[0] - bot.coeffs[0]

    if not pts:
        c0, c1 = piece(0.0)
        return c0, c1, {}
    probes = [float(pts[0]) - 1.0]
    probes += [float(a + b) / 2 for a, b in zip(pts, pts[1:])]
    probes.append(float(pts[-1]) + 1.0)
    pieces = [piece(u) for u in probes]
    c0, c1 = pieces[0]
    hinges: dict[Fraction, Fraction] = {}
    for b, (_, s_left), (_, s_right) in zip(pts, pieces, pieces[1:]):
        if s_right != s_left:
            hinges[b] = s_right - s_left
    return c0, c1, hinges


def hinge_from_breakpoints(f, breakpoints: Sequence) -> tuple[Fraction, Fraction, dict]:
    """Hinge form of a one-variable function known to be affine between the
    given breakpoints; ``f`` is evaluated exactly on Fractions."""
    pts = sorted({to_fraction(b) for b in breakpoints})
    if not pts:
        raise InputError("need at least one breakpoint")
    ext = [pts[0] - 1] + pts + [pts[-1] + 1]
    vals = [to_fraction(f(u)) for u in ext]
    slopes = [(v1 - v0) / (u1 - u0) for u0, u1, v0, v1 in zip(ext, ext[1:], vals, vals[1:])]
    c1 = slopes[0]
    c0 = vals[0] - c1 * ext[0]
    hinges = {b: sr - sl for b, sl, sr in zip(pts, slopes, slopes[1:]) if sr != sl}
    return c0, c1, hinges


def presentation_from_hinges(
    c0: Fraction, c1: Fraction, hinges: dict, arity: int = 1, index: int = 0
) -> MaxPlusPresentation:
    """Minimal convex-difference presentation of ``c0 + c1 u + sum w_b max(0, u - b)``."""
    A, B = convex_split(c0, c1, hinges)

    def terms(pieces):
        out = []
        for c, s in pieces:
            coeffs = [Fraction(0)] * arity
            coeffs[index] = s
            out.append(AffineTerm(float(c), tuple(coeffs)))
        return tuple(out)

    return MaxPlusPresentation(arity, terms(A), terms(B))


def _pieces(a0: Fraction, a1: Fraction, hinges: dict) -> list[tuple[Fraction, Fraction]]:
    out = [(a0, a1)]
    for b in sorted(hinges):
        a0, a1 = a0 - hinges[b] * b, a1 + hinges[b]
        out.append((a0, a1))
    return out


def convex_split(c0: Fraction, c1: Fraction, hinges: dict):
    """Affine pieces of convex ``A`` and ``B`` with ``A - B`` equal to the hinge sum."""
    pos = {b: w for b, w in hinges.items() if w > 0}
    neg = {b: -w for b, w in hinges.items() if w < 0}
    return _pieces(c0, c1, pos), _pieces(Fraction(0), Fraction(0), neg)


def compact_1d(p: MaxPlusPresentation, arity: int = 1, index: int = 0) -> MaxPlusPresentation:
    """Minimal convex-difference presentation of a one-variable function,
    placed in variable ``index`` of an ``arity``-variable space."""
    return presentation_from_hinges(*hinge_form(p), arity=arity, index=index)


def compose_1d(outer: MaxPlusPresentation, inner: MaxPlusPresentation) -> MaxPlusPresentation:
    """``outer(inner(x))`` for a one-variable ``outer``, without Minkowski blow-up
    in the outer terms.

    With ``outer = max(a_k u + c_k) - max(b_k u + d_k)`` and ``u = U1 - U2``
    each term becomes ``(a - s_min) U1 + (s_max - a) U2 + c`` up to the common
    summand ``s_min U1 - s_max U2``, which cancels.
    """
    A, B = convex_split(*hinge_form(outer))
    slopes = [s for _, s in A + B]
    lo, hi = min(slopes), max(slopes)
    U1, U2 = inner.num, inner.den

    def lift(pieces):
        out: list[AffineTerm] = []
        for c, s in pieces:
            acc: tuple[AffineTerm, ...] = (AffineTerm(float(c), (Fraction(0),) * inner.arity),)
            if s - lo:
                acc = _minkowski(acc, _scale_terms(U1, s - lo))
            if hi - s:
                acc = _minkowski(acc, _scale_terms(U2, hi - s))
            out.extend(acc)
        return tuple(out)

    return merge_terms(MaxPlusPresentation(inner.arity, lift(A), lift(B)))


def _same_arity(p: MaxPlusPresentation, q: MaxPlusPresentation) -> None:
    if p.arity != q.arity:
        raise InputError(f"arity mismatch: {p.arity} vs {q.arity}")


# ---------------------------------------------------------------------------
# JSON documents


def _coeff_str(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def to_json_dict(p: MaxPlusPresentation) -> dict:
    def enc(terms):
        return [{"offset": t.offset, "coeffs": [_coeff_str(c) for c in t.coeffs]} for t in terms]

    return {"arity": p.arity, "num": enc(p.num), "den": enc(p.den)}


def from_json_dict(doc: dict) -> MaxPlusPresentation:
    try:
        arity = int(doc["arity"])

        def dec(terms):
            return tuple(
                AffineTerm(float(t["offset"]), tuple(to_fraction(c) for c in t["coeffs"]))
                for t in terms
            )

        return MaxPlusPresentation(arity, dec(doc["num"]), dec(doc["den"]))
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed presentation document: {exc}") from exc
