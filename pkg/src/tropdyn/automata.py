"""Finite automata with lookahead acting on words over real-embedded alphabets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import ContractError, InputError, ResourceError

EXCEEDED = "exceeded"
BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True)
class AutomatonSpec:
    """Output map ``psi: Q x S^(alpha+1) -> S`` and transition map
    ``phi: Q x S^(beta+1) -> Q`` stored as integer index tables.

    ``psi`` has shape ``(|Q|,) + (|S|,) * (alpha + 1)`` and holds symbol
    indices; ``phi`` has shape ``(|Q|,) + (|S|,) * (beta + 1)`` and holds
    state indices. ``alphabet`` and ``states`` are the real embeddings.
    """

    alphabet: tuple[float, ...]
    states: tuple[float, ...]
    alpha: int
    beta: int
    psi: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    name: str = ""

    def __post_init__(self) -> None:
        S = tuple(float(s) for s in self.alphabet)
        Q = tuple(float(q) for q in self.states)
        object.__setattr__(self, "alphabet", S)
        object.__setattr__(self, "states", Q)
        for label, values in (("alphabet", S), ("states", Q)):
            if not values:
                raise InputError(f"{label} must be nonempty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise InputError(f"{label} must be strictly increasing, got {values}")
        if self.alpha < 0 or self.beta < 0:
            raise InputError("lookaheads must be nonnegative")
        psi = np.asarray(self.psi, dtype=np.int64)
        phi = np.asarray(self.phi, dtype=np.int64)
        want_psi = (len(Q),) + (len(S),) * (self.alpha + 1)
        want_phi = (len(Q),) + (len(S),) * (self.beta + 1)
        if psi.shape != want_psi:
            raise InputError(f"psi table has shape {psi.shape}, expected {want_psi}")
        if phi.shape != want_phi:
            raise InputError(f"phi table has shape {phi.shape}, expected {want_phi}")
        if psi.min() < 0 or psi.max() >= len(S):
            raise InputError("psi table entries must be symbol indices")
        if phi.min() < 0 or phi.max() >= len(Q):
            raise InputError("phi table entries must be state indices")
        psi.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "phi", phi)

    @property
    def is_mealy(self) -> bool:
        return self.alpha == 0 and self.beta == 0

    @property
    def gamma(self) -> int:
        return max(self.alpha, self.beta)

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def psi_value(self, q: int, window: Sequence[int]) -> float:
        return self.alphabet[int(self.psi[(q, *window)])]

    def phi_value(self, q: int, window: Sequence[int]) -> float:
        return self.states[int(self.phi[(q, *window)])]


def with_spacing(a: AutomatonSpec, spacing: float, origin: float = 0.0) -> AutomatonSpec:
    """Same tables, with both embeddings replaced by ``origin + spacing * index``."""
    if spacing <= 0:
        raise InputError("spacing must be positive")
    return AutomatonSpec(
        tuple(origin + spacing * k for k in range(a.n_symbols)),
        tuple(origin + spacing * k for k in range(a.n_states)),
        a.alpha,
        a.beta,
        a.psi,
        a.phi,
        a.name,
    )


def _check_word(a: AutomatonSpec, word: Sequence[int]) -> None:
    for k in word:
        if not 0 <= int(k) < a.n_symbols:
            raise InputError(f"symbol index {k} out of range for |S|={a.n_symbols}")


def _apply_state(a: AutomatonSpec, q: int, word: list[int], padding: int) -> list[int]:
    n = len(word)
    padded = word + [padding] * a.gamma
    out = []
    for i in range(n):
        out.append(int(a.psi[(q, *padded[i : i + a.alpha + 1])]))
        q = int(a.phi[(q, *padded[i : i + a.beta + 1])])
    return out


def act(a: AutomatonSpec, state_word: Sequence[int], word: Sequence[int], padding: int = 0) -> list[int]:
    """Apply ``A_{q^L} o ... o A_{q^0}`` to a finite word.

    ``state_word[0]`` acts first. Lookahead windows running past the end of
    the word are filled with ``padding``; only the first
    ``len(word) - gamma * len(state_word)`` outputs are independent of it.
    """
    if len(word) < 1:
        raise InputError("input word must be nonempty")
    _check_word(a, word)
    if not 0 <= int(padding) < a.n_symbols:
        raise InputError(f"padding index {padding} out of range")
    for q in state_word:
        if not 0 <= int(q) < a.n_states:
            raise InputError(f"state index {q} out of range for |Q|={a.n_states}")
    current = [int(k) for k in word]
    for q in state_word:
        current = _apply_state(a, int(q), current, int(padding))
    return current


def _act_all(a: AutomatonSpec, q_word: Sequence[int], words: np.ndarray) -> np.ndarray:
    """Vectorised ``act`` over the rows of ``words`` (no padding needed when
    the caller supplies enough trailing symbols)."""
    cur = words.copy()
    for q0 in q_word:
        n = cur.shape[1] - a.gamma
        q = np.full(cur.shape[0], int(q0), dtype=np.int64)
        out = np.empty((cur.shape[0], n), dtype=np.int64)
        for i in range(n):
            out[:, i] = a.psi[(q, *[cur[:, i + r] for r in range(a.alpha + 1)])]
            q = a.phi[(q, *[cur[:, i + r] for r in range(a.beta + 1)])]
        cur = out
    return cur


def _all_words(n_symbols: int, length: int) -> np.ndarray:
    grids = np.indices((n_symbols,) * length).reshape(length, -1).T
    return grids.astype(np.int64)


def is_invertible_mealy(a: AutomatonSpec) -> bool:
    """True iff every row ``psi(q, .)`` is a permutation of ``S``."""
    if not a.is_mealy:
        raise ContractError("is_invertible_mealy needs a Mealy automaton (alpha = beta = 0)")
    n = a.n_symbols
    return all(sorted(a.psi[q].tolist()) == list(range(n)) for q in range(a.n_states))


@dataclass(frozen=True)
class InjectivityVerdict:
    injective: bool
    state: int | None = None
    pair: tuple[tuple[int, ...], tuple[int, ...]] | None = None

    def __bool__(self) -> bool:
        return self.injective


def check_invertible_general(a: AutomatonSpec, depth: int) -> InjectivityVerdict:
    """Finite-depth injectivity test for each ``A_q`` on infinite strings.

    Every input of length ``depth + gamma`` is enumerated (the trailing
    ``gamma`` symbols range over all padding choices). Two inputs collide
    when they already differ in their first ``depth - gamma`` symbols yet
    produce the same first ``depth`` outputs.
    """
    if depth < 1:
        raise InputError("depth must be >= 1")
    if a.n_symbols**depth > BRUTE_FORCE_LIMIT:
        raise ResourceError(f"|S|^depth = {a.n_symbols}^{depth} exceeds {BRUTE_FORCE_LIMIT}")
    g = a.gamma
    keep = max(depth - g, 1)
    words = _all_words(a.n_symbols, depth + g)
    base = a.n_symbols ** np.arange(depth)[::-1]
    prefix_code = words[:, :keep] @ base[depth - keep :]
    for q in range(a.n_states):
        out = _act_all(a, [q], words)
        code = out @ base
        order = np.lexsort((prefix_code, code))
        c_sorted, p_sorted = code[order], prefix_code[order]
        clash = np.nonzero((c_sorted[1:] == c_sorted[:-1]) & (p_sorted[1:] != p_sorted[:-1]))[0]
        if clash.size:
            k = int(clash[0])
            w1 = tuple(int(v) for v in words[order[k]])
            w2 = tuple(int(v) for v in words[order[k + 1]])
            return InjectivityVerdict(False, q, (w1, w2))
    return InjectivityVerdict(True)


def level_permutation(a: AutomatonSpec, state_word: Sequence[int], level: int) -> np.ndarray:
    """Image index of every word of ``S^level`` (words in lexicographic order)."""
    if not a.is_mealy:
        raise ContractError("level actions exist only for Mealy automata")
    if level < 1:
        raise InputError("level must be >= 1")
    if a.n_symbols**level > BRUTE_FORCE_LIMIT:
        raise ResourceError("level too large for brute force")
    words = _all_words(a.n_symbols, level)
    images = _act_all(a, list(state_word), words)
    return images @ (a.n_symbols ** np.arange(level)[::-1])


def order_on_level(a: AutomatonSpec, state_word: Sequence[int], level: int, cap: int = 10**6):
    """Order of the permutation that ``A_{state_word}`` induces on ``S^level``.

    Returns an ``int`` or :data:`EXCEEDED` when the order is above ``cap``.
    """
    if not a.is_mealy:
        raise ContractError("order_on_level needs a Mealy automaton")
    if not is_invertible_mealy(a):
        raise ContractError("order_on_level needs an invertible automaton")
    perm = level_permutation(a, state_word, level)
    seen = np.zeros(perm.size, dtype=bool)
    lengths = set()
    for start in range(perm.size):
        if seen[start]:
            continue
        n, k = 0, start
        while not seen[k]:
            seen[k] = True
            k = int(perm[k])
            n += 1
        lengths.add(n)
    order = reduce(math.lcm, lengths, 1)
    return EXCEEDED if order > cap else order


# ---------------------------------------------------------------------------
# Built-in automata


def _lamplighter() -> AutomatonSpec:
    psi = [[0, 1], [1, 0]]  # q0 = id, q1 = swap
    phi = [[0, 1], [0, 1]]  # next state is the index of the symbol read
    return AutomatonSpec((0.0, 3.0), (0.0, 3.0), 0, 0, psi, phi, "lamplighter")


def _example_4_1() -> AutomatonSpec:
    psi = np.zeros((2, 2, 2), dtype=np.int64)
    phi = np.zeros((2, 2, 2), dtype=np.int64)
    for k in range(2):
        for s in range(2):
            psi[1, k, s] = 1 - k
            psi[0, k, s] = 1 - k if s == 0 else k
            for q in range(2):
                phi[q, k, s] = 1 - q
    return AutomatonSpec((0.0, 1.0), (0.0, 1.0), 1, 1, psi, phi, "example_4_1")


def _grigorchuk() -> AutomatonSpec:
    # states a, b, c, d, e; a swaps and resets, b = (a, c), c = (a, d), d = (e, b)
    a, b, c, d, e = range(5)
    psi = [[1, 0], [0, 1], [0, 1], [0, 1], [0, 1]]
    phi = [[e, e], [a, c], [a, d], [e, b], [e, e]]
    return AutomatonSpec((0.0, 1.0), tuple(float(k) for k in range(5)), 0, 0, psi, phi, "grigorchuk")


def _identity2() -> AutomatonSpec:
    return AutomatonSpec((0.0, 1.0), (0.0,), 0, 0, [[0, 1]], [[0, 0]], "identity2")


_BUILTINS = {
    "lamplighter": _lamplighter,
    "example_4_1": _example_4_1,
    "grigorchuk": _grigorchuk,
    "identity2": _identity2,
}

GRIGORCHUK_STATES = {"a": 0, "b": 1, "c": 2, "d": 3, "e": 4}


def builtin(name: str) -> AutomatonSpec:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise InputError(f"unknown builtin automaton {name!r}; choose from {sorted(_BUILTINS)}") from None


def one_state(swap: bool, alphabet: tuple[float, float] = (0.0, 1.0), state: float = 0.0) -> AutomatonSpec:
    """Single-state Mealy automaton acting by the swap or by the identity."""
    row = [1, 0] if swap else [0, 1]
    return AutomatonSpec(alphabet, (state,), 0, 0, [row], [[0, 0]], "one_state_swap" if swap else "one_state_id")


# ---------------------------------------------------------------------------
# JSON documents


def to_json_dict(a: AutomatonSpec) -> dict:
    return {
        "S": list(a.alphabet),
        "Q": list(a.states),
        "alpha": a.alpha,
        "beta": a.beta,
        "psi": a.psi.tolist(),
        "phi": a.phi.tolist(),
    }


def from_json_dict(doc: dict) -> AutomatonSpec:
    if "builtin" in doc:
        return builtin(str(doc["builtin"]))
    try:
        return AutomatonSpec(
            tuple(doc["S"]), tuple(doc["Q"]), int(doc["alpha"]), int(doc["beta"]), doc["psi"], doc["phi"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed automaton document: {exc}") from exc
