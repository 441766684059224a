"""Batch front-end: scenario configs in, CSV/JSON artifacts and bound reports out.

A scenario is a JSON document::

    {"kind": "pde", "inputs": {"f": "builtin:field_u", "g": "f.json"},
     "params": {"t": 2, "r": 0.5, ...}, "outputs": "out/pde"}

Input references are paths relative to the config file, ``builtin:<name>``
or inline documents. Every artifact is written atomically and listed in
``manifest.json`` with its SHA-256; nothing time-dependent is recorded, so
reruns with the same seed reproduce the manifest byte for byte.

Exit codes: 0 when every bound report passed, 2 when a bound failed (a
scientific negative), 1 for unreadable configs and crashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import automata
from . import dynamics as dyn
from . import extensions as ex
from . import pde
from . import tropical as tr
from .errors import InputError, InvariantError, NumericalError, TropdynError
from .reports import BoundReport, worst

log = logging.getLogger("tropdyn")

KINDS = ("eval", "orbit", "compare", "recurse", "pde", "refine")
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
EXIT_OK, EXIT_CRASH, EXIT_FAIL = 0, 1, 2
MANIFEST = "manifest.json"
RECURSION_TOL = 1e-9

# the threshold condition a quasi-recursivity probe needs, as a diagnostic
PROBE_CONDITION = "μδ + 2 log_{t₀} M < δ"


class ScenarioError(InputError):
    """A config that cannot be run, with the location of the problem."""


@dataclass
class Scenario:
    kind: str
    inputs: dict
    params: dict
    outputs: Optional[str] = None
    source: Optional[Path] = None

    @property
    def where(self) -> str:
        return str(self.source) if self.source else "<scenario>"

    def resolve(self, ref: str) -> Path:
        base = self.source.parent if self.source else Path.cwd()
        return (base / ref).resolve()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "inputs": self.inputs, "params": self.params}


@dataclass
class Artifacts:
    files: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    scripts: dict = field(default_factory=dict)

    def text(self, name: str, content: str) -> None:
        self.files[name] = content.encode()

    def json(self, name: str, doc: Any) -> None:
        self.files[name] = _dumps(doc).encode()


@dataclass(frozen=True)
class RunResult:
    exit_code: int
    out_dir: Path
    manifest: dict
    message: str = ""


def _clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _dumps(doc) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- loading -------------------------------------------------------------


def load_scenario(path: str | Path, kind: Optional[str] = None) -> Scenario:
    """Parse a config file; JSON errors carry ``file:line:col``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    file_kind = doc.get("kind", kind)
    if kind is not None and file_kind != kind:
        raise ScenarioError(f"{path}: kind: config declares {file_kind!r} but {kind!r} was requested")
    for key in ("inputs", "params"):
        if not isinstance(doc.get(key, {}), dict):
            raise ScenarioError(f"{path}: {key}: must be an object")
    outputs = doc.get("outputs")
    if outputs is not None and not isinstance(outputs, str):
        raise ScenarioError(f"{path}: outputs: must be a directory path")
    return Scenario(str(file_kind), dict(doc.get("inputs", {})), dict(doc.get("params", {})), outputs, path)


class _Params:
    """Typed access to ``params`` with located error messages."""

    def __init__(self, s: Scenario):
        self.s = s
        self.raw = s.params

    def fail(self, key: str, msg: str):
        raise ScenarioError(f"{self.s.where}: params.{key}: {msg}")

    def has(self, key: str) -> bool:
        return key in self.raw

    def get(self, key: str, kind: Callable = float, default: Any = None, required: bool = False):
        if key not in self.raw:
            if required:
                self.fail(key, "required")
            return default
        val = self.raw[key]
        try:
            if kind is bool:
                if not isinstance(val, bool):
                    raise TypeError("expected true or false")
                return val
            if kind is int and (isinstance(val, bool) or int(val) != val):
                raise TypeError(f"expected an integer, got {val!r}")
            return kind(val)
        except (TypeError, ValueError) as exc:
            self.fail(key, str(exc))

    def vector(self, key: str, default=None, required: bool = False):
        if key not in self.raw:
            if required:
                self.fail(key, "required")
            return default
        try:
            return np.asarray(self.raw[key], dtype=float).ravel()
        except (TypeError, ValueError) as exc:
            self.fail(key, f"expected a list of numbers ({exc})")

    def seed(self) -> int:
        if "seed" not in self.raw:
            self.fail("seed", "a seed is required because this scenario draws random values")
        return self.get("seed", int)


# -- inputs --------------------------------------------------------------

_PRESENTATIONS: dict[str, Callable[[], tr.MaxPlusPresentation]] = {
    "lyness": dyn.lyness_presentation,
    "abs": dyn.abs_presentation,
    "field_u": lambda: pde.example_field(2, "u"),
    "field_v": lambda: pde.example_field(2, "v"),
}

_AUTOMATA: dict[str, Callable[[], automata.AutomatonSpec]] = {
    "one_state_swap": lambda: automata.one_state(True),
    "one_state_id": lambda: automata.one_state(False),
}


def _load_doc(s: Scenario, key: str):
    ref = s.inputs.get(key)
    if ref is None:
        raise ScenarioError(f"{s.where}: inputs.{key}: required")
    if isinstance(ref, dict):
        return ref, None
    if not isinstance(ref, str):
        raise ScenarioError(f"{s.where}: inputs.{key}: expected a path, builtin:<name> or an object")
    if ref.startswith("builtin:"):
        return None, ref[len("builtin:"):]
    path = s.resolve(ref)
    try:
        return json.loads(path.read_text()), None
    except OSError as exc:
        raise ScenarioError(f"{s.where}: inputs.{key}: cannot read {ref}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg} (inputs.{key})") from exc


def presentation_input(s: Scenario, key: str) -> tr.MaxPlusPresentation:
    doc, name = _load_doc(s, key)
    if name is not None:
        if name not in _PRESENTATIONS:
            raise ScenarioError(
                f"{s.where}: inputs.{key}: unknown builtin presentation {name!r}; "
                f"choose from {sorted(_PRESENTATIONS)}"
            )
        return _PRESENTATIONS[name]()
    try:
        return tr.from_json_dict(doc)
    except InputError as exc:
        raise ScenarioError(f"{s.where}: inputs.{key}: {exc}") from exc


def automaton_input(s: Scenario, key: str = "automaton") -> automata.AutomatonSpec:
    """The automaton, re-embedded with ``params.spacing`` when given."""
    doc, name = _load_doc(s, key)
    try:
        if name is not None:
            a = _AUTOMATA[name]() if name in _AUTOMATA else automata.builtin(name)
        else:
            a = automata.from_json_dict(doc)
    except InputError as exc:
        raise ScenarioError(f"{s.where}: inputs.{key}: {exc}") from exc
    spacing = _Params(s).get("spacing")
    if spacing is None:
        return a
    if spacing <= 0:
        _Params(s).fail("spacing", "must be positive")
    return automata.with_spacing(a, spacing)


def _default_delta(a: automata.AutomatonSpec) -> float:
    vals = sorted(set(float(v) for v in tuple(a.states) + tuple(a.alphabet)))
    gap = min((b - c for c, b in zip(vals, vals[1:])), default=1.0)
    return 0.4 * gap


def _pair(s: Scenario, p: _Params, suffix: str = ""):
    """Presentation pair from ``psi``/``phi`` inputs or an automaton's extension."""
    if f"psi{suffix}" in s.inputs or f"phi{suffix}" in s.inputs:
        return presentation_input(s, f"psi{suffix}"), presentation_input(s, f"phi{suffix}"), None
    if "automaton" in s.inputs:
        a = automaton_input(s)
        delta = p.get("delta", float, _default_delta(a))
        try:
            ext = ex.build_stable_extension(a, delta)
        except InputError as exc:
            raise ScenarioError(f"{s.where}: params.delta: {exc}") from exc
        return ext.psi_pres, ext.phi_pres, a
    raise ScenarioError(f"{s.where}: inputs: need psi{suffix}/phi{suffix} or an automaton")


def _initials(s: Scenario, p: _Params, psi, phi, a, I: int, J: int, seed_needed: list):
    """Initial rows from params, or seeded random draws when absent."""
    need = dyn.required_length(psi, phi, I, J)
    x0, y0 = p.vector("x_init"), p.vector("y_init")
    if x0 is not None and y0 is not None:
        return x0, y0
    seed_needed.append("initial values")
    if not p.has("seed"):
        return None, None
    rng = np.random.default_rng(p.get("seed", int))
    if a is not None:
        jitter = p.get("jitter", float, 0.0)
        xs = np.asarray(a.alphabet, float)[rng.integers(0, a.n_symbols, size=need)]
        ys = np.asarray(a.states, float)[rng.integers(0, a.n_states, size=J)]
        xs = xs + rng.uniform(-jitter, jitter, size=need)
        ys = ys + rng.uniform(-jitter, jitter, size=J)
    else:
        lo, hi = p.vector("init_range", np.array([-1.0, 1.0]))
        xs = rng.uniform(lo, hi, size=need)
        ys = rng.uniform(lo, hi, size=J)
    return (x0 if x0 is not None else xs), (y0 if y0 is not None else ys)


# -- validation ----------------------------------------------------------


def validate(s: Scenario) -> list[str]:
    """Dry-run schema and precondition checks; an empty list means runnable."""
    if s.kind not in KINDS:
        return [f"{s.where}: kind: unknown kind {s.kind!r}; choose from {list(KINDS)}"]
    try:
        return _CHECKS[s.kind](s, _Params(s))
    except ScenarioError as exc:
        return [str(exc)]
    except TropdynError as exc:
        return [f"{s.where}: {s.kind}: {exc}"]


def _check_eval(s: Scenario, p: _Params) -> list[str]:
    pres = presentation_input(s, "presentation")
    pt = p.vector("point", required=True)
    if pt.size != pres.arity:
        p.fail("point", f"has {pt.size} entries, the presentation has arity {pres.arity}")
    if p.has("t") and p.get("t") <= 1:
        p.fail("t", "must exceed 1")
    return []


def _check_orbit(s: Scenario, p: _Params) -> list[str]:
    psi, phi, a = _pair(s, p)
    I, J = p.get("I", int, required=True), p.get("J", int, required=True)
    mode = p.get("mode", str, "pl")
    if mode not in dyn.MODES:
        p.fail("mode", f"must be one of {list(dyn.MODES)}")
    if mode != "pl" and not p.has("t"):
        p.fail("t", f"required in {mode} mode")
    seeds: list = []
    x0, y0 = _initials(s, p, psi, phi, a, I, J, seeds)
    diags = _seed_diags(s, p, seeds)
    if x0 is not None and x0.size < dyn.required_length(psi, phi, I, J):
        diags.append(f"{s.where}: params.x_init: needs {dyn.required_length(psi, phi, I, J)} entries, got {x0.size}")
    return diags


def _seed_diags(s: Scenario, p: _Params, uses: list) -> list[str]:
    if uses and not p.has("seed"):
        return [f"{s.where}: params.seed: required because {', '.join(uses)} are drawn at random"]
    return []


def _check_compare(s: Scenario, p: _Params) -> list[str]:
    psi, phi, a = _pair(s, p)
    I, J = p.get("I", int, required=True), p.get("J", int, required=True)
    p.get("t", float, required=True)
    _second_pair(s, p)
    seeds: list = []
    x0, _y0 = _initials(s, p, psi, phi, a, I, J, seeds)
    if p.get("sandwich", bool, False):
        seeds.append("sandwich interpolation weights")
    diags = _seed_diags(s, p, seeds)
    if x0 is not None and x0.size < dyn.required_length(psi, phi, I, J):
        diags.append(f"{s.where}: params.x_init: needs {dyn.required_length(psi, phi, I, J)} entries, got {x0.size}")
    return diags


def _check_recurse(s: Scenario, p: _Params) -> list[str]:
    if "automaton" in s.inputs:
        a = automaton_input(s)
        t, C = p.get("t", float, required=True), p.get("C", float, 2.0)
        _state_word(p, a)
        for key in ("I", "J"):
            p.get(key, int, required=True)
        diags = _seed_diags(s, p, ["probe initial values"])
        ext = ex.build_stable_extension(a, p.get("delta", float, _default_delta(a)))
        th = dyn.probe_thresholds(ext, C)
        if t < th["t_min"]:
            diags.append(
                f"{s.where}: params.t: t = {t:g} violates {PROBE_CONDITION} "
                f"(M = {th['M']}, delta = {ext.delta:g}, mu = {ext.mu:g}); minimal admissible t is {th['t_min']:.6g}"
            )
        return diags
    pres = presentation_input(s, "presentation")
    if pres.arity != 2:
        raise ScenarioError(f"{s.where}: inputs.presentation: second-order recursion needs arity 2")
    mode = p.get("mode", str, "rational-log")
    if mode not in dyn.MODES:
        p.fail("mode", f"must be one of {list(dyn.MODES)}")
    if mode != "pl" and not p.has("t"):
        p.fail("t", f"required in {mode} mode")
    _series_start(p, mode)
    return []


def _check_pde(s: Scenario, p: _Params) -> list[str]:
    f, g = presentation_input(s, "f"), presentation_input(s, "g")
    t = p.get("t", float, required=True)
    try:
        window = pde.SelfDynamicsWindow(p.get("r", required=True), p.get("R", required=True), p.get("q", required=True))
    except InputError as exc:
        raise ScenarioError(f"{s.where}: params.r/R/q: {exc}") from exc
    for key in ("X", "S"):
        if p.get(key, required=True) <= 0:
            p.fail(key, "must be positive")
    diags = []
    consts = pde.window_constants(pde.as_field(f, t), pde.as_field(g, t), window)
    tmax, limits = pde.tau_max(consts, window.q)
    if p.has("tau"):
        for name, lim in limits.items():
            if p.get("tau") > lim * (1 + 1e-12):
                diags.append(f"{s.where}: params.tau: {p.get('tau'):g} violates {name} (limit {lim:.6g})")
    lo, hi = window.inner
    for key in ("u0", "v0"):
        vals = _wave(p, key)(np.linspace(0.0, p.get("X" if key == "u0" else "S"), 1001))
        if vals.min() < lo - 1e-12 or vals.max() > hi + 1e-12:
            diags.append(
                f"{s.where}: params.{key}: range [{vals.min():.6g}, {vals.max():.6g}] leaves "
                f"[r+q, R-q] = [{lo:.6g}, {hi:.6g}]"
            )
    return diags


def _check_refine(s: Scenario, p: _Params) -> list[str]:
    automaton_input(s)
    delta = p.get("delta", float, 0.25)
    if delta <= 0 or abs(1 / delta - round(1 / delta)) > 1e-9:
        p.fail("delta", "must be the reciprocal of a positive integer")
    if p.get("construction", str, "auto") not in ("auto", "frozen-parity", "two-letter", "printed"):
        p.fail("construction", "must be auto, frozen-parity, two-letter or printed")
    p.get("max_len", int, 3)
    return []


_CHECKS = {
    "eval": _check_eval,
    "orbit": _check_orbit,
    "compare": _check_compare,
    "recurse": _check_recurse,
    "pde": _check_pde,
    "refine": _check_refine,
}


# -- runners -------------------------------------------------------------


def _run_eval(s: Scenario, p: _Params, art: Artifacts, seed: Optional[int]) -> None:
    pres = presentation_input(s, "presentation")
    pt = p.vector("point")
    value = float(tr.eval_maxplus(pres, pt))
    fields = {"phi": value}
    if p.has("t"):
        t = p.get("t")
        deq = float(tr.eval_dequantized(pres, t, pt))
        log_M = math.log(pres.components) / math.log(t)
        fields.update({"phi_t": deq, "log_t_M": log_M})
        art.reports.append(BoundReport.from_margin(abs(deq - value), log_M, None, "dequantization envelope"))
    art.text("result.txt", " ".join(f"{k}={v!r}" for k, v in fields.items()) + "\n")
    art.summary.update(fields)


def _orbit_setup(s: Scenario, p: _Params):
    psi, phi, a = _pair(s, p)
    I, J = p.get("I", int), p.get("J", int)
    x0, y0 = _initials(s, p, psi, phi, a, I, J, [])
    return psi, phi, a, I, J, x0, y0


def _run_orbit(s: Scenario, p: _Params, art: Artifacts, seed: Optional[int]) -> None:
    psi, phi, _a, I, J, x0, y0 = _orbit_setup(s, p)
    mode = p.get("mode", str, "pl")
    grid = dyn.run(psi, phi, p.get("t"), x0, y0, I, J, mode)
    res = dyn.recursion_residual(grid, psi, phi)
    art.reports.append(BoundReport.from_margin(res, RECURSION_TOL, None, "recursion residual"))
    art.text("grid.csv", dyn.grid_csv(grid))
    art.summary.update({"I": I, "J": J, "mode": mode, "recursion_residual": res})
    art.scripts = {"orbit.gp": _gp_grid("grid.csv", "x")}


def _second_pair(s: Scenario, p: _Params):
    if "psi2" in s.inputs or "phi2" in s.inputs:
        return presentation_input(s, "psi2"), presentation_input(s, "phi2")
    N = p.get("scale", int, 3)
    if N < 1:
        p.fail("scale", "must be a positive integer")
    return None, N


def _run_compare(s: Scenario, p: _Params, art: Artifacts, seed: Optional[int]) -> None:
    psi1, phi1, _a, I, J, x0, y0 = _orbit_setup(s, p)
    second = _second_pair(s, p)
    if second[0] is None:
        psi2, phi2 = tr.scale(psi1, second[1]), tr.scale(phi1, second[1])
    else:
        psi2, phi2 = second
    t = p.get("t")
    x2, y2 = p.vector("x_init2", x0), p.vector("y_init2", y0)
    g1 = dyn.run(psi1, phi1, t, x0, y0, I, J, "rational-log")
    g2 = dyn.run(psi2, phi2, t, x2, y2, I, J, "rational-log")
    st = tr.pair_stats(psi1, phi1, psi2, phi2)
    gamma = max(psi1.arity, phi1.arity) - 2
    M = p.get("M", int, st.components)
    c = p.get("c", float, st.lipschitz)
    multiplier = p.get("multiplier", int, 2)
    rate = float(t ** dyn.log_initial_rate(g1, g2))
    art.reports.append(dyn.check_comparison(g1, g2, M, c, gamma, rate, multiplier, t))
    art.text("grid1.csv", dyn.grid_csv(g1))
    art.text("grid2.csv", dyn.grid_csv(g2))
    art.summary.update({"M": M, "c": c, "gamma": gamma, "rate": rate, "multiplier": multiplier})
    if p.get("sandwich", bool, False):
        gs = dyn.sandwich_run(psi1, psi2, phi1, phi2, t, x0, y0, I, J, "random", p.seed())
        art.reports.append(
            worst([dyn.check_comparison(g1, gs, M, c, gamma, 1.0, 2, t)], label="sandwich comparison x2")
        )
        art.text("sandwich.csv", dyn.grid_csv(gs))
    art.scripts = {"compare.gp": _gp_grid("grid1.csv", "x")}


def _state_word(p: _Params, a: automata.AutomatonSpec) -> list[int]:
    raw = p.raw.get("state_word")
    if not isinstance(raw, list) or not raw:
        p.fail("state_word", "required: a non-empty list of state indices")
    names = automata.GRIGORCHUK_STATES if a.name == "grigorchuk" else {}
    out = []
    for q in raw:
        if isinstance(q, str) and q in names:
            q = names[q]
        if isinstance(q, bool) or not isinstance(q, int) or not 0 <= q < a.n_states:
            p.fail("state_word", f"invalid state {q!r}")
        out.append(q)
    return out


def _series_start(p: _Params, mode: str) -> tuple[float, float]:
    if p.has("z0") or p.has("z1"):
        z0, z1 = p.get("z0", required=True), p.get("z1", required=True)
        if z0 <= 0 or z1 <= 0:
            p.fail("z0", "initial values must be positive")
        if mode == "pl":
            p.fail("z0", "pl mode takes log-domain x0/x1")
        ln_t = math.log(p.get("t"))
        return math.log(z0) / ln_t, math.log(z1) / ln_t
    return p.get("x0", float, required=True), p.get("x1", float, required=True)


def _run_recurse(s: Scenario, p: _Params, art: Artifacts, seed: Optional[int]) -> None:
    C = p.get("C", float, 1.0 + 1e-9 if "automaton" not in s.inputs else 2.0)
    if "automaton" in s.inputs:
        a = automaton_input(s)
        ext = ex.build_stable_extension(a, p.get("delta", float, _default_delta(a)))
        word = _state_word(p, a)
        rep = dyn.quasi_recursivity_probe(
            ext, a, word, p.get("t"), C, p.get("I", int), p.get("J", int), p.seed()
        )
        art.reports.append(rep)
        art.summary.update({"p": rep.details.get("p"), "period": rep.details.get("period")})
        art.text("period.txt", f"p={rep.details.get('p')} period={rep.details.get('period')}\n")
        return
    pres = presentation_input(s, "presentation")
    mode = p.get("mode", str, "rational-log")
    x0, x1 = _series_start(p, mode)
    n = p.get("n", int, 60)
    t = p.get("t")
    series = dyn.second_order_orbit(pres, t, x0, x1, n, mode)
    q = dyn.detect_quasi_period(series, C, p.get("p_max", int, dyn.DEFAULT_P_MAX), log_base=t or math.e)
    base = t or math.e
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "x"])
    for k, v in enumerate(series):
        w.writerow([k, repr(float(v))])
    art.text("series.csv", buf.getvalue())
    if q is None:
        art.text("period.txt", "p=none\n")
        art.summary["p"] = None
        art.reports.append(BoundReport.from_margin(math.inf, math.log(C), None, "quasi-period"))
    else:
        art.text("period.txt", f"p={q.p} max_ratio={q.max_ratio!r}\n")
        art.summary.update({"p": q.p, "max_ratio": q.max_ratio})
        art.reports.append(
            BoundReport.from_margin(math.log(q.max_ratio), math.log(C), None, "quasi-period",
                                    {"p": q.p, "log_base": base})
        )
    art.scripts = {"series.gp": _gp_series("series.csv")}


def _wave(p: _Params, key: str) -> Callable:
    """Initial data: a number, or ``{"base", "amp", "freq", "wave"}`` with sin or cos."""
    raw = p.raw.get(key)
    if raw is None:
        p.fail(key, "required")
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return lambda xs: np.full(np.shape(xs), float(raw))
    if not isinstance(raw, dict):
        p.fail(key, "expected a number or an object with base/amp/freq/wave")
    try:
        base, amp, freq = float(raw.get("base", 1.0)), float(raw.get("amp", 0.0)), float(raw.get("freq", 1.0))
    except (TypeError, ValueError) as exc:
        p.fail(key, str(exc))
    fn = {"sin": np.sin, "cos": np.cos}.get(raw.get("wave", "sin"))
    if fn is None:
        p.fail(key, "wave must be sin or cos")
    return lambda xs: base + amp * fn(freq * np.asarray(xs, dtype=float))


def _run_pde(s: Scenario, p: _Params, art: Artifacts, seed: Optional[int]) -> None:
    f, g = presentation_input(s, "f"), presentation_input(s, "g")
    t = p.get("t")
    window = pde.SelfDynamicsWindow(p.get("r"), p.get("R"), p.get("q"))
    art.reports.append(pde.check_self_dynamics(f, g, t, window.r, window.R, window.q))
    sol = pde.solve(
        f, g, t, window, _wave(p, "u0"), _wave(p, "v0"), p.get("X"), p.get("S"),
        h=p.get("h"), tau=p.get("tau"), tol=p.get("tol", float, 1e-12),
    )
    diag = sol.diagnostics
    res = max(diag["residual"])
    res_tol = p.get("residual_tol", float, diag["residual_tol"])
    art.reports.append(BoundReport.from_margin(diag["max_contraction"], 0.5, None, "picard contraction"))
    art.reports.append(BoundReport.from_margin(res, res_tol, None, "equation residual"))
    if p.get("energy", bool, True):
        art.reports.extend(pde.energy_report(sol, f, g, t))
    art.text("solution.csv", pde.solution_csv(sol))
    art.json("diagnostics.json", pde.diagnostics_json(sol))
    art.summary.update({
        "residual": res, "residual_tol": res_tol, "max_contraction": diag["max_contraction"],
        "tau": sol.tau, "h": sol.h,
    })
    art.scripts = {"pde.gp": _gp_surface("solution.csv")}


def _run_refine(s: Scenario, p: _Params, art: Artifacts, seed: Optional[int]) -> None:
    a = automaton_input(s)
    delta, L = p.get("delta", float, 0.25), p.get("L", float, 0.0)
    how = p.get("construction", str, "auto")
    if how == "auto":
        how = "frozen-parity" if a.n_states == 1 else "two-letter"
    build = {
        "frozen-parity": ex.build_one_state_refinement,
        "two-letter": ex.build_refinement_2alphabet,
        "printed": ex.one_state_printed_refinement,
    }[how]
    ref = build(a, delta, L)
    rep = ex.verify_refinement(ref, a, p.get("max_len", int, 3))
    art.reports.append(rep)
    art.json("refinement.json", ex.refinement_to_json(ref))
    art.summary.update({"construction": how, "N": ref.subdivision, "epsilon": ref.epsilon})


_RUNNERS = {
    "eval": _run_eval,
    "orbit": _run_orbit,
    "compare": _run_compare,
    "recurse": _run_recurse,
    "pde": _run_pde,
    "refine": _run_refine,
}


# -- gnuplot companions --------------------------------------------------


def _gp_grid(csv_name: str, column: str) -> str:
    col = 3 if column == "x" else 4
    return (
        "set datafile separator ','\n"
        "set view map\n"
        f"set title '{column}(i, j)'\n"
        "set xlabel 'i'\nset ylabel 'j'\n"
        f"splot '{csv_name}' every ::1 using 1:2:{col} with points palette pointtype 5 notitle\n"
    )


def _gp_series(csv_name: str) -> str:
    return (
        "set datafile separator ','\n"
        "set xlabel 'k'\nset ylabel 'x'\n"
        f"plot '{csv_name}' every ::1 using 1:2 with linespoints notitle\n"
    )


def _gp_surface(csv_name: str) -> str:
    return (
        "set datafile separator ','\n"
        "set xlabel 'x'\nset ylabel 's'\n"
        f"splot '{csv_name}' every ::1 using 1:2:3 with points pointtype 7 pointsize 0.3 title 'u', \\\n"
        f"      '{csv_name}' every ::1 using 1:2:4 with points pointtype 7 pointsize 0.3 title 'v'\n"
    )


# -- execution -----------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _render_reports(reports: Sequence[BoundReport]) -> str:
    return "".join(r.render() + "\n" for r in reports)


def run_scenario(s: Scenario, out_dir: str | Path | None = None, gnuplot: bool = False) -> RunResult:
    """Validate, compute, and write every artifact plus ``manifest.json``."""
    out = Path(out_dir if out_dir is not None else (s.resolve(s.outputs) if s.outputs else ""))
    if not str(out):
        raise ScenarioError(f"{s.where}: outputs: no output directory (pass --out)")
    diags = validate(s)
    if diags:
        raise ScenarioError("\n".join(diags))
    seed = s.params.get("seed")
    log.info("running %s scenario from %s into %s", s.kind, s.where, out)
    art = Artifacts()
    error = None
    try:
        _RUNNERS[s.kind](s, _Params(s), art, seed)
    except (InvariantError, NumericalError) as exc:
        # the computation ran but violated a guarantee: a scientific failure
        error = f"{type(exc).__name__}: {exc}"
    if gnuplot:
        for name, script in art.scripts.items():
            art.text(name, script)
    art.text("report.txt", _render_reports(art.reports))
    art.json("reports.json", [r.to_dict() for r in art.reports])

    failed = [r for r in art.reports if not r.passed]
    code = EXIT_FAIL if failed or error else EXIT_OK
    w = worst(art.reports) if art.reports else None
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(art.files):
        _atomic_write(out / name, art.files[name])
        log.debug("wrote %s (%d bytes)", out / name, len(art.files[name]))
    manifest = {
        "scenario": s.to_dict(),
        "status": "pass" if code == EXIT_OK else "fail",
        "exit_code": code,
        "error": error,
        "summary": art.summary,
        "worst": w.to_dict() if w is not None else None,
        "files": [
            {"name": name, "sha256": hashlib.sha256(art.files[name]).hexdigest(), "bytes": len(art.files[name])}
            for name in sorted(art.files)
        ],
    }
    text = _dumps(manifest)
    _atomic_write(out / MANIFEST, text.encode())
    message = ""
    if error:
        message = f"{s.where}: {error}"
    elif failed:
        message = f"{s.where}: {len(failed)} bound(s) failed; worst: {w.render()}"
    return RunResult(code, out, json.loads(text), message)


def _run_one(config: str, kind: str, out: str, seed: Optional[int], gnuplot: bool) -> tuple[int, str]:
    """Run a single config, mapping every outcome onto an exit code and message."""
    try:
        s = load_scenario(config, kind)
        if seed is not None:
            s.params["seed"] = seed
        r = run_scenario(s, out, gnuplot)
        return r.exit_code, r.message
    except ScenarioError as exc:
        return EXIT_CRASH, str(exc)
    except TropdynError as exc:
        return EXIT_CRASH, f"{config}: {kind}: {type(exc).__name__}: {exc}"
    except Exception as exc:  # noqa: BLE001 - report crashes with their location
        log.debug("crash in %s", config, exc_info=True)
        return EXIT_CRASH, f"{config}: {kind}: unexpected {type(exc).__name__}: {exc}"


def configure_logging() -> None:
    level_name = os.environ.get("TROPDYN_LOG", "info").lower()
    level = LOG_LEVELS.get(level_name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    if level_name not in LOG_LEVELS:
        log.warning("TROPDYN_LOG=%r is not one of %s; using info", level_name, sorted(LOG_LEVELS))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tropdyn", description="Run tropical dynamics scenarios.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", nargs="+", required=True, help="scenario JSON file(s)")
    ap.add_argument("--out", required=True, help="output directory (one subdirectory per config when several)")
    ap.add_argument("--seed", type=int, help="override params.seed")
    ap.add_argument("--jobs", type=int, default=1, help="run configs in this many processes")
    ap.add_argument("--gnuplot", action="store_true", help="also write gnuplot scripts for the CSV artifacts")
    ap.add_argument("--dry-run", action="store_true", help="only validate and print diagnostics")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("tropdyn: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CRASH
    configs = list(args.config)
    if args.dry_run:
        code = EXIT_OK
        for cfg in configs:
            try:
                s = load_scenario(cfg, args.kind)
                if args.seed is not None:
                    s.params["seed"] = args.seed
                diags = validate(s)
            except ScenarioError as exc:
                diags = [str(exc)]
            for d in diags:
                print(d, file=sys.stderr)
            code = max(code, EXIT_CRASH if diags else EXIT_OK)
        return code
    outs = [args.out] if len(configs) == 1 else [str(Path(args.out) / Path(c).stem) for c in configs]
    jobs = [(cfg, args.kind, out, args.seed, args.gnuplot) for cfg, out in zip(configs, outs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*job) for job in jobs]
    for (cfg, *_), (code, message) in zip(jobs, results):
        if message:
            print(message, file=sys.stderr)
        log.info("%s: exit %d", cfg, code)
    codes = {code for code, _ in results}
    if EXIT_CRASH in codes:
        return EXIT_CRASH
    return EXIT_FAIL if EXIT_FAIL in codes else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
