"""Uniform container for inequality checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

PASS_TOL = 1e-9


@dataclass(frozen=True)
class BoundReport:
    """Outcome of checking ``lhs <= rhs`` over a set of locations.

    ``worst_lhs``/``bound_rhs`` are taken at the location of the smallest
    margin ``rhs - lhs``. ``passed`` holds iff that margin is at least
    ``-1e-9``.
    """

    worst_lhs: float
    bound_rhs: float
    margin: float
    location: Optional[tuple]
    passed: bool
    label: str = ""
    details: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_margin(
        cls,
        lhs: float,
        rhs: float,
        location: Optional[tuple] = None,
        label: str = "",
        details: Optional[dict] = None,
    ) -> "BoundReport":
        margin = rhs - lhs
        if math.isnan(margin):
            # inf - inf: an unbounded bound against an unbounded quantity
            margin = math.inf if lhs == -math.inf or rhs == math.inf else -math.inf
        return cls(
            worst_lhs=float(lhs),
            bound_rhs=float(rhs),
            margin=float(margin),
            location=location,
            passed=bool(margin >= -PASS_TOL),
            label=label,
            details=dict(details or {}),
        )

    @classmethod
    def from_arrays(
        cls,
        lhs: np.ndarray,
        rhs: np.ndarray,
        locations: Optional[list] = None,
        label: str = "",
        details: Optional[dict] = None,
    ) -> "BoundReport":
        """Worst case of elementwise ``lhs <= rhs`` (NaN entries are skipped)."""
        lhs = np.asarray(lhs, dtype=float)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape)
        margins = rhs - lhs
        valid = ~np.isnan(margins)
        if not valid.any():
            return cls.vacuous(label, details)
        masked = np.where(valid, margins, np.inf)
        flat = int(np.argmin(masked))
        idx = np.unravel_index(flat, lhs.shape)
        loc = tuple(int(k) for k in idx) if locations is None else locations[flat]
        return cls.from_margin(lhs[idx], rhs[idx], loc, label, details)

    @classmethod
    def vacuous(cls, label: str = "", details: Optional[dict] = None) -> "BoundReport":
        """A check with nothing to compare: passes with infinite margin."""
        return cls(0.0, math.inf, math.inf, None, True, label, dict(details or {}))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "worst_lhs": _json_float(self.worst_lhs),
            "bound_rhs": _json_float(self.bound_rhs),
            "margin": _json_float(self.margin),
            "location": list(self.location) if self.location is not None else None,
            "pass": self.passed,
            "details": self.details,
        }

    def render(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        loc = "-" if self.location is None else ",".join(str(v) for v in self.location)
        return (
            f"{status:4}  {self.label:<32} lhs={self.worst_lhs:<14.6g} "
            f"rhs={self.bound_rhs:<14.6g} margin={self.margin:<14.6g} at {loc}"
        )


def _json_float(v: float):
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


def worst(reports: Iterable[BoundReport], label: str = "") -> BoundReport:
    """The report with the smallest margin, relabelled if ``label`` is given."""
    reports = list(reports)
    if not reports:
        return BoundReport.vacuous(label)
    r = min(reports, key=lambda rep: rep.margin)
    if label:
        r = BoundReport(r.worst_lhs, r.bound_rhs, r.margin, r.location, r.passed, label, r.details)
    return r
