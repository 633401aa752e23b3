from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import ConvexDomain


def log_c_bound(lam: float, a: float, b: float, max_phi: float) -> float:
    """log of 2 exp(lambda max Phi) / (lambda (lambda a - 2b)), the threshold c must beat."""
    if not lam * a > 2 * b:
        raise ValueError("need lambda > 2b/a")
    return math.log(2.0 / lam) + lam * max_phi - math.log(lam * a - 2 * b)


@dataclass(frozen=True)
class SimpleCertificate:
    """Single-pole certificate Phi = V_{p,delta} for domains without boundary segments."""

    domain: ConvexDomain
    p: np.ndarray
    delta: float
    epsilon: float
    a: float
    b: float
    lam: float
    log_c: float
    max_phi: float
    grid_resolution: float
    worst_margins: dict = field(default_factory=dict)

    kind = "simple"
    symmetric = False
    S = math.inf

    @property
    def poles(self) -> np.ndarray:
        return np.atleast_2d(self.p)

    @property
    def pole_segments(self):
        return [None]


@dataclass(frozen=True)
class PlanarCertificate:
    """Minimum of damped perturbations over the poles of every long boundary segment."""

    domain: ConvexDomain
    poles: np.ndarray
    pole_segments: list
    pole_signs: list
    delta: float
    S: float
    R: float
    sigma: float
    phi: float
    eta: float
    xi: float
    center: np.ndarray
    epsilon: float
    a: float
    b: float
    lam: float
    log_c: float
    max_phi: float
    grid_resolution: float
    worst_margins: dict = field(default_factory=dict)

    kind = "planar"
    symmetric = True


@dataclass
class InequalityCheck:
    name: str
    resolution: float
    worst_margin: float  # must be <= 0
    arg_worst: dict | None
    evaluated: int

    @property
    def passed(self) -> bool:
        return not self.worst_margin > 0


@dataclass
class VerificationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def worst_margin(self) -> float:
        return max((c.worst_margin for c in self.checks), default=-math.inf)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "resolution": c.resolution,
                    "worst_margin": c.worst_margin,
                    "arg_worst": c.arg_worst,
                    "evaluated": c.evaluated,
                    "passed": c.passed,
                }
                for c in self.checks
            ],
        }

    def summary(self) -> str:
        lines = [f"verification {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(
                f"  {c.name}: worst margin {c.worst_margin:.6g} over {c.evaluated} configurations "
                f"(resolution {c.resolution:.3g}) {'ok' if c.passed else 'VIOLATED'}"
            )
        return "\n".join(lines)
