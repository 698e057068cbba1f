"""Reflected drift transport: move a point while projecting back into the domain.

This is the deterministic transport step of the backward scheme.  Running the
scheme's macro step of length h backward in time turns the terminal-value
reflected ODE into a forward initial-value problem, discretized here by
projected Euler: each substep drifts by drift * (h / substeps) and projects
back onto the closed domain.  The accumulated projection displacement is the
reflection increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ExteriorPointError, StepTooLargeError
from .geometry import EXTERIOR, Domain, contains, project
from .geodesics import psi

# Default substep target: |drift| * delta <= DRIFT_STEP_FRACTION * projection_band.
DRIFT_STEP_FRACTION = 1e-3


@dataclass(frozen=True, eq=False)
class TransportResult:
    """Endpoint and reflection increment of one reflected transport."""

    endpoint: np.ndarray
    k_increment: np.ndarray  # endpoint - start - drift*h, zero off the boundary
    substeps: int
    path: np.ndarray | None = None  # optional (substeps+1, 2) sample of the route


def default_substeps(d: Domain, drift, h) -> int:
    """Substep count keeping each drift increment well inside the band."""
    speed = float(np.hypot(drift[0], drift[1]))
    if speed == 0.0:
        return 1
    return max(1, math.ceil(speed * h / (DRIFT_STEP_FRACTION * d.projection_band)))


def reflect_transport(d: Domain, y, drift, h, substeps=None, record_path=False) -> TransportResult:
    """Projected-Euler solution of the reflected constant-drift transport.

    Starting at y, performs ``substeps`` steps of size h/substeps, each
    drifting by drift and projecting back onto the closed domain.  The
    reflection increment satisfies the exact balance
    endpoint - y - drift*h = k_increment.

    Raises:
        ExteriorPointError: y is outside the closed domain.
        StepTooLargeError: a single drift increment exceeds half the
            projection band, where nearest-point reflection may be ambiguous.
    """
    y = np.asarray(y, dtype=float)
    if contains(d, y) == EXTERIOR:
        raise ExteriorPointError(f"transport start {y.tolist()} outside the domain")
    if h <= 0.0:
        raise ValueError("h must be positive")
    drift = np.asarray(drift, dtype=float)
    if substeps is None:
        substeps = default_substeps(d, drift, h)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    delta = h / substeps
    speed = float(np.hypot(drift[0], drift[1]))
    if speed * delta >= 0.5 * d.projection_band:
        raise StepTooLargeError(
            f"drift step {speed * delta:.3g} exceeds half the projection band "
            f"{d.projection_band:.3g}; increase substeps"
        )
    r = y.copy()
    trail = [r.copy()] if record_path else None
    step = drift * delta
    for _ in range(substeps):
        r = project(d, r + step)
        if record_path:
            trail.append(r.copy())
    k = r - y - drift * h
    return TransportResult(
        endpoint=r,
        k_increment=k,
        substeps=substeps,
        path=np.asarray(trail) if record_path else None,
    )


@dataclass(frozen=True, eq=False)
class TransportCheckReport:
    """Fitted stability constants of the reflected transport."""

    n_samples: int
    h: float
    fitted_c1: float  # Psi(end, end') <= (1 + c1*h) Psi(y, y')
    fitted_c2: float  # |end - y| <= c2 * h
    max_drift: float
    passed: bool

    def as_dict(self):
        return {
            "n_samples": self.n_samples,
            "h": self.h,
            "fitted_c1": self.fitted_c1,
            "fitted_c2": self.fitted_c2,
            "max_drift": self.max_drift,
            "passed": self.passed,
        }


def skorokhod_lipschitz_check(d: Domain, n_samples, h, substeps=None, seed=0,
                              drift_scale=1.0, slack=0.1) -> TransportCheckReport:
    """Sampled Lipschitz-in-start and speed bounds of the transport map.

    Over sampled (y, y', drift), fits the smallest c1 with
    Psi(end, end') <= (1 + c1*h) Psi(y, y') and the smallest c2 with
    |end - y| <= c2*h, and verifies c2 <= |drift|_max * (1 + slack).
    """
    from .geometry import sample_points

    rng = np.random.default_rng(seed)
    c1 = 0.0
    c2 = 0.0
    max_drift = 0.0
    for _ in range(n_samples):
        y1, y2 = sample_points(d, 2, rng)
        drift = drift_scale * (2.0 * rng.random(2) - 1.0)
        max_drift = max(max_drift, float(np.hypot(*drift)))
        r1 = reflect_transport(d, y1, drift, h, substeps)
        r2 = reflect_transport(d, y2, drift, h, substeps)
        psi0 = psi(d, y1, y2)
        psi1 = psi(d, r1.endpoint, r2.endpoint)
        if psi0 > d.tau**2:
            c1 = max(c1, (psi1 / psi0 - 1.0) / h)
        c2 = max(
            c2,
            float(np.hypot(*(r1.endpoint - y1))) / h,
            float(np.hypot(*(r2.endpoint - y2))) / h,
        )
    passed = math.isfinite(c1) and c2 <= max_drift * (1.0 + slack) + 1e-12
    return TransportCheckReport(
        n_samples=n_samples, h=h, fitted_c1=c1, fitted_c2=c2,
        max_drift=max_drift, passed=passed,
    )
