"""Reconstruction metrics and scar detection rules."""
from dataclasses import dataclass

import numpy as np

from .apsim import activation_times, apd
from .errors import InvalidArgument


def nrmse(U_hat, U_true):
    """Frobenius norm of the error relative to that of the truth."""
    U_hat = np.asarray(getattr(U_hat, "U", U_hat), dtype=float)
    U_true = np.asarray(getattr(U_true, "U", U_true), dtype=float)
    if U_hat.shape != U_true.shape:
        raise InvalidArgument(f"shape mismatch {U_hat.shape} vs {U_true.shape}")
    ref = np.linalg.norm(U_true)
    if ref == 0:
        raise InvalidArgument("ground truth has zero norm")
    return float(np.linalg.norm(U_hat - U_true) / ref)


def dice(S1, S2):
    """``2|S1 & S2| / (|S1| + |S2|)``; 1 when both sets are empty."""
    a, b = set(int(i) for i in S1), set(int(i) for i in S2)
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


@dataclass
class ScarRule:
    """``physiological``: absent or late activation, or short APD.
    ``amplitude``: low peak |u| relative to the median peak."""
    mode: str = "physiological"
    delay_fraction: float = 0.3
    apd_fraction: float = 0.7
    amplitude_fraction: float = 0.3

    def __post_init__(self):
        if self.mode not in ("physiological", "amplitude"):
            raise InvalidArgument(f"unknown scar rule mode {self.mode!r}")
        for v in (self.delay_fraction, self.apd_fraction, self.amplitude_fraction):
            if not 0 < v < 1:
                raise InvalidArgument("scar rule thresholds must lie in (0, 1)")


def detect_scar(U_hat, rule=None, dt_effective=None):
    """Node indices flagged as scar, sorted."""
    rule = rule or ScarRule()
    U = np.asarray(getattr(U_hat, "U", U_hat), dtype=float)
    dte = dt_effective or getattr(U_hat, "dt_effective", 1.0)
    if rule.mode == "amplitude":
        peak = np.abs(U).max(axis=1)
        return np.flatnonzero(peak < rule.amplitude_fraction * np.median(peak))
    t_act = activation_times(U, dte)
    durations = apd(U, dte)
    active = np.isfinite(t_act)
    flag = ~active
    flag |= active & (t_act > rule.delay_fraction * U.shape[1] * dte)
    if active.any():
        ref = np.median(durations[active])
        flag |= active & (durations < rule.apd_fraction * ref)
    return np.flatnonzero(flag)


def estimated_origin(U_hat, dt_effective=None):
    """Earliest-activating node (smallest index on ties), or None."""
    U = np.asarray(getattr(U_hat, "U", U_hat), dtype=float)
    t = activation_times(U, dt_effective or getattr(U_hat, "dt_effective", 1.0))
    if not np.any(np.isfinite(t)):
        return None
    return int(np.argmin(t))


def origin_error(U_hat, origin_true, mesh):
    """Distance (mm) between reconstructed and true activation origins; None if undefined."""
    o = estimated_origin(U_hat)
    if o is None:
        return None
    X = mesh.node_coords
    return float(np.linalg.norm(X[o] - X[int(origin_true)]))
