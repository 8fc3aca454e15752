"""Comparison methods: Greensite temporal-subspace Tikhonov and a fixed-model
Gaussian MAP estimator.

The fixed-model estimator is a simplified stand-in for filtering-based
EP-model-constrained inference: it keeps a single pre-simulated, scar-free
trajectory with a fixed pacing site as the prior mean and never adapts it.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .apsim import APParams, PacingConfig, TMPSequence, simulate
from .errors import InvalidArgument
from .inversion import estimate_beta
from .regularization import lcurve_lambda, ridge_solve, svd_operator


@dataclass
class GreensiteConfig:
    energy_fraction: float = 0.95
    lambda_mode: str = "l-curve"
    lambda_fixed: float = 0.0
    n_lambdas: int = 20

    def __post_init__(self):
        if not 0 < self.energy_fraction <= 1:
            raise InvalidArgument("energy_fraction must lie in (0, 1]")
        if self.lambda_mode not in ("l-curve", "fixed"):
            raise InvalidArgument(f"unknown lambda_mode {self.lambda_mode!r}")
        if self.lambda_fixed < 0:
            raise InvalidArgument("lambda must be non-negative")


def temporal_rank(s, energy_fraction):
    """Smallest r whose leading squared singular values reach the energy fraction."""
    e = s * s
    total = e.sum()
    if total == 0:
        return 0
    cum = np.cumsum(e) / total
    return int(min(np.searchsorted(cum, energy_fraction - 1e-15) + 1, len(s)))


def greensite_reconstruct(H, Y, config=None, dt_effective=1.0):
    """Zero-order Tikhonov in the leading temporal singular subspace of ``Y``.

    Returns a TMPSequence whose metadata carries the chosen ``lambda`` and
    temporal ``rank``.
    """
    cfg = config or GreensiteConfig()
    H = np.asarray(getattr(H, "H", H), dtype=float)
    Y = np.asarray(getattr(Y, "Y", Y), dtype=float)
    if H.shape[0] != Y.shape[0]:
        raise InvalidArgument(f"H has {H.shape[0]} rows, Y has {Y.shape[0]}")
    _, sy, Vt = np.linalg.svd(Y, full_matrices=False)
    r = temporal_rank(sy, cfg.energy_fraction)
    if r == 0 or sy[0] == 0:
        warnings.warn("ECG matrix has rank 0; returning a zero estimate")
        return TMPSequence(np.zeros((H.shape[1], Y.shape[1])), dt_effective,
                           {"lambda": None, "rank": 0, "warning": "rank-0 ECG"})
    V = Vt[:r].T
    B = Y @ V
    svd = svd_operator(H)
    if cfg.lambda_mode == "fixed":
        lam = cfg.lambda_fixed
    else:
        lam = lcurve_lambda(svd, B, n=cfg.n_lambdas)
    X = ridge_solve(svd, B, lam)
    return TMPSequence(X @ V.T, dt_effective, {"lambda": float(lam), "rank": r, "warning": None})


def default_sinus_origins(mesh, radius=1.0):
    """Pacing ball at the node closest to the centre of the lowest-z face."""
    X = mesh.node_coords
    target = np.array([X[:, 0].mean(), X[:, 1].mean(), X[:, 2].min()])
    center = int(np.argmin(np.linalg.norm(X - target, axis=1)))
    return tuple(int(i) for i in mesh.nodes_within(center, radius))


@dataclass
class FixedEPConfig:
    origin_nodes: tuple = None
    sigma2: float = 0.1
    beta: float = None
    ap_params: APParams = field(default_factory=APParams)
    stim_duration: float = 2.0
    stim_amplitude: float = 1.0

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise InvalidArgument("sigma2 must be non-negative")
        if isinstance(self.ap_params, dict):
            self.ap_params = APParams(**self.ap_params)
        if self.origin_nodes is not None:
            self.origin_nodes = tuple(int(i) for i in self.origin_nodes)


def fixed_model_map(H, Y, U_model, beta, sigma2):
    """Per-column MAP with prior ``N(U_model[:, k], sigma2 I)``, via the SVD of H."""
    H = np.asarray(H, dtype=float)
    if sigma2 == 0:
        return np.array(U_model, dtype=float)
    _, s, Vt = np.linalg.svd(H, full_matrices=True)
    s2 = np.zeros(H.shape[1])
    s2[:len(s)] = s * s
    rhs = beta * (H.T @ Y) + U_model / sigma2
    return Vt.T @ ((Vt @ rhs) / (beta * s2 + 1.0 / sigma2)[:, None])


def fixed_ep_reconstruct(H, Y, mesh, config=None, U_model=None):
    """Gaussian MAP with a fixed, scar-free simulated trajectory as prior mean.

    ``U_model`` may be passed to skip the simulation. Metadata records the
    noise precision used.
    """
    cfg = config or FixedEPConfig()
    H = np.asarray(getattr(H, "H", H), dtype=float)
    Y = np.asarray(getattr(Y, "Y", Y), dtype=float)
    if U_model is None:
        origins = cfg.origin_nodes or default_sinus_origins(mesh)
        pacing = PacingConfig(origins, stim_duration=cfg.stim_duration,
                              stim_amplitude=cfg.stim_amplitude)
        sim = simulate(mesh, cfg.ap_params, pacing)
        U_model, dte = sim.U, sim.dt_effective
    else:
        U_model = getattr(U_model, "U", U_model)
        dte = cfg.ap_params.dt_effective
    if U_model.shape != (H.shape[1], Y.shape[1]):
        raise InvalidArgument(f"model trajectory {U_model.shape} does not match H/Y")
    beta = estimate_beta(H, Y, cfg.beta)
    U_hat = fixed_model_map(H, Y, U_model, beta, cfg.sigma2)
    return TMPSequence(U_hat, dte, {"beta": beta, "sigma2": cfg.sigma2})
