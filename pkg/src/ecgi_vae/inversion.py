"""ECG-to-TMP inference with a decoder prior: closed-form Gaussian E-step over
U and backtracked gradient ascent over the latent sequence Z."""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from . import nn
from .errors import EstimationError, InvalidArgument, NonFiniteError, SolverError
from .regularization import lcurve_lambda, ridge_curve, svd_operator
from .svae import DecoderOutput, LOG_2PI

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """``Y[:, k] ~ N(H U[:, k], I / beta)``."""
    H: np.ndarray
    beta: float

    def __post_init__(self):
        H = np.asarray(getattr(self.H, "H", self.H), dtype=float)
        object.__setattr__(self, "H", H)
        if not self.beta >= 0:
            raise InvalidArgument(f"noise precision must be non-negative, got {self.beta}")


@dataclass
class PosteriorU:
    U_hat: np.ndarray
    Sigma_diag: np.ndarray
    log_evidence_terms: np.ndarray = None


@dataclass
class EMConfig:
    max_em_iters: int = 50
    m_step_grad_steps: int = 5
    m_step_lr: float = 1e-4
    backtracking: float = 0.5
    step_growth: float = 2.0
    max_backtracks: int = 40
    rel_tol: float = 1e-4
    z_init: str = "prior-mean"
    e_step_method: str = "auto"

    def __post_init__(self):
        if self.max_em_iters < 1 or self.m_step_grad_steps < 0:
            raise InvalidArgument("iteration counts must be positive")
        if self.m_step_lr <= 0 or not 0 < self.backtracking < 1 or self.step_growth < 1:
            raise InvalidArgument("invalid step-size settings")
        if self.z_init not in ("prior-mean",):
            raise InvalidArgument(f"unknown z_init {self.z_init!r}")
        if self.e_step_method not in ("auto", "dense", "woodbury"):
            raise InvalidArgument(f"unknown e_step_method {self.e_step_method!r}")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- beta

def estimate_beta(H, Y, beta=None, beta_max=1e8, n_lambdas=20):
    """Noise precision ``1 / sigma^2`` estimated from a residual.

    When ``H`` has fewer independent columns than rows the residual outside
    its range is pure noise and gives an unbiased estimate. Otherwise the
    residual of a ridge solve at the L-curve corner is used, corrected by the
    effective degrees of freedom ``m - trace(influence)``. A given ``beta``
    is returned unchanged. The result never exceeds ``beta_max``.
    """
    if beta is not None:
        return float(beta)
    H = np.asarray(getattr(H, "H", H), dtype=float)
    Y = np.asarray(getattr(Y, "Y", Y), dtype=float)
    if Y.size == 0 or not np.any(Y):
        raise EstimationError("cannot estimate noise from an all-zero ECG")
    m, T = Y.shape
    svd = svd_operator(H)
    U, s, _ = svd
    rank = int(np.sum(s > s[0] * max(H.shape) * np.finfo(float).eps))
    if rank < m:
        Ur = U[:, :rank]
        R = Y - Ur @ (Ur.T @ Y)
        var = float(np.sum(R * R)) / (T * (m - rank))
    else:
        lam = lcurve_lambda(svd, Y, n=n_lambdas)
        rho, _ = ridge_curve(svd, Y, [lam])
        df = float(np.sum(s * s / (s * s + lam)))
        var = float(rho[0] ** 2) / (T * max(m - df, 1e-12))
    if var <= 1.0 / beta_max:
        return float(beta_max)
    return 1.0 / var


# ---------------------------------------------------------------- E-step

def _e_step_dense(H, beta, Y, M, S):
    n, T = M.shape
    HtH = beta * (H.T @ H)
    HtY = beta * (H.T @ Y)
    U_hat = np.empty((n, T))
    Sig = np.empty((n, T))
    logml = np.empty(T)
    m = H.shape[0]
    eye = np.eye(n)
    for k in range(T):
        P = HtH + np.diag(1.0 / S[:, k])
        try:
            cf = sla.cho_factor(P, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            cf = None
        if cf is None or not np.all(np.isfinite(np.diag(cf[0]))):
            raise SolverError(f"posterior precision of column {k} is not positive definite")
        U_hat[:, k] = sla.cho_solve(cf, HtY[:, k] + M[:, k] / S[:, k], check_finite=False)
        Linv = sla.solve_triangular(cf[0], eye, lower=True, check_finite=False)
        Sig[:, k] = np.sum(Linv * Linv, axis=0)
        # marginal N(Y_k | H m_k, I/beta + H D_k H') through Woodbury and
        # the matrix determinant lemma
        r = Y[:, k] - H @ M[:, k]
        Htr = H.T @ r
        quad = beta * (r @ r) - beta * beta * (Htr @ sla.cho_solve(cf, Htr, check_finite=False))
        logdet = (2.0 * np.sum(np.log(np.diag(cf[0]))) + np.sum(np.log(S[:, k]))
                  - m * np.log(beta))
        logml[k] = -0.5 * (quad + logdet + m * LOG_2PI)
    return U_hat, Sig, logml


def _e_step_woodbury(H, beta, Y, M, S):
    m = H.shape[0]
    n, T = M.shape
    U_hat = np.empty((n, T))
    Sig = np.empty((n, T))
    logml = np.empty(T)
    noise = np.eye(m) / beta
    for k in range(T):
        DHt = S[:, k, None] * H.T
        K = noise + H @ DHt
        try:
            cf = sla.cho_factor(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            cf = None
        if cf is None or not np.all(np.isfinite(np.diag(cf[0]))):
            raise SolverError(f"innovation covariance of column {k} is not positive definite")
        r = Y[:, k] - H @ M[:, k]
        U_hat[:, k] = M[:, k] + DHt @ sla.cho_solve(cf, r, check_finite=False)
        G = sla.solve_triangular(cf[0], DHt.T, lower=True, check_finite=False)
        Sig[:, k] = S[:, k] - np.sum(G * G, axis=0)
        a = sla.solve_triangular(cf[0], r, lower=True, check_finite=False)
        logml[k] = -0.5 * (a @ a + 2.0 * np.sum(np.log(np.diag(cf[0]))) + m * LOG_2PI)
    if np.any(Sig <= 0):
        k = int(np.argwhere(Sig <= 0)[0, 1])
        raise SolverError(f"lost positivity of posterior variances in column {k}")
    return U_hat, Sig, logml


def e_step(model, Y, dec, method="dense"):
    """Gaussian posterior of every TMP column given the decoder prior.

    Column ``k`` has covariance ``(beta H'H + D_k^-1)^-1`` and mean
    ``Sigma_k (beta H'Y_k + D_k^-1 m_k)`` with ``D_k = diag(S[:, k])`` and
    ``m_k = M[:, k]``. Only the diagonal of each covariance is retained.
    ``log_evidence_terms[k]`` is the column's marginal log likelihood
    ``log N(Y_k | H m_k, I / beta + H D_k H')`` (``None`` when ``beta = 0``).

    ``method`` selects a Cholesky factorization of the n x n precision
    (``"dense"``) or of the m x m innovation covariance via the Woodbury
    identity (``"woodbury"``); ``"auto"`` picks Woodbury when ``m < n / 2``.
    """
    H = model.H
    Y = np.asarray(getattr(Y, "Y", Y), dtype=float)
    M = np.asarray(dec.M, dtype=float)
    S = np.asarray(dec.S, dtype=float)
    n, T = M.shape
    if S.shape != M.shape or H.shape[1] != n or Y.shape != (H.shape[0], T):
        raise InvalidArgument(f"inconsistent shapes: H {H.shape}, Y {Y.shape}, M {M.shape}, S {S.shape}")
    if not np.all(S > 0):
        raise InvalidArgument("decoder variances must be strictly positive")
    if model.beta == 0:
        return PosteriorU(M.copy(), S.copy(), None)
    if method == "auto":
        method = "woodbury" if H.shape[0] < n / 2 else "dense"
    solver = _e_step_woodbury if method == "woodbury" else _e_step_dense
    U_hat, Sig, logml = solver(H, float(model.beta), Y, M, S)
    return PosteriorU(U_hat, Sig, logml)


# ---------------------------------------------------------------- M-step

def _prior_term(Z, zprior):
    d = Z - zprior.Z_bar
    return float(np.sum(-0.5 * (LOG_2PI + np.log(zprior.C)) - d * d / (2 * zprior.C)))


def expected_loglik(M, S, post):
    """``E_post[log N(U | M, diag S)]`` summed over entries."""
    r = post.U_hat - M
    return float(np.sum(-0.5 * (LOG_2PI + np.log(S)) - (r * r + post.Sigma_diag) / (2 * S)))


def m_step_objective(Z, post, weights, zprior):
    """Expected complete-data log density as a function of Z (constants dropped).

    Uses ``E[(U - M)^2] = (U_hat - M)^2 + Sigma_diag`` per entry.
    """
    Z = np.asarray(Z, dtype=float)
    dec = weights.decode(Z)
    return expected_loglik(dec.M, dec.S, post) + _prior_term(Z, zprior)


def m_step_objective_and_grad(Z, post, weights, zprior):
    """Objective and its gradient w.r.t. Z (decoder term by backpropagation)."""
    Z = np.asarray(Z, dtype=float)
    M, S, cache = weights.decode_tbd(nn._to_tbd(Z))
    Uh = post.U_hat.T[:, None, :]
    Sd = post.Sigma_diag.T[:, None, :]
    r = Uh - M
    q = r * r + Sd
    L1 = float(np.sum(-0.5 * (LOG_2PI + np.log(S)) - q / (2 * S)))
    dM = r / S
    dS = -0.5 / S + q / (2 * S * S)
    dz, _ = weights.decode_backward_tbd(cache, dM, dS)
    g = nn._from_tbd(dz, 2) - (Z - zprior.Z_bar) / zprior.C
    return L1 + _prior_term(Z, zprior), g


@dataclass
class MStepResult:
    Z: np.ndarray
    L: float
    step: float
    L_trace: list
    n_evals: int


def m_step_update(Z, post, weights, zprior, config=None, step=None):
    """A few backtracked gradient-ascent steps on the M-step objective.

    A trial step is halved (``config.backtracking``) until the objective does
    not decrease; an accepted step size is enlarged by ``config.step_growth``
    for the next trial. If no trial within ``max_backtracks`` halvings is
    acceptable, Z is left unchanged.
    """
    cfg = config or EMConfig()
    step = cfg.m_step_lr if step is None else step
    Z = np.array(Z, dtype=float)
    L, g = m_step_objective_and_grad(Z, post, weights, zprior)
    trace = [L]
    evals = 1
    for _ in range(cfg.m_step_grad_steps):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite M-step gradient (objective {L})")
        if not np.any(g):
            break
        accepted = False
        for _ in range(cfg.max_backtracks):
            Zt = Z + step * g
            Lt, gt = m_step_objective_and_grad(Zt, post, weights, zprior)
            evals += 1
            if np.isfinite(Lt) and Lt >= L:
                accepted = True
                break
            step *= cfg.backtracking
        if not accepted:
            break
        Z, L, g = Zt, Lt, gt
        trace.append(L)
        step *= cfg.step_growth
    return MStepResult(Z, L, step, trace, evals)


# ---------------------------------------------------------------- EM

def _log_marginal(post, Z, zprior):
    if post.log_evidence_terms is None:
        return None
    return float(np.sum(post.log_evidence_terms)) + _prior_term(Z, zprior)


@dataclass
class EMResult:
    Z_map: np.ndarray
    posterior: PosteriorU
    trace: list = field(default_factory=list)
    converged: bool = False
    n_iters: int = 0
    beta: float = None
    log_marginal: list = field(default_factory=list)

    @property
    def L_trace(self):
        return [t["L_end"] for t in self.trace]


def em_infer(model, Y, weights, zprior, config=None):
    """Alternate E-steps and M-steps from Z at the prior mean.

    Stops when the relative change of the M-step objective between
    consecutive iterations is below ``rel_tol`` or after ``max_em_iters``.
    Returns an :class:`EMResult` whose posterior is recomputed at the final Z.
    ``log_marginal`` holds ``log p(Y | Z) + log p(Z)`` at the initial Z and
    after every iteration; unlike the M-step objective, EM never decreases it.
    """
    cfg = config or EMConfig()
    Y = np.asarray(getattr(Y, "Y", Y), dtype=float)
    Z = np.array(zprior.Z_bar, dtype=float)
    step = cfg.m_step_lr
    trace = []
    converged = False
    L_prev = None
    it = 0
    marginal = []
    for it in range(1, cfg.max_em_iters + 1):
        post = e_step(model, Y, weights.decode(Z), cfg.e_step_method)
        marginal.append(_log_marginal(post, Z, zprior))
        res = m_step_update(Z, post, weights, zprior, cfg, step)
        Z, step = res.Z, res.step
        trace.append({"iter": it, "L_start": res.L_trace[0], "L_end": res.L,
                      "m_step_L": res.L_trace, "step": step, "n_evals": res.n_evals})
        if L_prev is not None or np.isinf(cfg.rel_tol):
            ref = res.L_trace[0] if L_prev is None else L_prev
            if abs(res.L - ref) <= cfg.rel_tol * max(abs(ref), 1e-300):
                converged = True
                break
        L_prev = res.L
        log.debug("EM iter %d: L=%.6g", it, res.L)
    post = e_step(model, Y, weights.decode(Z), cfg.e_step_method)
    marginal.append(_log_marginal(post, Z, zprior))
    return EMResult(Z, post, trace, converged, it, float(model.beta), marginal)
