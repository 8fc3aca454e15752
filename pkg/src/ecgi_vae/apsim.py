"""Aliev-Panfilov reaction-diffusion simulation on a graph mesh."""
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, InvalidArgument


@dataclass(frozen=True)
class APParams:
    k: float = 8.0
    a: float = 0.15
    eps0: float = 0.002
    mu1: float = 0.2
    mu2: float = 0.3
    diffusion: float = 1.0
    dt: float = 0.05
    n_steps: int = 960
    record_stride: int = 12

    def __post_init__(self):
        if not self.dt > 0 or self.n_steps < 1 or self.record_stride < 1:
            raise InvalidArgument(f"bad time stepping: dt={self.dt}, n_steps={self.n_steps}, "
                                  f"record_stride={self.record_stride}")
        if self.diffusion < 0:
            raise InvalidArgument("diffusion must be non-negative")
        if not 0 < self.a < 1:
            raise InvalidArgument("threshold a must lie in (0, 1)")

    @property
    def n_records(self):
        return -(-self.n_steps // self.record_stride)

    @property
    def dt_effective(self):
        return self.dt * self.record_stride

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PacingConfig:
    origin_nodes: tuple
    stim_start: float = 0.0
    stim_duration: float = 2.0
    stim_amplitude: float = 1.0

    def __post_init__(self):
        nodes = tuple(int(i) for i in np.atleast_1d(self.origin_nodes))
        object.__setattr__(self, "origin_nodes", nodes)
        if not nodes:
            raise InvalidArgument("pacing needs at least one origin node")
        if self.stim_duration <= 0 or self.stim_amplitude <= 0:
            raise InvalidArgument("stimulus duration and amplitude must be positive")

    def to_dict(self):
        return {"origin_nodes": list(self.origin_nodes), "stim_start": self.stim_start,
                "stim_duration": self.stim_duration, "stim_amplitude": self.stim_amplitude}


@dataclass(frozen=True)
class ScarConfig:
    scar_nodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "scar_nodes",
                           tuple(sorted(int(i) for i in np.atleast_1d(self.scar_nodes))))

    @classmethod
    def ball(cls, mesh, center, radius):
        if radius < 0:
            return cls(())
        return cls(tuple(mesh.nodes_within(center, radius)))

    def to_dict(self):
        return {"scar_nodes": list(self.scar_nodes)}


@dataclass(frozen=True, eq=False)
class TMPSequence:
    """TMP matrix ``U`` (nodes x recorded columns); column ``k`` is time ``k * dt_effective``."""
    U: np.ndarray
    dt_effective: float = 1.0
    metadata: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.U.shape[0]

    @property
    def n_times(self):
        return self.U.shape[1]

    @property
    def duration(self):
        return self.n_times * self.dt_effective


def stability_limit(mesh, diffusion):
    """Largest stable explicit-Euler step for the diffusion part."""
    max_diag = float(np.max(np.abs(mesh.laplacian.diagonal()))) if mesh.node_count else 0.0
    if diffusion == 0 or max_diag == 0:
        return np.inf
    return 1.0 / (2.0 * diffusion * max_diag)


def _healthy_laplacian(mesh, scar):
    L = mesh.laplacian
    if not scar:
        return L
    keep = np.ones(mesh.node_count)
    keep[list(scar)] = 0.0
    K = sp.diags(keep)
    A = L - sp.diags(L.diagonal())
    A = K @ A @ K
    return (A - sp.diags(np.asarray(A.sum(axis=1)).ravel())).tocsr()


def simulate(mesh, params=None, pacing=None, scar=None, u0=None):
    """Integrate the Aliev-Panfilov model with explicit Euler.

    Parameters
    ----------
    mesh : HeartMesh
    params : APParams, optional
    pacing : PacingConfig or None
        ``None`` runs unstimulated.
    scar : ScarConfig or None
        Scar nodes are non-excitable and electrically disconnected; ``u`` and
        ``v`` are held at 0 there.
    u0 : array, optional
        Initial excitation (default: resting state 0).

    Returns
    -------
    TMPSequence
        Every ``record_stride``-th state, starting with the initial one.
    """
    p = params or APParams()
    scar = scar or ScarConfig()
    n = mesh.node_count
    bad = [i for i in scar.scar_nodes if not 0 <= i < n]
    if pacing is not None:
        bad += [i for i in pacing.origin_nodes if not 0 <= i < n]
    if bad:
        raise ConfigurationError(f"node indices out of range: {bad}")
    if pacing is not None and set(pacing.origin_nodes) & set(scar.scar_nodes):
        raise ConfigurationError("pacing origin overlaps the scar region")
    limit = stability_limit(mesh, p.diffusion)
    if not p.dt < limit:
        raise ConfigurationError(f"dt={p.dt} violates the explicit stability bound {limit:.4g}")

    L = _healthy_laplacian(mesh, scar.scar_nodes)
    DL = (p.diffusion * L).tocsr()
    alive = np.ones(n)
    alive[list(scar.scar_nodes)] = 0.0
    stim = np.zeros(n)
    if pacing is not None:
        stim[list(pacing.origin_nodes)] = pacing.stim_amplitude
        t0, t1 = pacing.stim_start, pacing.stim_start + pacing.stim_duration

    u = np.zeros(n) if u0 is None else np.array(u0, dtype=float) * alive
    v = np.zeros(n)
    out = np.empty((n, p.n_records))
    k, a, dt = p.k, p.a, p.dt
    for step in range(p.n_steps):
        if step % p.record_stride == 0:
            out[:, step // p.record_stride] = u
        du = DL @ u - k * u * (u - a) * (u - 1.0) - u * v
        if pacing is not None and t0 <= step * dt < t1:
            du += stim
        eps = p.eps0 + p.mu1 * v / (u + p.mu2)
        dv = -eps * (v + k * u * (u - a - 1.0))
        u = (u + dt * du) * alive
        v = (v + dt * dv) * alive
    meta = {"params": p.to_dict(), "pacing": pacing.to_dict() if pacing else None,
            "scar": scar.to_dict()}
    return TMPSequence(out, p.dt_effective, meta)


def _as_matrix(tmp):
    if isinstance(tmp, TMPSequence):
        return np.asarray(tmp.U, dtype=float), tmp.dt_effective
    return np.asarray(tmp, dtype=float), 1.0


def activation_times(tmp, dt_effective=None, threshold=0.5):
    """Per-node activation time: time of steepest rise ``u[k] - u[k-1]``.

    The rise is attributed to column ``k``; the peak location is refined by a
    parabola through its neighbouring differences. Nodes whose peak never
    exceeds ``threshold`` get ``+inf``.
    """
    U, dte = _as_matrix(tmp)
    dte = dt_effective or dte
    n, T = U.shape
    t = np.full(n, np.inf)
    if T < 2:
        return t
    rise = np.diff(U, axis=1, prepend=U[:, :1])
    on = np.flatnonzero(U.max(axis=1) > threshold)
    if on.size == 0:
        return t
    r = rise[on]
    j = np.argmax(r, axis=1)
    # parabolic refinement of the peak through its two neighbours
    rows = np.arange(on.size)
    left = r[rows, np.maximum(j - 1, 0)]
    right = r[rows, np.minimum(j + 1, T - 1)]
    mid = r[rows, j]
    den = left - 2 * mid + right
    inner = (j > 0) & (j < T - 1) & (den < 0)
    shift = np.where(inner, 0.5 * (left - right) / np.where(inner, den, 1.0), 0.0)
    t[on] = (j + shift) * dte
    return t


def apd(tmp, dt_effective=None, level=0.5):
    """Action potential duration at ``level`` with linear interpolation.

    Measured from the first upward crossing to the next downward crossing;
    a potential still above ``level`` at the last column ends there. Nodes
    that never cross get 0.
    """
    U, dte = _as_matrix(tmp)
    dte = dt_effective or dte
    n, T = U.shape
    out = np.zeros(n)
    above = U > level
    for i in np.flatnonzero(above.any(axis=1)):
        row = U[i]
        ks = np.flatnonzero(above[i])
        k_up = ks[0]
        if k_up == 0:
            t_up = 0.0
        else:
            t_up = k_up - 1 + (level - row[k_up - 1]) / (row[k_up] - row[k_up - 1])
        below = np.flatnonzero(~above[i, k_up:])
        if below.size == 0:
            t_down = T - 1.0
        else:
            k_dn = k_up + below[0]
            t_down = k_dn - 1 + (row[k_dn - 1] - level) / (row[k_dn - 1] - row[k_dn])
        out[i] = (t_down - t_up) * dte
    return out
