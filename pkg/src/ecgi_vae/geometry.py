"""Synthetic heart geometry, body-surface lead layout and the lead-field operator."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .container import load_container, save_container
from .errors import FormatError, GeometryError, InvalidArgument


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HeartMesh:
    """Graph mesh of the myocardium.

    ``laplacian`` is the sparse graph Laplacian in the ``A - D`` sign
    convention (negative semi-definite), scaled by ``1 / spacing**2``.
    """
    node_coords: np.ndarray
    edges: np.ndarray
    laplacian: sp.csr_matrix
    spacing: float = 1.0
    dims: tuple = ()

    @property
    def node_count(self):
        return self.node_coords.shape[0]

    @property
    def degree(self):
        return np.bincount(self.edges.ravel(), minlength=self.node_count)

    @property
    def bbox_diagonal(self):
        return float(np.linalg.norm(self.node_coords.max(0) - self.node_coords.min(0)))

    def neighbors(self, i):
        row = self.laplacian.getrow(i)
        return np.array(sorted(j for j in row.indices if j != i))

    def nodes_within(self, center, radius):
        d = np.linalg.norm(self.node_coords - self.node_coords[center], axis=1)
        return np.flatnonzero(d <= radius + 1e-9)


def mesh_from_edges(node_coords, edges, spacing=1.0, dims=()):
    node_coords = _frozen(node_coords)
    edges = _frozen(np.asarray(edges, dtype=np.int64).reshape(-1, 2), dtype=np.int64)
    n = node_coords.shape[0]
    if n < 1:
        raise InvalidArgument("mesh needs at least one node")
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise InvalidArgument("edge index out of range")
    w = np.ones(len(edges)) / spacing ** 2
    A = sp.coo_matrix((np.r_[w, w], (np.r_[edges[:, 0], edges[:, 1]],
                                     np.r_[edges[:, 1], edges[:, 0]])), shape=(n, n)).tocsr()
    L = (A - sp.diags(np.asarray(A.sum(axis=1)).ravel())).tocsr()
    L.sort_indices()
    if n > 1 and connected_components(A, directed=False)[0] != 1:
        raise GeometryError("mesh graph is not connected")
    return HeartMesh(node_coords, edges, L, float(spacing), tuple(int(d) for d in dims))


def build_lattice_mesh(dims=(8, 8, 4), spacing=1.0):
    """Regular 3D lattice graph with 6-neighbour connectivity.

    Node ``(i, j, k)`` gets index ``i + nx * (j + ny * k)``.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims) or spacing <= 0:
        raise InvalidArgument(f"invalid lattice dims={dims} spacing={spacing}")
    if np.prod(dims) < 2:
        raise InvalidArgument("lattice needs at least two nodes")
    nx, ny, nz = dims
    idx = np.arange(nx * ny * nz).reshape(nz, ny, nx)
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    coords = spacing * np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
    edges = [np.stack([idx[:, :, :-1].ravel(), idx[:, :, 1:].ravel()], 1),
             np.stack([idx[:, :-1, :].ravel(), idx[:, 1:, :].ravel()], 1),
             np.stack([idx[:-1, :, :].ravel(), idx[1:, :, :].ravel()], 1)]
    return mesh_from_edges(coords, np.concatenate(edges), spacing, dims)


def fibonacci_leads(mesh, n_leads=32, radius_factor=4.0):
    """Deterministic Fibonacci-spiral electrode layout on a sphere around the mesh."""
    center = mesh.node_coords.mean(axis=0)
    r = radius_factor * mesh.bbox_diagonal
    i = np.arange(n_leads) + 0.5
    polar = np.arccos(1 - 2 * i / n_leads)
    azim = np.pi * (1 + 5 ** 0.5) * i
    unit = np.stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar),
                     np.cos(polar)], axis=1)
    return center + r * unit


@dataclass(frozen=True, eq=False)
class LeadField:
    H: np.ndarray
    lead_coords: np.ndarray = field(default=None)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim != 2 or min(H.shape) < 1:
            raise FormatError(f"lead field must be a nonempty matrix, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise FormatError("lead field has non-finite entries")
        object.__setattr__(self, "H", _frozen(H))
        if self.lead_coords is not None:
            object.__setattr__(self, "lead_coords", _frozen(self.lead_coords))

    @property
    def shape(self):
        return self.H.shape

    def project(self, U):
        """ECG ``H @ U`` for a nodes x time TMP matrix."""
        return self.H @ U


def synthesize_lead_field(mesh, leads=None, min_dist=1.0):
    """Inverse-distance lead field with zero-mean (reference-free) rows."""
    if leads is None:
        leads = fibonacci_leads(mesh)
    leads = np.atleast_2d(np.asarray(leads, dtype=float))
    dist = np.linalg.norm(leads[:, None, :] - mesh.node_coords[None, :, :], axis=2)
    if dist.min() < min_dist:
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        raise GeometryError(f"lead {i} is {dist[i, j]:.3g} mm from node {j} (< {min_dist})")
    G = 1.0 / dist
    return LeadField(G - G.mean(axis=1, keepdims=True), leads)


def save_lead_field(path, lf, metadata=None):
    tensors = {"H": lf.H}
    if lf.lead_coords is not None:
        tensors["lead_coords"] = lf.lead_coords
    return save_container(path, tensors, metadata)


def load_lead_field(path, n_nodes=None):
    tensors, _ = load_container(path)
    if "H" not in tensors:
        raise FormatError(f"{path}: no tensor named 'H'")
    H = tensors["H"]
    if H.ndim != 2:
        raise FormatError(f"{path}: H must be 2-D, got shape {H.shape}")
    if n_nodes is not None and H.shape[1] != n_nodes:
        raise FormatError(f"{path}: H has {H.shape[1]} columns, mesh has {n_nodes} nodes")
    coords = tensors.get("lead_coords")
    if coords is not None and coords.shape != (H.shape[0], 3):
        raise FormatError(f"{path}: lead_coords shape {coords.shape} does not match H")
    return LeadField(H, coords)


def save_bundle(path, mesh, lf=None, metadata=None):
    """Mesh (and optionally its lead field) in one container."""
    tensors = {"node_coords": mesh.node_coords, "edges": mesh.edges}
    if lf is not None:
        tensors["H"] = lf.H
        if lf.lead_coords is not None:
            tensors["lead_coords"] = lf.lead_coords
    meta = {"spacing": mesh.spacing, "dims": list(mesh.dims)}
    meta.update(metadata or {})
    return save_container(path, tensors, meta)


def load_bundle(path):
    tensors, meta = load_container(path)
    for name in ("node_coords", "edges"):
        if name not in tensors:
            raise FormatError(f"{path}: mesh bundle lacks {name!r}")
    mesh = mesh_from_edges(tensors["node_coords"], tensors["edges"],
                           meta.get("spacing", 1.0), meta.get("dims", ()))
    lf = None
    if "H" in tensors:
        lf = load_lead_field(path, mesh.node_count)
    return mesh, lf
