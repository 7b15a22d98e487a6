"""Triangle-mesh topology and its spectral operators."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class MeshTopology:
    """Immutable vertex count plus triangle index triples."""

    n_vertices: int
    faces: np.ndarray

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.n_vertices <= 0:
            raise ValueError("vertex count must be positive")
        if faces.size and (faces.min() < 0 or faces.max() >= self.n_vertices):
            raise ValueError(f"face index out of range for {self.n_vertices} vertices")
        degenerate = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        if degenerate.any():
            raise ValueError(f"degenerate face at row {int(np.argmax(degenerate))}")
        faces.setflags(write=False)
        object.__setattr__(self, "faces", faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges as sorted ``(i, j)`` rows with ``i < j``, each once."""
        if not len(self.faces):
            return np.zeros((0, 2), dtype=np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0)
        e.setflags(write=False)
        return e

    @cached_property
    def edge_difference(self) -> sp.csr_matrix:
        """``(E, N)`` operator mapping vertices to edge vectors ``v_j - v_i``."""
        e = self.edges
        return _difference_operator(e[:, 1], e[:, 0], self.n_vertices)

    @cached_property
    def face_edge_difference(self) -> sp.csr_matrix:
        """``(3F, N)`` operator for the directed triangle edges ``v_i - v_j``.

        Rows are ordered (0->1 of every face, then 1->2, then 2->0).
        """
        f = self.faces
        i = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
        j = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
        return _difference_operator(i, j, self.n_vertices)

    @cached_property
    def neighbor_mean(self) -> sp.csr_matrix:
        return neighbor_mean_operator(self)

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        W = build_adjacency(self)
        return [W.indices[W.indptr[i]:W.indptr[i + 1]] for i in range(self.n_vertices)]


def _difference_operator(plus, minus, n) -> sp.csr_matrix:
    m = len(plus)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([plus, minus])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))


def build_adjacency(topology: MeshTopology) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency; an edge shared by two faces counts once."""
    n = topology.n_vertices
    e = topology.edges
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    W = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    W.sort_indices()
    return W


def normalized_laplacian(W) -> sp.csr_matrix:
    """``I - D^-1/2 W D^-1/2`` with isolated vertices zeroed out entirely."""
    W = sp.csr_matrix(W, dtype=np.float64)
    if (W != W.T).nnz:
        raise ValueError("adjacency must be symmetric")
    if W.diagonal().any():
        raise ValueError("adjacency must have a zero diagonal")
    d = np.asarray(W.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    Dm = sp.diags(inv_sqrt)
    L = sp.diags(nz.astype(np.float64)) - Dm @ W @ Dm
    L = sp.csr_matrix(0.5 * (L + L.T))
    L.eliminate_zeros()
    L.sort_indices()
    return L


@dataclass(frozen=True)
class EigEstimate:
    value: float
    converged: bool
    iterations: int


def max_eigenvalue(L, max_iter: int = 200, tol: float = 1e-8, fallback: float = 2.0) -> EigEstimate:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Falls back to ``fallback`` (flagged via ``converged=False``) for a zero
    operator or when the Rayleigh quotient has not settled within
    ``max_iter`` steps.
    """
    L = sp.csr_matrix(L)
    n = L.shape[0]
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.linalg.norm(x)
    prev = None
    for it in range(1, max_iter + 1):
        y = L @ x
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return EigEstimate(fallback, False, it)
        rq = float(x @ y)
        x = y / nrm
        if prev is not None and abs(rq - prev) <= tol * max(abs(rq), 1.0):
            return EigEstimate(rq, True, it)
        prev = rq
    return EigEstimate(fallback, False, max_iter)


def rescale_laplacian(L, lmax: float) -> sp.csr_matrix:
    if lmax <= 0:
        raise ValueError(f"lambda_max must be positive, got {lmax}")
    L = sp.csr_matrix(L)
    Lt = (2.0 / lmax) * L - sp.identity(L.shape[0], format="csr")
    Lt = sp.csr_matrix(Lt)
    Lt.sort_indices()
    return Lt


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    L: sp.csr_matrix
    L_rescaled: sp.csr_matrix
    lmax: EigEstimate


def laplacian_pair(W) -> LaplacianPair:
    L = normalized_laplacian(W)
    est = max_eigenvalue(L)
    return LaplacianPair(L, rescale_laplacian(L, est.value), est)


def neighbor_mean_operator(topology: MeshTopology) -> sp.csr_matrix:
    """Row-normalized adjacency ``D^-1 W``; isolated rows stay zero."""
    W = build_adjacency(topology)
    d = np.asarray(W.sum(axis=1)).ravel()
    inv = np.where(d > 0, 1.0 / np.maximum(d, 1), 0.0)
    return sp.csr_matrix(sp.diags(inv) @ W)


# --- Wavefront OBJ ----------------------------------------------------------

def read_obj(path) -> tuple[np.ndarray, MeshTopology]:
    """Read ``v`` and ``f`` records. Face corners may use ``v/vt/vn`` form."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) < 3:
                raise ValueError(f"{path}:{lineno}: face with fewer than 3 corners")
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            # fan-triangulate polygons
            faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    return V, MeshTopology(len(V), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, vertices, topology: MeshTopology) -> None:
    lines = ["v %r %r %r" % tuple(float(c) for c in v) for v in np.asarray(vertices, dtype=np.float64)]
    lines += ["f %d %d %d" % tuple(int(i) + 1 for i in f) for f in topology.faces]
    Path(path).write_text("\n".join(lines) + "\n")
