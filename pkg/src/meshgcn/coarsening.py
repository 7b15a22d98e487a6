"""Graclus-style multilevel coarsening with binary-tree padding.

Vertices at every level are stored in *slot order*: the two children of
coarse slot ``c`` sit at fine slots ``2c`` and ``2c + 1``. Clusters with a
single real child get one fake (isolated, featureless) sibling, and fake
coarse slots get two fake children. Pooling and upsampling then reduce to
fixed gathers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .mesh import LaplacianPair, laplacian_pair


def graclus_match(W) -> np.ndarray:
    """One level of greedy normalized-cut matching.

    Vertices are visited in ascending index order; an unmarked vertex pairs
    with the unmarked neighbour maximizing ``w_ij (1/d_i + 1/d_j)``, ties
    going to the smallest index. Returns the cluster id of every vertex,
    numbered in order of creation.
    """
    W = sp.csr_matrix(W)
    n = W.shape[0]
    deg = np.asarray(W.sum(axis=1)).ravel()
    marked = np.zeros(n, dtype=bool)
    cluster = np.full(n, -1, dtype=np.int64)
    count = 0
    for i in range(n):
        if marked[i]:
            continue
        marked[i] = True
        lo, hi = W.indptr[i], W.indptr[i + 1]
        nbrs, wts = W.indices[lo:hi], W.data[lo:hi]
        best, best_val = -1, 0.0
        for j, w in sorted(zip(nbrs.tolist(), wts.tolist())):
            if marked[j] or j == i:
                continue
            val = w * (1.0 / deg[i] + 1.0 / deg[j])
            if val > best_val:
                best, best_val = j, val
        cluster[i] = count
        if best >= 0:
            cluster[best] = count
            marked[best] = True
        count += 1
    return cluster


def contract(W, cluster: np.ndarray) -> sp.csr_matrix:
    """Cluster-contracted adjacency with self-loops removed, re-binarized."""
    W = sp.coo_matrix(W)
    m = int(cluster.max()) + 1 if len(cluster) else 0
    r, c = cluster[W.row], cluster[W.col]
    keep = r != c
    C = sp.csr_matrix((np.ones(keep.sum()), (r[keep], c[keep])), shape=(m, m))
    C.data[:] = 1.0
    C.sort_indices()
    return C


@dataclass(eq=False)
class Level:
    """One level of the hierarchy, in slot order.

    ``perm[s]`` is the original vertex id held by slot ``s`` (``-1`` for a
    fake slot). ``W`` is the slot-ordered adjacency.
    """

    perm: np.ndarray
    W: sp.csr_matrix
    lap: LaplacianPair

    @property
    def size(self) -> int:
        return len(self.perm)

    @property
    def fake_mask(self) -> np.ndarray:
        return self.perm < 0

    @property
    def n_real(self) -> int:
        return int((self.perm >= 0).sum())


class CoarseningHierarchy:
    """Levels 0 (finest) to ``num_levels`` (coarsest) plus the slot tree."""

    def __init__(self, levels: list[Level], clusters: list[np.ndarray]):
        self.levels = levels
        self.clusters = clusters  # original-id cluster maps, one per coarsening step
        for k in range(len(levels) - 1):
            assert levels[k].size == 2 * levels[k + 1].size

    @property
    def num_levels(self) -> int:
        return len(self.levels) - 1

    def sizes(self) -> list[int]:
        return [lv.size for lv in self.levels]

    def parent_of(self, k: int) -> np.ndarray:
        """Coarse slot of every fine slot at level ``k``."""
        return np.arange(self.levels[k].size) // 2

    def children_of(self, k: int) -> np.ndarray:
        """``(size_{k+1}, 2)`` fine slots of every coarse slot at level ``k+1``."""
        return np.arange(self.levels[k].size).reshape(-1, 2)

    def real_children(self, k: int) -> np.ndarray:
        """Number of real children (0, 1 or 2) of each slot at level ``k+1``."""
        return (~self.levels[k].fake_mask).reshape(-1, 2).sum(axis=1)

    # --- signal layout helpers --------------------------------------------

    def to_slots(self, x, level: int = 0):
        """Place an original-order signal ``(..., N_real, F)`` into slot order."""
        lv = self.levels[level]
        if isinstance(x, ad.Tensor):
            return _apply_rows(x, lv.perm)
        x = np.asarray(x)
        out = np.zeros(x.shape[:-2] + (lv.size, x.shape[-1]))
        real = lv.perm >= 0
        out[..., real, :] = x[..., lv.perm[real], :]
        return out

    def from_slots(self, x, level: int = 0):
        """Inverse of :meth:`to_slots`; drops fake slots."""
        lv = self.levels[level]
        inv = np.empty(lv.n_real, dtype=np.int64)
        real = np.flatnonzero(lv.perm >= 0)
        inv[lv.perm[real]] = real
        if isinstance(x, ad.Tensor):
            return _apply_rows(x, inv)
        return np.asarray(x)[..., inv, :]

    # --- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": "coarsening-hierarchy/1",
            "levels": [
                {
                    "size": lv.size,
                    "n_real": lv.n_real,
                    "perm": lv.perm.tolist(),
                    "parent": (self.parent_of(k).tolist() if k < self.num_levels else None),
                    "fake_mask": lv.fake_mask.astype(int).tolist(),
                    "lambda_max": lv.lap.lmax.value,
                }
                for k, lv in enumerate(self.levels)
            ],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def selection_matrix(rows: np.ndarray, n_src: int) -> sp.csr_matrix:
    """Sparse 0/1 matrix picking ``rows`` of an ``n_src``-row signal (``-1`` -> zero row)."""
    rows = np.asarray(rows)
    ok = np.flatnonzero(rows >= 0)
    return sp.csr_matrix((np.ones(len(ok)), (ok, rows[ok])), shape=(len(rows), n_src))


def _apply_rows(x: ad.Tensor, rows: np.ndarray) -> ad.Tensor:
    """Row selection along the vertex axis of a (B, N, F) or (N, F) tensor."""
    return ad.spmm(selection_matrix(rows, x.shape[-2]), x)


def _binary_tree_perms(clusters: list[np.ndarray], n0: int) -> list[np.ndarray]:
    """Slot orders for every level, coarsest first, fakes marked ``-1``."""
    n_coarsest = int(clusters[-1].max()) + 1 if len(clusters[-1]) else 0
    perms = [np.arange(n_coarsest)]
    for cl in clusters[::-1]:
        children: dict[int, list[int]] = {}
        for v, c in enumerate(cl.tolist()):
            children.setdefault(c, []).append(v)
        layer = []
        for c in perms[-1].tolist():
            kids = children.get(c, []) if c >= 0 else []
            assert len(kids) <= 2
            layer.extend(kids + [-1] * (2 - len(kids)))
        perms.append(np.array(layer, dtype=np.int64))
    return perms[::-1]


def _permuted_adjacency(W, perm: np.ndarray) -> sp.csr_matrix:
    W = sp.csr_matrix(W)
    real = np.flatnonzero(perm >= 0)
    P = sp.csr_matrix((np.ones(len(real)), (real, perm[real])), shape=(len(perm), W.shape[0]))
    out = sp.csr_matrix(P @ W @ P.T)
    out.sort_indices()
    return out


def graclus_coarsen(W, num_levels: int) -> CoarseningHierarchy:
    if num_levels < 1:
        raise ValueError("num_levels must be at least 1")
    W = sp.csr_matrix(W, dtype=np.float64)
    if (W != W.T).nnz:
        raise ValueError("adjacency must be symmetric")
    graphs, clusters = [W], []
    for _ in range(num_levels):
        if graphs[-1].shape[0] < 2:
            raise ValueError(f"too many levels: cannot coarsen a {graphs[-1].shape[0]}-vertex graph further")
        cl = graclus_match(graphs[-1])
        clusters.append(cl)
        graphs.append(contract(graphs[-1], cl))
    perms = _binary_tree_perms(clusters, W.shape[0])
    levels = []
    for g, perm in zip(graphs, perms):
        Wp = _permuted_adjacency(g, perm)
        levels.append(Level(perm, Wp, laplacian_pair(Wp)))
    return CoarseningHierarchy(levels, clusters)


# --- pooling / upsampling ---------------------------------------------------

def _check_level(x, hierarchy: CoarseningHierarchy, level: int):
    n = x.shape[-2]
    if n != hierarchy.levels[level].size:
        raise ValueError(f"signal has {n} rows but level {level} has {hierarchy.levels[level].size} slots")


def pool_average(x, hierarchy: CoarseningHierarchy, level: int):
    """Mean over real children: level ``level`` -> ``level + 1``.

    Works on arrays and tape tensors of shape ``(N, F)`` or ``(B, N, F)``.
    """
    _check_level(x, hierarchy, level)
    fake = hierarchy.levels[level].fake_mask
    counts = hierarchy.real_children(level)
    w = np.where(fake, 0.0, 1.0 / np.maximum(counts.repeat(2), 1))
    m = len(counts)
    P = sp.csr_matrix((w, (np.arange(len(w)) // 2, np.arange(len(w)))), shape=(m, len(w)))
    if isinstance(x, ad.Tensor):
        return ad.spmm(P, x)
    return ad._spmm_apply(P, np.asarray(x, dtype=np.float64))


def upsample(x, hierarchy: CoarseningHierarchy, level: int):
    """Copy every slot at ``level`` to both of its children at ``level - 1``."""
    _check_level(x, hierarchy, level)
    parent = hierarchy.parent_of(level - 1)
    if isinstance(x, ad.Tensor):
        return _apply_rows(x, parent)
    return np.asarray(x)[..., parent, :]
