"""Training objectives.

Every loss takes ground truth as plain arrays and the estimate as an array
or tape tensor. Inputs may carry a leading batch axis. Per-sample terms are
summed as written in the formulas, and a batch is averaged over samples.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .mesh import MeshTopology


@dataclass
class LossWeights:
    v: float = 1.0
    n: float = 1.0
    e: float = 1.0
    l: float = 50.0
    H: float = 0.5
    M: float = 1.0
    J: float = 1.0
    D: float = 0.1
    pM: float = 1.0

    def __post_init__(self):
        for k, w in asdict(self).items():
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {w}")

    @classmethod
    def weakly(cls, with_pose: bool = False) -> "LossWeights":
        return cls(H=0.1, D=0.1, pM=1.0, J=10.0 if with_pose else 0.0)


@dataclass
class MeshTruth:
    """Ground-truth mesh plus the topology-derived constants the losses need."""

    v3d: np.ndarray  # (N, 3) or (B, N, 3)
    v2d: np.ndarray | None
    topology: MeshTopology
    degenerate_faces: int = field(init=False, default=0)

    def __post_init__(self):
        self.v3d = np.asarray(self.v3d, dtype=np.float64)
        if self.v2d is not None:
            self.v2d = np.asarray(self.v2d, dtype=np.float64)
        if self.v3d.shape[-2] != self.topology.n_vertices:
            raise ValueError(f"truth has {self.v3d.shape[-2]} vertices, topology {self.topology.n_vertices}")
        self.normals, bad = face_normals(self.v3d, self.topology.faces)
        self.degenerate_faces = int(bad.sum())


def face_normals(v3d: np.ndarray, faces: np.ndarray):
    """Unit face normals and a mask of zero-area faces (whose normal is set to 0)."""
    a, b, c = (v3d[..., faces[:, k], :] for k in range(3))
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    bad = norm[..., 0] <= 1e-12
    n = np.where(bad[..., None], 0.0, n / np.where(bad[..., None], 1.0, norm))
    return n, bad


def _batch(x) -> int:
    return x.shape[0] if x.ndim == 3 else 1


def _avg(total, bsz):
    return ad.scale(total, 1.0 / bsz) if bsz != 1 else total


def _check(name, a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def heatmap_loss(gt, est):
    gt = np.asarray(gt, dtype=np.float64)
    _check("heatmap_loss", gt, est)
    bsz = gt.shape[0] if gt.ndim == 4 else 1
    return _avg(ad.sum(ad.square(ad.sub(est, gt))), bsz)


def vertex_loss(truth: MeshTruth, v3d_est, v2d_est=None):
    _check("vertex_loss", truth.v3d, v3d_est)
    total = ad.sum(ad.square(ad.sub(v3d_est, truth.v3d)))
    if v2d_est is not None and truth.v2d is not None:
        _check("vertex_loss", truth.v2d, v2d_est)
        total = total + ad.sum(ad.square(ad.sub(v2d_est, truth.v2d)))
    return _avg(total, _batch(truth.v3d))


def normal_loss(truth: MeshTruth, v3d_est):
    """Squared projections of the estimated triangle edges onto the true normals."""
    _check("normal_loss", truth.v3d, v3d_est)
    n = np.concatenate([truth.normals] * 3, axis=-2)
    # true edges are orthogonal to the true normals, so projecting the edge
    # difference is the same loss but exactly 0 at the truth
    D = truth.topology.face_edge_difference
    diff = ad.spmm(D, ad.sub(v3d_est, truth.v3d))
    dots = ad.sum(ad.mul(diff, n), axis=-1)
    return _avg(ad.sum(ad.square(dots)), _batch(truth.v3d))


def edge_loss(truth: MeshTruth, v3d_est):
    """Sum over edges of (|e|^2 - |e_hat|^2)^2."""
    _check("edge_loss", truth.v3d, v3d_est)
    D = truth.topology.edge_difference
    gt_vec = ad._spmm_apply(D, truth.v3d)
    gt_len2 = np.sum(gt_vec * gt_vec, axis=-1)
    est_vec = ad.spmm(D, v3d_est)
    est_len2 = ad.sum(ad.square(est_vec), axis=-1)
    return _avg(ad.sum(ad.square(ad.sub(gt_len2, est_len2))), _batch(truth.v3d))


def laplacian_loss(truth: MeshTruth, v3d_est):
    """Offsets minus their neighbourhood mean, squared; isolated vertices use mean 0."""
    _check("laplacian_loss", truth.v3d, v3d_est)
    A = truth.topology.neighbor_mean
    delta = ad.sub(truth.v3d, v3d_est)
    lap = delta - ad.spmm(A, delta)
    return _avg(ad.sum(ad.square(lap)), _batch(truth.v3d))


def pose_loss(gt_joints, est_joints):
    gt = np.asarray(gt_joints, dtype=np.float64)
    _check("pose_loss", gt, est_joints)
    return _avg(ad.sum(ad.square(ad.sub(est_joints, gt))), _batch(gt))


def _weighted(terms):
    """Sum ``w * value`` over terms, skipping zero weights."""
    out = None
    for w, value in terms:
        if w < 0:
            raise ValueError(f"negative loss weight {w}")
        if w == 0 or value is None:
            continue
        t = ad.scale(value, w)
        out = t if out is None else out + t
    return out if out is not None else ad.Tensor(np.array(0.0))


def mesh_components(truth: MeshTruth, v3d_est, v2d_est=None) -> dict:
    return {
        "vertex": vertex_loss(truth, v3d_est, v2d_est),
        "normal": normal_loss(truth, v3d_est),
        "edge": edge_loss(truth, v3d_est),
        "laplacian": laplacian_loss(truth, v3d_est),
    }


def mesh_loss(truth: MeshTruth, v3d_est, v2d_est=None, weights: LossWeights | None = None, components=None):
    w = weights or LossWeights()
    c = components or mesh_components(truth, v3d_est, v2d_est)
    return _weighted([(w.v, c["vertex"]), (w.n, c["normal"]), (w.e, c["edge"]), (w.l, c["laplacian"])])


def fully_loss(heat, mesh, pose, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return _weighted([(w.H, heat), (w.M, mesh), (w.J, pose)])


def depth_loss(reference, rendered):
    """Masked mean smooth-L1 between normalized depth maps.

    The mask is the union of the two foregrounds (value < 1); a sample
    with an empty mask contributes 0.
    """
    ref = np.asarray(reference, dtype=np.float64)
    _check("depth_loss", ref, rendered)
    r = rendered.data if isinstance(rendered, ad.Tensor) else np.asarray(rendered)
    mask = ((ref < 1.0) | (r < 1.0)).astype(np.float64)
    bsz = ref.shape[0] if ref.ndim == 3 else 1
    m = mask.reshape(bsz, -1)
    counts = m.sum(axis=1)
    weights = (m / np.maximum(counts, 1.0)[:, None]).reshape(ref.shape)
    per_px = ad.smooth_l1(ad.sub(rendered, ref))
    return _avg(ad.sum(ad.mul(per_px, weights)), bsz)


def pseudo_mesh_loss(pseudo: MeshTruth, v3d_est, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return _weighted([(w.e, edge_loss(pseudo, v3d_est)), (w.l, laplacian_loss(pseudo, v3d_est))])


def weakly_loss(heat, depth, pseudo, pose=None, weights: LossWeights | None = None):
    """Heat-map + depth + pseudo-mesh terms; the pose term joins when given."""
    w = weights or LossWeights.weakly(with_pose=pose is not None)
    return _weighted([(w.H, heat), (w.D, depth), (w.pM, pseudo), (w.J, pose)])
