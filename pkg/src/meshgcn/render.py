"""Pinhole camera helpers and a z-buffer depth rasterizer with vertex gradients.

Visibility is hard: each pixel takes the nearest covering triangle, and
coverage is treated as locally constant. The rendered depth of a pixel is
the ray/plane intersection with its winning triangle, which is exactly the
perspective-correct barycentric interpolation of the vertex depths, so the
gradient reaches all three vertices of that triangle.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside the image")

    def scaled_to(self, width: int, height: int) -> "CameraIntrinsics":
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "CameraIntrinsics":
        missing = {"fx", "fy", "cx", "cy", "width", "height"} - set(d)
        if missing:
            raise ValueError(f"camera json missing keys: {sorted(missing)}")
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def load_camera(path) -> CameraIntrinsics:
    return CameraIntrinsics.from_json(json.loads(Path(path).read_text()))


def save_camera(path, cam: CameraIntrinsics) -> None:
    Path(path).write_text(json.dumps(cam.to_json(), indent=1))


@dataclass(frozen=True)
class RootScale:
    root_depth: float
    scale: float

    def __post_init__(self):
        if not (self.root_depth > 0 and self.scale > 0):
            raise ValueError("root depth and scale must both be positive")


# --- UVD <-> camera frame -----------------------------------------------------

def _per_sample(v, bsz, n):
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 1:
        v = np.repeat(v, bsz)
    return np.repeat(v[:, None], n, axis=1).reshape(bsz, n, 1)


def uvd_to_xyz(uvd, cam: CameraIntrinsics, root_depth, scale):
    """Normalized ``(u, v, d)`` -> camera-frame ``(X, Y, Z)``.

    ``z = d * scale + root_depth``; ``X = (u * width - cx) * z / fx`` and
    likewise for ``Y``. Works batched (``(B, N, 3)`` with per-sample root and
    scale) on arrays or tape tensors.
    """
    squeeze = uvd.ndim == 2
    if squeeze:
        uvd = ad.reshape(uvd, (1,) + tuple(uvd.shape))
    bsz, n, _ = uvd.shape
    col = lambda k: ad.reshape(ad.matmul(ad.reshape(uvd, (bsz * n, 3)), np.eye(3)[:, [k]]), (bsz, n, 1))
    u, v, d = col(0), col(1), col(2)
    z = ad.mul(d, _per_sample(scale, bsz, n)) + _per_sample(root_depth, bsz, n)
    x = ad.mul(ad.scale(u, cam.width / cam.fx) - np.full((bsz, n, 1), cam.cx / cam.fx), z)
    y = ad.mul(ad.scale(v, cam.height / cam.fy) - np.full((bsz, n, 1), cam.cy / cam.fy), z)
    out = ad.concat([x, y, z], axis=-1)
    return ad.reshape(out, (n, 3)) if squeeze else out


def xyz_to_uvd(xyz, cam: CameraIntrinsics, root_depth, scale) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    rd = np.asarray(root_depth, dtype=np.float64)
    sc = np.asarray(scale, dtype=np.float64)
    if xyz.ndim == 3:
        rd, sc = rd.reshape(-1, 1), sc.reshape(-1, 1)
    X, Y, Z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    u = (cam.fx * X / Z + cam.cx) / cam.width
    v = (cam.fy * Y / Z + cam.cy) / cam.height
    d = (Z - rd) / sc
    return np.stack([u, v, d], axis=-1)


def project(xyz, cam: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates of camera-frame points."""
    xyz = np.asarray(xyz, dtype=np.float64)
    return np.stack([cam.fx * xyz[..., 0] / xyz[..., 2] + cam.cx,
                     cam.fy * xyz[..., 1] / xyz[..., 2] + cam.cy], axis=-1)


# --- rasterization --------------------------------------------------------------

@dataclass
class Raster:
    """Per-pixel z-buffer result for one view (row-major ``(H, W)``)."""

    z: np.ndarray  # absolute depth, inf where uncovered
    face: np.ndarray  # winning face index, -1 where uncovered
    culled: int = 0
    rays: np.ndarray = field(default=None, repr=False)  # (H*W, 3) pixel-centre rays


def _owns_edge(dx, dy):
    # consistent tie rule: exactly one of two opposite directed edges owns it
    return (dy > 0) | ((dy == 0) & (dx < 0))


def rasterize(vertices, faces, cam: CameraIntrinsics, res=(32, 32)) -> Raster:
    """Nearest-triangle z-buffer at pixel centres ``(i + 0.5, j + 0.5)``."""
    V = np.asarray(vertices, dtype=np.float64)
    F = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    H, W = res
    rc = cam.scaled_to(W, H)
    jj, ii = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    rays = np.stack([((ii + 0.5) - rc.cx) / rc.fx, ((jj + 0.5) - rc.cy) / rc.fy,
                     np.ones_like(ii, dtype=np.float64)], axis=-1).reshape(-1, 3)
    zbuf = np.full(H * W, np.inf)
    fbuf = np.full(H * W, -1, dtype=np.int64)
    if len(F) == 0:
        return Raster(zbuf.reshape(H, W), fbuf.reshape(H, W), 0, rays)

    A, B, C = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    behind = (A[:, 2] <= 0) | (B[:, 2] <= 0) | (C[:, 2] <= 0)
    keep = np.flatnonzero(~behind)
    culled = int(behind.sum())
    if len(keep) == 0:
        return Raster(zbuf.reshape(H, W), fbuf.reshape(H, W), culled, rays)

    P = project(V, rc)
    pa, pb, pc = P[F[keep, 0]], P[F[keep, 1]], P[F[keep, 2]]
    area = (pb[:, 0] - pa[:, 0]) * (pc[:, 1] - pa[:, 1]) - (pb[:, 1] - pa[:, 1]) * (pc[:, 0] - pa[:, 0])
    flip = area < 0
    pb, pc = np.where(flip[:, None], pc, pb), np.where(flip[:, None], pb, pc)
    ok = (area != 0) & np.isfinite(area)
    keep, pa, pb, pc = keep[ok], pa[ok], pb[ok], pc[ok]

    lo = np.minimum(np.minimum(pa, pb), pc)
    hi = np.maximum(np.maximum(pa, pb), pc)
    x0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, W).astype(np.int64)
    x1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, W - 1).astype(np.int64)
    y0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, H).astype(np.int64)
    y1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, H - 1).astype(np.int64)
    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    counts = bw * bh
    if counts.sum() == 0:
        return Raster(zbuf.reshape(H, W), fbuf.reshape(H, W), culled, rays)

    t = np.repeat(np.arange(len(keep)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    px = x0[t] + offs % bw[t]
    py = y0[t] + offs // bw[t]
    cx, cy = px + 0.5, py + 0.5

    inside = np.ones(len(t), dtype=bool)
    for a, b in ((pa, pb), (pb, pc), (pc, pa)):
        dx, dy = b[t, 0] - a[t, 0], b[t, 1] - a[t, 1]
        e = dx * (cy - a[t, 1]) - dy * (cx - a[t, 0])
        inside &= (e > 0) | ((e == 0) & _owns_edge(dx, dy))
    t, pix = t[inside], (py * W + px)[inside]
    fidx = keep[t]

    A, B, C = V[F[fidx, 0]], V[F[fidx, 1]], V[F[fidx, 2]]
    n = np.cross(B - A, C - A)
    r = rays[pix]
    denom = np.einsum("ij,ij->i", n, r)
    good = denom != 0
    z = np.einsum("ij,ij->i", n, A)[good] / denom[good]
    pix, fidx = pix[good], fidx[good]

    order = np.lexsort((fidx, z, pix))
    pix, fidx, z = pix[order], fidx[order], z[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    zbuf[pix[first]] = z[first]
    fbuf[pix[first]] = fidx[first]
    return Raster(zbuf.reshape(H, W), fbuf.reshape(H, W), culled, rays)


def normalize_depth(z, z_near: float, z_far: float) -> np.ndarray:
    """Map absolute depth to ``[0, 1]``; uncovered (inf) pixels become 1."""
    return np.clip((np.asarray(z) - z_near) / (z_far - z_near), 0.0, 1.0)


def _depth_vertex_grad(V, F, raster: Raster, g_pix, z_near, z_far):
    """Gradient of ``sum(g * normalized depth)`` w.r.t. vertex positions."""
    grad = np.zeros_like(V)
    pix = np.flatnonzero(raster.face.reshape(-1) >= 0)
    if len(pix) == 0:
        return grad
    z = raster.z.reshape(-1)[pix]
    zn = (z - z_near) / (z_far - z_near)
    live = (zn > 0) & (zn < 1)
    pix, z = pix[live], z[live]
    g = g_pix.reshape(-1)[pix] / (z_far - z_near)
    f = raster.face.reshape(-1)[pix]
    ia, ib, ic = F[f, 0], F[f, 1], F[f, 2]
    A, B, C = V[ia], V[ib], V[ic]
    r = raster.rays[pix]
    u, w = B - A, C - A
    n = np.cross(u, w)
    nr = np.einsum("ij,ij->i", n, r)[:, None]
    # z = (n.A)/(n.r): dz/dn = (A - z r)/(n.r), direct dz/dA = n/(n.r)
    gn = (A - z[:, None] * r) / nr * g[:, None]
    dA_direct = n / nr * g[:, None]
    dB = np.cross(w, gn)
    dC = np.cross(gn, u)
    dA = dA_direct - dB - dC
    for idx, d in ((ia, dA), (ib, dB), (ic, dC)):
        for k in range(3):
            grad[:, k] += np.bincount(idx, weights=d[:, k], minlength=len(V))
    return grad


def _render_fwd(verts, *, faces, cam, res, z_near, z_far, cache):
    batched = verts.ndim == 3
    vs = verts if batched else verts[None]
    rasters = [rasterize(v, faces, cam, res) for v in vs]
    cache["rasters"] = rasters
    out = np.stack([normalize_depth(r.z, z_near, z_far) for r in rasters])
    return out if batched else out[0]


def _render_vjp(g, out, ops, needs, *, faces, cam, res, z_near, z_far, cache):
    verts = ops[0]
    batched = verts.ndim == 3
    vs, gs = (verts, g) if batched else (verts[None], g[None])
    F = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    grads = np.stack([_depth_vertex_grad(v, F, r, gi, z_near, z_far)
                      for v, r, gi in zip(vs, cache["rasters"], gs)])
    return [grads if batched else grads[0]]


ad.register("render_depth", _render_fwd, _render_vjp)

DEFAULT_NEAR = 100.0
DEFAULT_FAR = 2000.0


def render_depth(vertices, faces, cam: CameraIntrinsics, res=(32, 32),
                 z_near: float = DEFAULT_NEAR, z_far: float = DEFAULT_FAR):
    """Normalized depth map(s) of camera-frame vertices; background is 1.0.

    ``vertices`` may be ``(N, 3)`` or batched ``(B, N, 3)``, array or tape
    tensor. Returns a tensor; use ``.data`` for the array.
    """
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    n = vertices.shape[-2]
    if faces.size and faces.max() >= n:
        raise ValueError(f"face index {faces.max()} out of range for {n} vertices")
    return ad.record("render_depth", [vertices], faces=faces, cam=cam, res=tuple(res),
                     z_near=float(z_near), z_far=float(z_far), cache={})


# --- gradient self-check ------------------------------------------------------------

def edge_clearance(vertices, faces, cam: CameraIntrinsics, res=(32, 32)) -> float:
    """Smallest distance (in raster pixels) from any pixel centre to any projected edge."""
    V = np.asarray(vertices, dtype=np.float64)
    F = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    H, W = res
    rc = cam.scaled_to(W, H)
    front = np.all(V[F][:, :, 2] > 0, axis=1)
    if not front.any():
        return np.inf
    P = project(V, rc)
    jj, ii = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    q = np.stack([ii.ravel(), jj.ravel()], axis=1)
    best = np.inf
    for f in F[front]:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            pa, pb = P[a], P[b]
            d = pb - pa
            L2 = d @ d
            t = np.clip(((q - pa) @ d) / L2, 0, 1) if L2 > 0 else np.zeros(len(q))
            dist = np.linalg.norm(q - (pa + t[:, None] * d), axis=1)
            best = min(best, float(dist.min()))
    return best


@dataclass
class RenderGradReport:
    skipped: bool
    reason: str = ""
    max_rel_err: float = 0.0
    tol: float = 1e-3

    @property
    def ok(self) -> bool:
        return self.skipped or self.max_rel_err <= self.tol


def render_gradcheck(vertices, faces, cam: CameraIntrinsics, res=(32, 32), h: float = 1e-6,
                     tol: float = 1e-3, eps: float = 1e-3, z_near=DEFAULT_NEAR, z_far=DEFAULT_FAR):
    """Finite-difference check of d(sum of rendered pixels)/d(vertices).

    Skipped (with reason) when a pixel centre lies within ``eps`` raster
    pixels of a projected triangle edge, where coverage is not locally
    constant. Background pixels are constant 1.0 and are left out of the sum
    so they do not swamp the differences with rounding noise.
    """
    V = np.asarray(vertices, dtype=np.float64)
    clearance = edge_clearance(V, faces, cam, res)
    if clearance < eps:
        return RenderGradReport(True, f"pixel centre {clearance:.2e} px from a triangle edge", tol=tol)
    fg = (rasterize(V, faces, cam, res).face >= 0).astype(np.float64)
    rep = ad.gradcheck(lambda p: ad.sum(ad.mul(render_depth(p[0], faces, cam, res, z_near, z_far), fg)),
                       [V], h=h, tol=tol)
    return RenderGradReport(False, "", rep.max_rel_err[0], tol)


# --- DPTH raster files ------------------------------------------------------------

DPTH_MAGIC = b"DPTH"


def write_dpth(path, depth) -> None:
    d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError("depth raster must be 2-D")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(DPTH_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())


def read_dpth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DPTH_MAGIC or len(raw) < 12:
        raise ValueError(f"{path}: not a DPTH raster")
    w, h = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * w * h:
        raise ValueError(f"{path}: truncated DPTH raster")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).astype(np.float32)
