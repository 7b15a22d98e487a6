"""Procedural training data: a template mesh under random smooth deformations.

Each sample is fully determined by its integer seed through a splitmix64
stream. Draws happen in this order: bump count; for every bump its centre
direction (3 normals), width (1 uniform) and amplitude vector (3 normals);
rotation quaternion (4 normals); translation (3 uniforms).
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import MeshTopology, read_obj, write_obj
from .render import (CameraIntrinsics, RootScale, project, rasterize,
                     read_dpth, render_depth, write_dpth, xyz_to_uvd)

MASK64 = (1 << 64) - 1
N_JOINTS = 21
ROOT = 0
MCP_MID, PIP_MID = 9, 10  # middle finger: 1 + 4 * 2 + {0, 1}
TEMPLATE_RADIUS = 80.0
SEGMENTS = 18
MIN_RINGS = 14
MAX_TILT = np.pi / 6
LANDMARK_TABLE_VERSION = "landmarks/v1"
JOINT_NAMES = ["wrist"] + [f"{f}_{j}" for f in ("thumb", "index", "middle", "ring", "pinky")
                           for j in ("mcp", "pip", "dip", "tip")]


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        """Standard normal by Box-Muller (one draw per call, two uniforms)."""
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


# --- templates ----------------------------------------------------------------

@dataclass(eq=False)
class TemplateMesh:
    kind: str
    rings: int
    topology: MeshTopology
    rest: np.ndarray  # (N, 3)
    landmarks: list  # J index arrays
    requested: int = 0

    @property
    def n_vertices(self) -> int:
        return self.topology.n_vertices

    def joints(self, vertices) -> np.ndarray:
        v = np.asarray(vertices, dtype=np.float64)
        return np.stack([v[..., idx, :].mean(axis=-2) for idx in self.landmarks], axis=-2)

    def joint_matrix(self) -> np.ndarray:
        """``(J, N)`` averaging matrix such that joints = M @ vertices."""
        M = np.zeros((len(self.landmarks), self.n_vertices))
        for j, idx in enumerate(self.landmarks):
            M[j, idx] = 1.0 / len(idx)
        return M


def _grid_faces(rings: int, segs: int) -> np.ndarray:
    vid = lambda r, s: 1 + r * segs + (s % segs)
    north = rings * segs + 1
    faces = []
    for s in range(segs):
        faces.append([0, vid(0, s + 1), vid(0, s)])
        faces.append([north, vid(rings - 1, s), vid(rings - 1, s + 1)])
    for r in range(rings - 1):
        for s in range(segs):
            a, b, c, d = vid(r, s), vid(r, s + 1), vid(r + 1, s), vid(r + 1, s + 1)
            faces += [[a, b, d], [a, d, c]]
    return np.array(faces, dtype=np.int64)


def _landmarks(rings: int, segs: int) -> list:
    vid = lambda r, s: 1 + r * segs + s
    sets = [np.array([0] + [vid(0, s) for s in range(segs)])]
    width = segs // 6
    for f in range(5):
        for j in range(4):
            r0 = int(round(rings * (0.40 + 0.15 * j)))
            band = [r for r in (r0, r0 + 1) if r < rings]
            sets.append(np.array([vid(r, s) for r in band for s in range(f * width, (f + 1) * width)]))
    return sets


def make_template(kind: str = "sphere-grid", n_target: int = 1280) -> TemplateMesh:
    """Closed grid sphere (or capsule) with ``rings * 18 + 2`` vertices.

    The ring count is chosen so the vertex count is as close to
    ``n_target`` as possible (at least ``MIN_RINGS`` rings, so the finger
    bands stay disjoint). A different count than requested is reported
    through ``warnings`` and kept in ``requested``.
    """
    if kind not in ("sphere-grid", "capsule"):
        raise ValueError(f"unknown template kind {kind!r}")
    rings = max(MIN_RINGS, int(round((n_target - 2) / SEGMENTS)))
    segs = SEGMENTS
    lat = -np.pi / 2 + np.pi * (np.arange(rings) + 1) / (rings + 1)
    lon = 2 * np.pi * np.arange(segs) / segs
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    ring_pts = np.stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], -1).reshape(-1, 3)
    pts = np.concatenate([[[0, 0, -1.0]], ring_pts, [[0, 0, 1.0]]]) * TEMPLATE_RADIUS
    if kind == "capsule":
        pts[:, 2] += np.sign(np.round(pts[:, 2], 9)) * TEMPLATE_RADIUS * 0.5
    topo = MeshTopology(len(pts), _grid_faces(rings, segs))
    if topo.n_vertices != n_target:
        warnings.warn(f"{kind}: {n_target} vertices not achievable, using {topo.n_vertices}")
    return TemplateMesh(kind, rings, topo, pts, _landmarks(rings, segs), requested=n_target)


# --- deformation ------------------------------------------------------------------

@dataclass
class Deformation:
    centers: np.ndarray  # (K, 3) unit directions
    widths: np.ndarray  # (K,)
    amplitudes: np.ndarray  # (K, 3)
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.centers.ravel(), self.widths, self.amplitudes.ravel(),
                               self.rotation.ravel(), self.translation])


def sample_deformation(seed: int) -> Deformation:
    rng = SplitMix64(seed)
    R = TEMPLATE_RADIUS
    k = 1 + int(rng.uniform() * 8)
    centers, widths, amps = [], [], []
    for _ in range(k):
        c = np.array([rng.normal() for _ in range(3)])
        centers.append(c / max(np.linalg.norm(c), 1e-12))
        widths.append(R * (0.25 + 0.35 * rng.uniform()))
        amps.append(np.array([rng.normal() for _ in range(3)]) * (0.15 * R))
    # rotation about a random axis by at most MAX_TILT; the template has no
    # orientation cue strong enough for uniform SO(3) poses to be learnable
    axis = np.array([rng.normal() for _ in range(3)])
    axis /= max(np.linalg.norm(axis), 1e-12)
    half = 0.5 * MAX_TILT * rng.uniform()
    w, (x, y, z) = np.cos(half), np.sin(half) * axis
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    t = np.array([-30 + 60 * rng.uniform(), -30 + 60 * rng.uniform(), 450 + 150 * rng.uniform()])
    return Deformation(np.array(centers), np.array(widths), np.array(amps), rot, t)


def bump_field(template: TemplateMesh, deformation: Deformation, max_disp: float = 0.3) -> np.ndarray:
    """Per-vertex displacement of the bumps, clamped to ``max_disp * radius``."""
    v = template.rest
    disp = np.zeros_like(v)
    for c, s, a in zip(deformation.centers, deformation.widths, deformation.amplitudes):
        d2 = np.sum((v - c * TEMPLATE_RADIUS) ** 2, axis=1)
        disp += np.exp(-d2 / (2 * s * s))[:, None] * a
    m = np.linalg.norm(disp, axis=1).max()
    limit = max_disp * TEMPLATE_RADIUS
    if m > limit:
        disp *= limit / m
    return disp


def deform(template: TemplateMesh, deformation: Deformation, max_disp: float = 0.3) -> np.ndarray:
    """Bumps first, then the rigid pose; returns camera-frame vertices."""
    v = template.rest + bump_field(template, deformation, max_disp)
    return v @ deformation.rotation.T + deformation.translation


# --- samples ---------------------------------------------------------------------

DEFAULT_CAMERA = CameraIntrinsics(300.0, 300.0, 128.0, 128.0, 256, 256)
HEATMAP_SIZE = 64
HEATMAP_SIGMA = 4.0
DEPTH_RES = (32, 32)


def gaussian_heatmaps(joints_uv, size: int = HEATMAP_SIZE, sigma: float = HEATMAP_SIGMA) -> np.ndarray:
    """Peak-1 Gaussians on a ``size x size`` grid from normalized joint coords.

    Pixel ``(i, j)`` has centre ``((i + 0.5) / size, (j + 0.5) / size)`` in
    normalized units, so a joint exactly on a centre gets value 1 there.
    """
    uv = np.asarray(joints_uv, dtype=np.float64)
    x0 = uv[:, 0] * size - 0.5
    y0 = uv[:, 1] * size - 0.5
    g = np.arange(size, dtype=np.float64)
    gx = np.exp(-((g[None, :] - x0[:, None]) ** 2) / (2 * sigma * sigma))
    gy = np.exp(-((g[None, :] - y0[:, None]) ** 2) / (2 * sigma * sigma))
    return gy[:, :, None] * gx[:, None, :]


@dataclass(eq=False)
class Sample:
    image: np.ndarray  # (256, 256, 3) float32
    heatmaps: np.ndarray  # (J, 64, 64) float32
    mesh2d: np.ndarray  # (N, 2) normalized image coords
    mesh3d: np.ndarray  # (N, 3) camera frame
    uvd: np.ndarray  # (N, 3)
    joints3d: np.ndarray  # (J, 3) camera frame
    joints2d: np.ndarray  # (J, 2) normalized
    depth: np.ndarray  # (32, 32) float32
    camera: CameraIntrinsics
    root_scale: RootScale
    seed: int
    resampled: int = 0

    @property
    def root_xyz(self) -> np.ndarray:
        return self.joints3d[ROOT]

    def normalized_mesh(self) -> np.ndarray:
        """Root-relative, scale-normalized vertices."""
        return (self.mesh3d - self.root_xyz) / self.root_scale.scale

    def normalized_joints(self) -> np.ndarray:
        return (self.joints3d - self.root_xyz) / self.root_scale.scale


def image_proxy(mesh3d, faces, cam: CameraIntrinsics) -> np.ndarray:
    """Silhouette, depth tint and flat shading as three channels."""
    r = rasterize(mesh3d, faces, cam, (cam.height, cam.width))
    fg = r.face >= 0
    img = np.zeros((cam.height, cam.width, 3))
    if not fg.any():
        return img.astype(np.float32)
    z = r.z[fg]
    span = max(z.max() - z.min(), 1e-9)
    img[..., 0] = fg
    img[fg, 1] = 1.0 - (z - z.min()) / span
    f = r.face[fg]
    V = np.asarray(mesh3d)
    n = np.cross(V[faces[f, 1]] - V[faces[f, 0]], V[faces[f, 2]] - V[faces[f, 0]])
    rays = r.rays.reshape(cam.height, cam.width, 3)[fg]
    img[fg, 2] = np.abs(np.einsum("ij,ij->i", n, rays)) / (
        np.linalg.norm(n, axis=1) * np.linalg.norm(rays, axis=1) + 1e-12)
    return img.astype(np.float32)


def sample_from_mesh(template: TemplateMesh, mesh3d, cam: CameraIntrinsics, seed: int,
                     image=None, heatmaps=None, depth=None, resampled: int = 0) -> Sample:
    """Derive every supervision field from camera-frame vertices.

    ``image``/``heatmaps``/``depth`` are recomputed unless supplied (the
    dataset reader passes the stored rasters).
    """
    mesh3d = np.asarray(mesh3d, dtype=np.float64)
    joints = template.joints(mesh3d)
    root_depth = float(joints[ROOT, 2])
    scale = float(np.linalg.norm(joints[PIP_MID] - joints[MCP_MID]))
    rs = RootScale(root_depth, scale)
    uvd = xyz_to_uvd(mesh3d, cam, root_depth, scale)
    pj = project(joints, cam)
    joints2d = np.stack([pj[:, 0] / cam.width, pj[:, 1] / cam.height], axis=1)
    faces = template.topology.faces
    if depth is None:
        depth = render_depth(mesh3d, faces, cam, DEPTH_RES).data.astype(np.float32)
    if heatmaps is None:
        heatmaps = gaussian_heatmaps(joints2d).astype(np.float32)
    if image is None:
        image = image_proxy(mesh3d, faces, cam)
    return Sample(image, heatmaps, uvd[:, :2].copy(), mesh3d, uvd, joints, joints2d, depth,
                  cam, rs, seed, resampled)


def generate_sample(template: TemplateMesh, seed: int, camera: CameraIntrinsics = DEFAULT_CAMERA,
                    z_min: float = 100.0) -> Sample:
    for attempt in range(100):
        s = seed + attempt * 1_000_003
        mesh3d = deform(template, sample_deformation(s))
        if mesh3d[:, 2].min() > z_min:
            return sample_from_mesh(template, mesh3d, camera, seed, resampled=attempt)
    raise RuntimeError(f"seed {seed}: mesh stayed behind the near plane after 100 attempts")


# --- on-disk dataset ----------------------------------------------------------------

RAST_MAGIC = b"RAST"


def write_rast(path, arr) -> None:
    a = np.asarray(arr)
    with open(path, "wb") as fh:
        fh.write(RAST_MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_rast(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != RAST_MAGIC:
        raise ValueError(f"{path}: not a RAST raster")
    (nd,) = struct.unpack("<I", raw[4:8])
    dims = struct.unpack(f"<{nd}I", raw[8:8 + 4 * nd])
    off = 8 + 4 * nd
    if len(raw) != off + 4 * int(np.prod(dims)):
        raise ValueError(f"{path}: truncated RAST raster")
    return np.frombuffer(raw, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


@dataclass
class Dataset:
    template: TemplateMesh
    camera: CameraIntrinsics
    samples: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (index, reason)

    def __len__(self):
        return len(self.samples)

    def subset(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.template, self.camera, self.samples[start:stop], [])


def generate_dataset(count: int, seed0: int, kind: str = "sphere-grid", n_vertices: int = 1280,
                     camera: CameraIntrinsics = DEFAULT_CAMERA) -> Dataset:
    tpl = make_template(kind, n_vertices)
    return Dataset(tpl, camera, [generate_sample(tpl, seed0 + i, camera) for i in range(count)])


def write_dataset(directory, count: int, seed0: int, kind: str = "sphere-grid", n_vertices: int = 1280,
                  camera: CameraIntrinsics = DEFAULT_CAMERA) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    tpl = make_template(kind, n_vertices)
    (out / "camera.json").write_text(json.dumps(camera.to_json(), indent=1))
    lines = []
    for i in range(count):
        s = generate_sample(tpl, seed0 + i, camera)
        stem = f"{i:06d}"
        files = {"image": f"{stem}.img.f32", "heatmaps": f"{stem}.hm.f32",
                 "mesh": f"{stem}.mesh.obj", "depth": f"{stem}.depth.dpth"}
        write_rast(out / files["image"], s.image)
        write_rast(out / files["heatmaps"], s.heatmaps)
        write_obj(out / files["mesh"], s.mesh3d, tpl.topology)
        write_dpth(out / files["depth"], s.depth)
        lines.append(json.dumps({
            "index": i, "seed": s.seed, "resampled": s.resampled, "files": files,
            "camera": camera.to_json(),
            "root_scale": {"root_depth": s.root_scale.root_depth, "scale": s.root_scale.scale},
            "template": {"kind": kind, "n_vertices": n_vertices, "landmarks": LANDMARK_TABLE_VERSION},
        }, sort_keys=True))
    (out / "manifest.jsonl").write_text("".join(line + "\n" for line in lines))
    return out


def read_dataset(directory, kind: str = "sphere-grid", n_vertices: int = 1280) -> Dataset:
    """Load a dataset; unreadable samples are listed in ``skipped``."""
    d = Path(directory)
    camera = CameraIntrinsics.from_json(json.loads((d / "camera.json").read_text()))
    records = [json.loads(line) for line in (d / "manifest.jsonl").read_text().splitlines() if line.strip()]
    if records:
        kind = records[0]["template"]["kind"]
        n_vertices = records[0]["template"]["n_vertices"]
    tpl = make_template(kind, n_vertices)
    ds = Dataset(tpl, camera)
    for rec in records:
        files = rec["files"]
        try:
            verts, topo = read_obj(d / files["mesh"])
            if topo.n_vertices != tpl.n_vertices or not np.array_equal(topo.faces, tpl.topology.faces):
                raise ValueError("mesh topology does not match the template")
            cam = CameraIntrinsics.from_json(rec["camera"])
            s = sample_from_mesh(tpl, verts, cam, rec["seed"],
                                 image=read_rast(d / files["image"]),
                                 heatmaps=read_rast(d / files["heatmaps"]),
                                 depth=read_dpth(d / files["depth"]),
                                 resampled=rec.get("resampled", 0))
        except (OSError, ValueError) as exc:
            ds.skipped.append((rec["index"], str(exc)))
            continue
        ds.samples.append(s)
    return ds
