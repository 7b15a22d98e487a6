"""Finite-difference checks over every differentiable piece of the pipeline.

Each check builds a small random instance from the seed, compares tape
gradients to central differences and records the worst relative error.
"""
from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from . import losses as L
from .coarsening import graclus_coarsen
from .mesh import MeshTopology, build_adjacency, laplacian_pair
from .nets import NetConfig, cheb_conv, decode_mesh, encode_image, init_all, regress_pose
from .render import CameraIntrinsics, edge_clearance, render_gradcheck
from .synth import make_template

OCTAHEDRON = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                       [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])


def _weighted_sum(x, rng):
    return ad.sum(ad.mul(x, rng.standard_normal(x.shape)))


def _random_mesh(rng, bsz=2):
    base = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1.0]])
    return base + 0.2 * rng.standard_normal((bsz, 6, 3))


def _tiny_net():
    tpl = make_template("sphere-grid", 254)
    h = graclus_coarsen(build_adjacency(tpl.topology), 4)
    cfg = NetConfig(image_size=16, enc_widths=(4, 4), heatmap_size=8, latent_grid=2, n_joints=3,
                    latent_dim=6, fc_hidden=8, coarse_features=4, stage1=(4, 4), stage2=(4, 3),
                    reg_widths=(2, 2))
    return cfg, h, init_all(cfg, h)


def _param_check(fn, params: dict, names, h, tol, rng, max_entries):
    """Gradcheck ``fn(P)`` with respect to the listed parameters only."""
    names = list(names)

    def wrapped(ts):
        P = dict(params)
        P.update(zip(names, ts))
        return fn(P)
    return ad.gradcheck(wrapped, [params[n] for n in names], h=h, tol=tol, max_entries=max_entries, rng=rng)


def run_gradient_suite(seed: int = 0, h: float = 1e-6, tol: float = 1e-4) -> dict:
    rng = np.random.default_rng(seed)
    topo = MeshTopology(6, OCTAHEDRON)
    gt = _random_mesh(rng)
    truth = L.MeshTruth(gt, gt[..., :2], topo)
    checks = {}

    def record(name, fn):
        t0 = time.perf_counter()
        rep = fn()
        checks[name] = {"max_rel_err": max(rep.max_rel_err), "tol": rep.tol, "ok": rep.ok,
                        "seconds": time.perf_counter() - t0}

    est = _random_mesh(rng)
    est2 = rng.standard_normal((2, 6, 2))
    gt_hm = rng.standard_normal((2, 3, 4, 4))
    record("heatmap_loss", lambda: ad.gradcheck(
        lambda p: L.heatmap_loss(gt_hm, p[0]), [rng.standard_normal((2, 3, 4, 4))], h=h, tol=tol))
    record("vertex_loss", lambda: ad.gradcheck(lambda p: L.vertex_loss(truth, p[0], p[1]), [est, est2], h=h, tol=tol))
    record("normal_loss", lambda: ad.gradcheck(lambda p: L.normal_loss(truth, p[0]), [est], h=h, tol=tol))
    record("edge_loss", lambda: ad.gradcheck(lambda p: L.edge_loss(truth, p[0]), [est], h=h, tol=tol))
    record("laplacian_loss", lambda: ad.gradcheck(lambda p: L.laplacian_loss(truth, p[0]), [est], h=h, tol=tol))
    gj = rng.standard_normal((2, 4, 3))
    record("pose_loss", lambda: ad.gradcheck(lambda p: L.pose_loss(gj, p[0]), [rng.standard_normal((2, 4, 3))],
                                             h=h, tol=tol))
    ref = np.where(rng.random((2, 6, 6)) < 0.3, 1.0, rng.random((2, 6, 6)))
    rendered = rng.uniform(0.05, 0.95, (2, 6, 6))
    record("depth_loss", lambda: ad.gradcheck(lambda p: L.depth_loss(ref, p[0]), [rendered], h=h, tol=tol))

    W = (rng.random((9, 9)) < 0.35).astype(float)
    W = np.triu(W, 1)
    W = W + W.T
    Lt = laplacian_pair(W).L_rescaled
    record("cheb_conv", lambda: ad.gradcheck(
        lambda p: _weighted_sum(cheb_conv(p[0], p[1], Lt), np.random.default_rng(seed + 1)),
        [rng.standard_normal((9, 3)), rng.standard_normal((3, 3, 2))], h=h, tol=tol))

    cfg, hier, params = _tiny_net()
    latent = rng.standard_normal((2, cfg.latent_dim))

    def dec(P, lat=latent):
        return _weighted_sum(decode_mesh(P, lat, hier, cfg), np.random.default_rng(seed + 2))
    record("decoder_input", lambda: ad.gradcheck(lambda p: dec(params, p[0]), [latent], h=h, tol=tol))
    record("decoder_params", lambda: _param_check(dec, params, sorted(k for k in params if k.startswith("dec.")),
                                                  h, tol, np.random.default_rng(seed), 6))
    verts = rng.standard_normal((2, hier.levels[0].n_real, 3))

    def reg(P, v=verts):
        return _weighted_sum(regress_pose(P, v, hier, cfg), np.random.default_rng(seed + 3))
    record("regressor_input", lambda: ad.gradcheck(lambda p: reg(params, p[0]), [verts], h=h, tol=tol,
                                                   max_entries=40, rng=np.random.default_rng(seed)))
    record("regressor_params", lambda: _param_check(reg, params, sorted(k for k in params if k.startswith("reg.")),
                                                    h, tol, np.random.default_rng(seed), 6))
    images = rng.random((2, 16, 16, 3))

    def enc(P, img=images):
        hm, lat = encode_image(P, img, cfg)
        r = np.random.default_rng(seed + 4)
        return _weighted_sum(hm, r) + _weighted_sum(lat, r)
    record("encoder_params", lambda: _param_check(enc, params, sorted(k for k in params if k.startswith("enc.")),
                                                  h, tol, np.random.default_rng(seed), 6))

    cam = CameraIntrinsics(40.0, 40.0, 16.0, 16.0, 32, 32)
    renders, skipped = [], 0
    for _ in range(20):
        if len(renders) == 3:
            break
        V = rng.uniform(-3, 3, (8, 3)) + np.array([0, 0, 10.0])
        F = rng.integers(0, 8, (5, 3))
        F = F[(F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])]
        if not len(F) or edge_clearance(V, F, cam) < 1e-3:
            skipped += 1
            continue
        t0 = time.perf_counter()
        rep = render_gradcheck(V, F, cam, (32, 32), h=h, tol=tol, z_near=1.0, z_far=20.0)
        if rep.skipped:
            skipped += 1
            continue
        renders.append((rep, time.perf_counter() - t0))
    if renders:
        checks["render_depth"] = {"max_rel_err": max(r.max_rel_err for r, _ in renders), "tol": tol,
                                  "ok": all(r.max_rel_err <= tol for r, _ in renders),
                                  "seconds": sum(s for _, s in renders), "configs": len(renders),
                                  "skipped_configs": skipped}
    return {"seed": seed, "h": h, "ok": all(c["ok"] for c in checks.values()), "checks": checks}
