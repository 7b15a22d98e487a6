"""Chebyshev graph convolution, the coarse-to-fine mesh decoder, the linear
pose regressor and a small convolutional image encoder.

Networks are plain dictionaries of named float64 arrays. A forward pass
binds them to a :class:`~meshgcn.autodiff.Tape` (``bind``) and then calls
the functions below on the resulting tensors, so the same code serves
inference, training and finite-difference checks.
"""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .coarsening import CoarseningHierarchy, pool_average, upsample


@dataclass
class NetConfig:
    image_size: int = 256
    in_channels: int = 3
    n_joints: int = 21
    latent_dim: int = 512
    enc_widths: tuple = (8, 16, 32, 64)
    heatmap_size: int = 64
    latent_grid: int = 8
    fc_hidden: int = 1024
    coarse_features: int = 64
    stage1: tuple = (48, 32)
    stage2: tuple = (16, 3)
    cheb_K: int = 3
    reg_widths: tuple = (8, 8)
    reg_K: int = 3
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class GraphSignal:
    """Features ``(N_level, F)`` living on one hierarchy level (fakes included)."""

    level: int
    features: np.ndarray


@dataclass
class ChebLayer:
    theta: np.ndarray  # (K, F_in, F_out)

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    def __call__(self, signal: GraphSignal, hierarchy: CoarseningHierarchy) -> GraphSignal:
        Lt = hierarchy.levels[signal.level].lap.L_rescaled
        out = cheb_conv(signal.features, self.theta, Lt)
        return GraphSignal(signal.level, out)


# --- initialization ----------------------------------------------------------

def named_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def glorot(seed: int, name: str, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return named_rng(seed, name).uniform(-bound, bound, size=shape)


def _dense_params(params, seed, name, fin, fout):
    params[f"{name}.w"] = glorot(seed, f"{name}.w", fin, fout, (fin, fout))
    params[f"{name}.b"] = np.zeros(fout)


def _cheb_params(params, seed, name, K, fin, fout):
    params[f"{name}.theta"] = glorot(seed, f"{name}.theta", fin, fout, (K, fin, fout))


def init_encoder(cfg: NetConfig) -> dict:
    p: dict = {}
    cin = cfg.in_channels
    for i, w in enumerate(cfg.enc_widths):
        _dense_params(p, cfg.seed, f"enc.conv{i}", 9 * cin, w)
        cin = w
    _dense_params(p, cfg.seed, "enc.head", cin, cfg.n_joints)
    g = cfg.latent_grid
    _dense_params(p, cfg.seed, "enc.latent", g * g * (cin + cfg.n_joints), cfg.latent_dim)
    return p


def init_decoder(cfg: NetConfig, n_coarse: int) -> dict:
    p: dict = {}
    _dense_params(p, cfg.seed, "dec.fc1", cfg.latent_dim, cfg.fc_hidden)
    _dense_params(p, cfg.seed, "dec.fc2", cfg.fc_hidden, n_coarse * cfg.coarse_features)
    fin = cfg.coarse_features
    for stage, widths in (("s1", cfg.stage1), ("s2", cfg.stage2)):
        for j, w in enumerate(widths):
            _cheb_params(p, cfg.seed, f"dec.{stage}c{j}", cfg.cheb_K, fin, w)
            fin = w
    return p


def init_regressor(cfg: NetConfig, n_level2: int) -> dict:
    p: dict = {}
    fin = 3
    for j, w in enumerate(cfg.reg_widths):
        _cheb_params(p, cfg.seed, f"reg.c{j}", cfg.reg_K, fin, w)
        fin = w
    _dense_params(p, cfg.seed, "reg.fc", n_level2 * fin, cfg.n_joints * 3)
    return p


def init_all(cfg: NetConfig, hierarchy: CoarseningHierarchy) -> dict:
    p = init_encoder(cfg)
    p.update(init_decoder(cfg, hierarchy.levels[-1].size))
    p.update(init_regressor(cfg, hierarchy.levels[len(cfg.reg_widths)].size))
    return p


def bind(tape: ad.Tape, params: dict, trainable=lambda name: True) -> dict:
    """Wrap arrays as tape leaves: parameters if ``trainable(name)``, else constants."""
    return {k: tape.param(v, name=k) if trainable(k) else tape.const(v, name=k) for k, v in params.items()}


# --- layers ------------------------------------------------------------------

def dense(x, w, b):
    """``x @ w + b`` for 2-D ``x``; the bias row is expanded explicitly."""
    n = x.shape[0]
    return ad.matmul(x, w) + ad.matmul(np.ones((n, 1)), ad.reshape(b, (1, -1)))


def cheb_conv(x, theta, Lt):
    """Chebyshev filter ``sum_k T_k(Lt) x theta_k``.

    ``x`` is ``(N, F_in)`` or ``(B, N, F_in)``; ``theta`` is
    ``(K, F_in, F_out)``. The polynomial terms are built by the three-term
    recurrence on the signal, never as dense matrices. Accepts arrays or
    tape tensors.
    """
    K, fin, fout = theta.shape
    if x.shape[-1] != fin:
        raise ValueError(f"cheb_conv: signal width {x.shape[-1]} != F_in {fin}")
    if x.shape[-2] != Lt.shape[0]:
        raise ValueError(f"cheb_conv: signal has {x.shape[-2]} rows, Laplacian is {Lt.shape}")
    if not isinstance(x, ad.Tensor) and not isinstance(theta, ad.Tensor):
        return _cheb_conv_np(np.asarray(x, dtype=np.float64), theta, Lt)
    terms = [x]
    if K > 1:
        terms.append(ad.spmm(Lt, x))
    for _ in range(2, K):
        terms.append(ad.scale(ad.spmm(Lt, terms[-1]), 2.0) - terms[-2])
    stacked = ad.concat(terms, axis=-1) if K > 1 else x
    lead = stacked.shape[:-1]
    flat = ad.reshape(stacked, (-1, K * fin))
    out = ad.matmul(flat, ad.reshape(theta, (K * fin, fout)))
    return ad.reshape(out, lead + (fout,))


def _cheb_conv_np(x, theta, Lt):
    K = theta.shape[0]
    t_prev, t_cur = x, None
    out = x @ theta[0]
    for k in range(1, K):
        if k == 1:
            t_cur = ad._spmm_apply(Lt, x)
        else:
            t_prev, t_cur = t_cur, 2.0 * ad._spmm_apply(Lt, t_cur) - t_prev
        out = out + t_cur @ theta[k]
    return out


# --- image encoder -----------------------------------------------------------

@lru_cache(maxsize=32)
def _im2col_index(b: int, h: int, w: int, c: int) -> np.ndarray:
    """Flat source indices for 3x3, stride-2, pad-1 patches; ``-1`` = padding."""
    ho, wo = (h + 1) // 2, (w + 1) // 2
    bi, oi, oj, di, dj, ci = np.meshgrid(np.arange(b), np.arange(ho), np.arange(wo),
                                         np.arange(3), np.arange(3), np.arange(c), indexing="ij")
    si, sj = 2 * oi + di - 1, 2 * oj + dj - 1
    ok = (si >= 0) & (si < h) & (sj >= 0) & (sj < w)
    flat = ((bi * h + si) * w + sj) * c + ci
    idx = np.where(ok, flat, -1).reshape(b * ho * wo, 9 * c)
    idx.setflags(write=False)
    return idx


def conv3x3_s2(x, w, b):
    """Stride-2 3x3 convolution on ``(B, H, W, C)`` via an explicit patch gather."""
    bsz, h, wd, c = x.shape
    if w.shape[0] != 9 * c:
        raise ValueError(f"conv: expected {w.shape[0] // 9} input channels, got {c}")
    idx = _im2col_index(bsz, h, wd, c)
    patches = ad.gather(ad.reshape(x, (-1,)), idx)
    out = dense(patches, w, b)
    return ad.reshape(out, (bsz, (h + 1) // 2, (wd + 1) // 2, w.shape[1]))


@lru_cache(maxsize=16)
def _block_mean_matrix(n_in: int, n_out: int) -> sp.csr_matrix:
    """Average ``n_in x n_in`` grid cells into ``n_out x n_out`` blocks (row-major)."""
    f = n_in // n_out
    i, j = np.meshgrid(np.arange(n_in), np.arange(n_in), indexing="ij")
    rows = ((i // f) * n_out + j // f).ravel()
    return sp.csr_matrix((np.full(n_in * n_in, 1.0 / (f * f)), (rows, np.arange(n_in * n_in))),
                         shape=(n_out * n_out, n_in * n_in))


@lru_cache(maxsize=16)
def _nearest_up_matrix(n_in: int, n_out: int) -> sp.csr_matrix:
    f = n_out // n_in
    i, j = np.meshgrid(np.arange(n_out), np.arange(n_out), indexing="ij")
    cols = ((i // f) * n_in + j // f).ravel()
    return sp.csr_matrix((np.ones(n_out * n_out), (np.arange(n_out * n_out), cols)),
                         shape=(n_out * n_out, n_in * n_in))


def encode_image(P: dict, images, cfg: NetConfig, heatmaps_override=None):
    """Images ``(B, H, W, C)`` -> heat-maps ``(B, J, 64, 64)`` and latent ``(B, D)``.

    With ``heatmaps_override`` (same layout as the output heat-maps) the
    latent branch sees those maps instead of the estimated ones.
    """
    images = images if isinstance(images, ad.Tensor) else np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None] if not isinstance(images, ad.Tensor) else ad.reshape(images, (1,) + images.shape)
    if images.shape[-1] != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} channels, got {images.shape[-1]}")
    bsz = images.shape[0]
    x = images
    for i in range(len(cfg.enc_widths)):
        x = ad.relu(conv3x3_s2(x, P[f"enc.conv{i}.w"], P[f"enc.conv{i}.b"]))
    _, g, _, c = x.shape
    feats = ad.reshape(x, (bsz, g * g, c))
    hm_small = dense(ad.reshape(feats, (bsz * g * g, c)), P["enc.head.w"], P["enc.head.b"])
    J, S = cfg.n_joints, cfg.heatmap_size
    hm = ad.spmm(_nearest_up_matrix(g, S), ad.reshape(hm_small, (bsz, g * g, J)))  # (B, S*S, J)
    heatmaps = ad.reshape(ad.transpose(hm, (0, 2, 1)), (bsz, J, S, S))

    if heatmaps_override is not None:
        ov = np.asarray(heatmaps_override, dtype=np.float64).reshape(bsz, J, S * S)
        hm_in = ov.transpose(0, 2, 1)
    else:
        hm_in = hm
    lg = cfg.latent_grid
    f_pool = ad.spmm(_block_mean_matrix(g, lg), feats)
    h_pool = ad.spmm(_block_mean_matrix(S, lg), hm_in)
    z = ad.reshape(ad.concat([f_pool, h_pool], axis=-1), (bsz, lg * lg * (c + J)))
    latent = ad.relu(dense(z, P["enc.latent.w"], P["enc.latent.b"]))
    return heatmaps, latent


# --- mesh decoder ------------------------------------------------------------

def decode_mesh(P: dict, latent, hierarchy: CoarseningHierarchy, cfg: NetConfig):
    """Latent ``(B, D)`` -> per-vertex ``(u, v, d)`` of shape ``(B, N_real, 3)``."""
    latent = latent if isinstance(latent, ad.Tensor) else np.asarray(latent, dtype=np.float64)
    if latent.ndim == 1:
        latent = latent[None] if not isinstance(latent, ad.Tensor) else ad.reshape(latent, (1, -1))
    if latent.shape[-1] != P["dec.fc1.w"].shape[0]:
        raise ValueError(f"latent width {latent.shape[-1]} != decoder input {P['dec.fc1.w'].shape[0]}")
    bsz = latent.shape[0]
    top = hierarchy.num_levels
    h = ad.relu(dense(latent, P["dec.fc1.w"], P["dec.fc1.b"]))
    h = dense(h, P["dec.fc2.w"], P["dec.fc2.b"])
    x = ad.reshape(h, (bsz, hierarchy.levels[top].size, cfg.coarse_features))
    level = top
    stages = (("s1", cfg.stage1), ("s2", cfg.stage2))
    n_convs = sum(len(w) for _, w in stages)
    done = 0
    for stage, widths in stages:
        for _ in range(2):
            x = upsample(x, hierarchy, level)
            level -= 1
        for j in range(len(widths)):
            x = cheb_conv(x, P[f"dec.{stage}c{j}.theta"], hierarchy.levels[level].lap.L_rescaled)
            done += 1
            if done < n_convs:
                x = ad.relu(x)
    return hierarchy.from_slots(x, level)


# --- pose regressor ------------------------------------------------------------

def regress_pose(P: dict, vertices, hierarchy: CoarseningHierarchy, cfg: NetConfig):
    """Linear map from vertices ``(B, N_real, 3)`` to joints ``(B, J, 3)``.

    Two linear Chebyshev layers, each followed by average pooling, then one
    dense layer. No nonlinearity anywhere.
    """
    vertices = vertices if isinstance(vertices, ad.Tensor) else np.asarray(vertices, dtype=np.float64)
    if vertices.ndim == 2:
        vertices = vertices[None] if not isinstance(vertices, ad.Tensor) else ad.reshape(vertices, (1,) + vertices.shape)
    n0 = hierarchy.levels[0].n_real
    if vertices.shape[1:] != (n0, 3):
        raise ValueError(f"expected vertices of shape (B, {n0}, 3), got {vertices.shape}")
    bsz = vertices.shape[0]
    out = dense(pose_features(P, vertices, hierarchy, cfg), P["reg.fc.w"], P["reg.fc.b"])
    return ad.reshape(out, (bsz, cfg.n_joints, 3))


def pose_features(P: dict, vertices, hierarchy: CoarseningHierarchy, cfg: NetConfig):
    """The regressor up to (not including) its dense layer: ``(B, F)``."""
    bsz = vertices.shape[0]
    x = hierarchy.to_slots(vertices if isinstance(vertices, ad.Tensor) else ad.Tensor(vertices), 0)
    for j in range(len(cfg.reg_widths)):
        x = cheb_conv(x, P[f"reg.c{j}.theta"], hierarchy.levels[j].lap.L_rescaled)
        x = pool_average(x, hierarchy, j)
    return ad.reshape(x, (bsz, -1))
