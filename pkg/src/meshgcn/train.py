"""Optimizer, the two training regimes, pseudo ground truth and evaluation."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from .checkpoint import Checkpoint
from .coarsening import graclus_coarsen
from .mesh import build_adjacency
from .metrics import auc, edge_length_deviation, mean_error, pck, point_errors
from .nets import NetConfig, bind, decode_mesh, encode_image, init_all, pose_features, regress_pose
from .render import render_depth, uvd_to_xyz
from .synth import DEPTH_RES, Dataset, TemplateMesh, make_template


class TrainingAborted(RuntimeError):
    pass


# --- configuration ---------------------------------------------------------------

CONFIG_DOC = {
    "batch_size": "samples per step (capped at the dataset size)",
    "lr_pretrain": "RMSprop learning rate for fully supervised training",
    "lr_finetune": "RMSprop learning rate for weakly supervised fine-tuning",
    "steps_heatmap": "phase A steps: encoder on the heat-map loss",
    "steps_pose": "phase B step budget for the pose regressor (0 skips the phase)",
    "steps_mesh": "phase C steps: encoder and decoder on the full objective",
    "steps_weak_heatmap": "weak phase A steps: encoder on the heat-map loss",
    "steps_weak": "weak phase B steps: encoder and decoder on the weak objective",
    "pose_solver": "lstsq (closed-form dense head, then RMSprop while above pose_tol) or rmsprop",
    "pose_tol": "phase B stops once the batch pose loss falls below this",
    "w_v": "vertex loss weight", "w_n": "normal loss weight", "w_e": "edge loss weight",
    "w_l": "Laplacian loss weight", "w_H": "heat-map loss weight", "w_M": "mesh loss weight",
    "w_J": "pose loss weight",
    "weak_H": "heat-map weight during fine-tuning", "weak_D": "depth loss weight",
    "weak_pM": "pseudo-mesh loss weight", "weak_J": "pose weight during fine-tuning (with_pose only)",
    "seed": "network initialization seed", "shuffle": "seeded reshuffle every epoch",
    "template": "template kind", "vertices": "template vertex count",
    "coarsen_levels": "coarsening levels for the mesh graph",
}


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-4
    steps_heatmap: int = 500
    steps_pose: int = 200
    steps_mesh: int = 500
    steps_weak_heatmap: int = 200
    steps_weak: int = 500
    pose_solver: str = "lstsq"
    pose_tol: float = 1e-8
    w_v: float = 1.0
    w_n: float = 1.0
    w_e: float = 1.0
    w_l: float = 50.0
    w_H: float = 0.5
    w_M: float = 1.0
    w_J: float = 1.0
    weak_H: float = 0.1
    weak_D: float = 0.1
    weak_pM: float = 1.0
    weak_J: float = 10.0
    seed: int = 0
    shuffle: bool = False
    template: str = "sphere-grid"
    vertices: int = 1280
    coarsen_levels: int = 4

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if not (self.lr_pretrain > 0 and self.lr_finetune > 0):
            raise ValueError("learning rates must be positive")
        for k in ("steps_heatmap", "steps_pose", "steps_mesh", "steps_weak_heatmap", "steps_weak"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.pose_solver not in ("lstsq", "rmsprop"):
            raise ValueError(f"unknown pose_solver {self.pose_solver!r}")

    def fully_weights(self) -> L.LossWeights:
        return L.LossWeights(v=self.w_v, n=self.w_n, e=self.w_e, l=self.w_l,
                             H=self.w_H, M=self.w_M, J=self.w_J)

    def weak_weights(self, with_pose: bool) -> L.LossWeights:
        return L.LossWeights(e=self.w_e, l=self.w_l, H=self.weak_H, D=self.weak_D,
                             pM=self.weak_pM, J=self.weak_J if with_pose else 0.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def _coerce(kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    types = {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(types[key], raw)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {key}: {exc}") from None
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(), str(path))


# --- optimizer ---------------------------------------------------------------------

@dataclass
class OptimizerState:
    accum: dict = field(default_factory=dict)
    rho: float = 0.9
    eps: float = 1e-8


@dataclass
class StepResult:
    params: dict
    state: OptimizerState
    ok: bool
    reason: str = ""


def rmsprop_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> StepResult:
    """One RMSprop update of the parameters named in ``grads``.

    Inputs are not modified. A non-finite gradient aborts the step and the
    original params/state come back with ``ok=False``.
    """
    for k, g in grads.items():
        if np.shape(g) != np.shape(params[k]):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[k])} for {k}")
        if not np.all(np.isfinite(g)):
            return StepResult(params, state, False, f"non-finite gradient for {k}")
    new_p, new_s = dict(params), dict(state.accum)
    for k in sorted(grads):
        g = np.asarray(grads[k], dtype=np.float64)
        s = state.rho * state.accum.get(k, np.zeros_like(g)) + (1.0 - state.rho) * g * g
        new_s[k] = s
        new_p[k] = params[k] - lr * g / (np.sqrt(s) + state.eps)
    return StepResult(new_p, OptimizerState(new_s, state.rho, state.eps), True)


# --- model and batches ---------------------------------------------------------------

_HIERARCHIES: dict = {}


def hierarchy_for(template: TemplateMesh, levels: int):
    key = (template.kind, template.n_vertices, levels)
    if key not in _HIERARCHIES:
        _HIERARCHIES[key] = graclus_coarsen(build_adjacency(template.topology), levels)
    return _HIERARCHIES[key]


@dataclass(eq=False)
class Model:
    net: NetConfig
    template: TemplateMesh
    hierarchy: object
    params: dict

    @classmethod
    def create(cls, net: NetConfig, template: TemplateMesh, levels: int = 4) -> "Model":
        h = hierarchy_for(template, levels)
        return cls(net, template, h, init_all(net, h))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Model":
        t = ckpt.meta["template"]
        template = make_template(t["kind"], t["n_vertices"])
        h = hierarchy_for(template, ckpt.meta["coarsen_levels"])
        return cls(NetConfig.from_dict(ckpt.net_config), template, h, dict(ckpt.params))

    def checkpoint(self, train_config: dict, optimizer=None, **meta) -> Checkpoint:
        m = {"template": {"kind": self.template.kind, "n_vertices": self.template.n_vertices},
             "coarsen_levels": self.hierarchy.num_levels}
        m.update(meta)
        return Checkpoint(dict(self.params), self.net.to_dict(), train_config,
                          dict(optimizer.accum) if optimizer else {}, m)


@dataclass(eq=False)
class Batch:
    index: np.ndarray
    images: np.ndarray
    heatmaps: np.ndarray
    v3d: np.ndarray  # root-relative, scale-normalized
    v2d: np.ndarray
    joints: np.ndarray  # normalized like v3d
    depth: np.ndarray
    root_depth: np.ndarray
    scale: np.ndarray
    root_xyz: np.ndarray
    camera: object


def make_batch(ds: Dataset, index) -> Batch:
    ss = [ds.samples[i] for i in index]
    return Batch(
        np.asarray(index),
        np.stack([s.image for s in ss]).astype(np.float64),
        np.stack([s.heatmaps for s in ss]).astype(np.float64),
        np.stack([s.normalized_mesh() for s in ss]),
        np.stack([s.mesh2d for s in ss]),
        np.stack([s.normalized_joints() for s in ss]),
        np.stack([s.depth for s in ss]).astype(np.float64),
        np.array([s.root_scale.root_depth for s in ss]),
        np.array([s.root_scale.scale for s in ss]),
        np.stack([s.root_xyz for s in ss]),
        ds.camera,
    )


def batch_indices(step: int, n: int, batch_size: int, shuffle: bool = False, seed: int = 0) -> np.ndarray:
    """Sequential wrap-around batches; with ``shuffle`` every epoch gets a seeded permutation."""
    b = min(batch_size, n)
    pos = step * b + np.arange(b)
    epoch, within = pos // n, pos % n
    if not shuffle:
        return within
    return np.array([np.random.default_rng([seed, int(e)]).permutation(n)[w] for e, w in zip(epoch, within)])


def _columns(x, cols):
    """Select trailing-axis columns of a ``(B, N, C)`` tensor."""
    bsz, n, c = x.shape
    sel = np.eye(c)[:, cols]
    return ad.reshape(ad.matmul(ad.reshape(x, (bsz * n, c)), sel), (bsz, n, len(cols)))


def predict_geometry(uvd, batch: Batch):
    """Decoder output -> (camera-frame xyz, normalized 3D, normalized 2D)."""
    bsz, n, _ = uvd.shape
    xyz = uvd_to_xyz(uvd, batch.camera, batch.root_depth, batch.scale)
    shift = np.repeat(batch.root_xyz[:, None, :], n, axis=1)
    inv = np.broadcast_to((1.0 / batch.scale)[:, None, None], (bsz, n, 3)).copy()
    v3d = ad.mul(ad.sub(xyz, shift), inv)
    return xyz, v3d, _columns(uvd, [0, 1])


# --- training loop ---------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    phases: dict  # phase name -> Checkpoint
    aborted: str = ""

    def save(self, directory) -> Path:
        d = Path(directory)
        self.checkpoint.save(d)
        for name, ck in self.phases.items():
            ck.save(d / "phases" / name)
        (d / "log.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log))
        return d


def _scalar(t) -> float:
    return float(np.asarray(t.data if isinstance(t, ad.Tensor) else t).reshape(()))


def _run_phase(phase, model: Model, ds: Dataset, cfg: TrainConfig, steps: int, lr: float,
               trainable, objective, log: list, stop_below: float | None = None):
    """Generic RMSprop loop; returns (optimizer state, abort reason)."""
    state = OptimizerState()
    names = sorted(k for k in model.params if trainable(k))
    for step in range(steps):
        batch = make_batch(ds, batch_indices(step, len(ds), cfg.batch_size, cfg.shuffle, cfg.seed))
        tape = ad.Tape()
        P = bind(tape, model.params, trainable)
        total, comps = objective(P, batch)
        value = _scalar(total)
        record = {"phase": phase, "step": step, "loss": value}
        record.update({k: _scalar(v) for k, v in comps.items()})
        if not np.isfinite(value):
            return state, f"phase {phase} step {step}: non-finite loss"
        if stop_below is not None and value < stop_below:
            record["stopped"] = True
            log.append(record)
            break
        g = tape.backward(total, wrt=[P[k] for k in names])
        res = rmsprop_step(model.params, {k: g[P[k]] for k in names}, state, lr)
        if not res.ok:
            return state, f"phase {phase} step {step}: {res.reason}"
        model.params, state = res.params, res.state
        log.append(record)
    return state, ""


def _is_encoder_heat(k):
    return k.startswith("enc.conv") or k.startswith("enc.head")


def _is_enc_dec(k):
    return k.startswith("enc.") or k.startswith("dec.")


def _heat_objective(model, weight=1.0):
    def objective(P, batch):
        hm, _ = encode_image(P, batch.images, model.net)
        h = L.heatmap_loss(batch.heatmaps, hm)
        return ad.scale(h, weight), {"heatmap": h}
    return objective


def _fit_pose_lstsq(model: Model, ds: Dataset):
    """Closed-form minimum-norm dense head on ground-truth meshes."""
    feats, targets = [], []
    for start in range(0, len(ds), 16):
        b = make_batch(ds, np.arange(start, min(start + 16, len(ds))))
        feats.append(pose_features(model.params, b.v3d, model.hierarchy, model.net).data)
        targets.append(b.joints.reshape(len(b.index), -1))
    X = np.concatenate(feats)
    X = np.concatenate([X, np.ones((len(X), 1))], axis=1)
    sol = np.linalg.lstsq(X, np.concatenate(targets), rcond=None)[0]
    model.params = dict(model.params)
    model.params["reg.fc.w"] = sol[:-1]
    model.params["reg.fc.b"] = sol[-1]


def fully_objective(model: Model, weights: L.LossWeights):
    def objective(P, batch):
        hm, latent = encode_image(P, batch.images, model.net)
        uvd = decode_mesh(P, latent, model.hierarchy, model.net)
        _, v3d, v2d = predict_geometry(uvd, batch)
        truth = L.MeshTruth(batch.v3d, batch.v2d, model.template.topology)
        comps = L.mesh_components(truth, v3d, v2d)
        mesh = L.mesh_loss(truth, v3d, v2d, weights, comps)
        heat = L.heatmap_loss(batch.heatmaps, hm)
        pose = L.pose_loss(batch.joints, regress_pose(P, v3d, model.hierarchy, model.net)) if weights.J else None
        total = L.fully_loss(heat, mesh, pose, weights)
        out = {"heatmap": heat, "mesh": mesh, **comps}
        if pose is not None:
            out["pose"] = pose
        return total, out
    return objective


def _finish(model, cfg, log, phases, optimizer, reason, **meta) -> TrainResult:
    ck = model.checkpoint(cfg.to_dict(), optimizer, aborted=reason, **meta)
    return TrainResult(ck, log, phases, reason)


def train_phases_ab(ds: Dataset, cfg: TrainConfig, net: NetConfig | None = None):
    """Phases A (heat-maps) and B (pose regressor); shared by training and ablation."""
    if not len(ds):
        raise ValueError("cannot train on an empty dataset")
    model = Model.create(net or NetConfig(seed=cfg.seed), ds.template, cfg.coarsen_levels)
    log, phases = [], {}
    st, reason = _run_phase("A", model, ds, cfg, cfg.steps_heatmap, cfg.lr_pretrain,
                            _is_encoder_heat, _heat_objective(model), log)
    phases["A"] = model.checkpoint(cfg.to_dict(), st, phase="A")
    if reason:
        return model, log, phases, st, reason
    st = OptimizerState()
    if cfg.steps_pose > 0:
        if cfg.pose_solver == "lstsq":
            _fit_pose_lstsq(model, ds)

        def pose_obj(P, batch):
            p = L.pose_loss(batch.joints, regress_pose(P, batch.v3d, model.hierarchy, model.net))
            return p, {"pose": p}

        st, reason = _run_phase("B", model, ds, cfg, cfg.steps_pose, cfg.lr_pretrain,
                                lambda k: k.startswith("reg."), pose_obj, log, stop_below=cfg.pose_tol)
    phases["B"] = model.checkpoint(cfg.to_dict(), st, phase="B")
    return model, log, phases, st, reason


def train_phase_c(model: Model, ds: Dataset, cfg: TrainConfig, log, phases) -> TrainResult:
    model = Model(model.net, model.template, model.hierarchy, dict(model.params))
    log, phases = list(log), dict(phases)
    st, reason = _run_phase("C", model, ds, cfg, cfg.steps_mesh, cfg.lr_pretrain,
                            _is_enc_dec, fully_objective(model, cfg.fully_weights()), log)
    phases["C"] = model.checkpoint(cfg.to_dict(), st, phase="C")
    return _finish(model, cfg, log, phases, st, reason, phase="C")


def train_fully(ds: Dataset, cfg: TrainConfig, net: NetConfig | None = None, out=None) -> TrainResult:
    """Heat-map pretraining, pose regressor, then end-to-end mesh training.

    A non-finite loss or gradient stops training; the result then carries
    the last good parameters and the reason in ``aborted``.
    """
    model, log, phases, st, reason = train_phases_ab(ds, cfg, net)
    if reason:
        res = _finish(model, cfg, log, phases, st, reason, phase="B")
    else:
        res = train_phase_c(model, ds, cfg, log, phases)
    if out is not None:
        res.save(out)
    return res


# --- weak supervision -------------------------------------------------------------------

@dataclass
class PseudoGT:
    meshes: dict  # sample position -> normalized (N, 3) vertices
    skipped: list


def predict_uvd(model: Model, batch: Batch, heatmaps_override=None):
    _, latent = encode_image(model.params, batch.images, model.net, heatmaps_override)
    return decode_mesh(model.params, latent, model.hierarchy, model.net)


def make_pseudo_gt(ds: Dataset, ckpt: Checkpoint | Model, chunk: int = 8) -> PseudoGT:
    """Decoder meshes computed with ground-truth heat-maps fed to the latent branch."""
    model = ckpt if isinstance(ckpt, Model) else Model.from_checkpoint(ckpt)
    ok, skipped = [], []
    for i, s in enumerate(ds.samples):
        if s.heatmaps is None or not np.all(np.isfinite(s.heatmaps)):
            skipped.append(i)
        else:
            ok.append(i)
    meshes = {}
    for start in range(0, len(ok), chunk):
        b = make_batch(ds, ok[start:start + chunk])
        _, v3d, _ = predict_geometry(predict_uvd(model, b, b.heatmaps), b)
        meshes.update({int(i): v for i, v in zip(b.index, v3d.data)})
    return PseudoGT(meshes, skipped)


def weak_objective(model: Model, weights: L.LossWeights, pseudo: PseudoGT, with_pose: bool):
    faces = model.template.topology.faces

    def objective(P, batch):
        hm, latent = encode_image(P, batch.images, model.net)
        uvd = decode_mesh(P, latent, model.hierarchy, model.net)
        xyz, v3d, _ = predict_geometry(uvd, batch)
        comps = {}
        heat = L.heatmap_loss(batch.heatmaps, hm) if weights.H else None
        depth = L.depth_loss(batch.depth, render_depth(xyz, faces, batch.camera, DEPTH_RES)) if weights.D else None
        pm = None
        if weights.pM:
            ref = L.MeshTruth(np.stack([pseudo.meshes[int(i)] for i in batch.index]), None,
                              model.template.topology)
            pm = L.pseudo_mesh_loss(ref, v3d, weights)
        pose = None
        if with_pose and weights.J:
            pose = L.pose_loss(batch.joints, regress_pose(P, v3d, model.hierarchy, model.net))
        for k, v in (("heatmap", heat), ("depth", depth), ("pseudo_mesh", pm), ("pose", pose)):
            if v is not None:
                comps[k] = v
        return L.weakly_loss(heat, depth, pm, pose, weights), comps
    return objective


def finetune_weakly(ds: Dataset, ckpt: Checkpoint, cfg: TrainConfig, with_pose: bool = False,
                    pseudo: PseudoGT | None = None, out=None) -> TrainResult:
    """Fine-tune on images, heat-maps and depth maps; meshes come only from pseudo-GT.

    Samples without a pseudo mesh (skipped by ``make_pseudo_gt``) are dropped.
    """
    model = Model.from_checkpoint(ckpt)
    pseudo = pseudo or make_pseudo_gt(ds, model)
    keep = sorted(pseudo.meshes)
    if len(keep) != len(ds):
        ds = Dataset(ds.template, ds.camera, [ds.samples[i] for i in keep], ds.skipped)
        pseudo = PseudoGT({j: pseudo.meshes[i] for j, i in enumerate(keep)}, pseudo.skipped)
    if not len(ds):
        raise ValueError("no usable samples for fine-tuning")
    log, phases = [], {}
    st, reason = _run_phase("weak-A", model, ds, cfg, cfg.steps_weak_heatmap, cfg.lr_finetune,
                            _is_encoder_heat, _heat_objective(model), log)
    phases["weak-A"] = model.checkpoint(cfg.to_dict(), st, phase="weak-A")
    if not reason:
        w = cfg.weak_weights(with_pose)
        st, reason = _run_phase("weak-B", model, ds, cfg, cfg.steps_weak, cfg.lr_finetune,
                                _is_enc_dec, weak_objective(model, w, pseudo, with_pose), log)
        phases["weak-B"] = model.checkpoint(cfg.to_dict(), st, phase="weak-B")
    res = _finish(model, cfg, log, phases, st, reason, phase="weak-B", with_pose=with_pose)
    if out is not None:
        res.save(out)
    return res


# --- evaluation -----------------------------------------------------------------------

DEFAULT_THRESHOLDS = np.arange(20.0, 50.0 + 1e-9, 5.0)


@dataclass
class EvalReport:
    mesh_error: float
    pose_error: float
    pck: dict  # threshold -> fraction
    auc: float
    depth_loss: float
    edge_length_deviation: float
    samples: list

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["pck"] = {repr(float(t)): v for t, v in self.pck.items()}
        return d


def predict(model: Model, ds: Dataset, chunk: int = 8):
    """Camera-frame vertices and joints for every sample, using known root and scale."""
    xyz_all, joints_all = [], []
    for start in range(0, len(ds), chunk):
        b = make_batch(ds, np.arange(start, min(start + chunk, len(ds))))
        xyz, v3d, _ = predict_geometry(predict_uvd(model, b), b)
        j = regress_pose(model.params, v3d.data, model.hierarchy, model.net).data
        xyz_all.append(xyz.data)
        joints_all.append(j * b.scale[:, None, None] + b.root_xyz[:, None, :])
    return np.concatenate(xyz_all), np.concatenate(joints_all)


def evaluate(ckpt: Checkpoint | Model, ds: Dataset, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    if not len(ds):
        raise ValueError("cannot evaluate on an empty dataset")
    model = ckpt if isinstance(ckpt, Model) else Model.from_checkpoint(ckpt)
    xyz, joints = predict(model, ds)
    return report_from_predictions(model, ds, xyz, joints, thresholds)


def report_from_predictions(model: Model, ds: Dataset, xyz, joints, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    t = np.asarray(thresholds, dtype=np.float64)
    gt_v = np.stack([s.mesh3d for s in ds.samples])
    gt_j = np.stack([s.joints3d for s in ds.samples])
    je = point_errors(joints, gt_j)
    curve = pck(je, t)
    faces = model.template.topology.faces
    depth = [_scalar(L.depth_loss(s.depth.astype(np.float64), render_depth(v, faces, ds.camera, DEPTH_RES)))
             for s, v in zip(ds.samples, xyz)]
    per = [{"seed": s.seed, "mesh_error": mean_error(v, s.mesh3d), "pose_error": mean_error(j, s.joints3d),
            "depth_loss": d} for s, v, j, d in zip(ds.samples, xyz, joints, depth)]
    return EvalReport(
        mean_error(xyz, gt_v), mean_error(joints, gt_j),
        {float(a): float(b) for a, b in zip(t, curve)}, auc(t, curve),
        float(np.mean(depth)),
        edge_length_deviation(xyz, model.template.rest, model.template.topology.edges),
        per)


# --- ablation -------------------------------------------------------------------------------

ABLATION_TERMS = {"normal": "w_n", "edge": "w_e", "laplacian": "w_l", "pose": "w_J"}


def loss_ablation(ds: Dataset, cfg: TrainConfig, eval_ds: Dataset | None = None,
                  thresholds=DEFAULT_THRESHOLDS) -> dict:
    """Train once per removed mesh-loss term plus the full objective and evaluate each.

    Phases A and B do not depend on the removed terms, so they run once.
    """
    eval_ds = eval_ds or ds
    model, log, phases, _, reason = train_phases_ab(ds, cfg)
    if reason:
        raise TrainingAborted(reason)
    rows = {}
    for name, key in [("full", None)] + list(ABLATION_TERMS.items()):
        c = cfg if key is None else cfg.replace(**{key: 0.0})
        res = train_phase_c(model, ds, c, log, phases)
        if res.aborted:
            raise TrainingAborted(res.aborted)
        rep = evaluate(res.checkpoint, eval_ds, thresholds)
        rows[name] = {"mesh_error": rep.mesh_error, "pose_error": rep.pose_error, "auc": rep.auc}
    return rows
