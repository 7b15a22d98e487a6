"""Command-line entry point: ``meshgcn <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import Checkpoint
from .gradsuite import run_gradient_suite
from .mesh import read_obj
from .metrics import parse_thresholds
from .render import load_camera, render_depth, write_dpth
from .synth import read_dataset, write_dataset
from .train import TrainConfig, TrainingAborted, evaluate, finetune_weakly, load_config, loss_ablation, train_fully


def _write_report(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _config(path) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _dataset(path):
    ds = read_dataset(path)
    for index, reason in ds.skipped:
        print(f"skipped sample {index}: {reason}", file=sys.stderr)
    return ds


def cmd_gen_data(a) -> int:
    write_dataset(a.out, a.count, a.seed, a.template, a.vertices)
    return 0


def cmd_train(a) -> int:
    res = train_fully(_dataset(a.data), _config(a.config), out=a.out)
    if res.aborted:
        print(f"training aborted: {res.aborted}", file=sys.stderr)
        return 2
    return 0


def cmd_finetune(a) -> int:
    cfg = _config(a.config)
    res = finetune_weakly(_dataset(a.data), Checkpoint.load(a.ckpt), cfg, with_pose=a.with_pose, out=a.out)
    if res.aborted:
        print(f"fine-tuning aborted: {res.aborted}", file=sys.stderr)
        return 2
    return 0


def cmd_eval(a) -> int:
    rep = evaluate(Checkpoint.load(a.ckpt), _dataset(a.data), parse_thresholds(a.thresholds))
    _write_report(a.report, rep.to_json())
    return 0


def cmd_render(a) -> int:
    verts, topo = read_obj(a.mesh)
    cam = load_camera(a.camera)
    d = render_depth(verts, topo.faces, cam, (a.height, a.width), a.near, a.far).data
    write_dpth(a.out, d)
    return 0


def cmd_gradcheck(a) -> int:
    rep = run_gradient_suite(a.seed)
    _write_report(a.report, rep)
    return 0 if rep["ok"] else 1


def cmd_ablate(a) -> int:
    rows = loss_ablation(_dataset(a.data), _config(a.config), thresholds=parse_thresholds(a.thresholds))
    _write_report(a.report, {"rows": rows})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshgcn", description="Graph-CNN mesh regression toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--template", default="sphere-grid", choices=["sphere-grid", "capsule"])
    g.add_argument("--vertices", type=int, default=1280)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="fully supervised training")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    f = sub.add_parser("finetune-weak", help="weakly supervised fine-tuning")
    f.add_argument("--data", required=True)
    f.add_argument("--ckpt", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--config")
    f.add_argument("--with-pose", action="store_true")
    f.set_defaults(fn=cmd_finetune)

    e = sub.add_parser("eval", help="mesh/pose error, PCK and AUC")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--thresholds", default="20:50:5")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("render-depth", help="render an OBJ mesh to a DPTH depth map")
    r.add_argument("--mesh", required=True)
    r.add_argument("--camera", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--width", type=int, default=32)
    r.add_argument("--height", type=int, default=32)
    r.add_argument("--near", type=float, default=100.0)
    r.add_argument("--far", type=float, default=2000.0)
    r.set_defaults(fn=cmd_render)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--report", required=True)
    c.set_defaults(fn=cmd_gradcheck)

    b = sub.add_parser("ablate", help="loss-term ablation table")
    b.add_argument("--data", required=True)
    b.add_argument("--config")
    b.add_argument("--report", required=True)
    b.add_argument("--thresholds", default="20:50:5")
    b.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
