"""Generate a few synthetic samples, train briefly, and evaluate.

Run: python3 demos/quickstart.py [workdir]
"""
import sys
import tempfile
from pathlib import Path

from meshgcn import synth, train


def main(workdir):
    out = Path(workdir)
    data = synth.write_dataset(out / "data", count=8, seed0=0)
    ds = synth.read_dataset(data)
    print(f"{len(ds)} samples, template with {ds.template.n_vertices} vertices")

    cfg = train.TrainConfig(batch_size=4, steps_heatmap=10, steps_pose=5, steps_mesh=20)
    res = train.train_fully(ds, cfg, out=out / "ckpt")
    for phase in ("A", "B", "C"):
        rows = [r for r in res.log if r["phase"] == phase]
        if rows:
            print(f"phase {phase}: loss {rows[0]['loss']:.4g} -> {rows[-1]['loss']:.4g} over {len(rows)} steps")

    rep = train.evaluate(res.checkpoint, ds)
    print(f"mesh error {rep.mesh_error:.1f}, pose error {rep.pose_error:.1f}, AUC(20-50) {rep.auc:.3f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="meshgcn-"))
