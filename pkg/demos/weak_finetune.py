"""Pretrain on synthetic samples, then fine-tune on held-out samples from
depth maps alone, with and without the pseudo-ground-truth mesh loss.

Run: python3 demos/weak_finetune.py [scale]
scale 1.0 is the acceptance-test protocol (about 10 minutes on one core);
smaller values shorten every phase proportionally.
"""
import sys

from meshgcn import synth, train


def main(scale):
    steps = lambda n: max(1, int(round(n * scale)))
    ds = synth.generate_dataset(96, 1000)
    pre, held = ds.subset(0, 64), ds.subset(64, 96)
    cfg = train.TrainConfig(batch_size=16, steps_heatmap=steps(300), steps_pose=1, steps_mesh=steps(400),
                            steps_weak_heatmap=0, steps_weak=steps(150), weak_H=0.0)
    print("pretraining on 64 samples ...")
    ck = train.train_fully(pre, cfg).checkpoint
    before = train.evaluate(ck, held)
    print(f"held-out before: depth loss {before.depth_loss:.4f}, mesh error {before.mesh_error:.1f}, "
          f"edge deviation {before.edge_length_deviation:.3f}")
    pseudo = train.make_pseudo_gt(held, ck)
    for label, pm in (("with pseudo-mesh loss", cfg.weak_pM), ("depth loss only", 0.0)):
        rep = train.evaluate(train.finetune_weakly(held, ck, cfg.replace(weak_pM=pm), pseudo=pseudo).checkpoint, held)
        print(f"{label}: depth loss {rep.depth_loss:.4f} ({rep.depth_loss / before.depth_loss - 1:+.1%}), "
              f"mesh error {rep.mesh_error:.1f}, edge deviation {rep.edge_length_deviation:.3f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.1)
