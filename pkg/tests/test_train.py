import numpy as np
import pytest

from meshgcn import synth, train
from meshgcn.checkpoint import Checkpoint
from meshgcn.metrics import auc, edge_length_deviation, mean_error, parse_thresholds, pck
from meshgcn.nets import NetConfig


# --- optimizer ---------------------------------------------------------------

def test_rmsprop_hand_example():
    res = train.rmsprop_step({"p": np.array(1.0)}, {"p": np.array(1.0)}, train.OptimizerState(), 0.1)
    assert res.ok
    assert res.state.accum["p"] == pytest.approx(0.1)
    assert res.params["p"] == pytest.approx(1 - 0.1 / (np.sqrt(0.1) + 1e-8))
    assert res.params["p"] == pytest.approx(0.68377, abs=1e-5)


def test_rmsprop_zero_gradient_and_signs():
    rng = np.random.default_rng(0)
    p = {"a": rng.standard_normal(5)}
    res = train.rmsprop_step(p, {"a": np.zeros(5)}, train.OptimizerState(), 0.1)
    assert np.array_equal(res.params["a"], p["a"])
    g = rng.standard_normal(5)
    res = train.rmsprop_step(p, {"a": g}, train.OptimizerState(), 0.1)
    assert np.all(np.sign(res.params["a"] - p["a"]) == -np.sign(g))


def test_rmsprop_tiny_lr_is_a_no_op():
    p = {"a": np.array([1.0, -2.0])}
    res = train.rmsprop_step(p, {"a": np.array([3.0, 0.5])}, train.OptimizerState(), 1e-300)
    assert np.abs(res.params["a"] - p["a"]).max() <= 1e-15


def test_rmsprop_aborts_on_nan():
    p = {"a": np.ones(2)}
    st = train.OptimizerState()
    res = train.rmsprop_step(p, {"a": np.array([1.0, np.nan])}, st, 0.1)
    assert not res.ok and res.params is p and res.state is st and "non-finite" in res.reason


def test_rmsprop_shape_mismatch():
    with pytest.raises(ValueError):
        train.rmsprop_step({"a": np.ones(2)}, {"a": np.ones(3)}, train.OptimizerState(), 0.1)


# --- configuration -------------------------------------------------------------

def test_config_parsing():
    cfg = train.parse_config("# comment\nbatch_size = 4\nlr_pretrain=0.01\nshuffle = yes\n\ntemplate = capsule\n")
    assert (cfg.batch_size, cfg.lr_pretrain, cfg.shuffle, cfg.template) == (4, 0.01, True, "capsule")


def test_config_rejects_unknown_and_invalid():
    with pytest.raises(ValueError, match="unknown key"):
        train.parse_config("batchsize = 4")
    with pytest.raises(ValueError):
        train.parse_config("batch_size = 0")
    with pytest.raises(ValueError):
        train.parse_config("lr_pretrain = -1")
    with pytest.raises(ValueError):
        train.parse_config("just words")


def test_every_config_key_is_documented():
    assert set(train.CONFIG_DOC) == set(train.TrainConfig().to_dict())


def test_batches_wrap_sequentially():
    assert train.batch_indices(0, 5, 3).tolist() == [0, 1, 2]
    assert train.batch_indices(1, 5, 3).tolist() == [3, 4, 0]
    assert train.batch_indices(2, 2, 8).tolist() == [0, 1]
    a = train.batch_indices(3, 5, 3, shuffle=True, seed=1)
    assert a.tolist() == train.batch_indices(3, 5, 3, shuffle=True, seed=1).tolist()


# --- metrics ----------------------------------------------------------------------

def test_threshold_grid():
    np.testing.assert_array_equal(parse_thresholds("20:50:5"), [20, 25, 30, 35, 40, 45, 50])
    np.testing.assert_array_equal(parse_thresholds("6,4"), [4, 6])


def test_perfect_predictor():
    gt = np.random.default_rng(0).standard_normal((3, 21, 3))
    t = parse_thresholds("20:50:5")
    assert mean_error(gt, gt) == 0.0
    assert np.all(pck(np.zeros(63), t) == 1) and auc(t, pck(np.zeros(63), t)) == 1.0


def test_pck_single_offset_joint():
    err = np.array([5.0])
    np.testing.assert_array_equal(pck(err, [4, 6]), [0, 1])


def test_auc_trapezoid():
    assert auc([0, 1, 2], [0, 1, 1]) == pytest.approx(0.75)


def test_edge_length_deviation_zero_on_template(template):
    assert edge_length_deviation(template.rest, template.rest, template.topology.edges) == 0.0


# --- checkpoints -------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    ck = Checkpoint({"a": np.arange(6.0).reshape(2, 3), "b": np.array(1.5)}, {"seed": 1},
                    {"batch_size": 2}, {"a": np.ones((2, 3))}, {"phase": "C"})
    ck.save(tmp_path / "ck")
    back = Checkpoint.load(tmp_path / "ck")
    assert np.array_equal(back.params["a"], ck.params["a"]) and back.params["b"] == 1.5
    assert np.array_equal(back.optimizer["a"], np.ones((2, 3)))
    assert back.meta == {"phase": "C"} and back.train_config == {"batch_size": 2}
    (tmp_path / "ck" / "params.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ValueError):
        Checkpoint.load(tmp_path / "ck")


# --- training runs (small) -------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_ds():
    return synth.generate_dataset(3, 500)


def quick_cfg(**kw):
    base = dict(batch_size=2, steps_heatmap=2, steps_pose=1, steps_mesh=2, steps_weak_heatmap=1, steps_weak=2)
    base.update(kw)
    return train.TrainConfig(**base)


def test_zero_steps_returns_initialization(tiny_ds):
    cfg = quick_cfg(steps_heatmap=0, steps_pose=0, steps_mesh=0)
    res = train.train_fully(tiny_ds, cfg)
    init = train.Model.create(NetConfig(seed=cfg.seed), tiny_ds.template).params
    assert all(np.array_equal(res.checkpoint.params[k], init[k]) for k in init)


def test_phase_b_fits_pose_exactly(tiny_ds):
    cfg = quick_cfg(steps_heatmap=0, steps_mesh=0, steps_pose=5)
    res = train.train_fully(tiny_ds, cfg)
    b = [r for r in res.log if r["phase"] == "B"]
    assert b and b[-1]["pose"] < 1e-6 and b[-1].get("stopped")


def test_training_logs_checkpoints_and_determinism(tiny_ds, tmp_path):
    cfg = quick_cfg()
    a = train.train_fully(tiny_ds, cfg, out=tmp_path / "a")
    b = train.train_fully(tiny_ds, cfg, out=tmp_path / "b")
    assert set(a.phases) == {"A", "B", "C"}
    assert {r["phase"] for r in a.log} == {"A", "B", "C"}
    c_rows = [r for r in a.log if r["phase"] == "C"]
    assert {"vertex", "normal", "edge", "laplacian", "heatmap", "pose"} <= set(c_rows[0])
    for name in ("manifest.json", "params.bin", "log.jsonl", "phases/C/params.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_divergence_aborts_with_last_good_params(tiny_ds):
    cfg = quick_cfg(steps_heatmap=0, steps_pose=0, steps_mesh=3, lr_pretrain=1e300)
    res = train.train_fully(tiny_ds, cfg)
    assert res.aborted and all(np.all(np.isfinite(v)) for v in res.checkpoint.params.values())


def test_pseudo_gt_and_weak_heatmap_only(tiny_ds):
    ck = train.train_fully(tiny_ds, quick_cfg(steps_mesh=0)).checkpoint
    pseudo = train.make_pseudo_gt(tiny_ds, ck)
    assert sorted(pseudo.meshes) == [0, 1, 2] and not pseudo.skipped
    again = train.make_pseudo_gt(tiny_ds, ck)
    assert all(np.array_equal(pseudo.meshes[i], again.meshes[i]) for i in range(3))
    cfg = quick_cfg(weak_D=0.0, weak_pM=0.0)
    res = train.finetune_weakly(tiny_ds, ck, cfg, pseudo=pseudo)
    for k, v in ck.params.items():
        if k.startswith("dec.") or k.startswith("reg.") or k.startswith("enc.latent"):
            assert np.array_equal(res.checkpoint.params[k], v), k


def test_pseudo_gt_skips_missing_heatmaps(tiny_ds):
    ck = train.train_fully(tiny_ds, quick_cfg(steps_heatmap=0, steps_mesh=0)).checkpoint
    ds = synth.Dataset(tiny_ds.template, tiny_ds.camera, list(tiny_ds.samples))
    broken = synth.sample_from_mesh(ds.template, ds.samples[1].mesh3d, ds.camera, 0)
    broken.heatmaps = None
    ds.samples[1] = broken
    pseudo = train.make_pseudo_gt(ds, ck)
    assert pseudo.skipped == [1] and sorted(pseudo.meshes) == [0, 2]


def test_weak_finetune_with_pose_logs_pose(tiny_ds):
    ck = train.train_fully(tiny_ds, quick_cfg(steps_mesh=0)).checkpoint
    res = train.finetune_weakly(tiny_ds, ck, quick_cfg(), with_pose=True)
    rows = [r for r in res.log if r["phase"] == "weak-B"]
    assert {"depth", "pseudo_mesh", "pose", "heatmap"} <= set(rows[0])


def test_evaluate_report(tiny_ds):
    ck = train.train_fully(tiny_ds, quick_cfg()).checkpoint
    rep = train.evaluate(ck, tiny_ds)
    vals = list(rep.pck.values())
    assert vals == sorted(vals) and 0 <= rep.auc <= 1 and len(rep.samples) == 3
    with pytest.raises(ValueError):
        train.evaluate(ck, synth.Dataset(tiny_ds.template, tiny_ds.camera, []))


def test_perfect_predictions_report(tiny_ds):
    model = train.Model.create(NetConfig(), tiny_ds.template)
    xyz = np.stack([s.mesh3d for s in tiny_ds.samples])
    joints = np.stack([s.joints3d for s in tiny_ds.samples])
    rep = train.report_from_predictions(model, tiny_ds, xyz, joints)
    assert rep.mesh_error == 0 and rep.pose_error == 0 and rep.auc == 1.0 and rep.depth_loss < 1e-12  # float32 storage
    assert all(v == 1.0 for v in rep.pck.values())


def test_ablation_rows(tiny_ds):
    rows = train.loss_ablation(tiny_ds, quick_cfg(steps_mesh=1, w_n=0.0))
    assert set(rows) == {"full", "normal", "edge", "laplacian", "pose"}
    # removing a term whose weight is already zero changes nothing
    assert rows["normal"] == rows["full"]
