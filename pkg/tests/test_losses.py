import numpy as np
import pytest

from meshgcn import autodiff as ad
from meshgcn import losses as L
from meshgcn.mesh import MeshTopology


def val(t):
    return float(t.data)


def test_weights_validation_and_weak_defaults():
    with pytest.raises(ValueError):
        L.LossWeights(v=-1.0)
    w = L.LossWeights.weakly(with_pose=True)
    assert (w.H, w.D, w.pM, w.J) == (0.1, 0.1, 1.0, 10.0)
    assert L.LossWeights.weakly().J == 0.0


def test_vertex_loss_by_hand(tetra):
    gt = np.zeros((4, 3))
    est = gt.copy()
    est[0] = [1.0, 2.0, 2.0]
    assert val(L.vertex_loss(L.MeshTruth(gt, None, tetra), est)) == 9.0


def test_normal_loss_of_lifted_vertex():
    # unit square in the xy-plane, centre lifted by h: every edge touching the
    # centre tilts by h against a vertical normal, four such edges per face pair
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0.5, 0.5, 0]], dtype=float)
    topo = MeshTopology(5, np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]))
    est = V.copy()
    est[4, 2] = 0.3
    # each face has two edges touching the centre, each projecting to 0.3
    assert val(L.normal_loss(L.MeshTruth(V, None, topo), est)) == pytest.approx(8 * 0.09)


def test_edge_loss_by_hand():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    topo = MeshTopology(3, np.array([[0, 1, 2]]))
    est = V * 2
    # squared lengths 1, 2, 1 become 4, 8, 4
    assert val(L.edge_loss(L.MeshTruth(V, None, topo), est)) == 9 + 36 + 9


def test_laplacian_loss_constant_offset_is_free(tetra):
    gt = np.random.default_rng(0).standard_normal((4, 3))
    assert val(L.laplacian_loss(L.MeshTruth(gt, None, tetra), gt + 5.0)) == pytest.approx(0, abs=1e-20)


def test_laplacian_isolated_vertex_uses_zero_mean():
    topo = MeshTopology(4, np.array([[0, 1, 2]]))
    gt = np.zeros((4, 3))
    est = gt.copy()
    est[3] = [1, 0, 0]
    assert val(L.laplacian_loss(L.MeshTruth(gt, None, topo), est)) == 1.0


def test_degenerate_faces_are_counted():
    V = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    t = L.MeshTruth(V, None, MeshTopology(3, np.array([[0, 1, 2]])))
    assert t.degenerate_faces == 1 and not t.normals.any()


def test_shape_mismatch_raises(tetra):
    with pytest.raises(ValueError):
        L.vertex_loss(L.MeshTruth(np.zeros((4, 3)), None, tetra), np.zeros((3, 3)))


def test_batch_is_averaged(tetra):
    rng = np.random.default_rng(1)
    gt, est = rng.standard_normal((2, 4, 3)), rng.standard_normal((2, 4, 3))
    per = [val(L.edge_loss(L.MeshTruth(gt[i], None, tetra), est[i])) for i in range(2)]
    assert val(L.edge_loss(L.MeshTruth(gt, None, tetra), est)) == pytest.approx(np.mean(per))


def test_depth_loss_masks_background():
    ref = np.ones((4, 4))
    ref[0, 0] = 0.5
    rend = np.ones((4, 4))
    rend[0, 1] = 0.25
    # union mask = 2 pixels; smooth-L1 of 0.5 and 0.75
    expected = (0.5 * 0.25 + 0.5 * 0.75 ** 2) / 2
    assert val(L.depth_loss(ref, rend)) == pytest.approx(expected)
    assert val(L.depth_loss(np.ones((3, 3)), np.ones((3, 3)))) == 0.0


def test_zero_weight_terms_are_skipped():
    t = ad.Tensor(np.array(np.nan))
    assert val(L.fully_loss(ad.Tensor(np.array(2.0)), t, None, L.LossWeights(M=0.0))) == 1.0


def test_pseudo_mesh_loss_ignores_translation(tetra):
    rng = np.random.default_rng(2)
    gt = rng.standard_normal((4, 3))
    est = rng.standard_normal((4, 3))
    t = L.MeshTruth(gt, None, tetra)
    assert val(L.pseudo_mesh_loss(t, est)) == pytest.approx(val(L.pseudo_mesh_loss(t, est + [1, 2, 3])))
