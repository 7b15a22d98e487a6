import json

import numpy as np
import pytest
import scipy.sparse as sp

from meshgcn import autodiff as ad
from meshgcn.coarsening import contract, graclus_coarsen, graclus_match, pool_average, upsample

from conftest import random_graph


def cycle(n):
    W = np.zeros((n, n))
    for i in range(n):
        W[i, (i + 1) % n] = W[(i + 1) % n, i] = 1
    return W


def test_four_cycle_matching():
    np.testing.assert_array_equal(graclus_match(sp.csr_matrix(cycle(4))), [0, 0, 1, 1])


def test_contract_has_no_self_loops_and_is_binary():
    W = contract(sp.csr_matrix(cycle(6)), np.array([0, 0, 1, 1, 2, 2]))
    A = W.toarray()
    assert not np.diag(A).any() and set(np.unique(A)) <= {0.0, 1.0}
    np.testing.assert_array_equal(A, cycle(3))


def test_isolated_vertices_get_fake_partners():
    h = graclus_coarsen(np.zeros((3, 3)), 1)
    np.testing.assert_array_equal(h.levels[0].perm, [0, -1, 1, -1, 2, -1])
    np.testing.assert_array_equal(h.real_children(0), [1, 1, 1])


def test_sphere_hierarchy_sizes(hierarchy):
    # frozen: 1280 grid vertices coarsen to 81 real vertices after four levels
    assert hierarchy.sizes() == [1296, 648, 324, 162, 81]
    assert [lv.n_real for lv in hierarchy.levels] == [1280, 640, 323, 162, 81]


def test_slot_round_trip(hierarchy):
    x = np.random.default_rng(0).standard_normal((2, 1280, 3))
    slots = hierarchy.to_slots(x)
    assert not slots[:, hierarchy.levels[0].fake_mask].any()
    np.testing.assert_array_equal(hierarchy.from_slots(slots), x)
    t = hierarchy.from_slots(hierarchy.to_slots(ad.Tensor(x)))
    np.testing.assert_array_equal(t.data, x)


def test_pool_ignores_fake_children():
    h = graclus_coarsen(np.zeros((3, 3)), 1)
    x = np.array([[1.0], [99.0], [2.0], [99.0], [3.0], [99.0]])
    x[h.levels[0].fake_mask] = 0.0
    np.testing.assert_array_equal(pool_average(x, h, 0), [[1.0], [2.0], [3.0]])


def test_level_mismatch_is_rejected(hierarchy):
    with pytest.raises(ValueError):
        pool_average(np.zeros((10, 1)), hierarchy, 0)


def test_too_many_levels():
    with pytest.raises(ValueError):
        graclus_coarsen(cycle(4), 5)
    with pytest.raises(ValueError):
        graclus_coarsen(cycle(4), 0)


def test_hierarchy_json(tmp_path, hierarchy):
    hierarchy.save_json(tmp_path / "h.json")
    d = json.loads((tmp_path / "h.json").read_text())
    assert [lv["size"] for lv in d["levels"]] == hierarchy.sizes()
    assert d["levels"][0]["parent"][:4] == [0, 0, 1, 1]


def test_pool_and_upsample_gradients():
    rng = np.random.default_rng(3)
    h = graclus_coarsen(random_graph(rng, 11), 2)
    n0, n1 = h.levels[0].size, h.levels[1].size
    w0, w1 = rng.standard_normal((n1, 2)), rng.standard_normal((n0, 2))
    assert ad.gradcheck(lambda p: ad.sum(ad.mul(pool_average(p[0], h, 0), w0)), [rng.standard_normal((n0, 2))]).ok
    assert ad.gradcheck(lambda p: ad.sum(ad.mul(upsample(p[0], h, 1), w1)), [rng.standard_normal((n1, 2))]).ok
