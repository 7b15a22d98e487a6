import gc

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from meshgcn import autodiff as ad


def test_square_gradient():
    tape = ad.Tape()
    x = tape.param(np.array(3.0))
    g = tape.backward(ad.square(x))
    assert g[x] == 6.0


def test_backward_rejects_non_scalar():
    tape = ad.Tape()
    x = tape.param(np.ones(3))
    with pytest.raises(ad.ShapeError):
        tape.backward(ad.square(x))


def test_mixing_tapes_is_an_error():
    a, b = ad.Tape(), ad.Tape()
    x, y = a.param(np.ones(2)), b.param(np.ones(2))
    with pytest.raises(ValueError):
        ad.add(x, y)


def test_no_broadcasting():
    tape = ad.Tape()
    with pytest.raises(ad.ShapeError):
        ad.add(tape.param(np.ones((2, 3))), np.ones(3))


def test_scalar_times_tensor_is_allowed():
    tape = ad.Tape()
    x = tape.param(np.arange(3.0))
    c = tape.param(np.array(2.0))
    y = ad.sum(ad.mul(c, x))
    g = tape.backward(y)
    assert g[c] == 3.0
    np.testing.assert_array_equal(g[x], [2.0, 2.0, 2.0])


def test_relu_subgradient_at_zero_is_zero():
    tape = ad.Tape()
    x = tape.param(np.array([-1.0, 0.0, 2.0]))
    g = tape.backward(ad.sum(ad.relu(x)))
    np.testing.assert_array_equal(g[x], [0.0, 0.0, 1.0])


def test_smooth_l1_values_and_slopes():
    x = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
    tape = ad.Tape()
    t = tape.param(x)
    y = ad.smooth_l1(t)
    np.testing.assert_allclose(y.data, [2.5, 0.125, 0.0, 0.125, 2.5])
    g = tape.backward(ad.sum(y))
    np.testing.assert_allclose(g[t], [-1.0, -0.5, 0.0, 0.5, 1.0])


def test_gather_minus_one_gives_zero_row():
    a = np.arange(6.0).reshape(3, 2)
    tape = ad.Tape()
    t = tape.param(a)
    out = ad.gather(t, np.array([2, -1, 0]))
    np.testing.assert_array_equal(out.data, [[4, 5], [0, 0], [0, 1]])
    g = tape.backward(ad.sum(out))
    np.testing.assert_array_equal(g[t], [[1, 1], [0, 0], [1, 1]])


def test_spmm_batched_matches_dense():
    rng = np.random.default_rng(1)
    S = sp.random(5, 4, density=0.5, random_state=2, format="csr")
    x = rng.standard_normal((3, 4, 2))
    out = ad.spmm(S, x).data
    np.testing.assert_allclose(out, np.einsum("ij,bjf->bif", S.toarray(), x))


def test_untaped_inputs_give_untaped_result():
    y = ad.add(np.ones(2), np.ones(2))
    assert y.tape is None
    np.testing.assert_array_equal(y.data, [2.0, 2.0])


def test_backward_leaves_tape_unchanged():
    tape = ad.Tape()
    x = tape.param(np.array([1.0, 2.0]))
    y = ad.sum(ad.square(x))
    n = len(tape.nodes)
    g1 = tape.backward(y)[x]
    g2 = tape.backward(y)[x]
    assert len(tape.nodes) == n
    np.testing.assert_array_equal(g1, g2)


def test_replay_recomputes_with_new_leaf_values():
    tape = ad.Tape()
    x = tape.param(np.array([1.0, 2.0]))
    ad.sum(ad.square(x))
    outs = tape.replay({x: np.array([3.0, 4.0])})
    assert outs[-1] == 25.0


def test_dropping_the_tape_frees_recorded_values():
    tape = ad.Tape()
    x = tape.param(np.ones(10))
    y = ad.square(x)
    assert y.node is not None
    del tape
    gc.disable()
    try:
        assert y.node is None
    finally:
        gc.enable()


def test_gradcheck_flags_a_wrong_vjp():
    ad.register("bad_square", lambda a: a * a, lambda g, out, ops, needs: [g * ops[0]])
    rep = ad.gradcheck(lambda p: ad.sum(ad.record("bad_square", [p[0]])), [np.array([1.0, 2.0])])
    assert not rep.ok and rep.failed == [0]


def test_gradcheck_rejects_non_finite_forward():
    with pytest.raises(FloatingPointError):
        ad.gradcheck(lambda p: ad.sum(ad.sqrt(p[0])), [np.array([-1.0])])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_matmul_chain_gradients(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    w = rng.standard_normal((m, n))
    rep = ad.gradcheck(lambda p: ad.sum(ad.mul(ad.matmul(p[0], p[1]), w)), [a, b])
    assert rep.ok, rep


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_reshape_transpose_concat_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 1))
    w = rng.standard_normal((5, 3, 2))

    def f(p):
        c = ad.concat([p[0], p[1]], axis=-1)
        return ad.sum(ad.mul(ad.transpose(c, (2, 1, 0)), w))
    assert ad.gradcheck(f, [a, b]).ok


def test_scatter_add_gradient():
    rng = np.random.default_rng(0)
    idx = np.array([0, 2, 2, 1])
    w = rng.standard_normal((3, 2))
    rep = ad.gradcheck(lambda p: ad.sum(ad.mul(ad.scatter_add(p[0], idx, 3), w)), [rng.standard_normal((4, 2))])
    assert rep.ok
