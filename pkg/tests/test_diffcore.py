import math

import numpy as np
import pytest

from nodegae import diffcore as dc
from nodegae.errors import ContractError, DimensionError

from fdcheck import assert_grads_close, finite_diff_grads, nudge_from_kinks

SEEDS = range(10)


def scalarize(out, rng):
    """Project an op output to a scalar with a fixed random linear functional."""
    r = dc.constant(rng.standard_normal((out.size, 1)))
    flat = dc.reshape(out, (1, out.size))
    return dc.matmul(flat, r)


# ---------------------------------------------------------------------------
# Forward examples
# ---------------------------------------------------------------------------

def test_matmul_identity():
    a = dc.constant([[1.0, 2.0], [3.0, 4.0]])
    eye = dc.constant(np.eye(2))
    np.testing.assert_array_equal(dc.matmul(a, eye).data, a.data)


def test_softmax_uniform_on_equal_logits():
    out = dc.softmax_lastdim(dc.constant([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_cross_entropy_uniform_logits_is_log_vocab():
    vocab = 2048
    logits = dc.constant(np.zeros((5, vocab)))
    loss = dc.cross_entropy_logits(logits, np.array([7, 0, 100, 2047, 13]))
    assert abs(loss.item() - math.log(vocab)) < 1e-9


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    out = dc.softmax_lastdim(dc.constant(rng.standard_normal((8, 11)) * 5))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(8), rtol=0, atol=1e-9)


def test_layernorm_centers_and_scales():
    rng = np.random.default_rng(1)
    out = dc.layernorm_lastdim(dc.constant(rng.standard_normal((6, 16)) * 3 + 2))
    mu = out.data.mean(axis=-1)
    var = out.data.var(axis=-1)
    assert np.abs(mu).max() < 1e-7
    assert np.abs(var - 1.0).max() < 1e-6


def test_shape_error_names_op_and_shapes():
    with pytest.raises(DimensionError) as err:
        dc.matmul(dc.constant(np.zeros((2, 3))), dc.constant(np.zeros((2, 3))))
    msg = str(err.value)
    assert "matmul" in msg and "(2, 3)" in msg


def test_forward_op_rejects_unknown_kind():
    with pytest.raises(ContractError):
        dc.forward_op("conv2d", [dc.constant(np.zeros((2, 2)))])


# ---------------------------------------------------------------------------
# Backward basics
# ---------------------------------------------------------------------------

def test_quadratic_gradient():
    w = dc.parameter([1.0, 2.0, 3.0])
    sq = dc.mul(w, w)
    loss = dc.mul(dc.mean_lastaxis(sq), dc.constant(3.0))  # sum(w*w)
    loss = dc.reshape(loss, (1, 1))
    dc.backward(dc.reshape(loss, ()))
    np.testing.assert_allclose(w.grad, [2.0, 4.0, 6.0], rtol=0, atol=1e-12)


def test_relu_gate_gradient():
    w = dc.parameter([-1.0, 1.0])
    loss = dc.mean_lastaxis(dc.relu(w))
    dc.backward(loss)
    np.testing.assert_array_equal(w.grad, [0.0, 0.5])


def test_backward_requires_scalar():
    w = dc.parameter([1.0, 2.0])
    with pytest.raises(ContractError):
        dc.backward(dc.relu(w))


def test_backward_twice_doubles_grads():
    w = dc.parameter([-1.0, 0.5, 2.0])
    loss = dc.mean_lastaxis(dc.mul(dc.relu(w), w))
    dc.backward(loss)
    once = w.grad.copy()
    dc.backward(loss)
    np.testing.assert_array_equal(w.grad, 2.0 * once)


def test_grad_accumulates_across_uses():
    w = dc.parameter([2.0])
    # w used twice: loss = w*w -> dloss/dw = 2w
    loss = dc.mean_lastaxis(dc.mul(w, w))
    dc.backward(loss)
    np.testing.assert_allclose(w.grad, [4.0], rtol=0, atol=1e-15)


def test_intermediate_tensors_receive_grads():
    w = dc.parameter([1.0, -2.0])
    mid = dc.relu(w)
    loss = dc.mean_lastaxis(mid)
    dc.backward(loss)
    assert mid.grad is not None
    np.testing.assert_array_equal(mid.grad, [0.5, 0.5])


def test_forward_is_deterministic():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 4))
    w = rng.standard_normal((4, 4))
    a = dc.matmul(dc.gelu(dc.constant(x)), dc.constant(w)).data
    b = dc.matmul(dc.gelu(dc.constant(x)), dc.constant(w)).data
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# Finite-difference gradient suite (one entry per op kind)
# ---------------------------------------------------------------------------

def make_op_cases(rng):
    """(name, input arrays, builder) triples; builder maps DiffTensors -> op output."""
    sn = rng.standard_normal
    ids = np.array([0, 2, 2, 5, 1])
    targets = np.array([1, 0, 3, 0])
    targets_masked = np.array([1, 0, 3, 0, 0])
    return [
        ("matmul", [sn((3, 4)), sn((4, 5))], lambda a, b: dc.matmul(a, b)),
        ("matmul_batched", [sn((2, 3, 4)), sn((2, 4, 5))], lambda a, b: dc.matmul(a, b)),
        ("matmul_broadcast", [sn((2, 3, 4)), sn((4, 5))], lambda a, b: dc.matmul(a, b)),
        ("add", [sn((3, 4)), sn((3, 4))], lambda a, b: dc.add(a, b)),
        ("add_broadcast", [sn((3, 4)), sn(4)], lambda a, b: dc.add(a, b)),
        ("mul", [sn((3, 4)), sn((3, 4))], lambda a, b: dc.mul(a, b)),
        ("mul_broadcast", [sn((3, 1)), sn((1, 4))], lambda a, b: dc.mul(a, b)),
        ("relu", [nudge_from_kinks(sn((3, 4)))], lambda x: dc.relu(x)),
        ("gelu", [sn((3, 4))], lambda x: dc.gelu(x)),
        ("softmax_lastdim", [sn((3, 5))], lambda x: dc.softmax_lastdim(x)),
        ("layernorm_lastdim", [sn((3, 6)) * 2 + 1], lambda x: dc.layernorm_lastdim(x)),
        ("embedding_lookup", [sn((6, 4))], lambda t: dc.embedding_lookup(t, ids)),
        ("mean_lastaxis", [sn((3, 5))], lambda x: dc.mean_lastaxis(x)),
        ("reshape", [sn((3, 4))], lambda x: dc.reshape(x, (2, 6))),
        ("concat", [sn((2, 3)), sn((2, 3))], lambda a, b: dc.concat([a, b], axis=1)),
        ("transpose_last2", [sn((2, 3, 4))], lambda x: dc.transpose_last2(x)),
        ("transpose", [sn((2, 3, 4))], lambda x: dc.transpose(x, (2, 0, 1))),
        ("l2_normalize_lastdim", [sn((3, 4)) + 0.5], lambda x: dc.l2_normalize_lastdim(x)),
        ("cross_entropy_logits", [sn((4, 6))],
         lambda x: dc.reshape(dc.cross_entropy_logits(x, targets), (1,))),
        ("cross_entropy_masked", [sn((5, 6))],
         lambda x: dc.reshape(
             dc.cross_entropy_logits(x, targets_masked, ignore_index=0, reduction="sum"),
             (1,))),
    ]


@pytest.mark.parametrize("seed", SEEDS)
def test_op_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    proj_rng = np.random.default_rng(900 + seed)
    for name, arrays, build in make_op_cases(rng):
        proj_seed = int(proj_rng.integers(1 << 31))

        def loss_value(arrs):
            tensors = [dc.constant(a) for a in arrs]
            out = build(*tensors)
            return scalarize(out, np.random.default_rng(proj_seed)).item()

        params = [dc.parameter(a.copy()) for a in arrays]
        out = build(*params)
        loss = scalarize(out, np.random.default_rng(proj_seed))
        dc.backward(dc.reshape(loss, ()))
        numeric = finite_diff_grads(loss_value, [a.copy() for a in arrays])
        for p, n in zip(params, numeric):
            assert_grads_close(p.grad, n, rtol=1e-4, context=f"{name} seed={seed}")


def test_forward_op_dispatch_covers_every_kind():
    rng = np.random.default_rng(5)
    x = dc.constant(rng.standard_normal((2, 4)))
    y = dc.constant(rng.standard_normal((2, 4)))
    w = dc.constant(rng.standard_normal((4, 4)))
    calls = {
        "matmul": ([x, w], {}),
        "add": ([x, y], {}),
        "mul": ([x, y], {}),
        "relu": ([x], {}),
        "gelu": ([x], {}),
        "softmax_lastdim": ([x], {}),
        "layernorm_lastdim": ([x], {}),
        "embedding_lookup": ([w], {"ids": np.array([1, 3])}),
        "mean_lastaxis": ([x], {}),
        "reshape": ([x], {"shape": (4, 2)}),
        "concat": ([x, y], {"axis": 0}),
        "transpose_last2": ([x], {}),
        "cross_entropy_logits": ([x], {"targets": np.array([0, 3])}),
    }
    assert set(calls) == set(dc.OP_KINDS)
    for kind, (inputs, kwargs) in calls.items():
        out = dc.forward_op(kind, inputs, **kwargs)
        assert np.all(np.isfinite(out.data))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params_unchanged():
    p = dc.parameter([1.0, -2.0, 3.0])
    state = dc.AdamState.for_params([p], base_lr=0.1, clip_norm=None)
    p.grad = np.zeros(3)
    dc.adam_step([p], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])
    assert state.step_count == 1
    assert p.grad is None


def test_adam_warmup_effective_lr():
    p = dc.parameter([1.0])
    state = dc.AdamState.for_params([p], base_lr=1e-4, warmup_steps=10000, clip_norm=None)
    p.grad = np.array([1.0])
    dc.adam_step([p], state)
    assert state.step_count == 1
    assert state.effective_lr == pytest.approx(1e-4 * 1e-4, rel=0, abs=0)


def test_adam_single_step_matches_hand_computation():
    # One step, constant grad 1, lr 0.1: m_hat = 1, v_hat = 1,
    # so the update is exactly lr / (1 + eps).
    p = dc.parameter([1.0])
    state = dc.AdamState.for_params([p], base_lr=0.1, clip_norm=None)
    p.grad = np.array([1.0])
    dc.adam_step([p], state)
    expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8))
    assert p.data[0] == pytest.approx(expected, rel=0, abs=1e-16)


def test_adam_missing_grad_raises():
    p = dc.parameter([1.0])
    state = dc.AdamState.for_params([p], base_lr=0.1)
    with pytest.raises(ContractError):
        dc.adam_step([p], state)


def test_adam_global_norm_clip_scales_gradients():
    p = dc.parameter(np.zeros(4))
    q = dc.parameter(np.zeros(9))
    state = dc.AdamState.for_params([p, q], base_lr=0.1, clip_norm=1.0)
    p.grad = np.full(4, 3.0)
    q.grad = np.full(9, 4.0)
    norm = math.sqrt(4 * 9.0 + 9 * 16.0)
    dc.adam_step([p, q], state)
    # After one step the first moment holds (1 - beta1) * clipped grad.
    np.testing.assert_allclose(state.first_moment[0], 0.1 * 3.0 / norm * np.ones(4),
                               rtol=0, atol=1e-15)


def test_adam_warmup_ramp_is_linear():
    p = dc.parameter([0.0])
    state = dc.AdamState.for_params([p], base_lr=1.0, warmup_steps=4, clip_norm=None)
    seen = []
    for _ in range(6):
        p.grad = np.array([1.0])
        dc.adam_step([p], state)
        seen.append(state.effective_lr)
    assert seen == [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_is_bitwise(tmp_path):
    rng = np.random.default_rng(3)
    tensors = {
        "enc.w": rng.standard_normal((7, 5)),
        "dec.b": rng.standard_normal(11) * 1e-12,
        "scalar": np.array(math.pi),
    }
    meta = {"step_count": 42, "d_enc": 8}
    path = tmp_path / "model.npz"
    dc.save_checkpoint(path, tensors, meta)
    loaded, got_meta = dc.load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for name, arr in tensors.items():
        assert loaded[name].dtype == np.float64
        np.testing.assert_array_equal(loaded[name], np.asarray(arr, dtype=np.float64))
    assert got_meta["step_count"] == 42
    assert got_meta["d_enc"] == 8
    assert got_meta["format_version"] == dc.CHECKPOINT_FORMAT_VERSION
