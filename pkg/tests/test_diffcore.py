import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncdfield import diffcore as dc
from ncdfield.diffcore import container

from oracles import central_diff, rel_err


@pytest.fixture(autouse=True)
def float64():
    with dc.precision(64):
        yield


def test_relu_forward():
    out = dc.relu(dc.Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0, 0, 2])


def test_softmax_uniform():
    out = dc.softmax(dc.Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_matmul_identity():
    x = np.random.default_rng(0).normal(size=(2, 5))
    out = dc.matmul(dc.Tensor(np.eye(2)), dc.Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="matmul"):
        dc.matmul(dc.Tensor(np.ones((2, 3))), dc.Tensor(np.ones((2, 3))))


def test_add_shape_mismatch():
    with pytest.raises(ValueError, match="add"):
        dc.add(dc.Tensor(np.ones(3)), dc.Tensor(np.ones(4)))


def test_non_finite_is_error():
    with pytest.raises(FloatingPointError):
        dc.exp(dc.Tensor([1000.0]))


def test_sum_of_squares_grad():
    x = dc.Tensor([1.0, 2.0], requires_grad=True)
    g = dc.gradients((x * x).sum(), {"x": x})
    np.testing.assert_allclose(g["x"], [2, 4])


def test_constant_grad_is_zero():
    x = dc.Tensor([1.0, 2.0], requires_grad=True)
    y = dc.Tensor([3.0, 4.0], requires_grad=True)
    g = dc.gradients((y * 2.0).sum(), {"x": x, "y": y})
    np.testing.assert_array_equal(g["x"], [0, 0])


def test_backward_requires_scalar():
    x = dc.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        dc.backward(x * 2.0)


def test_reused_node_accumulates():
    x = dc.Tensor([3.0], requires_grad=True)
    y = x * x
    g = dc.gradients((y + y * x).sum(), {"x": x})
    np.testing.assert_allclose(g["x"], [2 * 3 + 3 * 9])


PRIMITIVES = {
    "add": lambda a, b: dc.add(a, b),
    "sub": lambda a, b: dc.sub(a, b),
    "mul": lambda a, b: dc.mul(a, b),
    "div": lambda a, b: dc.div(a, dc.add(dc.mul(b, b), 1.0)),
    "matmul": lambda a, b: dc.matmul(a, dc.reshape(b, (3, 4))),
    "relu": lambda a, b: dc.relu(a),
    "exp": lambda a, b: dc.exp(a),
    "log": lambda a, b: dc.log(dc.add(dc.mul(a, a), 0.1)),
    "sigmoid": lambda a, b: dc.sigmoid(a),
    "softplus": lambda a, b: dc.softplus(a),
    "softmax": lambda a, b: dc.softmax(a, axis=-1),
    "log_softmax": lambda a, b: dc.log_softmax(a, axis=-1),
    "sum_axis": lambda a, b: dc.tsum(a, axis=0),
    "mean": lambda a, b: dc.mean(a, axis=1, keepdims=True),
    "broadcast": lambda a, b: dc.mul(dc.broadcast_to(dc.getitem(a, (slice(None), slice(0, 1))), (4, 3)), b),
    "concat": lambda a, b: dc.concat([a, dc.reshape(b, (4, 3))], axis=1),
    "getitem": lambda a, b: dc.getitem(a, (slice(1, 3), slice(None))),
    "cumsum": lambda a, b: dc.cumsum(a, axis=1),
    "cumsum_excl": lambda a, b: dc.cumsum(a, axis=1, exclusive=True),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradcheck(name):
    op = PRIMITIVES[name]
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(4, 3))
        b0 = rng.normal(size=(12,)) if name in ("matmul", "concat") else rng.normal(size=(4, 3))
        w = rng.normal(size=op(dc.Tensor(a0), dc.Tensor(b0)).shape)

        def loss(a, b):
            return float((op(dc.Tensor(a), dc.Tensor(b)).data * w).sum())

        a, b = dc.Tensor(a0, requires_grad=True), dc.Tensor(b0, requires_grad=True)
        ga = dc.gradients((op(a, b) * w).sum(), {"a": a, "b": b})
        assert rel_err(ga["a"], central_diff(lambda x: loss(x, b0), a0)) <= 1e-4
        assert rel_err(ga["b"], central_diff(lambda x: loss(a0, x), b0)) <= 1e-4


def mlp_loss(params, x):
    h = dc.relu(x @ params["w1"] + params["b1"])
    y = h @ params["w2"] + params["b2"]
    return (y * y).mean()


def random_mlp(seed, hidden=4):
    rng = np.random.default_rng(seed)
    params = {
        "w1": rng.normal(size=(3, hidden)),
        "b1": rng.normal(size=(hidden,)),
        "w2": rng.normal(size=(hidden, 2)),
        "b2": rng.normal(size=(2,)),
    }
    return params, rng.normal(size=(5, 3))


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradcheck(seed):
    raw, x = random_mlp(seed)
    params = {k: dc.Tensor(v, requires_grad=True) for k, v in raw.items()}
    grads = dc.gradients(mlp_loss(params, dc.Tensor(x)), params)
    for k in raw:
        def f(v, k=k):
            p = {kk: dc.Tensor(vv) for kk, vv in raw.items()}
            p[k] = dc.Tensor(v)
            return float(mlp_loss(p, dc.Tensor(x)).data)

        assert rel_err(grads[k], central_diff(f, raw[k])) <= 1e-4, k


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12), st.floats(-100, 100))
@settings(max_examples=200, deadline=None)
def test_softmax_sums_to_one_and_shift_invariant(logits, shift):
    x = np.array(logits)
    p = dc.softmax(dc.Tensor(x)).data
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(dc.softmax(dc.Tensor(x + shift)).data, p, atol=1e-12)


def test_log_softmax_far_from_peak():
    with dc.precision(64):
        x = dc.Tensor([[0.0, 80.0, -80.0]], requires_grad=True)
        out = dc.log_softmax(x)
        np.testing.assert_allclose(out.data, [[-80.0, 0.0, -160.0]])
        (g,) = dc.gradients(dc.tsum(dc.mul(dc.Tensor([[1.0, 0.0, 0.0]]), out)), {"x": x}).values()
    np.testing.assert_allclose(g, [[1.0, -1.0, 0.0]], atol=1e-12)


def test_softmax_large_logits_stable():
    p = dc.softmax(dc.Tensor([1000.0, 1000.0])).data
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_log_clamps():
    out = dc.log(dc.Tensor([0.0, 1.0]))
    assert out.data[0] == pytest.approx(np.log(1e-12))


# Adam

def test_adam_zero_grad_identity():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    before = p["w"].copy()
    state = dc.AdamState(lr=0.1)
    for _ in range(5):
        dc.adam_step(p, {"w": np.zeros(3)}, state)
    np.testing.assert_array_equal(p["w"], before)
    assert state.step == 5


def test_adam_first_step():
    p = {"w": np.array([0.0])}
    state = dc.AdamState(lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8)
    dc.adam_step(p, {"w": np.array([1.0])}, state)
    # m_hat = v_hat = 1, so the step is lr * 1 / (1 + eps)
    assert p["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_monotone_descent():
    p = {"w": np.array([0.5])}
    state = dc.AdamState(lr=0.01)
    trace = [p["w"][0]]
    for _ in range(2):
        dc.adam_step(p, {"w": np.array([-3.0])}, state)
        trace.append(p["w"][0])
    assert trace[0] < trace[1] < trace[2]


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        dc.adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, dc.AdamState())


def test_adam_second_moment_nonnegative():
    rng = np.random.default_rng(3)
    p = {"w": rng.normal(size=10)}
    state = dc.AdamState()
    for _ in range(20):
        dc.adam_step(p, {"w": rng.normal(size=10)}, state)
    assert np.all(state.v["w"] >= 0)


# container

def test_container_roundtrip(tmp_path):
    tensors = {
        "a": np.arange(6, dtype=np.float32).reshape(2, 3),
        "scalar": np.array(2.5, dtype=np.float64),
        "ünï": np.ones((1, 2, 2), dtype=np.float32),
    }
    path = tmp_path / "t.tens"
    dc.save_tensors(path, tensors, meta={"arch": {"width": 8}})
    out, meta = dc.load_tensors(path)
    assert list(out) == list(tensors)
    for k in tensors:
        assert out[k].dtype == tensors[k].dtype
        np.testing.assert_array_equal(out[k], tensors[k])
    assert meta == {"arch": {"width": 8}}


def test_container_layout_header():
    buf = container.dumps({"x": np.array([1.0], dtype=np.float32)})
    assert buf[:8] == b"NCDTENS\x00"
    assert int.from_bytes(buf[8:12], "little") == 1
    # meta "{}" + count + name_len + "x" + width + rank + dim + payload
    assert len(buf) == 8 + 4 + 4 + 2 + 4 + 4 + 1 + 1 + 4 + 8 + 4


def test_container_bad_magic():
    with pytest.raises(container.ContainerError):
        container.loads(b"garbage!" + bytes(20))
