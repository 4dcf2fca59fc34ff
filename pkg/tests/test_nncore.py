import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import check
from pidt import nncore as nn
from pidt.errors import ConfigurationError, IntegrityError, ShapeError, UsageError, VersionError
from pidt.nncore import tensor as T

TOL = 1e-4


def leaf(rng, *shape, scale=1.0):
    return nn.parameter(rng.normal(size=shape) * scale)


# dense

def test_dense_identity_and_bias():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(nn.forward_dense(x, np.eye(3), np.zeros(3)).data, x)
    b = np.array([1.0, -2.0])
    assert np.array_equal(nn.forward_dense(np.zeros((4, 3)), np.ones((3, 2)), b).data, np.tile(b, (4, 1)))


def test_dense_matches_naive_loops():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3)), rng.normal(size=3)
    naive = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            acc = 0.0
            for k in range(7):
                acc += x[i, k] * w[k, j]
            naive[i, j] = acc + b[j]
    assert np.max(np.abs(nn.forward_dense(x, w, b).data - naive)) < 1e-12


def test_dense_batched_leading_axes():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    assert np.allclose(nn.forward_dense(x, w).data, x @ w, atol=1e-14)


def test_dense_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.forward_dense(np.zeros((2, 3)), np.zeros((4, 5)))


# attention

def _attn_params(rng, d):
    return [rng.normal(size=(d, d)) / math.sqrt(d) for _ in range(4)]


def test_attention_is_causal():
    rng = np.random.default_rng(2)
    ws = _attn_params(rng, 8)
    x = rng.normal(size=(1, 5, 8))
    y = nn.causal_attention(x, *ws, heads=2).data
    for t in range(5):
        x2 = x.copy()
        x2[:, t:] += rng.normal(size=x2[:, t:].shape)
        y2 = nn.causal_attention(x2, *ws, heads=2).data
        assert np.array_equal(y[:, :t], y2[:, :t])


def test_single_token_attends_to_itself():
    rng = np.random.default_rng(3)
    wq, wk, wv, wo = _attn_params(rng, 4)
    x = rng.normal(size=(2, 1, 4))
    y = nn.causal_attention(x, wq, wk, wv, wo, heads=2).data
    assert np.allclose(y, x @ wv @ wo, atol=1e-14)


def test_two_token_hand_rolled():
    rng = np.random.default_rng(4)
    d, heads = 4, 2
    wq, wk, wv, wo = _attn_params(rng, d)
    x = rng.normal(size=(1, 2, d))
    q, k, v = x[0] @ wq, x[0] @ wk, x[0] @ wv
    out = np.zeros((2, d))
    for h in range(heads):
        sl = slice(2 * h, 2 * h + 2)
        for i in range(2):
            logits = [q[i, sl] @ k[j, sl] / math.sqrt(2) for j in range(i + 1)]
            e = np.exp(np.array(logits) - max(logits))
            p = e / e.sum()
            out[i, sl] = sum(p[j] * v[j, sl] for j in range(i + 1))
    expected = out @ wo
    assert np.max(np.abs(nn.causal_attention(x, wq, wk, wv, wo, heads).data[0] - expected)) < 1e-10


def test_attention_indivisible():
    with pytest.raises(ConfigurationError):
        nn.causal_attention(np.zeros((1, 2, 6)), *[np.eye(6)] * 4, heads=4)
    with pytest.raises(ConfigurationError):
        nn.CausalSelfAttention(nn.ParamStore(), "a", 6, 4, np.random.default_rng(0))


# normalisation invariants

@settings(max_examples=50)
@given(arrays(np.float64, (3, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    s = nn.softmax(x).data
    assert np.all(np.abs(s.sum(-1) - 1) < 1e-12) and np.all(s >= 0)


@settings(max_examples=50)
@given(arrays(np.float64, (4, 16), elements=st.floats(-100, 100)))
def test_layer_norm_moments(x):
    x = x + np.arange(16) * 0.5  # keep every row non-constant
    y = nn.layer_norm(x).data
    assert np.all(np.abs(y.mean(-1)) < 1e-10)
    assert np.all(np.abs(y.var(-1) - 1) < 1e-8)


def test_masked_max():
    x = np.array([[[1.0, 5.0], [3.0, -1.0], [9.0, 9.0]]])
    valid = np.array([[True, True, False]])
    assert np.array_equal(nn.masked_max(x, valid, axis=-2).data, [[3.0, 5.0]])
    assert np.array_equal(nn.masked_max(x, np.zeros((1, 3), bool), axis=-2).data, [[0.0, 0.0]])
    with pytest.raises(ShapeError):
        nn.masked_max(x, valid, axis=-1)


# grad semantics

def test_grad_sum_of_squares():
    x = nn.parameter(np.array([1.0, -2.0, 3.5]))
    (g,) = nn.grad(T.tsum(x * x), [x])
    assert np.array_equal(g.data, 2 * x.data)


def test_grad_of_constant_is_zero():
    x = nn.parameter(np.ones(3))
    y = nn.parameter(np.ones(2))
    (g,) = nn.grad(T.tsum(y * 2.0), [x])
    assert np.array_equal(g.data, np.zeros(3))


def test_grad_requires_scalar():
    x = nn.parameter(np.ones(3))
    with pytest.raises(UsageError):
        nn.grad(x * 2.0, [x])


def test_no_grad_builds_no_graph():
    x = nn.parameter(np.ones(3))
    with nn.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._parents == ()


def test_grad_is_partial_at_inputs():
    # d/dx of (x * y) with y = 2x, holding y fixed, is y
    x = nn.parameter(np.array([1.5]))
    y = x * 2.0
    gx, gy = nn.grad(T.tsum(x * y), [x, y])
    assert gx.data[0] == 3.0 and gy.data[0] == 1.5


def test_double_backward():
    rng = np.random.default_rng(5)
    x = leaf(rng, 4)

    def gnorm():
        (g,) = nn.grad(T.tsum(T.tanh(x) * T.sin(x)), [x], create_graph=True)
        return T.tsum(g * g)

    assert check(gnorm, [x]) < TOL


UNARY = {
    "exp": T.exp,
    "log": lambda a: T.log(a * a + 1.0),
    "tanh": T.tanh,
    "sqrt": lambda a: T.sqrt(a * a + 0.5),
    "sin": T.sin,
    "cos": T.cos,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "gelu": nn.gelu,
    "neg": lambda a: -a,
    "pow3": lambda a: a ** 3,
    "square": lambda a: a ** 2,
    "recip": lambda a: 1.0 / (a * a + 1.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(6)
    x = leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    assert check(lambda: T.tsum(UNARY[name](x) * w), [x]) < TOL


def test_broadcast_binary_gradients():
    rng = np.random.default_rng(7)
    a, b = leaf(rng, 3, 1, 4), leaf(rng, 5, 1)
    w = rng.normal(size=(3, 5, 4))
    for f in (lambda: a + b, lambda: a - b, lambda: a * b, lambda: a / (b * b + 1.0)):
        assert check(lambda: T.tsum(f() * w), [a, b]) < TOL


def test_structural_gradients():
    rng = np.random.default_rng(8)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 3, 4)
    m = leaf(rng, 4, 5)
    w = rng.normal(size=(3, 8))
    cases = {
        "matmul": lambda: T.tsum((a @ m) ** 2),
        "batched_matmul": lambda: T.tsum(T.tanh(a @ b.T)),
        "mean": lambda: T.tsum(T.mean(a * b, axis=1) ** 2),
        "reshape": lambda: T.tsum(T.reshape(a, (6, 4)) @ m),
        "transpose": lambda: T.tsum(T.transpose(a, (2, 0, 1)) * T.transpose(b, (2, 0, 1)) ** 2),
        "getitem_basic": lambda: T.tsum(a[:, 1::2] * b[:, :2]),
        "getitem_advanced": lambda: T.tsum(a[:, [0, 0, 2]] ** 2),
        "concat": lambda: T.tsum(T.concat([a[0], b[1]], axis=-1) * w),
        "stack": lambda: T.tsum(T.stack([a, b], axis=1) ** 3),
        "broadcast_to": lambda: T.tsum(T.broadcast_to(a[:, :1], (2, 3, 4)) * b),
        "amax": lambda: T.tsum(T.amax(a * b, axis=-1)),
        "where": lambda: T.tsum(T.where(a.data > 0, a * b, b * 2.0)),
    }
    for name, fn in cases.items():
        assert check(fn, [a, b, m]) < TOL, name


def test_layer_gradients():
    rng = np.random.default_rng(9)
    store = nn.ParamStore()
    x = leaf(rng, 2, 3, 8)
    dense = nn.Dense(store, "d", 8, 6, rng)
    ln = nn.LayerNorm(store, "ln", 8)
    store.params["ln.gamma"].data[...] = rng.normal(size=8)
    mlp = nn.Mlp(store, "mlp", [8, 12, 5], rng)
    att = nn.CausalSelfAttention(store, "att", 8, 2, rng)
    block = nn.TransformerBlock(store, "blk", 8, 4, rng)
    valid = rng.uniform(size=(2, 3)) > 0.3
    valid[0] = False
    target = rng.normal(size=(2, 3, 6))
    cases = {
        "dense": lambda: nn.mse(dense(x), target),
        "layer_norm": lambda: T.tsum(ln(x) * rng_w),
        "mlp": lambda: T.tsum(mlp(x) ** 2),
        "softmax": lambda: T.tsum(nn.softmax(x, axis=-1) * rng_w),
        "attention": lambda: T.tsum(att(x) * rng_w),
        "block": lambda: T.tsum(block(x) * rng_w),
        "masked_max": lambda: T.tsum(nn.masked_max(x, valid, axis=-2) ** 2),
    }
    rng_w = rng.normal(size=(2, 3, 8))
    for name, fn in cases.items():
        assert check(fn, [x] + store.tensors()) < TOL, name


# optimizer

def _store(seed=0):
    rng = np.random.default_rng(seed)
    s = nn.ParamStore()
    s.add("a", rng.normal(size=(3, 2)))
    s.add("b", rng.normal(size=4))
    return s


def test_adam_first_step():
    s = _store()
    before = s.values()
    nn.opt_step(s, {k: np.ones_like(v) for k, v in before.items()}, 1e-3)
    for k, v in s.values().items():
        assert np.all(np.abs((v - before[k]) + 1e-3) < 1e-6)
    assert s.step == 1


def test_adam_zero_gradient():
    s = _store()
    before = s.values()
    nn.opt_step(s, {k: np.zeros_like(v) for k, v in before.items()}, 1e-3)
    for k, v in s.values().items():
        assert np.array_equal(v, before[k])


def test_adam_deterministic():
    s1, s2 = _store(), _store()
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = {k: rng.normal(size=v.shape) for k, v in s1.values().items()}
        nn.opt_step(s1, g, 1e-2)
        nn.opt_step(s2, {k: v.copy() for k, v in g.items()}, 1e-2)
    for k in s1.names():
        assert np.array_equal(s1[k].data, s2[k].data)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.opt_step(_store(), {"a": np.ones(6)}, 1e-3)
    with pytest.raises(UsageError):
        nn.opt_step(_store(), {"zz": np.ones(1)}, 1e-3)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    clipped, norm = nn.clip_by_global_norm(g, 1.0)
    assert norm == 5.0 and nn.global_norm(clipped) == pytest.approx(1.0)
    same, _ = nn.clip_by_global_norm(g, 10.0)
    assert same is g


def test_duplicate_parameter_name():
    s = _store()
    with pytest.raises(UsageError):
        s.add("a", np.zeros(1))


# checkpoints

def _trained_store():
    s = _store()
    rng = np.random.default_rng(2)
    for _ in range(3):
        nn.opt_step(s, {k: rng.normal(size=v.shape) for k, v in s.values().items()}, 1e-2)
    s.config = {"arch": "tiny", "n": 3}
    return s


def _blob(s):
    buf = io.BytesIO()
    nn.save_checkpoint(s, buf)
    return buf.getvalue()


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    s = _trained_store()
    path = tmp_path / "c.pidt"
    nn.save_checkpoint(s, path)
    back = nn.load_checkpoint(path)
    assert back.step == 3 and back.config == s.config and back.names() == s.names()
    for k in s.names():
        for a, b in ((s[k].data, back[k].data), (s.m[k], back.m[k]), (s.v[k], back.v[k])):
            assert a.tobytes() == b.tobytes()
    assert _blob(back) == path.read_bytes()


def test_checkpoint_manifest_is_text():
    head = _blob(_trained_store()).split(b"\n")
    assert head[0] == b"PIDT-CKPT v1"
    assert head[3] == b"param a 3,2" and head[4] == b"param b 4"


def test_truncated_checkpoint():
    blob = _blob(_trained_store())
    for cut in (len(blob) - 8, 20):
        with pytest.raises(IntegrityError):
            nn.load_checkpoint(blob[:cut])


def test_corrupted_checkpoint():
    blob = bytearray(_blob(_trained_store()))
    blob[-3] ^= 0xFF
    with pytest.raises(IntegrityError, match="checksum"):
        nn.load_checkpoint(bytes(blob))


def test_checkpoint_version():
    blob = _blob(_trained_store()).replace(b"PIDT-CKPT v1", b"PIDT-CKPT v2", 1)
    with pytest.raises(VersionError):
        nn.load_checkpoint(blob)


def test_checkpoint_other_architecture():
    other = nn.ParamStore()
    other.add("a", np.zeros((2, 2)))
    other.add("b", np.zeros(4))
    with pytest.raises(ShapeError, match="'a'"):
        other.assign(nn.load_checkpoint(_blob(_trained_store())))
