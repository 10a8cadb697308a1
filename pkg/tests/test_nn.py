import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedfreq.nn import (AdamState, Mlp, MlpLayout, adam_init, adam_update, checkpoint_bytes,
                          checkpoint_from_bytes, init_mlp, load_checkpoint, mlp_backward, mlp_forward,
                          mlp_forward_cached, save_checkpoint)


def reference_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Straight-line re-implementation reading weights element by element."""
    sizes, acts = net.layout.sizes, net.layout.activations
    h = list(map(float, x))
    o = 0
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = net.params[o:o + fan_in * fan_out]
        b = net.params[o + fan_in * fan_out:o + fan_in * fan_out + fan_out]
        o += (fan_in + 1) * fan_out
        z = [sum(h[i] * W[i * fan_out + j] for i in range(fan_in)) + b[j] for j in range(fan_out)]
        if layer < len(sizes) - 2:
            z = [max(v, 0.0) if acts[layer] == "relu" else float(np.tanh(v)) for v in z]
        h = z
    return np.array(h)


def test_layout_param_count():
    layout = MlpLayout((5, 16, 16, 2), ("relu", "tanh"))
    assert layout.num_params == 6 * 16 + 17 * 16 + 17 * 2
    with pytest.raises(ValueError):
        MlpLayout((5, 16, 2), ())
    with pytest.raises(ValueError):
        MlpLayout((5, 16, 2), ("sigmoid",))


def test_zero_network_outputs_zero():
    net = Mlp(MlpLayout((4, 8, 3), ("relu",)), np.zeros(MlpLayout((4, 8, 3), ("relu",)).num_params))
    np.testing.assert_array_equal(mlp_forward(net, np.ones(4)), np.zeros(3))


def test_identity_linear_layer():
    layout = MlpLayout((3, 3), ())
    params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    x = np.array([1.5, -2.0, 0.25])
    np.testing.assert_array_equal(mlp_forward(Mlp(layout, params), x), x)


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_forward_matches_reference(act):
    rng = np.random.default_rng(1)
    for _ in range(5):
        net = init_mlp((4, 7, 5, 2), rng, act)
        x = rng.standard_normal(4)
        np.testing.assert_allclose(mlp_forward(net, x), reference_forward(net, x), rtol=0, atol=1e-12)


def test_forward_rejects_wrong_dimension():
    net = init_mlp((4, 3, 1), np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(net, np.ones(5))


def test_linear_network_gradient_closed_form():
    rng = np.random.default_rng(2)
    net = init_mlp((3, 2), rng)
    x = rng.standard_normal((1, 3))
    up = np.array([[0.7, -1.3]])
    _, cache = mlp_forward_cached(net, x)
    g, dx = mlp_backward(net, cache, up)
    np.testing.assert_allclose(g[:6].reshape(3, 2), np.outer(x[0], up[0]))
    np.testing.assert_allclose(g[6:], up[0])
    W = net.params[:6].reshape(3, 2)
    np.testing.assert_allclose(dx[0], W @ up[0])


def test_zero_upstream_gives_zero_grads():
    net = init_mlp((3, 8, 2), np.random.default_rng(3))
    _, cache = mlp_forward_cached(net, np.ones((4, 3)))
    g, dx = mlp_backward(net, cache, np.zeros((4, 2)))
    assert not g.any() and not dx.any()


def finite_difference(f, params, h=1e-5):
    out = np.zeros_like(params)
    for i in range(len(params)):
        e = np.zeros_like(params)
        e[i] = h
        out[i] = (f(params + e) - f(params - e)) / (2 * h)
    return out


def rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.sampled_from(["relu", "tanh"]))
def test_backward_matches_finite_differences(seed, depth, act):
    rng = np.random.default_rng(seed)
    sizes = (int(rng.integers(1, 6)),) + tuple(int(rng.integers(1, 17)) for _ in range(depth - 1)) \
        + (int(rng.integers(1, 4)),)
    net = init_mlp(sizes, rng, act)
    x = rng.standard_normal((5, sizes[0]))
    w = rng.standard_normal((5, sizes[-1]))

    def loss(p):
        return float(np.sum(w * mlp_forward(net.with_params(p), x)))

    _, cache = mlp_forward_cached(net, x)
    g, dx = mlp_backward(net, cache, w)
    fd = finite_difference(loss, net.params)
    # a ReLU kink within h of a pre-activation invalidates the difference quotient
    if act == "relu":
        z = [c for c in cache.preacts]
        if any(np.min(np.abs(zz)) < 1e-4 for zz in z):
            return
    assert rel_err(g, fd).max() < 1e-4
    fdx = np.array([[(np.sum(w[r] * mlp_forward(net, x[r] + e)) - np.sum(w[r] * mlp_forward(net, x[r] - e))) / 2e-5
                     for e in np.eye(sizes[0]) * 1e-5] for r in range(5)])
    assert rel_err(dx, fdx).max() < 1e-4


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    st0 = adam_init(p, 1e-3)
    p1, st1 = adam_update(st0, p, np.zeros(2))
    np.testing.assert_array_equal(p1, p)
    assert st1.step == 1


def test_adam_constant_gradient_step_tends_to_learning_rate():
    p = np.zeros(3)
    state = adam_init(p, 1e-3)
    g = np.array([0.5, -2.0, 1e-3])
    for _ in range(5000):
        new, state = adam_update(state, p, g)
        step = new - p
        p = new
    np.testing.assert_allclose(step, -1e-3 * np.sign(g), rtol=1e-3)


def test_adam_is_deterministic_and_validates():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((20, 4))

    def run():
        p, s = np.ones(4), adam_init(np.ones(4), 3e-4)
        for g in grads:
            p, s = adam_update(s, p, g)
        return p

    assert run().tobytes() == run().tobytes()
    s = adam_init(np.ones(2), 1e-3)
    with pytest.raises(ValueError):
        adam_update(s, np.ones(2), np.ones(3))
    with pytest.raises(FloatingPointError):
        adam_update(s, np.ones(2), np.array([np.nan, 0.0]))
    assert isinstance(s, AdamState) and s.beta1 == 0.9 and s.beta2 == 0.999 and s.eps == 1e-8


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    nets = {"q1": init_mlp((4, 8, 1), rng), "actor": init_mlp((3, 8, 8, 2), rng, "tanh")}
    raw = checkpoint_bytes(nets, {"hash": "abc"})
    back, meta = checkpoint_from_bytes(raw)
    assert meta == {"hash": "abc"}
    for k in nets:
        assert back[k].params.tobytes() == nets[k].params.tobytes()
        assert back[k].layout == nets[k].layout
    assert checkpoint_bytes(back, {"hash": "abc"}) == raw
    path = save_checkpoint(tmp_path / "c.ckpt", nets)
    loaded, _ = load_checkpoint(path)
    assert loaded["actor"].params.tobytes() == nets["actor"].params.tobytes()
