"""MLP, Adam, clipping, and Gaussian density checks against hand oracles."""

import numpy as np
import pytest

from helpers import fd_gradients, max_rel_err
from tdmpclab import autodiff as ad
from tdmpclab import nn
from tdmpclab.autodiff import Tape, Tensor, use_tape
from tdmpclab.exceptions import (
    ConfigurationError,
    ContractError,
    DomainError,
    NumericsError,
)


def straight_line_mlp(params, x):
    """Independent numpy re-implementation of a 2-hidden-layer LN+Mish MLP."""

    def mish_np(v):
        return v * np.tanh(np.logaddexp(0.0, v))

    h = x
    for i in range(2):
        h = h @ params[f"net.w{i}"].data + params[f"net.b{i}"].data
        mu = h.mean(axis=-1, keepdims=True)
        var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
        h = (h - mu) / np.sqrt(var + nn.LN_EPS)
        h = h * params["net.ln%d.g" % i].data + params["net.ln%d.b" % i].data
        h = mish_np(h)
    return h @ params["net.w2"].data + params["net.b2"].data


def test_mlp_forward_matches_straight_line_oracle():
    spec = nn.MLPSpec(widths=(4, 8, 8, 3))
    params = nn.init_mlp_params(spec, np.random.default_rng(42), "net")
    x = np.random.default_rng(43).normal(size=(6, 4))
    got = nn.mlp_forward(spec, params, "net", Tensor(x)).data
    want = straight_line_mlp(params, x)
    assert np.allclose(got, want, atol=1e-12)


def test_layer_norm_constant_vector_gives_bias():
    gain = Tensor(np.full(5, 2.0))
    bias = Tensor(np.arange(5.0))
    x = Tensor(np.full((3, 5), 7.0))
    out = nn.layer_norm(x, gain, bias).data
    assert np.allclose(out, np.broadcast_to(bias.data, (3, 5)), atol=1e-9)


def test_mlp_gradients_match_fd():
    spec = nn.MLPSpec(widths=(3, 6, 6, 2))
    params = nn.init_mlp_params(spec, np.random.default_rng(7), "net")
    x = Tensor(np.random.default_rng(8).normal(size=(4, 3)))
    tensors = [params[k] for k in sorted(params)]

    def build():
        y = nn.mlp_forward(spec, params, "net", x)
        return ad.tsum(y * y)

    with use_tape(Tape()) as tape:
        tape.backward(build())
    analytic = [np.array(t.grad) for t in tensors]

    def f():
        with use_tape(Tape()):
            return build().item()

    numeric = fd_gradients(f, tensors)
    for a, b in zip(analytic, numeric):
        assert max_rel_err(a, b) < 1e-4


def test_init_fan_in_bounds_and_final_scale():
    spec = nn.MLPSpec(widths=(16, 8, 4))
    params = nn.init_mlp_params(spec, np.random.default_rng(0), "p", final_scale=1e-2)
    assert np.all(np.abs(params["p.w0"].data) <= 1.0 / 4.0)
    assert np.all(np.abs(params["p.w1"].data) <= 1e-2 / np.sqrt(8))
    assert np.all(params["p.b0"].data == 0.0)
    assert np.all(params["p.b1"].data == 0.0)


def test_mlp_input_width_mismatch_raises():
    spec = nn.MLPSpec(widths=(4, 8, 2))
    params = nn.init_mlp_params(spec, np.random.default_rng(0), "net")
    with pytest.raises(ConfigurationError) as e:
        nn.mlp_forward(spec, params, "net", Tensor(np.zeros((2, 5))))
    assert "5" in str(e.value) and "4" in str(e.value)


def test_bad_widths_raise():
    with pytest.raises(ConfigurationError):
        nn.MLPSpec(widths=(4,))
    with pytest.raises(ConfigurationError):
        nn.MLPSpec(widths=(4, 0, 2))


def test_adam_single_step_frozen_expected_value():
    # one weight w=1.0, grad 0.5, lr=1e-3: update = lr * ghat / (sqrt(vhat) + eps)
    # with bias-corrected ghat = 0.5, vhat = 0.25 exactly on step 1
    p = Tensor(np.array([1.0]), requires_grad=True, name="w")
    p.grad = np.array([0.5])
    opt = nn.Adam({"w": p}, lr=1e-3)
    opt.step()
    expected = 1.0 - 1e-3 * 0.5 / (np.sqrt(0.25) + 1e-8)
    assert p.data[0] == pytest.approx(expected, abs=1e-15)


def test_adam_zero_grad_leaves_param_unchanged():
    p = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    p.grad = np.zeros(2)
    opt = nn.Adam({"w": p})
    opt.step()
    assert np.array_equal(p.data, np.array([2.0, -1.0]))


def test_adam_missing_grad_raises():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = nn.Adam({"w": p})
    with pytest.raises(ContractError) as e:
        opt.step()
    assert "w" in str(e.value)


def test_adam_descends_quadratic():
    p = Tensor(np.array([3.0]), requires_grad=True)
    opt = nn.Adam({"w": p}, lr=1e-2)
    for _ in range(500):
        p.grad = 2.0 * p.data
        opt.step()
    assert abs(p.data[0]) < 0.5


def test_clip_global_norm_scales_and_reports():
    a = Tensor(np.zeros(3), requires_grad=True, name="a")
    b = Tensor(np.zeros(4), requires_grad=True, name="b")
    a.grad = np.array([3.0, 0.0, 0.0])
    b.grad = np.array([0.0, 4.0, 0.0, 0.0])
    pre = nn.clip_global_norm({"a": a, "b": b}, max_norm=1.0)
    assert pre == pytest.approx(5.0)
    post = np.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2))
    assert post == pytest.approx(1.0, rel=1e-12)
    # direction preserved
    assert a.grad[0] == pytest.approx(3.0 / 5.0)


def test_clip_global_norm_below_threshold_is_noop():
    a = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([0.3, 0.4])
    pre = nn.clip_global_norm({"a": a}, max_norm=20.0)
    assert pre == pytest.approx(0.5)
    assert np.array_equal(a.grad, np.array([0.3, 0.4]))


def test_clip_global_norm_nonfinite_names_parameter():
    a = Tensor(np.zeros(2), requires_grad=True, name="enc.w0")
    a.grad = np.array([np.nan, 1.0])
    with pytest.raises(NumericsError) as e:
        nn.clip_global_norm({"enc.w0": a}, max_norm=1.0)
    assert "enc.w0" in str(e.value)


def test_gaussian_log_prob_at_mode():
    d = 3
    std = np.array([0.5, 1.0, 2.0])
    x = Tensor(np.zeros((1, d)))
    mean = Tensor(np.zeros((1, d)))
    lp = nn.gaussian_log_prob(x, mean, Tensor(std[None, :])).data[0]
    want = -np.sum(np.log(std)) - 0.5 * d * np.log(2.0 * np.pi)
    assert lp == pytest.approx(want, abs=1e-12)


def test_gaussian_log_prob_scale_law():
    d = 4
    x = Tensor(np.zeros((1, d)))
    mean = Tensor(np.zeros((1, d)))
    lp1 = nn.gaussian_log_prob(x, mean, Tensor(np.ones((1, d)))).data[0]
    lp2 = nn.gaussian_log_prob(x, mean, Tensor(np.full((1, d), 2.0))).data[0]
    assert lp1 - lp2 == pytest.approx(d * np.log(2.0), abs=1e-12)


def test_gaussian_log_prob_grads_match_fd():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    mean = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    raw = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

    def build():
        std = ad.exp(raw)  # keep std positive under perturbation
        return ad.tsum(nn.gaussian_log_prob(x, mean, std))

    with use_tape(Tape()) as tape:
        tape.backward(build())
    analytic = [np.array(t.grad) for t in (x, mean, raw)]

    def f():
        with use_tape(Tape()):
            return build().item()

    numeric = fd_gradients(f, [x, mean, raw])
    for a, b in zip(analytic, numeric):
        assert max_rel_err(a, b) < 1e-4


def test_gaussian_log_prob_rejects_nonpositive_std():
    with pytest.raises(DomainError):
        nn.gaussian_log_prob(
            Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), Tensor(np.array([[1.0, 0.0]]))
        )
