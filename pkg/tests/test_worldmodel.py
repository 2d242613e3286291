import numpy as np
import pytest

from tdmpclab import autodiff as ad
from tdmpclab.autodiff import Tensor
from tdmpclab.bins import (
    BinSpec,
    cross_entropy,
    decode_expectation_np,
    decode_logits,
    decode_logits_np,
    symexp_np,
    symlog_np,
    two_hot_encode,
)
from tdmpclab.exceptions import ConfigurationError, ContractError
from tdmpclab.nn import Adam
from tdmpclab.worldmodel import (
    WorldModel,
    WorldModelConfig,
    load_model,
    model_loss,
    save_model,
)

from helpers import fd_gradients, max_rel_err


# ---------------------------------------------------------------- bins


def test_roundtrip_is_exact_inside_range():
    spec = BinSpec()
    v = np.array([-9.7, -1.0, -0.013, 0.0, 0.4, 1.0, 3.14159, 9.99])
    out = decode_expectation_np(spec, two_hot_encode(spec, v))
    assert np.allclose(out, v, atol=1e-9)


def test_out_of_range_clamps_to_boundary_bin():
    spec = BinSpec()
    enc = two_hot_encode(spec, np.array([15.0]))
    assert enc[0, -1] == 1.0
    assert enc[0, :-1].sum() == 0.0
    assert np.isclose(decode_expectation_np(spec, enc)[0], 10.0)
    enc_lo = two_hot_encode(spec, np.array([-15.0]))
    assert enc_lo[0, 0] == 1.0
    assert np.isclose(decode_expectation_np(spec, enc_lo)[0], -10.0)


def test_encoding_touches_two_adjacent_bins_and_sums_to_one():
    spec = BinSpec()
    rng = np.random.default_rng(3)
    v = rng.uniform(-12, 12, size=64)
    enc = two_hot_encode(spec, v)
    assert np.allclose(enc.sum(axis=-1), 1.0)
    for row in enc:
        nz = np.nonzero(row)[0]
        assert len(nz) in (1, 2)
        if len(nz) == 2:
            assert nz[1] == nz[0] + 1


def test_untransformed_encoding_matches_hand_weights():
    # linspace(-10, 10, 101) has step 0.2; v=0.3 sits halfway between
    # centers 51 (0.2) and 52 (0.4).
    spec = BinSpec(transform=False)
    enc = two_hot_encode(spec, np.array([0.3]))[0]
    assert np.isclose(enc[51], 0.5)
    assert np.isclose(enc[52], 0.5)
    assert np.isclose(enc.sum(), 1.0)


def test_transformed_encoding_matches_hand_position():
    # u = log(2), centers span [-log(11), log(11)] in 100 steps, so
    # pos = (log 2 + log 11) / (log 121 / 100) = 64.4532...
    spec = BinSpec()
    enc = two_hot_encode(spec, np.array([1.0]))[0]
    nz = np.nonzero(enc)[0]
    assert list(nz) == [64, 65]
    assert np.isclose(enc[65], 0.45324, atol=1e-4)


def test_value_on_center_is_one_hot():
    # Unit-step grid keeps centers exactly representable.
    spec = BinSpec(n_bins=21, transform=False)
    enc = two_hot_encode(spec, np.array([3.0]))[0]
    assert enc[13] == 1.0
    assert np.count_nonzero(enc) == 1


def test_symlog_symexp_are_inverse():
    x = np.linspace(-50, 50, 31)
    assert np.allclose(symexp_np(symlog_np(x)), x)


def test_cross_entropy_at_perfect_prediction_equals_target_entropy():
    spec = BinSpec(transform=False)
    target = two_hot_encode(spec, np.array([0.3]))
    logits = Tensor(np.log(target + 1e-300))
    ce = cross_entropy(logits, target)
    assert np.isclose(ce.data, np.log(2.0), atol=1e-6)
    one_hot = two_hot_encode(spec, np.array([0.2]))
    ce0 = cross_entropy(Tensor(np.log(one_hot + 1e-300)), one_hot)
    assert np.isclose(ce0.data, 0.0, atol=1e-6)


def test_decode_logits_matches_numpy_path_and_gradients():
    spec = BinSpec(n_bins=7, v_min=-4.0, v_max=4.0)
    rng = np.random.default_rng(11)
    logits = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    out = decode_logits(spec, logits)
    assert np.allclose(out.data, decode_logits_np(spec, logits.data))

    tape = ad.Tape()
    logits.zero_grad()
    with ad.use_tape(tape):
        loss = ad.tsum(decode_logits(spec, logits))
        tape.backward(loss)
    (fd,) = fd_gradients(
        lambda: ad.tsum(decode_logits(spec, logits)).data, [logits]
    )
    assert max_rel_err(logits.grad, fd) < 1e-4


def test_bad_bin_specs_rejected():
    with pytest.raises(ConfigurationError):
        BinSpec(n_bins=1)
    with pytest.raises(ConfigurationError):
        BinSpec(v_min=2.0, v_max=-2.0)


# ---------------------------------------------------------------- world model


class FixedPolicy:
    """Deterministic stub: always returns the same action batch."""

    def __init__(self, action):
        self.action = np.asarray(action, dtype=np.float64)

    def sample(self, z, rng):
        n = z.data.shape[0]
        a = np.broadcast_to(self.action, (n, self.action.shape[-1])).copy()
        return Tensor(a), Tensor(np.zeros(n))


def tiny_model(seed=0, obs_dim=3, action_dim=2, ensemble=2):
    cfg = WorldModelConfig(
        obs_dim=obs_dim,
        action_dim=action_dim,
        latent_dim=4,
        encoder_hidden=(8,),
        head_hidden=(8,),
        ensemble_size=ensemble,
        q_dropout=0.0,
    )
    return WorldModel(cfg, np.random.default_rng(seed))


def constant_logits(spec, value):
    """Final-layer bias producing softmax ~= two_hot(value)."""
    delta = 1e-9
    p = two_hot_encode(spec, np.array([value]))[0] + delta
    return np.log(p / p.sum())


def test_forward_shapes():
    model = tiny_model()
    obs = Tensor(np.zeros((5, 3)))
    z = model.encode(obs)
    assert z.data.shape == (5, 4)
    a = Tensor(np.zeros((5, 2)))
    assert model.next_latent(z, a).data.shape == (5, 4)
    assert model.reward_logits(z, a).data.shape == (5, 101)
    assert model.q_logits(0, z, a).data.shape == (5, 101)
    assert model.target_q_logits(1, z, a).data.shape == (5, 101)


def test_small_ensemble_rejected():
    with pytest.raises(ConfigurationError):
        WorldModelConfig(obs_dim=3, action_dim=2, ensemble_size=1)


def test_td_target_uses_min_of_target_members():
    # Force constant target heads: member 0 decodes to ~5, member 1 to ~2.
    model = tiny_model(ensemble=2)
    spec = model.cfg.bins
    for name, arr in model.target_q.items():
        if name.endswith(".b1"):
            arr[...] = constant_logits(spec, 5.0 if name.startswith("q0") else 2.0)
        elif ".w" in name:
            arr[...] = 0.0
    policy = FixedPolicy(np.zeros(2))
    rng = np.random.default_rng(0)
    reward = np.array([1.0, 0.25])
    next_obs = np.zeros((2, 3))
    done = np.array([0.0, 0.0])
    q = model.td_target(policy, reward, next_obs, done, 0.5, rng)
    assert np.allclose(q, reward + 0.5 * 2.0, atol=1e-3)


def test_td_target_terminal_is_reward_only():
    model = tiny_model(ensemble=2)
    policy = FixedPolicy(np.zeros(2))
    rng = np.random.default_rng(0)
    reward = np.array([0.75, 0.1])
    done = np.array([1.0, 1.0])
    q = model.td_target(policy, reward, np.zeros((2, 3)), done, 0.9, rng)
    assert np.array_equal(q, reward)


def test_min2_is_order_invariant():
    model = tiny_model(ensemble=3)
    z = model.encode_np(np.random.default_rng(1).normal(size=(4, 3)))
    a = np.zeros((4, 2))
    assert np.allclose(
        model.min2_q_np((0, 2), z, a), model.min2_q_np((2, 0), z, a)
    )


class PerfectStub:
    """Duck-typed model whose predictions match the batch exactly.

    Latents are the observations themselves, dynamics adds the action, and
    reward/Q heads emit logits whose softmax is (numerically) the two-hot
    encoding of zero. With all rewards zero this drives every loss term to
    zero.
    """

    def __init__(self):
        self.cfg = WorldModelConfig(obs_dim=2, action_dim=2, ensemble_size=2)
        self._logits = constant_logits(self.cfg.bins, 0.0)

    def encode(self, obs):
        return Tensor(obs.data.copy())

    def next_latent(self, z, action):
        return ad.add(z, action)

    def _const_logits(self, n):
        return Tensor(np.broadcast_to(self._logits, (n, self.cfg.bins.n_bins)).copy())

    def reward_logits(self, z, action):
        return self._const_logits(z.data.shape[0])

    def q_logits(self, member, z, action, train=False, rng=None):
        return self._const_logits(z.data.shape[0])

    def td_target(self, policy, reward, next_obs, done, gamma, rng):
        return np.zeros_like(reward)


def consistent_batch(rng, horizon, n, rewards):
    """Trajectory where next_obs = obs + action and obs chains forward."""
    obs = np.empty((horizon + 1, n, 2))
    obs[0] = rng.normal(size=(n, 2))
    action = rng.normal(size=(horizon + 1, n, 2))
    next_obs = np.empty_like(obs)
    for t in range(horizon + 1):
        next_obs[t] = obs[t] + action[t]
        if t < horizon:
            obs[t + 1] = next_obs[t]
    return {
        "obs": obs,
        "action": action,
        "reward": rewards,
        "next_obs": next_obs,
        "done": np.zeros((horizon + 1, n)),
    }


def test_model_loss_zero_for_perfect_predictions():
    stub = PerfectStub()
    rng = np.random.default_rng(7)
    horizon, n = 3, 4
    batch = consistent_batch(rng, horizon, n, np.zeros((horizon + 1, n)))
    report = model_loss(stub, FixedPolicy(np.zeros(2)), batch, 0.9, rng)
    assert float(report.total.data) < 1e-5
    assert report.consistency < 1e-12


def test_model_loss_discounts_later_steps():
    # Same per-step reward mismatch at every t: under a smaller gamma the
    # later steps carry less weight, so the total shrinks.
    stub = PerfectStub()
    rng = np.random.default_rng(7)
    horizon, n = 3, 4
    batch = consistent_batch(rng, horizon, n, np.full((horizon + 1, n), 0.4))
    lo = model_loss(stub, FixedPolicy(np.zeros(2)), batch, 0.5,
                    np.random.default_rng(0))
    hi = model_loss(stub, FixedPolicy(np.zeros(2)), batch, 0.999,
                    np.random.default_rng(0))
    assert float(lo.total.data) < float(hi.total.data)


def make_batch(rng, horizon, n, obs_dim, action_dim):
    obs = rng.normal(size=(horizon + 1, n, obs_dim))
    action = rng.uniform(-1, 1, size=(horizon + 1, n, action_dim))
    return {
        "obs": obs,
        "action": action,
        "reward": rng.uniform(0, 1, size=(horizon + 1, n)),
        "next_obs": obs + 0.1 * rng.normal(size=obs.shape),
        "done": np.zeros((horizon + 1, n)),
    }


def test_model_overfits_one_batch():
    model = tiny_model(seed=5)
    policy = FixedPolicy(np.zeros(2))
    batch = make_batch(np.random.default_rng(2), 1, 8, 3, 2)
    opt = Adam(model.params, lr=3e-3)
    first = None
    for step in range(300):
        tape = ad.Tape()
        with ad.use_tape(tape):
            report = model_loss(model, policy, batch, 0.9,
                                np.random.default_rng(step))
            tape.backward(report.total)
        if first is None:
            first = float(report.total.data)
        opt.step()
        opt.zero_grad()
    assert float(report.total.data) < 0.1 * first


def test_model_loss_report_exposes_latents_and_targets():
    model = tiny_model()
    batch = make_batch(np.random.default_rng(4), 2, 6, 3, 2)
    report = model_loss(model, FixedPolicy(np.zeros(2)), batch, 0.9,
                        np.random.default_rng(0))
    assert len(report.latents) == 4
    assert report.latents[0].shape == (6, 4)
    assert report.td_targets.shape == (18,)


def test_backward_reaches_every_component():
    model = tiny_model()
    batch = make_batch(np.random.default_rng(4), 1, 4, 3, 2)
    tape = ad.Tape()
    with ad.use_tape(tape):
        report = model_loss(model, FixedPolicy(np.zeros(2)), batch, 0.9,
                            np.random.default_rng(0))
        tape.backward(report.total)
    for prefix in ("enc", "dyn", "rew", "q0", "q1"):
        norms = [
            np.abs(t.grad).max()
            for name, t in model.params.items()
            if name.startswith(prefix + ".") and t.grad is not None
        ]
        assert max(norms) > 0, prefix


def test_polyak_mixing():
    model = tiny_model()
    online = {k: v.data.copy() for k, v in model.params.items()
              if k.startswith("q")}
    for arr in model.target_q.values():
        arr[...] = 1.0
    model.polyak_update(1.0)
    assert all(np.all(a == 1.0) for a in model.target_q.values())
    model.polyak_update(0.5)
    for name, arr in model.target_q.items():
        assert np.allclose(arr, 0.5 * 1.0 + 0.5 * online[name])
    model.polyak_update(0.0)
    for name, arr in model.target_q.items():
        assert np.array_equal(arr, model.params[name].data)


def test_checkpoint_roundtrip(tmp_path):
    model = tiny_model(seed=1)
    path = tmp_path / "model.npz"
    save_model(model, str(path))
    other = tiny_model(seed=2)
    load_model(other, str(path))
    for name, t in model.params.items():
        assert np.array_equal(t.data, other.params[name].data), name
    for name, arr in model.target_q.items():
        assert np.array_equal(arr, other.target_q[name])


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    model = tiny_model(seed=1)
    path = tmp_path / "model.npz"
    save_model(model, str(path))
    bigger = WorldModel(
        WorldModelConfig(obs_dim=3, action_dim=2, latent_dim=6,
                         encoder_hidden=(8,), head_hidden=(8,),
                         ensemble_size=2),
        np.random.default_rng(0),
    )
    with pytest.raises(ContractError):
        load_model(bigger, str(path))
