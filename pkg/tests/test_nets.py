import math

import numpy as np
import pytest

from neurosym import grad as G
from neurosym.nets import (Adversary, FrameStandin, GRUCell, Linear, RecurrentDecoder,
                           RecurrentEncoder, SequenceStandin, gaussian_loglik, load_arrays,
                           make_standin, save_arrays)


def test_zero_weight_encoder_outputs_zero():
    enc = RecurrentEncoder(2, 4, 16, 16, np.random.default_rng(0)).zero_()
    mu, logvar = enc(None, np.random.default_rng(1).normal(size=(3, 25, 2)))
    assert mu.shape == logvar.shape == (3, 4)
    assert np.all(mu == 0) and np.all(logvar == 0)


def test_encoder_forward_is_bitwise_reproducible():
    x = np.random.default_rng(1).normal(size=(3, 7, 2))
    a = RecurrentEncoder(2, 4, 8, 8, np.random.default_rng(5))(None, x)
    b = RecurrentEncoder(2, 4, 8, 8, np.random.default_rng(5))(None, x)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_gaussian_loglik_at_the_mean():
    # two unit-variance dims evaluated at the mean: 2 * (-0.5 log 2pi)
    val = gaussian_loglik(np.zeros(2), np.zeros(2), np.zeros(2)).sum()
    assert val == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_decoder_density_matches_stepwise_oracle():
    rng = np.random.default_rng(2)
    dec = RecurrentDecoder(2, 3, 5, 4, rng)
    x = rng.normal(size=(1, 3, 2))
    z = rng.normal(size=(1, 3))

    sig = lambda v: 1 / (1 + np.exp(-v))
    c = dec.rnn
    H = c.w_h.data.shape[0]
    h = (z @ dec.init_hidden.weight.data + dec.init_hidden.bias.data)[0]
    prev, total = np.zeros(2), 0.0
    for t in range(3):
        inp = np.concatenate([prev, z[0]])
        gx = inp @ c.w_in.data + c.b_in.data
        gh = h @ c.w_h.data + c.b_h.data
        r = sig(gx[:H] + gh[:H])
        u = sig(gx[H:2 * H] + gh[H:2 * H])
        n = np.tanh(gx[2 * H:] + r * gh[2 * H:])
        h = (1 - u) * n + u * h
        out = np.tanh(h @ dec.hidden.weight.data + dec.hidden.bias.data) @ dec.out.weight.data \
            + dec.out.bias.data
        mean, logvar = prev + out[:2], np.clip(out[2:], -6, 6)
        total += np.sum(-0.5 * (np.log(2 * np.pi) + logvar + (x[0, t] - mean) ** 2 / np.exp(logvar)))
        prev = x[0, t]
    assert dec.loglik(None, x, z)[0] == pytest.approx(total, rel=1e-12)


def test_decoder_rejects_wrong_width():
    dec = RecurrentDecoder(2, 1, 4, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        dec.loglik(None, np.zeros((1, 3, 3)), np.zeros((1, 1)))


def test_zero_weight_adversary_is_uninformative():
    adv = Adversary(4, 2, 8, np.random.default_rng(0)).zero_()
    p = adv(None, np.random.default_rng(1).normal(size=(5, 4)))
    assert p.shape == (5, 2)
    np.testing.assert_array_equal(p, 0.5)


def test_adversary_outputs_are_probabilities():
    adv = Adversary(4, 3, 8, np.random.default_rng(0))
    p = adv(None, 10 * np.random.default_rng(1).normal(size=(50, 4)))
    assert np.all((p > 0) & (p < 1))


def test_standin_shapes_and_frame_independence():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 6, 3))
    assert SequenceStandin(3, 5, rng)(None, x).shape == (4,)
    frame = FrameStandin(3, 5, rng)
    out = frame(None, x)
    assert out.shape == (4, 6)
    # a frame stand-in sees one timestep at a time
    np.testing.assert_allclose(out[:, 2], frame(None, x[:, 2]), rtol=1e-14)
    with pytest.raises(ValueError):
        make_standin("graph", 3, 5, rng)


def test_sequence_standin_fits_separable_labels():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 5, 2))
    y = (x[:, :, 0].mean(axis=1) > 0).astype(float)
    net = SequenceStandin(2, 8, rng)
    opt = G.Adam(net.parameters(), lr=0.02)
    for _ in range(300):
        tape = G.Tape()
        logit = net(tape, x)
        loss = G.mean(G.softplus(logit) - logit * y)
        opt.step(tape.param_grads(loss, net.parameters()))
    logit = net(None, x)
    assert np.mean(np.logaddexp(0, logit) - logit * y) < 0.1


def conditioned_adversary(rng):
    adv = Adversary(2, 3, 4, rng, conditioned=True)
    adv.cond.data = rng.normal(size=(3, 3))
    return adv


def test_conditioned_adversary_sees_only_earlier_bits():
    rng = np.random.default_rng(0)
    adv = conditioned_adversary(rng)
    z = rng.normal(size=(6, 2))
    bits = rng.uniform(size=(6, 3))
    base = adv.logits(None, z, bits)
    for j in range(3):
        moved = bits.copy()
        moved[:, j] += 1.0
        diff = adv.logits(None, z, moved) - base
        # bit j may only move the logits of later bits, by exactly cond[j, i]
        np.testing.assert_allclose(diff[:, :j + 1], 0.0, atol=1e-14)
        np.testing.assert_allclose(diff[:, j + 1:], np.broadcast_to(adv.cond.data[j, j + 1:],
                                                                    (6, 2 - j)), rtol=1e-12)
    with pytest.raises(ValueError):
        adv.logits(None, z)


def test_adversary_growth_keeps_existing_logits():
    rng = np.random.default_rng(1)
    for conditioned in (False, True):
        adv = Adversary(2, 2, 4, rng, conditioned=conditioned)
        if conditioned:
            adv.cond.data = rng.normal(size=(2, 2))
        z, bits = rng.normal(size=(5, 2)), rng.uniform(size=(5, 2))
        before = adv.logits(None, z, bits)
        adv.grow()
        after = adv.logits(None, z, np.column_stack([bits, rng.uniform(size=5)]))
        np.testing.assert_allclose(after[:, :2], before, rtol=1e-13)
        np.testing.assert_array_equal(after[:, 2], 0.0)   # new bit: zero weights


def test_conditioned_adversary_catches_a_copied_bit():
    # bit 1 duplicates bit 0 and z_neural is noise: only the conditional
    # adversary can predict it
    rng = np.random.default_rng(2)
    z = rng.normal(size=(400, 2))
    b0 = (rng.uniform(size=400) < 0.5).astype(float)
    bits = np.column_stack([b0, b0])
    losses = {}
    for conditioned in (False, True):
        adv = Adversary(2, 2, 4, np.random.default_rng(0), conditioned=conditioned)
        opt = G.Adam(adv.parameters(), lr=0.05)
        for _ in range(300):
            tape = G.Tape()
            logit = adv.logits(tape, z, bits)[:, 1]
            loss = G.mean(G.softplus(logit) - logit * b0)
            opt.step(tape.param_grads(loss, adv.parameters()))
        logit = adv.logits(None, z, bits)[:, 1]
        losses[conditioned] = np.mean(np.logaddexp(0, logit) - logit * b0)
    assert losses[False] > 0.6 and losses[True] < 0.05


NETS = {
    "encoder": lambda rng: (RecurrentEncoder(2, 3, 4, 4, rng),
                            lambda m, t, x: sum((o * o).sum() for o in m(t, x))),
    "decoder": lambda rng: (RecurrentDecoder(2, 3, 4, 4, rng),
                            lambda m, t, x: m.loglik(t, x, np.tanh(x[:, 0, :1] * [[1, 2, 3]])).sum()),
    "adversary": lambda rng: (Adversary(2, 3, 4, rng), lambda m, t, x: m(t, x[:, 0]).sum()),
    "conditioned-adversary": lambda rng: (
        conditioned_adversary(rng),
        lambda m, t, x: m(t, x[:, 0], 1 / (1 + np.exp(-x[:, 1, :1] * [[1, 2, 3]]))).sum()),
    "sequence-standin": lambda rng: (SequenceStandin(2, 4, rng), lambda m, t, x: m(t, x).sum()),
    "frame-standin": lambda rng: (FrameStandin(2, 4, rng),
                                  lambda m, t, x: G.tanh(m(t, x)).sum()),
}


@pytest.mark.parametrize("name", sorted(NETS))
@pytest.mark.parametrize("seed", range(20))
def test_network_parameter_gradients(name, seed):
    rng = np.random.default_rng(seed)
    net, f = NETS[name](rng)
    x = rng.normal(size=(2, 3, 2))
    rep = G.check_param_grads(lambda tape: f(net, tape, x), net.parameters())
    assert rep.passed, rep


def test_decoder_latent_gradient():
    rng = np.random.default_rng(3)
    dec = RecurrentDecoder(2, 3, 4, 4, rng)
    x = rng.normal(size=(2, 4, 2))
    rep = G.grad_check(lambda t, v: dec.loglik(t, x, v[0]).sum(), [rng.normal(size=(2, 3))])
    assert rep.passed, rep


def test_state_dict_round_trip(tmp_path):
    net = RecurrentEncoder(2, 3, 4, 4, np.random.default_rng(0))
    save_arrays(tmp_path / "m.npz", net.state_dict(), {"note": "x"})
    arrays, meta = load_arrays(tmp_path / "m.npz")
    other = RecurrentEncoder(2, 3, 4, 4, np.random.default_rng(9))
    other.load_state_dict(arrays)
    assert meta == {"note": "x"}
    for (k, a), (_, b) in zip(net.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=k)


def test_load_rejects_foreign_npz(tmp_path):
    np.savez(tmp_path / "plain.npz", a=np.zeros(2))
    with pytest.raises(ValueError, match="header"):
        load_arrays(tmp_path / "plain.npz")


def test_load_state_dict_checks_shapes():
    lin = Linear(2, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        lin.load_state_dict({"weight": np.zeros((3, 2)), "bias": np.zeros(3)})


def test_gru_cell_default_initial_state_is_zero():
    cell = GRUCell(2, 3, np.random.default_rng(0))
    xs = np.random.default_rng(1).normal(size=(2, 4, 2))
    np.testing.assert_array_equal(cell.run(None, xs), cell.run(None, xs, np.zeros((2, 3))))
