import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import freqmamba.diffusion as diffusion
from freqmamba.autodiff import Tape, Tensor, TrainingError, load_checkpoint, ops
from freqmamba.diffusion import (DataTransform, NoiseSchedule, ddpm_loss, make_schedule, p_sample_step, q_sample,
                                 sample, sample_loop, train, write_loss_csv)
from freqmamba.model import ModelConfig, eps_theta, init_params

TINY = ModelConfig(n_points=32, n_latent=8, latent_dim=16, depth=1, resolution=4, k=6, tau=3, T=10,
                   n_state=4, expand=1, hidden=8, enc_layers=1)


def recorded_trajectory(x0, schedule, rng):
    """Forward-consistent trajectory from the x0/x_t form of the posterior.

    Returns the injected-noise table ``eps[t]`` for ``x_t`` and the replayed
    draws ``z[t]``, both indexed by ``t``.
    """
    T = schedule.T
    ab, a, b = schedule.alpha_bar, schedule.alpha, schedule.beta
    eps = np.zeros((T + 1,) + x0.shape)
    z = rng.standard_normal((T + 1,) + x0.shape)
    eps[T] = rng.standard_normal(x0.shape)
    x = math.sqrt(ab[T]) * x0 + math.sqrt(1 - ab[T]) * eps[T]
    x_T = x.copy()
    for t in range(T, 1, -1):
        c0 = math.sqrt(ab[t - 1]) * b[t] / (1 - ab[t])
        ct = math.sqrt(a[t]) * (1 - ab[t - 1]) / (1 - ab[t])
        x = c0 * x0 + ct * x + math.sqrt(schedule.sigma2[t]) * z[t]
        eps[t - 1] = (x - math.sqrt(ab[t - 1]) * x0) / math.sqrt(1 - ab[t - 1])
    return x_T, eps, z


# ---------------------------------------------------------------- schedule

def test_schedule_defaults():
    s = make_schedule()
    assert s.T == 1000 and s.beta[1] == pytest.approx(1e-4) and s.beta[1000] == pytest.approx(0.02)
    assert s.alpha_bar[1000] < 0.01
    assert make_schedule(100).alpha_bar[100] < 0.01
    assert make_schedule(100).beta[1] == pytest.approx(1e-3) and make_schedule(100).beta[100] == pytest.approx(0.2)


def test_single_step_schedule():
    s = make_schedule(1, 0.5, 0.5)
    assert s.alpha_bar[1] == 0.5


@pytest.mark.parametrize("T", [1, 10, 100, 1000])
def test_schedule_invariants(T):
    s = make_schedule(T)
    a = s.alpha[1:]
    assert np.all((a > 0) & (a < 1)) and np.all(np.diff(s.alpha_bar[1:]) < 0)
    assert np.all(s.sigma2 >= 0)
    run = 1.0
    for t in range(1, T + 1):
        run *= s.alpha[t]
        assert s.alpha_bar[t] == run


def test_schedule_errors():
    for args in ((0,), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)):
        with pytest.raises(ValueError):
            make_schedule(*args)
    with pytest.raises(ValueError):
        make_schedule(10).check_t(0)


# ---------------------------------------------------------------- forward process

def test_q_sample_scalar():
    s = NoiseSchedule(1, np.array([0, 0.75]), np.array([1, 0.25]), np.array([1, 0.25]), np.array([0, 0.75]))
    assert q_sample(1.0, 1, 1.0, s) == pytest.approx(1.3660254037844386, abs=1e-15)
    s1 = make_schedule(100)
    x0 = np.ones((2, 3))
    assert np.abs(q_sample(x0, 1, np.zeros_like(x0), s1) - x0).max() < 1e-3


def test_q_sample_matches_sequential_composition(rng):
    s = make_schedule(100)
    n, t = 10_000, 30
    x = np.zeros(n)
    for k in range(1, t + 1):
        x = math.sqrt(s.alpha[k]) * x + math.sqrt(s.beta[k]) * rng.standard_normal(n)
    assert abs(x.var() / (1 - s.alpha_bar[t]) - 1) < 0.03
    direct = q_sample(np.zeros(n), t, rng.standard_normal(n), s)
    assert abs(direct.var() / (1 - s.alpha_bar[t]) - 1) < 0.03


@given(st.integers(1, 50), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_q_sample_superposition(t, a, b, seed):
    r = np.random.default_rng(seed)
    s = make_schedule(50)
    x1, x2, e1, e2 = r.standard_normal((4, 5, 3))
    lhs = q_sample(a * x1 + b * x2, t, a * e1 + b * e2, s)
    rhs = a * q_sample(x1, t, e1, s) + b * q_sample(x2, t, e2, s)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_q_sample_per_item_steps(rng):
    s = make_schedule(20)
    x0, e = rng.standard_normal((2, 3, 4, 3))
    out = q_sample(x0, [2, 5, 20], e, s)
    for i, t in enumerate([2, 5, 20]):
        np.testing.assert_allclose(out[i], q_sample(x0[i], t, e[i], s))


# ---------------------------------------------------------------- loss

def test_oracle_and_zero_denoisers(rng):
    s = make_schedule(100)
    x0 = rng.standard_normal((4, 512, 3))
    eps0 = rng.standard_normal(x0.shape)
    t = rng.integers(1, 101, 4)
    assert float(ddpm_loss(lambda x, tt: eps0, x0, t, eps0, s).data) == 0.0
    zero = float(ddpm_loss(lambda x, tt: np.zeros_like(x), x0, t, eps0, s).data)
    assert abs(zero - 1) < 0.05


def test_loss_reports_bad_rows(rng):
    s = make_schedule(10)
    x0 = rng.standard_normal((3, 4, 3))

    def bad(x, t):
        out = np.zeros_like(x)
        out[1, 2, 0] = np.nan
        return out
    with pytest.raises(TrainingError, match=r"rows \[1\].*\[7\]"):
        ddpm_loss(bad, x0, [2, 7, 9], rng.standard_normal(x0.shape), s)


def test_loss_gradient_nonzero(rng):
    params = init_params(TINY, 0)
    s = make_schedule(TINY.T)
    x0 = rng.standard_normal((2, 32, 3))
    with Tape() as tape:
        loss = ddpm_loss(lambda x, t: eps_theta(x, t, params, TINY), x0, [2, 9], rng.standard_normal(x0.shape), s)
    grads = tape.gradient(loss, list(params.values()))
    assert math.sqrt(sum(float((g * g).sum()) for g in grads)) > 0


@given(st.integers(0, 2 ** 31))
def test_loss_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    s = make_schedule(30)
    x0, e = r.standard_normal((2, 2, 20, 3))
    perm = r.permutation(20)
    t = r.integers(1, 31, 2)
    pointwise = lambda x, tt: Tensor(np.tanh(x) * 0.7)  # noqa: E731
    a = float(ddpm_loss(pointwise, x0, t, e, s).data)
    b = float(ddpm_loss(pointwise, x0[:, perm], t, e[:, perm], s).data)
    assert a == pytest.approx(b, rel=1e-13)


# ---------------------------------------------------------------- reverse process

def test_mu_spot_check():
    s = NoiseSchedule(1, np.array([0, 0.01]), np.array([1, 0.99]), np.array([1, 0.5]), np.array([0, 0.01]))
    mu = p_sample_step(lambda x, t: np.ones_like(x), np.array([1.0]), 1, s)
    assert mu[0] == pytest.approx((1 - 0.01 / math.sqrt(0.5)) / math.sqrt(0.99), abs=1e-15)
    assert round(float(mu[0]), 4) == 0.9908


def test_last_step_adds_no_noise(rng):
    s = make_schedule(10)
    x = rng.standard_normal((2, 5, 3))
    den = lambda x, t: 0.1 * x  # noqa: E731
    a = p_sample_step(den, x, 1, s, noise=rng.standard_normal(x.shape) * 100)
    b = p_sample_step(den, x, 1, s)
    assert np.array_equal(a, b)
    c = p_sample_step(den, x, 2, s, noise=np.ones_like(x))
    assert np.allclose(c - p_sample_step(den, x, 2, s), math.sqrt(s.sigma2[2]))


def test_oracle_loop_without_noise(rng):
    s = make_schedule(100)
    x0 = rng.standard_normal((3, 64, 3))
    x_T = q_sample(x0, 100, rng.standard_normal(x0.shape), s)

    def oracle(x, t):
        ab = s.alpha_bar[int(t[0])]
        return (x - math.sqrt(ab) * x0) / math.sqrt(1 - ab)
    out = sample_loop(oracle, x_T, s, noise=lambda t, shape: np.zeros(shape))
    assert np.abs(out - x0).max() < 1e-6


def test_recorded_noise_loop(rng):
    s = make_schedule(100)
    x0 = rng.standard_normal((2, 64, 3))
    x_T, eps, z = recorded_trajectory(x0, s, rng)
    out = sample_loop(lambda x, t: eps[int(t[0])], x_T, s, noise=z)
    assert np.abs(out - x0).max() < 1e-5


def test_sample_deterministic_and_batch_free():
    params = init_params(TINY, 1)
    s = make_schedule(TINY.T)
    a = sample(params, TINY, s, count=3, seed=5, batch=3)
    b = sample(params, TINY, s, count=3, seed=5, batch=2)
    assert a.shape == (3, 32, 3) and np.all(np.isfinite(a))
    assert np.array_equal(a, sample(params, TINY, s, count=3, seed=5, batch=3))
    np.testing.assert_allclose(a, b, rtol=1e-7)
    assert not np.array_equal(a, sample(params, TINY, s, count=3, seed=6))


# ---------------------------------------------------------------- data transform

def test_data_transform_round_trip(rng):
    data = rng.random((5, 10, 3)) * [1, 2, 3] + 4
    tr = DataTransform.fit(data)
    z = tr.forward(data)
    assert np.allclose(z.reshape(-1, 3).mean(axis=0), 0) and z.std() == pytest.approx(1.0)
    np.testing.assert_allclose(tr.inverse(z), data, atol=1e-12)
    back = DataTransform.from_tensors(tr.as_tensors())
    assert np.array_equal(back.center, tr.center) and back.scale == tr.scale
    assert DataTransform.from_tensors({}).scale == 1.0
    assert DataTransform.fit(np.zeros((1, 4, 3))).scale == 1.0


# ---------------------------------------------------------------- trainer

@pytest.fixture(scope="module")
def tiny_data():
    return np.random.default_rng(0).random((6, 32, 3))


def test_one_epoch_moves_every_parameter(tiny_data):
    res = train(tiny_data, TINY, epochs=1, batch=3, seed=0)
    init = init_params(TINY, int(np.random.SeedSequence(0).spawn(2)[0].generate_state(1)[0]))
    assert set(res.params) == set(init)
    unchanged = [k for k in init if np.array_equal(init[k].data, res.params[k].data)]
    assert unchanged == []
    assert len(res.losses) == 1 and res.state.step == 2


def test_training_is_deterministic(tiny_data):
    a = train(tiny_data, TINY, epochs=2, batch=4, seed=3)
    b = train(tiny_data, TINY, epochs=2, batch=4, seed=3)
    assert a.losses == b.losses


def test_trainer_input_checks(tiny_data):
    with pytest.raises(ValueError):
        train(tiny_data[:, :10], TINY)
    with pytest.raises(ValueError):
        train(np.zeros((0, 32, 3)), TINY)


def test_divergence_aborts(tiny_data, monkeypatch):
    calls = {"n": 0}
    real = diffusion.eps_theta

    def blowing_up(x, t, params, config):
        calls["n"] += 1
        out = real(x, t, params, config)
        return ops.mul(out, 1.0 if calls["n"] <= 2 else 100.0)
    monkeypatch.setattr(diffusion, "eps_theta", blowing_up)
    with pytest.raises(TrainingError, match="diverged"):
        train(tiny_data, TINY, epochs=10, batch=3, seed=0)
    assert calls["n"] == 8  # epoch 1 plus three bad epochs, two steps each


def test_lr_decay_and_checkpoints(tiny_data, tmp_path):
    path = tmp_path / "ck.pcdk"
    res = train(tiny_data, TINY, epochs=4, batch=6, seed=0, lr=1e-3, lr_decay=0.5, decay_every=2,
                checkpoint_every=2, checkpoint_path=path, config_text="N = 32\n")
    assert res.state.lr == pytest.approx(2.5e-4)
    tensors, text = load_checkpoint(path)
    assert text == "N = 32\n" and "data.center" in tensors
    np.testing.assert_array_equal(tensors["dec.head_w"], res.params["dec.head_w"].data)


def test_loss_csv(tmp_path):
    write_loss_csv(tmp_path / "l.csv", [1.5, 0.25])
    rows = list(csv.reader(open(tmp_path / "l.csv")))
    assert rows == [["epoch", "mean_loss"], ["1", "1.5"], ["2", "0.25"]]
