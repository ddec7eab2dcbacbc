import numpy as np
import pytest
from hypothesis import given, strategies as st

from phdct.hankel import extract_patches
from phdct.score import (Adam, GaussianScore, ScoreNet, SigmaSchedule, TrainConfig, default_schedule,
                         dsm_loss, ema, init_models, load_model, make_schedule, save_model,
                         score_eval, train, training_partitions)

D = 64 * 64


def small_shots(n=2, size=24, seed=0):
    r = np.random.default_rng(seed)
    base = np.outer(np.hanning(size), np.hanning(size)) * 3.0
    return [base + 0.05 * r.normal(size=(size, size)) for _ in range(n)]


# --- schedule --------------------------------------------------------------------

def test_make_schedule_examples():
    s = make_schedule(3, 0.01, 1.0)
    assert s.levels == pytest.approx((1.0, 0.1, 0.01))
    assert s.sigma(0) == 0.01 and s.sigma(2) == 1.0
    assert make_schedule(1, 0.01, 2.0).levels == (2.0,)
    s = make_schedule(10, 0.002, 35.0)
    assert s.levels[0] == 35.0 and s.levels[-1] == 0.002
    ratios = np.array(s.levels[1:]) / np.array(s.levels[:-1])
    assert np.allclose(ratios, ratios[0])


@pytest.mark.parametrize("args", [(0, 0.1, 1.0), (3, 0.0, 1.0), (3, 1.0, 0.5)])
def test_make_schedule_errors(args):
    with pytest.raises(ValueError):
        make_schedule(*args)


def test_schedule_validation():
    with pytest.raises(ValueError):
        SigmaSchedule((1.0, 1.0))
    with pytest.raises(ValueError):
        SigmaSchedule(())
    with pytest.raises(IndexError):
        make_schedule(3, 0.1, 1.0).sigma(3)


def test_default_schedule_top_level_is_patch_diameter():
    shots = small_shots()
    s = default_schedule(shots, N=5, sigma_min=0.002, patch_shape=(16, 64), n_patches=32)
    assert s.N == 5 and s.sigma_min == 0.002
    # bounded by twice the largest normalised patch norm
    assert 0.002 < s.sigma_max <= 2 * np.sqrt(16 * 64)


# --- DSM loss ---------------------------------------------------------------------

def gaussian_patches(mean, v, n, seed):
    r = np.random.default_rng(seed)
    return mean + np.sqrt(v) * r.normal(size=(n,) + mean.shape)


def test_zero_model_loss_is_dimension():
    zero = GaussianScore(np.zeros((64, 64)), np.inf)
    clean = gaussian_patches(np.zeros((64, 64)), 0.3, 64, 0)
    for sigma in (0.01, 1.0, 30.0):
        assert dsm_loss(zero, clean, sigma, seed=1) == pytest.approx(D, rel=0.05)


@pytest.mark.parametrize("v,sigma", [(0.5, 0.1), (0.5, 1.0), (0.05, 0.3)])
def test_true_gaussian_loss_closed_form(v, sigma):
    # E[sigma^2 ||s + z/sigma||^2] for the exact score equals d v / (v + sigma^2)
    mean = np.linspace(-1, 1, D).reshape(64, 64)
    clean = gaussian_patches(mean, v, 200, 3)
    loss = dsm_loss(GaussianScore(mean, v), clean, sigma, seed=4)
    assert loss == pytest.approx(D * v / (v + sigma ** 2), rel=0.02)


def test_true_score_beats_zero_and_perturbed():
    mean = np.zeros((64, 64))
    mean[10:20] = 1.0
    v, sigma = 0.2, 0.4
    clean = gaussian_patches(mean, v, 100, 5)
    true = dsm_loss(GaussianScore(mean, v), clean, sigma, seed=6)
    assert true < dsm_loss(GaussianScore(mean, np.inf), clean, sigma, seed=6)
    assert true < dsm_loss(GaussianScore(mean + 0.3, v), clean, sigma, seed=6)
    assert true < dsm_loss(GaussianScore(mean, 2 * v), clean, sigma, seed=6)


def test_dsm_loss_seed_reproducible(rng):
    m = ScoreNet(hidden=16, patch_shape=(8, 64), rng=np.random.default_rng(0))
    clean = rng.normal(size=(4, 8, 64))
    assert dsm_loss(m, clean, 0.5, seed=2) == dsm_loss(m, clean, 0.5, seed=2)


def test_dsm_loss_errors():
    m = GaussianScore(np.zeros((4, 4)), 1.0)
    with pytest.raises(ValueError):
        dsm_loss(m, np.zeros((0, 4, 4)), 1.0)
    with pytest.raises(ValueError):
        dsm_loss(m, np.zeros((1, 4, 4)), 0.0)


def test_net_loss_matches_dsm_loss(rng):
    # loss_and_grad uses the denoiser form; dsm_loss uses the score form
    m = ScoreNet(hidden=32, patch_shape=(8, 64), rng=np.random.default_rng(1), dtype=np.float64)
    clean = rng.normal(size=(6, 8, 64))
    sigma = 0.7
    z = np.random.default_rng(9).standard_normal(clean.shape)
    loss, _ = m.loss_and_grad(clean, z, sigma)
    assert loss == pytest.approx(dsm_loss(m, clean, sigma, seed=9), rel=1e-9)


# --- ScoreNet -----------------------------------------------------------------------

def test_zero_perceptron_is_gaussian_shrinkage(rng):
    # F = 0 leaves D(p) = c_skip p, the posterior mean for N(0, sd^2) data
    m = ScoreNet(hidden=8, patch_shape=(4, 64), params=np.zeros(ScoreNet(8, (4, 64)).n_params))
    p = rng.normal(size=(3, 4, 64))
    sigma = 0.3
    oracle = GaussianScore(np.zeros((4, 64)), m.sigma_data ** 2)
    assert np.allclose(m(p, sigma), oracle(p, sigma), rtol=1e-6)


def test_coefficients():
    m = ScoreNet(hidden=4, patch_shape=(2, 64))
    c_skip, c_out, c_in, c_noise = m.coefficients(0.5)
    assert c_skip == pytest.approx(0.5)
    assert c_out == pytest.approx(0.5 * 0.5 / np.sqrt(0.5))
    assert c_in == pytest.approx(1 / np.sqrt(0.5))
    assert c_noise == pytest.approx(np.log(0.5) / 4)


def test_gradient_matches_finite_differences(rng):
    m = ScoreNet(hidden=12, patch_shape=(2, 64), rng=np.random.default_rng(3), dtype=np.float64)
    m.params += 0.1 * rng.normal(size=m.params.size)
    clean = rng.normal(size=(5, 2, 64))
    z = rng.normal(size=clean.shape)
    sigma = 0.8
    _, g = m.loss_and_grad(clean, z, sigma)
    h = 1e-6
    for _ in range(10):
        d = rng.normal(size=m.params.size)
        d /= np.linalg.norm(d)
        lp, _ = m.loss_and_grad(clean, z, sigma, m.params + h * d)
        lm, _ = m.loss_and_grad(clean, z, sigma, m.params - h * d)
        fd = (lp - lm) / (2 * h)
        assert abs(fd - g @ d) <= 1e-4 * max(1.0, abs(fd))


def test_per_patch_sigma(rng):
    m = ScoreNet(hidden=12, patch_shape=(2, 64), rng=np.random.default_rng(4), dtype=np.float64)
    clean = rng.normal(size=(4, 2, 64))
    z = rng.normal(size=clean.shape)
    # equal levels reduce to the scalar form
    l1, g1 = m.loss_and_grad(clean, z, 0.3)
    l2, g2 = m.loss_and_grad(clean, z, np.full(4, 0.3))
    assert l1 == pytest.approx(l2, rel=1e-12) and np.allclose(g1, g2, rtol=1e-10, atol=1e-12)
    # mixed levels: the loss is the mean of the single-patch losses
    sig = np.array([0.01, 0.3, 2.0, 7.0])
    lmix, g = m.loss_and_grad(clean, z, sig)
    parts = [m.loss_and_grad(clean[i:i + 1], z[i:i + 1], sig[i])[0] for i in range(4)]
    assert lmix == pytest.approx(np.mean(parts), rel=1e-10)
    h = 1e-6
    for _ in range(5):
        d = rng.normal(size=m.params.size)
        d /= np.linalg.norm(d)
        fd = (m.loss_and_grad(clean, z, sig, m.params + h * d)[0]
              - m.loss_and_grad(clean, z, sig, m.params - h * d)[0]) / (2 * h)
        assert abs(fd - g @ d) <= 1e-4 * max(1.0, abs(fd))


def test_parameter_count_checked():
    with pytest.raises(ValueError):
        ScoreNet(hidden=4, patch_shape=(2, 64), params=np.zeros(3))


# --- score_eval -------------------------------------------------------------------------

def test_score_eval_shapes_and_errors():
    m = GaussianScore(np.zeros((64, 64)), 1.0, schedule=make_schedule(3, 0.01, 1.0))
    p = np.ones((64, 64))
    assert score_eval(m, p, 0.5).shape == (64, 64)
    assert score_eval(m, np.ones((3, 64, 64)), 0.5).shape == (3, 64, 64)
    assert np.allclose(score_eval(m, p, 1.0), -p / 2)
    with pytest.raises(ValueError):
        score_eval(m, p, 0.0)
    with pytest.raises(ValueError):
        score_eval(m, p, 1.5)
    bad = p.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        score_eval(m, bad, 0.5)


# --- training ----------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(total_steps=-1)
    TrainConfig(total_steps=0)


def test_training_is_bit_identical_for_a_seed():
    shots = small_shots()
    cfg = TrainConfig(total_steps=6, batch_size=4, patches_per_epoch=8, hidden=16, seed=3)
    sched = make_schedule(4, 0.01, 5.0)
    a = train(shots, cfg, sched, (16, 64))
    b = train(shots, cfg, sched, (16, 64))
    for ma, mb in zip(a.models, b.models):
        assert ma.params.tobytes() == mb.params.tobytes()
    c = train(shots, TrainConfig(**{**cfg.__dict__, "seed": 4}), sched, (16, 64))
    assert a.models[0].params.tobytes() != c.models[0].params.tobytes()


def test_zero_steps_gives_initialised_models():
    cfg = TrainConfig(total_steps=0, hidden=16)
    sched = make_schedule(4, 0.01, 5.0)
    res = train(small_shots(), cfg, sched, (16, 64))
    ref = init_models(cfg, sched, res.scale, (16, 64))
    assert all(np.array_equal(a.params, b.params) for a, b in zip(res.models, ref))
    assert all(len(l) == 0 for l in res.losses)


def test_training_lowers_held_out_loss():
    shots = small_shots(3)
    cfg = TrainConfig(total_steps=200, batch_size=16, patches_per_epoch=256, hidden=64,
                      learning_rate=2e-3, seed=0)
    sched = make_schedule(6, 0.01, 3.0)
    res = train(shots, cfg, sched, (16, 64))
    init = init_models(cfg, sched, res.scale, (16, 64))
    held_part = training_partitions(small_shots(1, seed=99), res.scale)[0][0]
    held = extract_patches(held_part, 64, 1, (16, 64)).patches
    for sigma in sched.levels:
        before = dsm_loss(init[0], held, sigma, seed=2)
        after = dsm_loss(res.models[0], held, sigma, seed=2)
        assert after < 0.6 * before


def test_adam_minimises_a_quadratic():
    x = np.array([3.0, -2.0])
    opt = Adam(2, lr=0.1, dtype=np.float64)
    for _ in range(500):
        opt.step(x, 2 * x)
    assert np.abs(x).max() < 1e-2


def test_ema_of_constant():
    assert np.allclose(ema(np.full(50, 2.0)), 2.0)


# --- checkpoints ---------------------------------------------------------------------------

def test_save_load_net_round_trip(tmp_path, rng):
    m = ScoreNet(hidden=16, patch_shape=(8, 64), rng=np.random.default_rng(0), scale=2.5,
                 schedule=make_schedule(3, 0.01, 1.0), partition=2, seed=7)
    save_model(m, tmp_path / "p2")
    back = load_model(tmp_path / "p2")
    assert back.params.tobytes() == m.params.tobytes()
    assert back.manifest() == m.manifest()
    p = rng.normal(size=(2, 8, 64))
    assert np.array_equal(back(p, 0.3), m(p, 0.3))


def test_save_load_gaussian(tmp_path):
    g = GaussianScore(np.arange(128.0).reshape(2, 64) / 128, 0.25, scale=1.0)
    save_model(g, tmp_path / "g")
    back = load_model(tmp_path / "g")
    assert np.allclose(back.mean, g.mean) and back.variance == 0.25


@given(sigma=st.floats(1e-3, 10))
def test_gaussian_score_formula(sigma):
    g = GaussianScore(np.ones((2, 3)), 0.5)
    p = np.zeros((1, 2, 3))
    assert np.allclose(g(p, sigma), 1 / (0.5 + sigma ** 2))
