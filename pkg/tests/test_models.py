import numpy as np
import pytest

from mmgibbs.errors import CapabilityError, ChecksumError, ConfigError, ParseError
from mmgibbs.evaluation import GridOracle
from mmgibbs.models import (
    GaussianMixture,
    MixtureModel,
    MlpEnergy,
    PosteriorNet,
    ScoreMlp,
    gaussian,
    load_checkpoint,
    mog_hessian,
    mog_logpdf,
    mog_score,
    noisy_mog,
    corner_mog,
    save_checkpoint,
    true_posterior_logpdf,
)
from mmgibbs.numgrad import MlpParams, grad_input, hessian_input


def fd(fn, x, h=1e-5):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def test_standard_normal_logpdf_at_origin():
    assert np.isclose(mog_logpdf(gaussian([0.0, 0.0], 1.0), np.zeros(2)), -np.log(2 * np.pi), rtol=1e-15)


def test_corner_mog_at_origin_matches_direct_summation():
    mog = corner_mog()
    direct = np.log(sum(0.25 * np.exp(-0.5 * np.sum(m**2) / 0.04) / (2 * np.pi * 0.04) for m in mog.means))
    assert np.isclose(mog_logpdf(mog, np.zeros(2)), direct, rtol=1e-13)
    assert np.allclose(mog_score(mog, np.zeros(2)), 0.0, atol=1e-12)


def test_duplicate_components_equal_single_gaussian():
    two = GaussianMixture([0.5, 0.5], [[0.3, 0.1], [0.3, 0.1]], 0.4)
    one = gaussian([0.3, 0.1], 0.4)
    X = np.random.default_rng(0).standard_normal((10, 2))
    assert np.allclose(two.logpdf(X), one.logpdf(X), rtol=1e-14)


def test_single_gaussian_score_and_hessian():
    mu = np.array([0.5, -0.2])
    g = gaussian(mu, 0.3)
    x = np.array([0.1, 0.4])
    assert np.allclose(mog_score(g, x), (mu - x) / 0.09, rtol=1e-13)
    assert np.allclose(mog_hessian(g, x), -np.eye(2) / 0.09, rtol=1e-13)


def test_score_and_hessian_vs_finite_differences():
    mog = corner_mog()
    x = np.array([0.5, 0.2])
    assert rel(mog_score(mog, x), fd(mog.logpdf, x)) <= 1e-6
    assert rel(mog_hessian(mog, x), fd(mog.score, x)) <= 1e-6


def test_finite_difference_agreement_at_many_points():
    mog = corner_mog()
    X = np.random.default_rng(1).uniform(-1.5, 1.5, (100, 2))
    worst_s = max(rel(mog.score(x), fd(mog.logpdf, x)) for x in X)
    worst_h = max(rel(mog.hessian(x), fd(mog.score, x)) for x in X)
    assert worst_s <= 1e-6 and worst_h <= 1e-6


def test_far_from_components_stays_finite():
    mog = corner_mog()
    x = np.array([40.0, -35.0])
    assert np.isfinite(mog.logpdf(x))
    assert np.all(np.isfinite(mog.score(x)))
    assert np.all(np.isfinite(mog.hessian(x)))


def test_weights_validated():
    with pytest.raises(ConfigError):
        GaussianMixture([0.5, 0.4], [[0, 0], [1, 1]], 0.2)
    with pytest.raises(ConfigError):
        GaussianMixture([1.5, -0.5], [[0, 0], [1, 1]], 0.2)
    with pytest.raises(ConfigError):
        GaussianMixture([1.0], [[0, 0]], 0.0)
    GaussianMixture([0.5, 0.5 + 1e-13], [[0, 0], [1, 1]], 0.2)


def test_noisy_mog():
    mog = corner_mog()
    assert noisy_mog(mog, 0.0).component_std == mog.component_std
    assert np.isclose(noisy_mog(mog, 0.2).component_std, np.sqrt(0.08))
    assert np.isclose(noisy_mog(mog, 0.2).component_std, 0.2828, atol=1e-4)
    twice = noisy_mog(noisy_mog(mog, 0.3), 0.4)
    assert np.isclose(twice.component_std**2, 0.04 + 0.09 + 0.16, rtol=1e-14)
    with pytest.raises(ConfigError):
        noisy_mog(mog, -1.0)


def test_noisy_mog_matches_monte_carlo():
    rng = np.random.default_rng(2)
    mog, sigma, n = corner_mog(), 0.2, 1_000_000
    xt = mog.sample(n, rng) + sigma * rng.standard_normal((n, 2))
    noisy = noisy_mog(mog, sigma)
    # exact moments of the noisy mixture
    mean = noisy.weights @ noisy.means
    second = noisy.weights @ (noisy.means**2) + noisy.component_std**2
    var = second - mean**2
    assert np.all(np.abs(xt.mean(0) - mean) <= 3 * np.sqrt(var / n))
    fourth = noisy.weights @ (noisy.means**4 + 6 * noisy.means**2 * noisy.component_std**2) + 3 * noisy.component_std**4
    se2 = np.sqrt((fourth - second**2) / n)
    assert np.all(np.abs((xt**2).mean(0) - second) <= 3 * se2)


def test_true_posterior_single_gaussian_closed_form():
    mu, sd, sigma = np.array([0.2, -0.4]), 0.6, 0.5
    xt = np.array([1.0, 0.3])
    pm = (sigma**2 * mu + sd**2 * xt) / (sigma**2 + sd**2)
    pv = sd**2 * sigma**2 / (sigma**2 + sd**2)
    X = np.random.default_rng(3).standard_normal((20, 2))
    want = -0.5 * np.sum((X - pm) ** 2, 1) / pv - np.log(2 * np.pi * pv)
    assert np.allclose(true_posterior_logpdf(gaussian(mu, sd), sigma, xt, X), want, rtol=1e-12)


def test_true_posterior_integrates_to_one():
    grid = GridOracle()
    lp = true_posterior_logpdf(corner_mog(), 0.2, np.array([0.8, 0.9]), grid.points())
    assert abs(np.exp(lp) @ grid.weights() - 1.0) <= 1e-4


def test_true_posterior_tends_to_prior_for_large_noise():
    mog = gaussian([0.1, 0.2], 0.2)
    grid = GridOracle()
    prior = mog.logpdf(grid.points())
    post = true_posterior_logpdf(mog, 2.0, np.array([0.5, -0.3]), grid.points())
    kl = np.sum(np.exp(post) * (post - prior) * grid.weights())
    assert kl <= 1e-3


def test_mixture_model_is_convolution_oracle():
    m = MixtureModel(corner_mog())
    x = np.array([0.3, 0.7])
    assert np.allclose(m.score(x, 0.2), noisy_mog(corner_mog(), 0.2).score(x))
    assert np.allclose(m.score(x, 0.2), -fd(lambda z: np.atleast_1d(m.energy(z, 0.2)), x)[0], rtol=1e-6)
    v = np.array([1.0, -2.0])
    assert np.allclose(m.hvp(x, v, 0.2), m.hessian(x, 0.2) @ v)
    with pytest.raises(ConfigError):
        m.score(x)


def mlp(sizes, seed=0):
    return MlpParams.init(sizes, np.random.default_rng(seed))


def test_mlp_energy_surfaces():
    p = mlp([2, 16, 16, 1])
    m = MlpEnergy(p)
    x = np.array([0.2, -0.5])
    assert np.allclose(m.score(x), -grad_input(p, x))
    assert np.allclose(m.hessian(x), hessian_input(p, x))
    v = np.array([0.3, 1.1])
    assert np.allclose(m.hvp(x, v), hessian_input(p, x) @ v)
    H, asym = m.hessian(x, return_asymmetry=True)
    assert asym <= 1e-8 and np.allclose(H, H.T)


def test_sigma_conditioned_energy_uses_log_sigma_column():
    p = mlp([3, 16, 1])
    m = MlpEnergy(p, sigma_conditioned=True)
    assert m.dim == 2
    x = np.array([0.2, -0.5])
    full = grad_input(p, np.array([0.2, -0.5, np.log(0.3)]))
    assert np.allclose(m.score(x, 0.3), -full[:2])
    assert not np.allclose(m.score(x, 0.3), m.score(x, 0.6))
    with pytest.raises(ConfigError):
        m.score(x)


def test_score_mlp_capabilities():
    p = mlp([2, 8, 2])
    m = ScoreMlp(p)
    assert not m.has_exact_hessian
    x, v = np.array([0.1, 0.2]), np.array([1.0, 0.0])
    J = fd(m.score, x)
    assert np.allclose(m.hvp(x, v), -J @ v, rtol=1e-6)
    with pytest.raises(CapabilityError):
        m.hessian(x)
    with pytest.raises(CapabilityError):
        m.energy(x)


def test_posterior_net_zero_and_clamp():
    net = PosteriorNet(MlpParams.zeros([2, 4, 4]))
    mean, log_std = net.predict(np.array([0.3, 0.4]))
    assert np.all(mean == 0) and np.all(np.exp(2 * log_std) == 1)
    p = MlpParams.zeros([2, 4])
    p.biases[0][:] = [0.0, 0.0, 50.0, -50.0]
    _, log_std = PosteriorNet(p).predict(np.zeros(2))
    assert list(log_std) == [5.0, -10.0]


@pytest.mark.parametrize("kind", ["energy", "score", "posterior"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, kind):
    if kind == "energy":
        model = MlpEnergy(mlp([3, 8, 1]), sigma_conditioned=True)
    elif kind == "score":
        model = ScoreMlp(mlp([2, 8, 2]))
    else:
        model = PosteriorNet(mlp([2, 8, 4]))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, {"sigma": 0.2})
    ck = load_checkpoint(path)
    assert type(ck.model) is type(model)
    assert ck.meta == {"sigma": 0.2}
    for a, b in zip(ck.model.params.arrays(), model.params.arrays()):
        assert np.array_equal(a, b)
    assert getattr(ck.model, "sigma_conditioned", False) == getattr(model, "sigma_conditioned", False)


def test_checkpoint_truncation_and_tamper_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, MlpEnergy(mlp([2, 4, 1])))
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ChecksumError):
        load_checkpoint(path)
    path.write_text(text.replace('"energy"', '"score"'))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "nope.ckpt")
    bad = tmp_path / "bad.ckpt"
    import hashlib

    body = "{not json\n"
    bad.write_text(body + "# sha256 " + hashlib.sha256(body.encode()).hexdigest() + "\n")
    with pytest.raises(ParseError):
        load_checkpoint(bad)
