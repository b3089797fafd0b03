import numpy as np
import pytest

from fedsilo import bnorm, nn


def make_stats(c, momentum=0.1):
    return (np.zeros(c), np.ones(c), momentum)


def test_two_point_batch_normalizes_to_unit():
    x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    gamma, beta = np.ones(1), np.zeros(1)
    mean, var, momentum = make_stats(1)
    y, _ = bnorm.bn_forward_train(x, gamma, beta, mean, var, momentum, eps=0.0)
    np.testing.assert_allclose(y.ravel(), [-1.0, 1.0], atol=1e-12)


def test_zero_gamma_gives_constant_beta():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 2, 3, 3))
    gamma = np.zeros(2)
    beta = np.array([0.5, -1.0])
    mean, var, momentum = make_stats(2)
    y, _ = bnorm.bn_forward_train(x, gamma, beta, mean, var, momentum, eps=1e-5)
    for c in range(2):
        np.testing.assert_allclose(y[:, c], beta[c])


def ema_oracle(mu0, var0, mu_b, var_b, momentum, k=1):
    """Independent scalar EMA recursion."""
    mu, var = mu0, var0
    for _ in range(k):
        mu = (1 - momentum) * mu + momentum * mu_b
        var = (1 - momentum) * var + momentum * var_b
    return mu, var


def test_running_stat_update_matches_scalar_ema():
    # construct a batch with exact mean 2 and biased variance 4
    x = np.array([0.0, 4.0]).reshape(2, 1, 1, 1)
    gamma, beta = np.ones(1), np.zeros(1)
    mean, var = np.zeros(1), np.ones(1)
    bnorm.bn_forward_train(x, gamma, beta, mean, var, momentum=0.1, eps=1e-5)
    mu_exp, var_exp = ema_oracle(0.0, 1.0, 2.0, 4.0, 0.1)
    assert mean[0] == pytest.approx(mu_exp, abs=1e-12)   # 0.2
    assert var[0] == pytest.approx(var_exp, abs=1e-12)   # 1.3


def test_eval_identity_when_stats_are_standard():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 2, 4, 4))
    y = bnorm.bn_forward_eval(x, np.ones(2), np.zeros(2),
                              np.zeros(2), np.ones(2), eps=0.0)
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_eval_constant_input_gives_beta():
    mu = np.array([2.0, -1.0])
    x = np.broadcast_to(mu[None, :, None, None], (3, 2, 4, 4)).copy()
    beta = np.array([0.7, 0.3])
    y = bnorm.bn_forward_eval(x, np.ones(2), beta, mu, np.ones(2), eps=1e-5)
    for c in range(2):
        np.testing.assert_allclose(y[:, c], beta[c], atol=1e-12)


def test_train_equals_eval_when_batch_stats_match_running():
    # batch constructed so batch mean/var equal the stored running stats
    x = np.array([-1.0, 1.0, -1.0, 1.0]).reshape(4, 1, 1, 1)
    gamma, beta = np.array([1.3]), np.array([-0.2])
    mean, var = np.zeros(1), np.ones(1)
    y_eval = bnorm.bn_forward_eval(x, gamma, beta, mean, var, eps=1e-5)
    y_train, _ = bnorm.bn_forward_train(x, gamma, beta, mean.copy(), var.copy(),
                                        momentum=0.1, eps=1e-5)
    np.testing.assert_allclose(y_train, y_eval, atol=1e-12)


def test_backward_zero_upstream_gives_zero():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 2, 3, 3))
    _, cache = bnorm.bn_forward_train(x, np.ones(2), np.zeros(2),
                                      np.zeros(2), np.ones(2), 0.1, 1e-5)
    dx, dgamma, dbeta = bnorm.bn_backward(cache, np.zeros_like(x))
    assert not dx.any() and not dgamma.any() and not dbeta.any()


def test_backward_dx_sums_to_zero_per_channel():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 2, 3, 3))
    _, cache = bnorm.bn_forward_train(x, rng.standard_normal(2) + 2.0,
                                      rng.standard_normal(2),
                                      np.zeros(2), np.ones(2), 0.1, 0.0)
    dx, _, _ = bnorm.bn_backward(cache, rng.standard_normal(x.shape))
    np.testing.assert_allclose(dx.sum(axis=(0, 2, 3)), 0.0, atol=1e-12)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 2, 3, 3))
    gamma = rng.standard_normal(2) + 1.5
    beta = rng.standard_normal(2)
    dy = rng.standard_normal(x.shape)
    eps = 1e-5

    def out(x_, g_, b_):
        y, _ = bnorm.bn_forward_train(x_, g_, b_, np.zeros(2), np.ones(2),
                                      0.1, eps)
        return (y * dy).sum()

    _, cache = bnorm.bn_forward_train(x, gamma, beta, np.zeros(2), np.ones(2),
                                      0.1, eps)
    dx, dgamma, dbeta = bnorm.bn_backward(cache, dy)
    h = 1e-6
    for arr, grad in ((x, dx), (gamma, dgamma), (beta, dbeta)):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = out(x, gamma, beta)
            flat[j] = orig - h
            lm = out(x, gamma, beta)
            flat[j] = orig
            num = (lp - lm) / (2 * h)
            assert gflat[j] == pytest.approx(num, rel=1e-4, abs=1e-4)


def test_train_normalized_output_has_zero_mean_unit_var():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((8, 3, 4, 4)) * 3.0 + 1.0
    y, _ = bnorm.bn_forward_train(x, np.ones(3), np.zeros(3),
                                  np.zeros(3), np.ones(3), 0.1, 1e-12)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-6)


def test_affine_equivariance_of_eval():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 2, 4, 4))
    gamma = rng.standard_normal(2)
    beta = rng.standard_normal(2)
    mean = rng.standard_normal(2)
    var = rng.uniform(0.5, 2.0, 2)
    a, b = 1.5, -0.25
    y = bnorm.bn_forward_eval(x, gamma, beta, mean, var, 1e-5)
    y2 = bnorm.bn_forward_eval(x, a * gamma, a * beta + b, mean, var, 1e-5)
    np.testing.assert_allclose(y2, a * y + b, atol=1e-12)


def test_repeated_batches_converge_geometrically():
    x = np.array([0.0, 4.0]).reshape(2, 1, 1, 1)
    momentum = 0.1
    mean, var = np.zeros(1), np.ones(1)
    mu_b = 2.0
    for k in range(1, 12):
        bnorm.bn_forward_train(x, np.ones(1), np.zeros(1), mean, var,
                               momentum, 1e-5)
        expected = mu_b - (1 - momentum) ** k * (mu_b - 0.0)
        assert mean[0] == pytest.approx(expected, abs=1e-10)


# --- AdaBN ---

def test_adabn_requires_batches():
    spec = nn.dcnn_spec(True, (4,), in_channels=3, image_size=8)
    params = nn.build_model(spec, seed=0)
    with pytest.raises(ValueError):
        bnorm.adabn_recompute(spec, params, [])


def test_adabn_constant_batch_gives_zero_variance():
    # identity conv so the first BN layer sees the constant input itself
    spec = nn.ModelSpec(
        layers=(nn.LayerSpec(nn.CONV3X3, in_channels=1, out_channels=1),
                nn.LayerSpec(nn.BATCH_NORM, in_channels=1),
                nn.LayerSpec(nn.GLOBAL_AVG_POOL),
                nn.LayerSpec(nn.DENSE, in_channels=1, out_channels=2)),
        with_bn=True, in_channels=1, image_size=8,
    )
    params = nn.build_model(spec, seed=0)
    params[(0, "weight")][:] = 0.0
    params[(0, "weight")][0, 0, 1, 1] = 1.0
    batch = np.full((4, 1, 8, 8), 0.5)
    bnorm.adabn_recompute(spec, params, [batch])
    np.testing.assert_allclose(params[(1, "var")], 0.0, atol=1e-12)
    # eval forward still finite thanks to eps
    logits, _ = nn.forward(spec, params, batch, mode="eval")
    assert np.all(np.isfinite(logits))


def test_adabn_first_layer_mean_tracks_input_shift():
    # BN directly after an identity conv: shifting the input by +c shifts
    # the recomputed first-layer mean by exactly +c
    spec = nn.ModelSpec(
        layers=(nn.LayerSpec(nn.CONV3X3, in_channels=1, out_channels=1),
                nn.LayerSpec(nn.BATCH_NORM, in_channels=1),
                nn.LayerSpec(nn.GLOBAL_AVG_POOL),
                nn.LayerSpec(nn.DENSE, in_channels=1, out_channels=2)),
        with_bn=True, in_channels=1, image_size=6,
    )
    params = nn.build_model(spec, seed=0)
    params[(0, "weight")][:] = 0.0
    params[(0, "weight")][0, 0, 1, 1] = 1.0
    rng = np.random.default_rng(7)
    batch = rng.uniform(0.2, 0.8, (8, 1, 6, 6))
    bnorm.adabn_recompute(spec, params, [batch])
    mu1 = params[(1, "mean")].copy()
    gamma1 = params[(1, "gamma")].copy()
    c = 0.3
    bnorm.adabn_recompute(spec, params, [batch + c])
    assert params[(1, "mean")][0] == pytest.approx(mu1[0] + c, abs=1e-12)
    assert np.array_equal(params[(1, "gamma")], gamma1)


def test_adabn_leaves_non_statistics_untouched():
    spec = nn.dcnn_spec(True, (4, 8), in_channels=3, image_size=8)
    params = nn.build_model(spec, seed=1)
    before = nn.copy_params(params)
    rng = np.random.default_rng(8)
    bnorm.adabn_recompute(spec, params, [rng.uniform(0, 1, (4, 3, 8, 8))])
    for k in nn.grad_keys(spec):
        assert np.array_equal(params[k], before[k])


def test_adabn_idempotent():
    spec = nn.dcnn_spec(True, (4, 8), in_channels=3, image_size=8)
    params = nn.build_model(spec, seed=2)
    rng = np.random.default_rng(9)
    batches = [rng.uniform(0, 1, (4, 3, 8, 8)) for _ in range(3)]
    bnorm.adabn_recompute(spec, params, batches)
    first = {k: params[k].copy() for k in nn.stat_keys(spec)}
    bnorm.adabn_recompute(spec, params, batches)
    for k, v in first.items():
        np.testing.assert_allclose(params[k], v, atol=1e-10)


def test_adabn_closure_on_training_distribution():
    # a model whose stats converged on its own data: recomputing on that
    # same data reproduces the running statistics
    from fedsilo.optim import AdamHyper, AdamState, adam_step

    spec = nn.dcnn_spec(True, (4,), in_channels=3, image_size=8)
    params = nn.build_model(spec, seed=3)
    rng = np.random.default_rng(10)
    batch = rng.uniform(0, 1, (16, 3, 8, 8))
    labels = rng.integers(0, 2, 16)
    adam = AdamState.init(params, nn.grad_keys(spec))
    hyper = AdamHyper(lr=0.0)  # only the BN statistics evolve
    for _ in range(300):
        logits, caches = nn.forward(spec, params, batch, mode="train")
        grads, _ = nn.backward(spec, params, caches, logits, labels)
        adam_step(params, grads, adam, hyper)
    running = {k: params[k].copy() for k in nn.stat_keys(spec)}
    bnorm.adabn_recompute(spec, params, [batch])
    for k, v in running.items():
        np.testing.assert_allclose(params[k], v, rtol=1e-6, atol=1e-8)
