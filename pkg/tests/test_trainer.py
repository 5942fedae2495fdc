import numpy as np
import pytest

from vdsws.net import Network
from vdsws.trainer import (
    PAPER_LR_MAP,
    TrainSchedule,
    desk_schedule,
    evaluate_accuracy,
    init_mixture_from_weights,
    objective_for,
    pretrain_l2,
    train_phase1_vd,
    train_phase2_sws,
)


def blobs(n=200, d=6, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 3, size=(classes, d))
    y = rng.integers(0, classes, n)
    x = centers[y] + rng.normal(size=(n, d))
    return x, y


def small_schedule(**kw):
    base = dict(pretrain_epochs=3, phase1_epochs=2, phase2_epochs=2, batch_size=20,
                lr_scale=30.0, K=5)
    base.update(kw)
    return TrainSchedule(**base)


def test_paper_learning_rates():
    assert PAPER_LR_MAP == {"theta": 5e-5, "log_sigma2": 1e-4, "mu": 1e-4,
                            "log_lambda": 1e-4, "log_pi": 3e-3, "bias": 5e-5}


def test_default_schedule_values():
    s = TrainSchedule()
    assert (s.pretrain_epochs, s.phase1_epochs, s.phase2_epochs) == (200, 200, 100)
    assert (s.K, s.pi0, s.gamma_alpha, s.gamma_beta) == (17, 0.999, 1e5, 10.0)
    d = desk_schedule()
    assert (d.pretrain_epochs, d.phase1_epochs, d.phase2_epochs) == (20, 20, 10)


@pytest.mark.parametrize("kw", [dict(K=4), dict(K=1), dict(pi0=1.0), dict(batch_size=0),
                                dict(tau1=-1.0), dict(lr_map={"theta": 1.0})])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        TrainSchedule(**kw)


def test_init_mixture_layout():
    w = np.array([-0.85, 0.85])  # std 0.85 -> dmu = 0.1 for K = 17
    prior = init_mixture_from_weights(w, 17, 0.999)
    np.testing.assert_allclose(np.diff(prior.mu), 0.1, rtol=1e-12)
    assert prior.mu[8] == 0.0
    assert prior.zero_index == 8
    np.testing.assert_allclose(prior.log_lambda, -2 * np.log(0.09))
    assert prior.log_lambda[0] == pytest.approx(4.815891217303744, abs=1e-12)
    assert np.exp(prior.log_pi[8]) == pytest.approx(0.999, abs=1e-12)
    assert np.exp(prior.log_pi).sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.exp(np.delete(prior.log_pi, 8)), 0.001 / 16)


def test_init_mixture_degenerate_weights():
    with pytest.raises(ValueError):
        init_mixture_from_weights(np.full(10, 0.3), 17, 0.999)


def test_pretrain_heavy_decay_shrinks_weights():
    x, y = blobs()
    net = Network.init([6, 5, 3], np.random.default_rng(0))
    sched = small_schedule(pretrain_epochs=20, pretrain_lr=1e-2)  # 200 steps
    out, w = pretrain_l2(net, (x, y), 1e3, sched)
    assert np.linalg.norm(w) < 1e-2
    np.testing.assert_array_equal(w, out.flat_theta())


def test_pretrain_learns_blobs():
    x, y = blobs()
    net = Network.init([6, 16, 3], np.random.default_rng(0))
    out, _ = pretrain_l2(net, (x, y), 1e-4, small_schedule(pretrain_epochs=30,
                                                           pretrain_lr=1e-2))
    assert evaluate_accuracy(out, (x, y)) > 0.95


def test_phase1_resets_log_sigma2_and_leaves_input_untouched():
    x, y = blobs()
    net = Network.init([6, 5, 3], np.random.default_rng(0), log_sigma2=0.0)
    before = net.flat_theta().copy()
    out = train_phase1_vd(net, (x, y), small_schedule(phase1_epochs=0))
    assert np.all(out.flat_log_sigma2() == -10.0)
    np.testing.assert_array_equal(net.flat_theta(), before)


def test_phase1_drives_useless_inputs_sparse():
    # the last three inputs are pure noise; VD should raise their log alpha
    rng = np.random.default_rng(0)
    x, y = blobs(400, 3)
    x = np.hstack([x, rng.normal(size=(400, 3))])
    net = Network.init([6, 8, 3], rng)
    sched = small_schedule(phase1_epochs=60, lr_scale=300.0)
    out = train_phase1_vd(net, (x, y), sched)
    la = out.layers[0].log_sigma2 - np.log(out.layers[0].theta ** 2 + 1e-16)
    assert np.median(la[:, 3:]) > np.median(la[:, :3])


def test_phase2_keeps_prior_invariants():
    x, y = blobs()
    net = Network.init([6, 5, 3], np.random.default_rng(1))
    sched = small_schedule()
    prior0 = init_mixture_from_weights(net.flat_theta(), 5, 0.999)
    out, prior = train_phase2_sws(train_phase1_vd(net, (x, y), sched), (x, y), prior0, sched)
    assert prior.mu[prior.zero_index] == 0.0
    assert prior.log_pi[prior.zero_index] == pytest.approx(np.log(0.999), abs=1e-12)
    assert abs(np.logaddexp.reduce(prior.log_pi)) < 1e-9
    assert not np.array_equal(prior.mu, prior0.mu)  # free means moved
    assert np.all(np.isfinite(out.flat_theta()))


def test_training_is_deterministic():
    x, y = blobs()
    sched = small_schedule()

    def run():
        net = Network.init([6, 5, 3], np.random.default_rng(sched.seed))
        net, w = pretrain_l2(net, (x, y), 1e-4, sched)
        net = train_phase1_vd(net, (x, y), sched)
        net, prior = train_phase2_sws(net, (x, y), init_mixture_from_weights(w, 5, 0.999),
                                      sched)
        return np.concatenate([net.flat_theta(), net.flat_log_sigma2(), prior.mu])

    np.testing.assert_array_equal(run(), run())


def test_objective_for_passes_scales():
    cfg = objective_for(small_schedule(tau1=0.5, gamma_alpha=2.0, gamma_beta=3.0), 123,
                        tau2=0.01)
    assert (cfg.tau1, cfg.tau2, cfg.gamma_alpha, cfg.gamma_beta, cfg.dataset_size) == \
        (0.5, 0.01, 2.0, 3.0, 123)


def test_rejects_empty_or_mismatched_data():
    net = Network.init([6, 5, 3], np.random.default_rng(0))
    with pytest.raises(ValueError):
        pretrain_l2(net, (np.zeros((0, 6)), np.zeros(0, int)), 0.0, small_schedule())
    with pytest.raises(ValueError):
        train_phase1_vd(net, (np.zeros((3, 6)), np.zeros(2, int)), small_schedule())


def test_accuracy_ties_go_to_lowest_class():
    class Flat:
        def forward(self, x):
            return np.zeros((len(x), 3))

    assert evaluate_accuracy(Flat(), (np.zeros((4, 2)), np.array([0, 0, 1, 2]))) == 0.5


def test_init_mixture_symmetric_grid():
    prior = init_mixture_from_weights(np.array([-0.85, 0.85]), 17, 0.999)
    np.testing.assert_allclose(prior.mu, -prior.mu[::-1], atol=1e-15)
    assert prior.mu[0] == pytest.approx(-0.8) and prior.mu[-1] == pytest.approx(0.8)
    np.testing.assert_array_equal(prior.fixed_mask, np.arange(17) == 8)


def test_pretrain_without_decay_fits_separable_set():
    x, y = blobs(n=60, seed=4)
    net = Network.init([6, 10, 3], np.random.default_rng(1))
    out, _ = pretrain_l2(net, (x, y), 0.0, small_schedule(pretrain_epochs=40,
                                                          pretrain_lr=1e-2))
    assert evaluate_accuracy(out, (x, y)) == 1.0


def test_pretrain_is_bit_reproducible():
    x, y = blobs()
    sched = small_schedule()
    runs = [pretrain_l2(Network.init([6, 5, 3], np.random.default_rng(0)), (x, y), 1e-4,
                        sched)[1] for _ in range(2)]
    np.testing.assert_array_equal(*runs)


def test_phase1_sparsifies_while_keeping_accuracy():
    x, y = blobs(400, 6, seed=2)
    sched = small_schedule(pretrain_epochs=20, phase1_epochs=30, lr_scale=300.0,
                           pretrain_lr=1e-2, tau1=0.2)
    pre, _ = pretrain_l2(Network.init([6, 20, 3], np.random.default_rng(0)), (x, y), 1e-4,
                         sched)
    out = train_phase1_vd(pre, (x, y), sched)
    b = np.concatenate([np.exp(l.log_sigma2).ravel() / (l.theta.ravel() ** 2
                                                        + np.exp(l.log_sigma2).ravel())
                        for l in out.layers])
    assert np.any(b > 0.95)
    assert evaluate_accuracy(out, (x, y)) >= evaluate_accuracy(pre, (x, y)) - 0.02


def test_phase2_pulls_weights_toward_their_components():
    from vdsws.vb_core import gm_responsibilities

    x, y = blobs(300, 6, seed=5)
    sched = small_schedule(pretrain_epochs=20, phase1_epochs=10, phase2_epochs=15,
                           pretrain_lr=1e-2, tau1=0.2, tau2_phase2=0.05)
    pre, w = pretrain_l2(Network.init([6, 12, 3], np.random.default_rng(0)), (x, y), 1e-4,
                         sched)
    vd = train_phase1_vd(pre, (x, y), sched)
    prior0 = init_mixture_from_weights(w, 5, 0.999)

    def spread(net, prior):
        th = net.flat_theta()
        k = np.argmax(gm_responsibilities(th, prior), axis=1)
        return float(np.mean(np.abs(th - prior.mu[k])))

    out, prior = train_phase2_sws(vd, (x, y), prior0, sched)
    assert spread(out, prior) < spread(vd, prior0)


def test_accuracy_perfect_and_chance():
    from vdsws.net import VariationalDenseLayer

    x = np.eye(3)
    ident = Network([VariationalDenseLayer(np.eye(3), np.zeros((3, 3)), np.zeros(3))])
    assert evaluate_accuracy(ident, (x, np.arange(3))) == 1.0
    rng = np.random.default_rng(0)
    n = 5000
    zero = Network([VariationalDenseLayer(np.zeros((10, 4)), np.zeros((10, 4)), np.zeros(10))])
    acc = evaluate_accuracy(zero, (rng.normal(size=(n, 4)), rng.integers(0, 10, n)))
    assert abs(acc - 0.1) <= 3 * np.sqrt(0.09 / n)


def test_accuracy_rejects_empty():
    with pytest.raises(ValueError):
        evaluate_accuracy(Network.init([2, 2], np.random.default_rng(0)),
                          (np.zeros((0, 2)), np.zeros(0, int)))
