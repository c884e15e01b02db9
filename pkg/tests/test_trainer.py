import numpy as np
import pytest

from aesad import nn
from aesad.data import Dataset
from aesad.datasets import gaussian_blobs
from aesad.loss import lambda_schedule
from aesad.nn import init_network
from aesad.trainer import TrainConfig, TrainReport, fit, score, train, train_neg, train_standard


def small_set(n_norm=60, n_anom=6, dim=4, seed=0):
    return gaussian_blobs(n_norm, n_anom, dim, seed, normal_center=0.3, anomaly_center=0.7, scale=0.05)


def params_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


class TestConfig:
    def test_lambda_resolution(self):
        assert TrainConfig(lam=3.0).resolve_lambda(100, 10) == 3.0
        assert TrainConfig(alpha=1.0).resolve_lambda(100, 10) == 10.0
        assert TrainConfig().resolve_lambda(100, 10) == lambda_schedule(0.1, 100, 10)
        assert TrainConfig().resolve_lambda(100, 0) == 1.0

    def test_alpha_without_anomalies(self):
        with pytest.raises(ValueError):
            TrainConfig(alpha=0.5).resolve_lambda(100, 0)

    @pytest.mark.parametrize(
        "kwargs",
        [{"method": "svm"}, {"epochs": 0}, {"batch_size": 0}, {"lam": 1, "alpha": 1}, {"lam": -1}, {"eval_every": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestScore:
    def test_zero_weight_net(self):
        net = init_network([3, 2, 3], 0)
        for layer in net.layers:
            layer.weights[:] = 0
        x = np.array([[0.1, 0.5, 1.0], [0.0, 0.0, 0.0]])
        np.testing.assert_allclose(score(net, x), ((x - 0.5) ** 2).sum(axis=1), rtol=1e-15)

    def test_batch_composition(self):
        net = init_network([5, 8, 3, 8, 5], 2)
        x = np.random.default_rng(0).random((130, 5))
        full = score(net, x)
        for i in (0, 63, 64, 129):
            assert score(net, x[i])[0] == full[i]
        assert np.array_equal(score(net, x[::-1]), full[::-1])

    def test_perfect_reconstruction(self):
        net = init_network([3, 2, 3], 0)
        for layer in net.layers:
            layer.weights[:] = 0
        assert score(net, np.full((2, 3), 0.5)).tolist() == [0.0, 0.0]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            score(init_network([2, 1, 2], 0), np.zeros((1, 3)))


class TestTrain:
    def test_overfit_single_normal_point(self):
        x = np.array([[0.2, 0.7, 0.4, 0.9]])
        net = init_network([4, 8, 2, 8, 4], 0)
        cfg = TrainConfig(epochs=1500, batch_size=1, lr=1e-2, seed=0)
        train(net, Dataset(x, [0]), cfg)
        assert score(net, x)[0] < 1e-3

    def test_single_anomaly_converges_to_negative_image(self):
        x = np.array([[0.2, 0.7, 0.4, 0.9]])
        net = init_network([4, 8, 2, 8, 4], 0)
        cfg = TrainConfig(epochs=1500, batch_size=1, lr=1e-2, lam=1.0, seed=0)
        train(net, Dataset(x, [1]), cfg)
        np.testing.assert_allclose(nn.forward(net, x), 1 - x, atol=0.02)
        assert score(net, x)[0] == pytest.approx(((2 * x - 1) ** 2).sum(), rel=0.05)

    def test_deterministic(self):
        ds = small_set()
        runs = []
        for _ in range(2):
            net = init_network([4, 6, 2, 6, 4], 3)
            net, rep = train(net, ds, TrainConfig(epochs=5, seed=3))
            runs.append((net, rep))
        assert runs[0][1].losses == runs[1][1].losses
        assert params_equal(runs[0][0], runs[1][0])

    def test_report_series(self):
        ds = small_set()
        net = init_network([4, 6, 2, 6, 4], 0)
        _, rep = train(net, ds, TrainConfig(epochs=6, eval_every=2, seed=0), test_set=ds)
        assert len(rep.losses) == 6 and rep.auc_epochs == [2, 4, 6]
        assert rep.final_epoch == 6 and rep.lam == lambda_schedule(0.1, 60, 6)

    def test_loss_trend(self):
        ds = small_set()
        net = init_network([4, 16, 4, 16, 4], 1)
        _, rep = train(net, ds, TrainConfig(epochs=60, seed=1))
        k = len(rep.losses) // 10
        assert min(rep.losses[-k:]) <= min(rep.losses[:k])

    def test_errors(self):
        net = init_network([4, 3, 4], 0)
        with pytest.raises(ValueError):
            train(net, Dataset(np.zeros((0, 4)), []), TrainConfig())
        with pytest.raises(ValueError):
            train(net, Dataset(np.zeros((2, 3)), [0, 0]), TrainConfig())
        with pytest.raises(ValueError):
            train(net, Dataset(np.zeros((2, 4)), [0, 0]), TrainConfig(alpha=0.5))

    def test_report_csv(self, tmp_path):
        rep = TrainReport(losses=[0.5, 0.25], auc_epochs=[2], aucs=[0.75])
        rep.write_csv(tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text() == "epoch,loss,auc\n1,0.500000,\n2,0.250000,0.750000\n"


class TestStandard:
    def test_equals_aesad_without_anomalies(self):
        ds = small_set()
        normals = ds.subset(np.flatnonzero(ds.labels == 0))
        a, ra = train(init_network([4, 6, 2, 6, 4], 5), normals, TrainConfig(epochs=4, seed=5))
        b, rb = train_standard(init_network([4, 6, 2, 6, 4], 5), normals, TrainConfig(epochs=4, seed=5))
        assert params_equal(a, b) and ra.losses == rb.losses

    def test_labeled_anomalies_excluded(self):
        ds = small_set()
        normals = ds.subset(np.flatnonzero(ds.labels == 0))
        cfg = TrainConfig(method="standard_ae", epochs=4, seed=1)
        a, _ = fit(init_network([4, 6, 2, 6, 4], 1), ds, cfg)
        b, _ = fit(init_network([4, 6, 2, 6, 4], 1), normals, cfg)
        assert params_equal(a, b)

    def test_no_normals(self):
        with pytest.raises(ValueError):
            train_standard(init_network([2, 1, 2], 0), Dataset(np.zeros((2, 2)), [1, 1]), TrainConfig())


class TestNegative:
    def test_phase_two_raises_anomaly_scores(self):
        ds = small_set()
        anomalies = ds.features[ds.labels == 1]
        cfg = TrainConfig(method="neg_ae", epochs=20, seed=0, neg_fraction=0.5)
        phase1, _ = train_standard(init_network([4, 6, 2, 6, 4], 0), ds, cfg)
        before = score(phase1, anomalies).mean()
        net, rep = fit(init_network([4, 6, 2, 6, 4], 0), ds, cfg)
        assert score(net, anomalies).mean() > before
        assert len(rep.losses) == 30 and rep.final_epoch == 30

    def test_deterministic(self):
        ds = small_set()
        cfg = TrainConfig(method="neg_ae", epochs=4, seed=2)
        a, ra = fit(init_network([4, 6, 2, 6, 4], 2), ds, cfg)
        b, rb = fit(init_network([4, 6, 2, 6, 4], 2), ds, cfg)
        assert params_equal(a, b) and ra.losses == rb.losses

    def test_needs_anomalies(self):
        ds = small_set(n_anom=0)
        with pytest.raises(ValueError):
            train_neg(init_network([4, 3, 4], 0), ds, TrainConfig(method="neg_ae"))
