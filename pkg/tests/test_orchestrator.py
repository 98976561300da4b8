import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqfl import qkd
from vqfl.config import build_federation, parse_config
from vqfl.data import generate_blobs, scaler_fit, scaler_transform
from vqfl.dataset import LabeledDataset
from vqfl.models import VqcModel
from vqfl.optimize import OptimizerConfig
from vqfl.orchestrator import (
    ClientState,
    Federation,
    FederationSettings,
    FtMode,
    QkdLink,
    RoundAbort,
    ServerState,
    local_round,
    secure_downlink,
    secure_uplink,
    server_fine_tune,
    weighted_average,
    write_metrics,
)
from vqfl.privacy import DpConfig


def small_config(**overrides):
    raw = {
        "devices": 3,
        "rounds": 2,
        "optimizer": {"maxiter": 5},
        "data": {"n_samples": 160, "server_val_count": 20, "server_test_count": 20},
        "root_seed": 11,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return parse_config(raw)


def scaled_blobs(n, seed):
    ds = generate_blobs(n, 2, 2, class_separation=6.0, seed=seed)
    return scaler_transform(ds, scaler_fit(ds))


def trajectories(history):
    return [m.without_times() for m in history]


class TestWeightedAverage:
    def test_equal_counts(self):
        np.testing.assert_allclose(weighted_average([[1.0, 2.0], [3.0, 4.0]], [5, 5]), [2.0, 3.0])

    def test_unequal_counts(self):
        np.testing.assert_allclose(weighted_average([[0.0], [4.0]], [1, 3]), [3.0])

    def test_single(self):
        np.testing.assert_array_equal(weighted_average([[0.25, -1.0]], [7]), [0.25, -1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31))
    def test_brute_force_oracle(self, k, p, seed):
        rng = np.random.default_rng(seed)
        params = rng.uniform(-5, 5, size=(k, p)).tolist()
        counts = rng.integers(1, 100, size=k).tolist()
        total = sum(counts)
        expected = [sum(counts[i] * params[i][j] for i in range(k)) / total for j in range(p)]
        np.testing.assert_allclose(weighted_average(params, counts), expected, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("params,counts", [([], []), ([[1.0]], [0]), ([[1.0], [2.0]], [1]),
                                               ([[1.0], [1.0, 2.0]], [1, 1])])
    def test_invalid(self, params, counts):
        with pytest.raises(ValueError):
            weighted_average(params, counts)


class TestSecureChannel:
    def test_plain_round_trip_quantisation(self):
        theta = np.random.default_rng(0).uniform(-np.pi, np.pi, 6)
        out = secure_downlink(secure_uplink(theta, None, None, None))
        assert np.max(np.abs(out - theta)) <= 5e-13

    def test_qkd_is_lossless_relative_to_plain(self):
        theta = np.random.default_rng(1).uniform(-np.pi, np.pi, 6)
        plain = secure_downlink(secure_uplink(theta, None, None, None))
        keyed = secure_uplink(theta, None, None, QkdLink(), qkd_rng=np.random.default_rng(2))
        assert keyed.key is not None
        assert keyed.payload != qkd.serialize_params(theta)
        np.testing.assert_array_equal(secure_downlink(keyed), plain)

    @pytest.mark.parametrize("cipher", list(qkd.Cipher))
    def test_ciphers(self, cipher):
        theta = [0.5, -1.25]
        tx = secure_uplink(theta, None, None, QkdLink(cipher=cipher), qkd_rng=np.random.default_rng(3))
        np.testing.assert_allclose(secure_downlink(tx), theta, atol=5e-13)

    def test_dp_applied_before_serialisation(self):
        dp = DpConfig(epsilon=1.0, clip_nonnegative=True)
        tx = secure_uplink([-5.0, -5.0, -5.0], dp, np.random.default_rng(4), None)
        out = secure_downlink(tx)
        assert np.all(out >= 0)

    def test_dp_needs_rng(self):
        with pytest.raises(ValueError):
            secure_uplink([1.0], DpConfig(), None, None)

    def test_qkd_needs_rng(self):
        with pytest.raises(ValueError):
            secure_uplink([1.0], None, None, QkdLink())

    def test_noisy_channel_aborts(self):
        link = QkdLink(channel=qkd.ChannelConfig(0.3), n_allowed=0)
        with pytest.raises(qkd.QkdAbort):
            secure_uplink([1.0, 2.0], None, None, link, qkd_rng=np.random.default_rng(5))


class TestLocalRound:
    def setup_method(self):
        ds = scaled_blobs(40, 0)
        self.client = ClientState(0, ds.subset(range(30)), ds.subset(range(30, 40)))
        self.model = VqcModel(2, 1, 2)

    def test_maxiter_zero_returns_incoming(self):
        incoming = np.array([0.1, -0.2, 0.3, 0.4])
        out, metrics = local_round(self.client, incoming, self.model, OptimizerConfig(maxiter=0))
        np.testing.assert_array_equal(out, incoming)
        assert 0.0 <= metrics.train_acc <= 1.0 and metrics.test_acc is not None
        assert metrics.train_time_s >= 0

    def test_deterministic(self):
        incoming = np.full(4, 0.3)
        opt = OptimizerConfig(maxiter=10, seed=2)
        a, ma = local_round(self.client, incoming, self.model, opt)
        b, mb = local_round(self.client, incoming, self.model, opt)
        np.testing.assert_array_equal(a, b)
        assert (ma.train_acc, ma.train_loss) == (mb.train_acc, mb.train_loss)

    def test_training_does_not_increase_loss(self):
        incoming = np.full(4, 0.3)
        _, before = local_round(self.client, incoming, self.model, OptimizerConfig(maxiter=0))
        _, after = local_round(self.client, incoming, self.model, OptimizerConfig(maxiter=30))
        assert after.train_loss <= before.train_loss

    def test_wrong_length(self):
        from vqfl.models import ModelError

        with pytest.raises(ModelError):
            local_round(self.client, [0.0, 0.0], self.model, OptimizerConfig(maxiter=0))

    def test_empty_train_rejected(self):
        ds = scaled_blobs(4, 0)
        with pytest.raises(ValueError):
            ClientState(1, ds.subset([]), ds)


class TestFineTune:
    def setup_method(self):
        ds = scaled_blobs(60, 3)
        self.server = ServerState(np.zeros(4), ds.subset(range(30)), ds.subset(range(30, 60)))
        self.model = VqcModel(2, 1, 2)
        self.avg = np.array([0.4, -0.1, 1.0, 0.2])

    def test_modes_algebra(self):
        opt = OptimizerConfig(maxiter=15, seed=1)
        noft, pred_noft, _ = server_fine_tune(self.avg, self.server, FtMode.NOFT, self.model, opt)
        ft, pred_ft, _ = server_fine_tune(self.avg, self.server, FtMode.FT, self.model, opt)
        ftavg, _, _ = server_fine_tune(self.avg, self.server, FtMode.FTAVG, self.model, opt)
        np.testing.assert_array_equal(noft, self.avg)
        np.testing.assert_array_equal(pred_noft, noft)
        np.testing.assert_array_equal(pred_ft, ft)
        assert not np.array_equal(ft, self.avg)
        np.testing.assert_allclose(ftavg, 0.5 * (ft + self.avg), atol=1e-12, rtol=0)

    def test_maxiter_zero_all_modes_equal(self):
        opt = OptimizerConfig(maxiter=0)
        outs = [server_fine_tune(self.avg, self.server, m, self.model, opt)[0] for m in FtMode]
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])

    def test_metrics_describe_tuned_model(self):
        opt = OptimizerConfig(maxiter=0)
        _, _, m = server_fine_tune(self.avg, self.server, FtMode.NOFT, self.model, opt)
        from vqfl.models import evaluate

        acc, loss = evaluate(self.model.with_params(self.avg), self.server.validation_set)
        assert (m.val_acc, m.val_loss) == (acc, loss)

    def test_failure_falls_back(self, caplog):
        nan_avg = np.array([np.nan, 0.0, 0.0, 0.0])
        with caplog.at_level(logging.WARNING):
            out, _, _ = server_fine_tune(nan_avg, self.server, FtMode.FT, self.model, OptimizerConfig(maxiter=3))
        assert np.isnan(out[0])
        assert "falling back" in caplog.text


class TestFederation:
    def test_zero_rounds(self):
        ds = scaled_blobs(40, 0)
        s = FederationSettings(VqcModel(2), 0, OptimizerConfig(maxiter=2))
        fed = Federation(s, [ClientState(0, ds.subset(range(20)), ds.subset([]))], ds.subset(range(20, 30)),
                         ds.subset(range(30, 40)))
        assert fed.run() == []

    def test_single_client_aggregate_is_upload(self):
        ds = scaled_blobs(60, 1)
        client = ClientState(0, ds.subset(range(30)), ds.subset([]))
        s = FederationSettings(VqcModel(2), 1, OptimizerConfig(maxiter=5))
        fed = Federation(s, [client], ds.subset(range(30, 45)), ds.subset(range(45, 60)))
        m = fed.run_round(1)
        np.testing.assert_allclose(fed.aggregate_log[0], client.params, atol=5e-13, rtol=0)
        assert np.isnan(m.avg_local_test_acc)

    def test_replay(self):
        cfg = small_config(security={"dp_enabled": True, "qkd_enabled": True}, ft_mode="ftavg")
        a = build_federation(cfg).run()
        b = build_federation(cfg).run()
        assert trajectories(a) == trajectories(b)

    def test_history_shape(self):
        hist = build_federation(small_config(rounds=3)).run()
        assert [m.round for m in hist] == [1, 2, 3]

    def test_qkd_transparency(self):
        plain = build_federation(small_config()).run()
        keyed = build_federation(small_config(security={"qkd_enabled": True})).run()
        assert trajectories(plain) == trajectories(keyed)

    def test_dp_with_huge_budget_matches_clean(self):
        clean = build_federation(small_config()).run()
        cfg = small_config(security={"dp_enabled": True, "epsilon": 1e12, "clip_nonnegative": False})
        noisy = build_federation(cfg).run()
        for a, b in zip(clean, noisy):
            np.testing.assert_allclose(a.without_times(), b.without_times(), atol=1e-6)

    def test_dp_changes_aggregate(self):
        fed = build_federation(small_config())
        fed.run()
        fed_dp = build_federation(small_config(security={"dp_enabled": True, "epsilon": 0.1}))
        fed_dp.run()
        assert not np.allclose(fed.aggregate_log[-1], fed_dp.aggregate_log[-1])

    def test_parallel_matches_serial(self):
        cfg = small_config(devices=4, security={"qkd_enabled": True})
        serial = build_federation(cfg, workers=1).run()
        parallel = build_federation(cfg, workers=3).run()
        assert trajectories(serial) == trajectories(parallel)

    def test_dropped_client_renormalises(self, monkeypatch):
        fed = build_federation(small_config(rounds=1))
        victim = fed.clients[1]

        from vqfl import orchestrator

        real_local_round = orchestrator.local_round

        def flaky(client, incoming, model, opt):
            if client.id == victim.id:
                raise orchestrator.OptimizerError("diverged")
            return real_local_round(client, incoming, model, opt)

        monkeypatch.setattr(orchestrator, "local_round", flaky)
        m = fed.run_round(1)
        assert m.dropped_clients == (victim.id,)
        survivors = [c for c in fed.clients if c.id != victim.id]
        uploads = [secure_downlink(secure_uplink(c.params, None, None, None)) for c in survivors]
        expected = weighted_average(uploads, [c.num_samples for c in survivors])
        np.testing.assert_allclose(fed.aggregate_log[0], expected, atol=1e-12, rtol=0)

    def test_all_dropped_aborts(self, monkeypatch):
        from vqfl import orchestrator

        def broken(*_):
            raise orchestrator.OptimizerError("diverged")

        monkeypatch.setattr(orchestrator, "local_round", broken)
        with pytest.raises(RoundAbort):
            build_federation(small_config(rounds=1)).run()

    def test_qkd_abort_surfaces_as_round_abort(self):
        cfg = small_config(rounds=1, security={"qkd_enabled": True, "flip_probability": 0.3})
        with pytest.raises(RoundAbort):
            build_federation(cfg).run()

    def test_metrics_csv(self, tmp_path):
        hist = build_federation(small_config()).run()
        path = tmp_path / "m.csv"
        write_metrics(path, hist)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("round,global_ft_val_acc,")
        assert len(lines) == 3
        assert all(len(line.split(",")) == 12 for line in lines)


class TestEvaluateHandCount:
    def test_accuracy_matches_manual_count(self):
        from vqfl.models import evaluate, predict

        ds = scaled_blobs(20, 9)
        model = VqcModel(2, 1, 2, np.array([0.3, -0.7, 1.1, 0.2]))
        hits = sum(predict(model, x) == int(y) for x, y in zip(ds.features, ds.labels))
        acc, _ = evaluate(model, ds)
        assert acc == hits / 20
