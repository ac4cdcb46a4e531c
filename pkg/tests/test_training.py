import numpy as np
import pytest

from ptscnn.data import Dataset, DatasetMeta
from ptscnn.models import build_model
from ptscnn.tensor import Tensor
from ptscnn.training import (Adam, LrPlateauMonitor, TrainConfig, class_weights,
                             stratified_split, train, validation_loss)

from test_models import tiny_config, random_records


def toy_dataset(rng, n=16, t_max=32):
    records = random_records(rng, n, t_max=t_max, t_range=(6, 24))
    # make the task learnable: class 1 gets a constant offset on channel 0
    for r in records:
        if r.label == 1:
            r.values[0] += 2.0
    meta = DatasetMeta(channels=3, classes=2, t_min=6, t_max=t_max)
    return Dataset(meta, records)


class TestClassWeights:
    def test_balanced_gives_ones(self):
        np.testing.assert_allclose(class_weights([0] * 50 + [1] * 50), [1.0, 1.0])

    def test_imbalanced_matches_formula(self):
        w = class_weights([0] * 90 + [1] * 10)
        np.testing.assert_allclose(w, [100 / 180, 100 / 20])
        np.testing.assert_allclose(w, [0.5556, 5.0], atol=1e-4)

    def test_missing_class_rejected(self):
        with pytest.raises(ValueError, match="no samples"):
            class_weights([0, 0, 0], classes=2)

    def test_weighted_loss_equals_rebalanced_expectation(self):
        # Monte-Carlo: weighting by inverse class frequency reproduces, in
        # expectation, the unweighted loss on a class-rebalanced resample
        rng = np.random.default_rng(0)
        n0, n1 = 900, 100
        nll = np.concatenate([rng.uniform(0.5, 1.5, n0), rng.uniform(2.0, 3.0, n1)])
        labels = np.array([0] * n0 + [1] * n1)
        w = class_weights(labels)[labels]
        weighted = (w * nll).sum() / w.sum()
        draws = []
        for _ in range(4000):
            idx0 = rng.integers(0, n0, size=500)
            idx1 = n0 + rng.integers(0, n1, size=500)
            draws.append(np.concatenate([nll[idx0], nll[idx1]]).mean())
        np.testing.assert_allclose(weighted, np.mean(draws), rtol=0.01)


class TestAdam:
    def make_param(self, value):
        return Tensor(np.array(value), requires_grad=True)

    def test_zero_gradient_leaves_parameters(self):
        p = self.make_param([1.0, -2.0])
        opt = Adam([("p", p)], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_single_step_matches_hand_computation(self):
        # quadratic f(x) = 0.5 x^2 at x = 3: gradient 3
        p = self.make_param([3.0])
        opt = Adam([("p", p)], lr=0.01, betas=(0.9, 0.999), eps=1e-8)
        p.grad = np.array([3.0])
        opt.step()
        m = 0.1 * 3.0
        v = 0.001 * 9.0
        mhat = m / (1 - 0.9)
        vhat = v / (1 - 0.999)
        expected = 3.0 - 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(p.data, [expected], rtol=1e-15)

    def test_constant_gradient_approaches_sign_step(self):
        p = self.make_param([0.0])
        opt = Adam([("p", p)], lr=0.01)
        for _ in range(200):
            prev = p.data.copy()
            p.grad = np.array([0.37])
            opt.step()
        np.testing.assert_allclose(prev - p.data, [0.01], rtol=1e-3)

    def test_decoupled_weight_decay(self):
        p = self.make_param([2.0])
        opt = Adam([("p", p)], lr=0.1, weight_decay=0.5)
        p.grad = np.array([0.0])
        opt.step()
        np.testing.assert_allclose(p.data, [2.0 * (1 - 0.1 * 0.5)])

    def test_skips_parameters_without_gradient(self):
        p = self.make_param([1.0])
        opt = Adam([("p", p)], lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0])


class TestLrPlateauMonitor:
    def test_halves_after_patience_and_floors_at_min(self):
        mon = LrPlateauMonitor(lr=0.4, min_lr=0.15, plateau_patience=2,
                               plateau_factor=0.5, early_stop_patience=100)
        mon.observe(1.0)
        assert mon.lr == 0.4
        mon.observe(1.0)   # stall 1
        mon.observe(1.0)   # stall 2 -> halve
        assert mon.lr == 0.2
        mon.observe(1.0)
        mon.observe(1.0)   # halve again, floored
        assert mon.lr == 0.15

    def test_improvement_resets_counters(self):
        mon = LrPlateauMonitor(0.4, 0.1, 2, 0.5, early_stop_patience=3)
        mon.observe(1.0)
        mon.observe(1.1)
        improved, stop = mon.observe(0.9)
        assert improved and not stop
        assert mon.lr == 0.4

    def test_early_stop_after_patience(self):
        mon = LrPlateauMonitor(0.4, 0.1, 50, 0.5, early_stop_patience=2)
        mon.observe(1.0)
        _, stop1 = mon.observe(1.0)
        _, stop2 = mon.observe(1.0)
        assert not stop1 and stop2


class TestValidationLoss:
    def test_uniform_model_gives_log_n(self):
        model = build_model(tiny_config(), seed=0)
        for _, p in model.parameters():
            p.data[:] = 0.0
        rng = np.random.default_rng(1)
        records = random_records(rng, 5)
        loss = validation_loss(model, records, np.ones(2))
        np.testing.assert_allclose(loss, np.log(2.0), rtol=1e-12)

    def test_duplicate_record_counts_twice(self):
        model = build_model(tiny_config(), seed=1)
        rng = np.random.default_rng(2)
        a, b = random_records(rng, 2)
        base = validation_loss(model, [a, b], np.ones(2))
        doubled = validation_loss(model, [a, b, b], np.ones(2))
        assert doubled != pytest.approx(base, abs=1e-12) or a.label == b.label

    def test_equals_hand_averaged_views(self):
        from ptscnn.data import half_crops, make_batch
        model = build_model(tiny_config(), seed=3)
        rng = np.random.default_rng(4)
        records = random_records(rng, 4, t_range=(6, 20))
        w = np.ones(2)
        got = validation_loss(model, records, w)
        views = [records,
                 [half_crops(r)[0] for r in records],
                 [half_crops(r)[1] for r in records]]
        losses = [model.loss(make_batch(v, 32, w), mode="eval").item()
                  for v in views]
        np.testing.assert_allclose(got, np.mean(losses), rtol=1e-12)


class TestStratifiedSplit:
    def test_every_class_in_both_parts(self):
        rng = np.random.default_rng(5)
        ds = toy_dataset(rng, n=20)
        tr, va = stratified_split(ds.records, 0.25, rng)
        tr_labels = {ds.records[i].label for i in tr}
        va_labels = {ds.records[i].label for i in va}
        assert tr_labels == va_labels == {0, 1}
        assert len(tr) + len(va) == 20
        assert not set(tr) & set(va)


class TestTrain:
    def test_deterministic_history_and_checkpoint(self):
        runs = []
        for _ in range(2):
            model = build_model(tiny_config(blocks=1), seed=5)
            ds = toy_dataset(np.random.default_rng(6))
            cfg = TrainConfig(epochs=4, batch_size=4, seed=9, val_fraction=0.25,
                              crop_ramp_end=10, crop_end=0.5)
            result = train(model, ds, cfg)
            runs.append((result.history, model.named_arrays()))
        assert runs[0][0] == runs[1][0]
        for (na, a), (nb, b) in zip(runs[0][1], runs[1][1]):
            assert na == nb
            np.testing.assert_array_equal(a, b)

    def test_overfits_tiny_dataset(self):
        model = build_model(tiny_config(blocks=1, channels=6), seed=7)
        ds = toy_dataset(np.random.default_rng(8), n=16)
        cfg = TrainConfig(epochs=200, batch_size=8, seed=1, val_fraction=0.25,
                          crop_start=1.0, crop_end=1.0, lr=3e-3)
        result = train(model, ds, cfg)
        assert result.history[-1]["train_loss"] < 0.01

    def test_history_records_schedule_columns(self):
        model = build_model(tiny_config(blocks=1), seed=8)
        ds = toy_dataset(np.random.default_rng(9))
        cfg = TrainConfig.trajectory_protocol(epochs=2, batch_size=4, seed=2,
                                              val_fraction=0.25)
        result = train(model, ds, cfg)
        row = result.history[0]
        assert {"epoch", "train_loss", "val_loss", "lr", "crop_ratio",
                "val_auroc"} <= set(row)
        assert all(np.isfinite(r["val_loss"]) for r in result.history)

    def test_non_finite_loss_aborts_with_diagnostic_checkpoint(self, tmp_path):
        # batch norm keeps even absurd learning rates finite, so poison a
        # parameter directly (as a corrupt checkpoint would)
        model = build_model(tiny_config(blocks=1), seed=10)
        model.blocks[0].convs[0].kernel.data[0, 0, 0] = np.nan
        ds = toy_dataset(np.random.default_rng(11))
        cfg = TrainConfig(epochs=5, batch_size=4, seed=4, val_fraction=0.25)
        dump = tmp_path / "diag.ckpt"
        with pytest.raises(RuntimeError, match="non-finite"):
            train(model, ds, cfg, abort_dump_path=dump)
        assert dump.exists()

    def test_best_checkpoint_tracks_monitored_metric(self):
        model = build_model(tiny_config(blocks=1), seed=9)
        ds = toy_dataset(np.random.default_rng(10))
        cfg = TrainConfig(epochs=6, batch_size=4, seed=3, val_fraction=0.25)
        result = train(model, ds, cfg)
        vals = [r["val_loss"] for r in result.history]
        assert result.best_epoch == int(np.argmin(vals))
        # the retained best never worsens as epochs pass
        running = np.minimum.accumulate(vals)
        assert (np.diff(running) <= 0).all()
