import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptscnn.data import (Dataset, DatasetMeta, GeneratorConfig, ParseError,
                         SeriesRecord, apply_minmax, crop_schedule,
                         generate_synthetic, half_crops, load_dataset,
                         load_tsv_archive, make_batch, minmax_stats,
                         random_crop, resample_linear, save_dataset)
from ptscnn.rf import ValidInterval


def small_dataset(rng, n=6, channels=2, t_max=24):
    records = []
    for i in range(n):
        t_len = int(rng.integers(2, 10))
        t1 = int(rng.integers(1, t_max - t_len + 2))
        records.append(SeriesRecord(rng.standard_normal((channels, t_len)), t1,
                                    i % 2, f"rec{i}"))
    meta = DatasetMeta(channels=channels, classes=2, t_min=2, t_max=t_max)
    return Dataset(meta, records)


class TestFileFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = small_dataset(np.random.default_rng(0))
        path = tmp_path / "d.ptsc"
        save_dataset(path, ds)
        back = load_dataset(path)
        assert back.meta == ds.meta
        assert len(back) == len(ds)
        for a, b in zip(ds.records, back.records):
            assert (a.id, a.label, a.t1) == (b.id, b.label, b.t1)
            np.testing.assert_array_equal(a.values, b.values)

    def test_header_line_format(self, tmp_path):
        ds = small_dataset(np.random.default_rng(1))
        path = tmp_path / "d.ptsc"
        save_dataset(path, ds)
        head = path.read_text().splitlines()[0]
        assert head == "PTSC v1 D=2 N=2 TMIN=2 TMAX=24"

    def test_overrun_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "bad.ptsc"
        path.write_text("PTSC v1 D=1 N=2 TMIN=1 TMAX=4\n"
                        "a,0,1,2,0.0,0.0\n"
                        "b,0,4,2,0.0,0.0\n")
        with pytest.raises(ParseError, match="line 3.*overruns"):
            load_dataset(path)

    def test_label_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "bad.ptsc"
        path.write_text("PTSC v1 D=1 N=2 TMIN=1 TMAX=4\na,2,1,1,0.0\n")
        with pytest.raises(ParseError, match="line 2.*label 2"):
            load_dataset(path)

    def test_wrong_value_count_rejected(self, tmp_path):
        path = tmp_path / "bad.ptsc"
        path.write_text("PTSC v1 D=2 N=2 TMIN=1 TMAX=4\na,0,1,2,0.0,0.0\n")
        with pytest.raises(ParseError, match="line 2.*expected 4 values"):
            load_dataset(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ptsc"
        path.write_text("PTSC v2 D=1 N=2 TMIN=1 TMAX=4\n")
        with pytest.raises(ParseError, match="line 1"):
            load_dataset(path)

    def test_tsv_archive_converter(self, tmp_path):
        path = tmp_path / "arc.tsv"
        path.write_text("cat\t1.0\t2.0\t3.0\n"
                        "dog\t0.5\t0.5\tnan\n"
                        "cat\t9.0\n")
        ds = load_tsv_archive(path)
        assert ds.meta.classes == 2
        assert ds.meta.class_names == ["cat", "dog"]
        assert [r.length for r in ds.records] == [3, 2, 1]
        assert all(r.t1 == 1 for r in ds.records)


class TestNormalization:
    def test_extrema_map_to_zero_and_one(self):
        ds = small_dataset(np.random.default_rng(2))
        stats = minmax_stats(ds.records)
        normed = apply_minmax(ds.records, stats)
        allv = np.concatenate([r.values for r in normed], axis=1)
        np.testing.assert_allclose(allv.min(axis=1), 0.0, atol=1e-15)
        np.testing.assert_allclose(allv.max(axis=1), 1.0, atol=1e-15)

    def test_constant_channel_does_not_divide_by_zero(self):
        rec = SeriesRecord(np.full((1, 4), 3.0), 1, 0, "c")
        stats = minmax_stats([rec])
        out = apply_minmax([rec], stats)[0]
        assert np.isfinite(out.values).all()


class TestCrops:
    def test_ratio_one_is_identity(self):
        rng = np.random.default_rng(3)
        rec = SeriesRecord(rng.standard_normal((2, 10)), 4, 1, "r")
        out = random_crop(rec, 1.0, rng)
        assert out.t1 == rec.t1
        np.testing.assert_array_equal(out.values, rec.values)

    @given(st.integers(min_value=1, max_value=50),
           st.floats(min_value=0.05, max_value=1.0),
           st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=80, deadline=None)
    def test_crop_preserves_record_invariants(self, t_len, ratio, seed):
        rng = np.random.default_rng(seed)
        t_max = t_len + 20
        t1 = int(rng.integers(1, t_max - t_len + 2))
        rec = SeriesRecord(rng.standard_normal((1, t_len)), t1, 0, "r")
        out = random_crop(rec, ratio, rng)
        assert max(1, int(np.ceil(ratio * t_len))) <= out.length <= t_len
        assert out.t1 >= rec.t1
        out.validate(t_max)
        # timestamps preserved: cropped values sit at the same absolute frames
        off = out.t1 - rec.t1
        np.testing.assert_array_equal(out.values, rec.values[:, off:off + out.length])

    def test_invalid_ratio_rejected(self):
        rec = SeriesRecord(np.zeros((1, 5)), 1, 0, "r")
        with pytest.raises(ValueError):
            random_crop(rec, 0.0, np.random.default_rng(0))


class TestCropSchedule:
    def test_quoted_endpoints(self):
        assert crop_schedule(0) == 1.0
        assert crop_schedule(400) == pytest.approx(0.55)
        assert crop_schedule(1000) == 0.1
        assert crop_schedule(800) == 0.1

    @given(st.integers(min_value=0, max_value=2000))
    @settings(max_examples=60, deadline=None)
    def test_bounded_and_non_increasing(self, epoch):
        r = crop_schedule(epoch)
        assert 0.1 <= r <= 1.0
        assert crop_schedule(epoch + 1) <= r


class TestResample:
    def test_same_length_is_identity(self):
        rng = np.random.default_rng(4)
        rec = SeriesRecord(rng.standard_normal((2, 12)), 5, 0, "r")
        out = resample_linear(rec, 12)
        np.testing.assert_allclose(out.values, rec.values, atol=1e-12)
        assert out.t1 == 1  # timestamps destroyed by design

    def test_linear_ramp_stays_linear(self):
        ramp = np.linspace(-1.0, 3.0, 9)[None, :]
        rec = SeriesRecord(ramp, 1, 0, "r")
        out = resample_linear(rec, 17)
        np.testing.assert_allclose(out.values, np.linspace(-1.0, 3.0, 17)[None, :],
                                   atol=1e-12)

    def test_down_then_up_reconstructs_smooth_signal(self):
        # dense-grid oracle for a band-limited signal
        t = np.linspace(0, 1, 201)
        sig = np.sin(2 * np.pi * 3 * t)[None, :]
        rec = SeriesRecord(sig, 1, 0, "r")
        down = resample_linear(rec, 101)
        up = resample_linear(down, 201)
        assert np.abs(up.values - sig).max() < 5e-3

    def test_length_one_replicates_with_warning(self):
        rec = SeriesRecord(np.array([[2.0]]), 1, 0, "r")
        with pytest.warns(UserWarning, match="length 1"):
            out = resample_linear(rec, 4)
        np.testing.assert_array_equal(out.values, [[2.0] * 4])


class TestHalfCrops:
    def test_even_split(self):
        rec = SeriesRecord(np.arange(10.0)[None, :], 1, 0, "r")
        first, latter = half_crops(rec)
        assert (first.t1, first.length) == (1, 5)
        assert (latter.t1, latter.length) == (6, 5)

    def test_odd_split_takes_ceiling_first(self):
        rec = SeriesRecord(np.arange(9.0)[None, :], 3, 0, "r")
        first, latter = half_crops(rec)
        assert (first.length, latter.length) == (5, 4)
        assert latter.t1 == 3 + 5

    def test_concatenation_reconstructs(self):
        rng = np.random.default_rng(5)
        rec = SeriesRecord(rng.standard_normal((3, 11)), 2, 1, "r")
        first, latter = half_crops(rec)
        np.testing.assert_array_equal(
            np.concatenate([first.values, latter.values], axis=1), rec.values)


class TestMakeBatch:
    def test_placement_and_valid_intervals(self):
        r1 = SeriesRecord(np.ones((1, 4)), 1, 0, "a")
        r2 = SeriesRecord(np.full((1, 3), 2.0), 40, 1, "b")
        batch = make_batch([r1, r2], t_max=50)
        assert batch.valids == [ValidInterval(0, 4), ValidInterval(39, 42)]
        np.testing.assert_array_equal(batch.lengths, [4, 3])

    def test_frames_outside_valid_are_exactly_zero(self):
        rng = np.random.default_rng(6)
        recs = [SeriesRecord(rng.standard_normal((2, 5)) + 10, 3, 0, "a")]
        batch = make_batch(recs, 12)
        x = batch.x.data
        assert (x[0, :, :2] == 0).all() and (x[0, :, 7:] == 0).all()
        assert (x[0, :, 2:7] != 0).all()

    def test_class_weights_attach_per_label(self):
        recs = [SeriesRecord(np.zeros((1, 2)), 1, lab, str(lab)) for lab in (0, 1, 1)]
        batch = make_batch(recs, 4, class_weights=np.array([2.0, 0.5]))
        np.testing.assert_array_equal(batch.weights, [2.0, 0.5, 0.5])

    def test_overrun_rejected(self):
        rec = SeriesRecord(np.zeros((1, 5)), 3, 0, "a")
        with pytest.raises(ValueError, match="overruns"):
            make_batch([rec], 6)


class TestSyntheticGenerator:
    def test_deterministic_bytes(self, tmp_path):
        cfg = GeneratorConfig(n_train=40, n_test=40, self_check=False)
        a_tr, a_te = generate_synthetic(cfg, seed=7)
        b_tr, b_te = generate_synthetic(cfg, seed=7)
        pa, pb = tmp_path / "a.ptsc", tmp_path / "b.ptsc"
        save_dataset(pa, a_tr)
        save_dataset(pb, b_tr)
        assert pa.read_bytes() == pb.read_bytes()
        for x, y in zip(a_te.records, b_te.records):
            np.testing.assert_array_equal(x.values, y.values)

    def test_split_ids_disjoint(self):
        cfg = GeneratorConfig(n_train=20, n_test=20, self_check=False)
        tr, te = generate_synthetic(cfg, seed=1)
        assert not {r.id for r in tr.records} & {r.id for r in te.records}

    def test_record_invariants_and_balance(self):
        cfg = GeneratorConfig(n_train=60, n_test=20, self_check=False)
        tr, _ = generate_synthetic(cfg, seed=2)
        labels = tr.labels()
        assert (np.bincount(labels) == [30, 30]).all()
        for r in tr.records:
            r.validate(cfg.t_max)
            assert cfg.length_range[0] <= r.length <= cfg.length_range[1]

    def test_statistical_self_check_runs_on_large_pools(self):
        # pre-event indistinguishability and post-event separation (two-sample
        # mean test inside the generator) must hold at the default scale
        cfg = GeneratorConfig(n_train=1000, n_test=200)
        tr, _ = generate_synthetic(cfg, seed=3)
        assert len(tr) == 1000

    def test_infeasible_length_range_rejected(self):
        with pytest.raises(ValueError, match="infeasible"):
            GeneratorConfig(length_range=(100, 50))
