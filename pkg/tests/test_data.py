import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftid.data import (DatasetBundle, FeatureTable, LabelDistribution,
                          LabelVector, OutputTable, empirical_prevalence,
                          load_bundle, read_matrix, save_bundle, take_rows,
                          write_shid)
from shiftid.errors import (DimensionMismatch, EmptyInput, ParseError,
                            ValidationError)


def make_bundle(n=6, d=3, c=2, labels=True, groups=False, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((n, d))
    raw = rng.uniform(0.1, 1.0, (n, c))
    probs = raw / raw.sum(axis=1, keepdims=True)
    gids = np.repeat(np.arange(n // 2), 2) if groups else None
    return DatasetBundle(
        features=FeatureTable(feats, group_ids=gids),
        outputs=OutputTable(probs),
        labels=LabelVector(rng.integers(0, c, n)) if labels else None,
        name="made",
    )


# ---------------------------------------------------------------------------
# Container validation
# ---------------------------------------------------------------------------

class TestFeatureTable:
    def test_requires_2d(self):
        with pytest.raises(ValidationError):
            FeatureTable(np.zeros(4))

    def test_requires_two_rows(self):
        with pytest.raises(ValidationError):
            FeatureTable(np.zeros((1, 3)))

    def test_rejects_nan(self):
        x = np.zeros((3, 2))
        x[1, 1] = np.nan
        with pytest.raises(ValidationError):
            FeatureTable(x)

    def test_rejects_inf(self):
        x = np.zeros((3, 2))
        x[0, 0] = np.inf
        with pytest.raises(ValidationError):
            FeatureTable(x)

    def test_group_ids_length_checked(self):
        with pytest.raises(DimensionMismatch):
            FeatureTable(np.zeros((3, 2)), group_ids=np.array([0, 1]))

    def test_values_immutable(self):
        t = FeatureTable(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            t.values[0, 0] = 1.0

    def test_effective_group_ids_default_is_identity(self):
        t = FeatureTable(np.zeros((4, 1)) + np.arange(4)[:, None])
        assert np.array_equal(t.effective_group_ids(), [0, 1, 2, 3])


class TestOutputTable:
    def test_row_sum_within_tolerance_renormalized_exactly(self):
        probs = np.array([[0.5 + 4e-6, 0.5], [0.25, 0.75 - 4e-6]])
        table = OutputTable(probs)
        assert np.all(table.probs.sum(axis=1) == 1.0)

    def test_row_sum_outside_tolerance_rejected(self):
        with pytest.raises(ValidationError):
            OutputTable(np.array([[0.5, 0.4]]))

    def test_entries_outside_unit_interval_rejected(self):
        with pytest.raises(ValidationError):
            OutputTable(np.array([[1.2, -0.2]]))

    def test_needs_two_columns(self):
        with pytest.raises(ValidationError):
            OutputTable(np.ones((3, 1)))

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            OutputTable(np.array([[np.nan, 1.0]]))


class TestLabelVector:
    def test_integral_floats_accepted(self):
        v = LabelVector(np.array([0.0, 1.0, 2.0]))
        assert v.labels.dtype == np.int64

    def test_fractional_rejected(self):
        with pytest.raises(ValidationError):
            LabelVector(np.array([0.0, 1.5]))

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            LabelVector(np.array([0, -1]))

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            LabelVector(np.array([], dtype=np.int64))


class TestLabelDistribution:
    def test_valid_simplex_point(self):
        d = LabelDistribution(np.array([0.25, 0.75]))
        assert d.num_classes == 2

    def test_negative_entry_rejected(self):
        with pytest.raises(ValidationError):
            LabelDistribution(np.array([-0.1, 1.1]))

    def test_sum_checked_at_1e9(self):
        with pytest.raises(ValidationError):
            LabelDistribution(np.array([0.5, 0.5 + 1e-7]))
        LabelDistribution(np.array([0.5, 0.5 + 1e-10]))


class TestDatasetBundle:
    def test_row_count_mismatch(self):
        with pytest.raises(DimensionMismatch):
            DatasetBundle(
                features=FeatureTable(np.zeros((4, 2))),
                outputs=OutputTable(np.full((3, 2), 0.5)),
            )

    def test_label_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            DatasetBundle(
                features=FeatureTable(np.zeros((3, 2))),
                outputs=OutputTable(np.full((3, 2), 0.5)),
                labels=LabelVector(np.array([0, 1])),
            )

    def test_label_class_out_of_range(self):
        with pytest.raises(ValidationError):
            DatasetBundle(
                features=FeatureTable(np.zeros((3, 2))),
                outputs=OutputTable(np.full((3, 2), 0.5)),
                labels=LabelVector(np.array([0, 1, 2])),
            )


class TestTakeRows:
    def test_subsets_all_tables(self):
        b = make_bundle(n=6)
        sub = take_rows(b, [0, 2, 4])
        assert np.array_equal(sub.features.values, b.features.values[[0, 2, 4]])
        assert np.array_equal(sub.outputs.probs, b.outputs.probs[[0, 2, 4]])
        assert np.array_equal(sub.labels.labels, b.labels.labels[[0, 2, 4]])

    def test_repeats_allowed(self):
        b = make_bundle(n=4)
        sub = take_rows(b, [1, 1, 1])
        assert sub.n == 3
        assert np.all(sub.features.values == b.features.values[1])

    def test_group_ids_dropped(self):
        b = make_bundle(n=6, groups=True)
        sub = take_rows(b, [0, 1, 2])
        assert sub.features.group_ids is None


class TestEmpiricalPrevalence:
    def test_two_class_balanced(self):
        got = empirical_prevalence(LabelVector(np.array([0, 0, 1, 1])), 2)
        assert np.array_equal(got.p, [0.5, 0.5])

    def test_two_class_skewed(self):
        got = empirical_prevalence(LabelVector(np.array([0, 0, 0, 1])), 2)
        assert np.array_equal(got.p, [0.75, 0.25])

    def test_absent_class_gets_zero(self):
        got = empirical_prevalence(LabelVector(np.array([2, 2, 2])), 3)
        assert np.array_equal(got.p, [0.0, 0.0, 1.0])

    def test_plain_array_accepted(self):
        got = empirical_prevalence(np.array([0, 1, 1, 1]), 2)
        assert np.array_equal(got.p, [0.25, 0.75])

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            empirical_prevalence(np.array([], dtype=np.int64), 2)

    def test_out_of_range_label(self):
        with pytest.raises(ValidationError):
            empirical_prevalence(np.array([0, 3]), 2)

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=50))
    @settings(max_examples=60, deadline=None)
    def test_output_is_valid_distribution(self, labels):
        dist = empirical_prevalence(np.asarray(labels, dtype=np.int64), 5)
        assert np.all(dist.p >= 0.0)
        assert abs(dist.p.sum() - 1.0) <= 1e-9


# ---------------------------------------------------------------------------
# File round-trips
# ---------------------------------------------------------------------------

class TestRoundTrips:
    def test_binary_round_trip_bit_exact(self, tmp_path):
        b = make_bundle(n=8, d=4, c=3, groups=True, seed=3)
        paths = save_bundle(tmp_path, b, fmt="shid")
        loaded = load_bundle(paths["features"], paths["outputs"],
                             labels_path=paths["labels"],
                             groups_path=paths["groups"])
        assert loaded.features.values.tobytes() == b.features.values.tobytes()
        assert loaded.outputs.probs.tobytes() == b.outputs.probs.tobytes()
        assert np.array_equal(loaded.labels.labels, b.labels.labels)
        assert np.array_equal(loaded.features.group_ids, b.features.group_ids)

    def test_csv_round_trip_within_1e12(self, tmp_path):
        b = make_bundle(n=8, d=4, c=3, seed=4)
        paths = save_bundle(tmp_path, b, fmt="csv")
        loaded = load_bundle(paths["features"], paths["outputs"],
                             labels_path=paths["labels"])
        assert np.max(np.abs(loaded.features.values - b.features.values)) <= 1e-12
        assert np.max(np.abs(loaded.outputs.probs - b.outputs.probs)) <= 1e-12

    def test_csv_actually_round_trips_exactly_with_17g(self, tmp_path):
        b = make_bundle(n=5, d=2, c=2, seed=5)
        paths = save_bundle(tmp_path, b, fmt="csv")
        loaded = load_bundle(paths["features"], paths["outputs"])
        assert np.array_equal(loaded.features.values, b.features.values)

    def test_minimal_three_row_csv_bundle(self, tmp_path):
        feats = tmp_path / "f.csv"
        outs = tmp_path / "p.csv"
        feats.write_text("f0,f1\n0.0,1.0\n2.0,3.0\n4.0,5.0\n")
        outs.write_text("p0,p1\n0.5,0.5\n0.2,0.8\n1.0,0.0\n")
        bundle = load_bundle(feats, outs)
        assert bundle.n == 3
        assert bundle.labels is None

    def test_row_sum_violation_on_load(self, tmp_path):
        feats = tmp_path / "f.csv"
        outs = tmp_path / "p.csv"
        feats.write_text("f0\n0.0\n1.0\n")
        outs.write_text("p0,p1\n0.5,0.4\n0.5,0.5\n")
        with pytest.raises(ValidationError):
            load_bundle(feats, outs)

    def test_row_count_mismatch_on_load(self, tmp_path):
        feats = tmp_path / "f.csv"
        outs = tmp_path / "p.csv"
        feats.write_text("f0\n0.0\n1.0\n2.0\n3.0\n")
        outs.write_text("p0,p1\n0.5,0.5\n0.5,0.5\n0.5,0.5\n")
        with pytest.raises(DimensionMismatch):
            load_bundle(feats, outs)


class TestCsvFormat:
    def test_feature_header_names(self, tmp_path):
        b = make_bundle(n=4, d=3, seed=6)
        paths = save_bundle(tmp_path, b, fmt="csv")
        first = open(paths["features"], encoding="utf-8").readline().strip()
        assert first == "f0,f1,f2"

    def test_output_header_names(self, tmp_path):
        b = make_bundle(n=4, c=2, seed=7)
        paths = save_bundle(tmp_path, b, fmt="csv")
        first = open(paths["outputs"], encoding="utf-8").readline().strip()
        assert first == "p0,p1"

    def test_label_and_group_headers(self, tmp_path):
        b = make_bundle(n=4, groups=True, seed=8)
        paths = save_bundle(tmp_path, b, fmt="csv")
        assert open(paths["labels"], encoding="utf-8").readline().strip() == "label"
        assert open(paths["groups"], encoding="utf-8").readline().strip() == "group"

    def test_wrong_feature_header_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("x0,x1\n0.0,1.0\n2.0,3.0\n")
        outs = tmp_path / "p.csv"
        outs.write_text("p0,p1\n0.5,0.5\n0.5,0.5\n")
        with pytest.raises(ParseError):
            load_bundle(path, outs)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("f0,f1\n0.0,1.0\n2.0\n")
        outs = tmp_path / "p.csv"
        outs.write_text("p0,p1\n0.5,0.5\n0.5,0.5\n")
        with pytest.raises(ParseError):
            load_bundle(path, outs)

    def test_non_numeric_cell_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("f0\nhello\nworld\n")
        outs = tmp_path / "p.csv"
        outs.write_text("p0,p1\n0.5,0.5\n0.5,0.5\n")
        with pytest.raises(ParseError):
            load_bundle(path, outs)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_bundle(tmp_path / "absent.csv", tmp_path / "also.csv")


class TestShidFormat:
    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.shid"
        values = np.arange(6, dtype=np.float64).reshape(2, 3)
        write_shid(path, values, dtype="f64")
        raw = path.read_bytes()
        magic, version, code, reserved, rows, cols = struct.unpack(
            "<4sHBBQQ", raw[:24])
        assert magic == b"SHID"
        assert version == 1
        assert code == 2
        assert reserved == 0
        assert (rows, cols) == (2, 3)
        assert raw[24:] == values.astype("<f8").tobytes()
        assert len(raw) == 24 + 2 * 3 * 8

    def test_f32_payload(self, tmp_path):
        path = tmp_path / "m.shid"
        values = np.array([[0.5, 0.25]], dtype=np.float64)
        write_shid(path, values, dtype="f32")
        raw = path.read_bytes()
        assert raw[6] == 1
        assert np.array_equal(read_matrix(path),
                              values.astype("<f4").astype(np.float64))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.shid"
        write_shid(path, np.zeros((2, 2)))
        raw = bytearray(path.read_bytes())
        raw[0:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(ParseError):
            read_matrix(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "m.shid"
        write_shid(path, np.zeros((2, 2)))
        raw = bytearray(path.read_bytes())
        raw[4:6] = struct.pack("<H", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(ParseError):
            read_matrix(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "m.shid"
        write_shid(path, np.zeros((4, 4)))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ParseError):
            read_matrix(path)

    def test_reserved_byte_enforced(self, tmp_path):
        path = tmp_path / "m.shid"
        write_shid(path, np.zeros((2, 2)))
        raw = bytearray(path.read_bytes())
        raw[7] = 5
        path.write_bytes(bytes(raw))
        with pytest.raises(ParseError):
            read_matrix(path)

    def test_shid_features_with_csv_outputs(self, tmp_path):
        b = make_bundle(n=4, d=2, seed=9)
        fpath = tmp_path / "feat.shid"
        write_shid(fpath, b.features.values)
        opath = tmp_path / "out.csv"
        opath.write_text(
            "p0,p1\n" + "\n".join("0.5,0.5" for _ in range(4)) + "\n")
        loaded = load_bundle(fpath, opath)
        assert np.array_equal(loaded.features.values, b.features.values)
