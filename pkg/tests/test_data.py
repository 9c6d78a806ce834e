import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smtpp.data import (Dataset, EventSequence, Normalizer, dataset_stats,
                        fit_normalizer, load_sequences, parse_sequences, split,
                        write_sequences)
from smtpp.errors import ConfigError


def seq_line(times, types, num_types=None):
    record = {"events": [{"t": t, "k": k} for t, k in zip(times, types)]}
    if num_types is not None:
        record["num_types"] = num_types
    return json.dumps(record)


class TestParse:
    def test_minimal_single_event(self):
        ds = parse_sequences(seq_line([0.5], [0], num_types=1))
        assert len(ds) == 1 and len(ds.sequences[0]) == 1 and ds.num_types == 1

    def test_non_monotone_rejected_with_line_number(self):
        text = "\n".join([seq_line([0.1], [0]), seq_line([2.0, 1.0], [0, 0])])
        with pytest.raises(ConfigError, match="line 2.*non-monotone"):
            parse_sequences(text)

    def test_malformed_json_reports_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_sequences("{not json")

    def test_type_above_declared_count(self):
        with pytest.raises(ConfigError, match="non-monotone|>= declared"):
            parse_sequences(seq_line([0.5], [3], num_types=2))

    def test_num_types_inferred_from_events(self):
        ds = parse_sequences(seq_line([0.1, 0.4], [0, 4]))
        assert ds.num_types == 5

    def test_ties_allowed(self):
        ds = parse_sequences(seq_line([1.0, 1.0], [0, 1]))
        assert len(ds.sequences[0]) == 2

    def test_roundtrip_through_file(self, tmp_path):
        ds = parse_sequences("\n".join([seq_line([0.5, 1.25], [0, 2]),
                                        seq_line([0.75], [1])]), split_tag="train")
        path = tmp_path / "corpus.jsonl"
        write_sequences(path, ds)
        back = load_sequences(path)
        assert back.num_types == ds.num_types
        for a, b in zip(back.sequences, ds.sequences):
            np.testing.assert_array_equal(a.times, b.times)
            np.testing.assert_array_equal(a.types, b.types)

    @pytest.mark.skipif("SMTPP_STACKOVERFLOW" not in os.environ,
                        reason="original corpus not shipped; set SMTPP_STACKOVERFLOW")
    def test_stackoverflow_corpus_stats(self):
        ds = load_sequences(os.environ["SMTPP_STACKOVERFLOW"])
        num_types, num_events, avg_len = dataset_stats(ds)
        assert num_types == 22
        assert num_events == 480413
        assert round(avg_len) == 64

    @pytest.mark.skipif("SMTPP_RETWEET" not in os.environ,
                        reason="original corpus not shipped; set SMTPP_RETWEET")
    def test_retweet_corpus_stats(self):
        ds = load_sequences(os.environ["SMTPP_RETWEET"])
        num_types, num_events, _ = dataset_stats(ds)
        assert num_types == 3
        assert num_events == 2173533


class TestNormalizer:
    def test_log_standard_hand_values(self):
        # gaps with log values {0, 2}: center = 1, population variance = 1
        ds = parse_sequences(seq_line([1.0, 1.0 + math.e ** 2], [0, 0]))
        norm = fit_normalizer(ds, "log-standard")
        assert norm.center == pytest.approx(1.0)
        assert norm.scale == pytest.approx(1.0)
        np.testing.assert_allclose(norm.apply(np.array([1.0, math.e ** 2])), [-1.0, 1.0])

    def test_invert_hand_value(self):
        norm = Normalizer("log-standard", center=1.0, scale=1.0)
        assert norm.invert(np.array([-1.0]))[0] == pytest.approx(1.0)

    def test_none_mode_is_identity(self):
        norm = Normalizer("none")
        gaps = np.array([0.3, 1.7])
        np.testing.assert_array_equal(norm.apply(gaps), gaps)
        seq = EventSequence.from_arrays([0.3, 2.0], [0, 0])
        out = norm.apply_sequence(seq)
        np.testing.assert_allclose(out.times, seq.times)

    def test_zero_variance_rejected(self):
        ds = parse_sequences(seq_line([1.0, 2.0, 3.0], [0, 0, 0]))
        with pytest.raises(ValueError, match="zero variance"):
            fit_normalizer(ds, "log-standard")

    def test_roundtrip_small(self):
        norm = Normalizer("log-standard", center=0.3, scale=2.0)
        gaps = np.array([0.3, 1.7])
        np.testing.assert_allclose(norm.invert(norm.apply(gaps)), gaps, rtol=1e-9)

    def test_stddev_scale_kind(self):
        ds = parse_sequences(seq_line([1.0, 1.0 + math.e ** 2], [0, 0]))
        norm = fit_normalizer(ds, "log-standard", scale_kind="stddev")
        assert norm.scale == pytest.approx(1.0)   # sqrt of variance 1

    def test_standard_mode(self):
        ds = parse_sequences(seq_line([1.0, 4.0], [0, 0]))   # gaps {1, 3}
        norm = fit_normalizer(ds, "standard")
        assert norm.center == pytest.approx(2.0)
        assert norm.scale == pytest.approx(1.0)   # population variance of {1,3}

    def test_unknown_mode_rejected(self):
        ds = parse_sequences(seq_line([1.0], [0]))
        with pytest.raises(ConfigError):
            fit_normalizer(ds, "minmax")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=1e-6, max_value=1e4), min_size=2, max_size=40),
           st.sampled_from(["standard", "log-standard"]))
    def test_roundtrip_property(self, gaps, mode):
        gaps = np.asarray(gaps)
        if mode == "log-standard" and np.log(gaps).var() < 1e-12:
            return
        if gaps.var() < 1e-12:
            return
        seq = EventSequence.from_arrays(np.cumsum(gaps), np.zeros(len(gaps), int))
        norm = fit_normalizer(Dataset((seq,), 1), mode)
        np.testing.assert_allclose(norm.invert(norm.apply(gaps)), gaps, rtol=1e-9)


class TestSplit:
    def make(self, n):
        seqs = tuple(EventSequence.from_arrays([0.1 * (i + 1)], [0]) for i in range(n))
        return Dataset(seqs, 1)

    def test_counts(self):
        tr, dev, te = split(self.make(10), (0.8, 0.1, 0.1), seed=7)
        assert (len(tr), len(dev), len(te)) == (8, 1, 1)
        assert (tr.split_tag, dev.split_tag, te.split_tag) == ("train", "dev", "test")

    def test_deterministic(self):
        a = split(self.make(20), (0.6, 0.2, 0.2), seed=3)
        b = split(self.make(20), (0.6, 0.2, 0.2), seed=3)
        for x, y in zip(a, b):
            assert [s.times[0] for s in x.sequences] == [s.times[0] for s in y.sequences]

    def test_no_overlap_and_total(self):
        parts = split(self.make(17), (0.5, 0.25, 0.25), seed=1)
        seen = [s.times[0] for part in parts for s in part.sequences]
        assert len(seen) == 17 and len(set(seen)) == 17

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            split(self.make(10), (0.5, 0.6, 0.1), seed=0)


class TestStats:
    def test_single_event_sequence(self):
        ds = Dataset((EventSequence.from_arrays([0.5], [0]),), 4)
        assert dataset_stats(ds) == (4, 1, 1.0)

    def test_average_length(self):
        ds = Dataset((EventSequence.from_arrays([0.1, 0.2, 0.3], [0, 0, 0]),
                      EventSequence.from_arrays([0.1, 0.2, 0.3, 0.4, 0.5], [0] * 5)), 1)
        assert dataset_stats(ds)[2] == pytest.approx(4.0)

    def test_additivity(self):
        rng = np.random.default_rng(0)
        seqs = tuple(EventSequence.from_arrays(np.cumsum(rng.uniform(0.1, 1, size=n)),
                                               np.zeros(n, int))
                     for n in rng.integers(1, 9, size=12))
        ds = Dataset(seqs, 1)
        assert dataset_stats(ds)[1] == sum(len(s) for s in seqs)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            dataset_stats(Dataset((), 1))
