import numpy as np
import pytest

from sdvad.errors import ContractError
from sdvad.metrics import (
    FrameScores, JvadReport, ScoreAccumulator, border_precision, boundary_accuracy, count_matched_boundaries,
    frame_scores, harmonic_mean, jvad,
)
from sdvad.segmenter import to_segments

from oracles import count_oracle, matching_oracle, random_labels


class TestFrameScores:
    def test_hand_count(self):
        fs = frame_scores([1, 1, 0, 0], [1, 0, 0, 0])
        assert (fs.acc, fs.precision, fs.recall) == (0.75, 1.0, 0.5)
        assert fs.f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_identity(self):
        fs = frame_scores([0, 1, 1, 0], [0, 1, 1, 0])
        assert fs.acc == 1.0 and fs.f1 == 1.0

    def test_no_true_positive(self):
        assert frame_scores([0, 0], [1, 0]).f1 == 0.0

    def test_errors(self):
        with pytest.raises(ContractError):
            frame_scores([1, 0], [1])
        with pytest.raises(ContractError):
            frame_scores([], [])

    def test_oracle_1000(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            T = int(rng.integers(1, 80))
            ref, hyp = rng.integers(0, 2, T), rng.integers(0, 2, T)
            fs = frame_scores(ref, hyp)
            tp, fp, tn, fn = count_oracle(ref, hyp)
            assert (fs.tp, fs.fp, fs.tn, fs.fn) == (tp, fp, tn, fn)
            assert abs(fs.acc - (tp + tn) / T) <= 1e-12
            if tp:
                p, r = tp / (tp + fp), tp / (tp + fn)
                assert abs(fs.f1 - 2 * p * r / (p + r)) <= 1e-12
            assert frame_scores(hyp, ref).acc == fs.acc
            for v in (fs.acc, fs.precision, fs.recall, fs.f1):
                assert 0.0 <= v <= 1.0

    def test_addition(self):
        a, b = FrameScores(1, 2, 3, 4), FrameScores(10, 20, 30, 40)
        assert a + b == FrameScores(11, 22, 33, 44)


class TestBoundaries:
    def test_identity(self):
        segs = [(3, 8), (20, 31)]
        for tol in (0, 1, 10):
            assert boundary_accuracy(segs, segs, tol, "start") == 1.0
            assert boundary_accuracy(segs, segs, tol, "end") == 1.0

    def test_single_match(self):
        assert boundary_accuracy([(10, 15)], [(10, 12), (30, 35)], 5, "start") == 1.0

    def test_empty_reference(self):
        assert boundary_accuracy([], [(1, 2)], 10) == 1.0

    def test_one_to_one(self):
        assert count_matched_boundaries([10, 12], [11], 5) == 1

    def test_sweep_beats_nearest_first(self):
        # nearest-first would pair 10 with 11 and leave 14 unmatched
        assert count_matched_boundaries([10, 14], [6, 11], 4) == 2

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            boundary_accuracy([(0, 1)], [(0, 1)], 1, "middle")

    def test_oracle_500(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            ref = sorted(rng.choice(120, int(rng.integers(0, 6)), replace=False).tolist())
            hyp = sorted(rng.choice(120, int(rng.integers(0, 6)), replace=False).tolist())
            assert count_matched_boundaries(ref, hyp, 10) == matching_oracle(ref, hyp, 10)

    def test_segment_lists_oracle_500(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            rs = to_segments(random_labels(rng, 60))[:5]
            hs = to_segments(random_labels(rng, 60))[:5]
            for which, idx in (("start", 0), ("end", 1)):
                want = 1.0 if not rs else matching_oracle([s[idx] for s in rs], [s[idx] for s in hs], 10) / len(rs)
                assert abs(boundary_accuracy(rs, hs, 10, which) - want) <= 1e-12


class TestBorderPrecision:
    def test_examples(self):
        assert border_precision([(0, 5)], [(0, 2), (3, 5)]) == 0.5
        assert border_precision([(0, 5)], [(0, 5)]) == 1.0
        assert border_precision([], []) == 1.0
        assert border_precision([(0, 5)], []) == 0.0
        assert border_precision([], [(0, 5)]) == 0.0

    def test_fragmentation_strictly_lowers(self):
        ref = [(0, 10), (20, 30)]
        values = [border_precision(ref, [(k * 3, k * 3 + 1) for k in range(n)]) for n in range(2, 9)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestJvad:
    def test_identity(self):
        x = [0, 1, 1, 0, 0, 1, 0]
        rep = jvad(x, x, 3)
        assert (rep.sba, rep.eba, rep.bp, rep.acc, rep.jvad) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_worked_example(self):
        ref = np.zeros(60, dtype=int)
        ref[10:50] = 1
        hyp = np.zeros(60, dtype=int)
        hyp[10:25] = 1
        hyp[30:50] = 1
        rep = jvad(ref, hyp, 2)
        assert (rep.sba, rep.eba, rep.bp) == (1.0, 1.0, 0.5)
        assert rep.acc == 55 / 60
        assert rep.jvad == pytest.approx(4 / (1 + 1 + 2 + 60 / 55), abs=1e-12)
        assert rep.jvad == pytest.approx(0.7857, abs=1e-4)

    def test_zero_sub_criterion(self):
        assert JvadReport(0.0, 1.0, 1.0, 1.0).jvad == 0.0
        assert jvad([0, 1, 0], [0, 0, 0], 1).jvad == 0.0

    def test_harmonic_mean(self):
        assert harmonic_mean([1.0, 0.5]) == pytest.approx(2 / 3)
        assert harmonic_mean([0.3, 0.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            jvad([1, 0], [1, 0, 0], 1)

    def test_oracle_1000(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            T = int(rng.integers(1, 70))
            ref, hyp = random_labels(rng, T), random_labels(rng, T)
            rs, hs = to_segments(ref), to_segments(hyp)
            if len(rs) > 5 or len(hs) > 5:
                continue
            tp, fp, tn, fn = count_oracle(ref, hyp)
            acc = (tp + tn) / T
            sba = matching_oracle([s for s, _ in rs], [s for s, _ in hs], 10) / len(rs) if rs else 1.0
            eba = matching_oracle([e for _, e in rs], [e for _, e in hs], 10) / len(rs) if rs else 1.0
            bp = 1.0 if not rs and not hs else min(len(rs), len(hs)) / max(len(rs), len(hs))
            parts = [sba, eba, bp, acc]
            want = 0.0 if min(parts) <= 0 else 4 / sum(1 / v for v in parts)
            rep = jvad(ref, hyp, 10)
            for got, exp in zip([rep.sba, rep.eba, rep.bp, rep.acc, rep.jvad], parts + [want]):
                assert abs(got - exp) <= 1e-12
                assert 0.0 <= got <= 1.0


class TestAccumulator:
    def test_pooling(self):
        acc = ScoreAccumulator(tol=1)
        acc.add([1, 1, 0, 0], [1, 0, 0, 0])
        acc.add([0, 1, 0, 1, 0, 0], [0, 1, 0, 0, 0, 1])
        rep = acc.report()
        assert acc.frames == FrameScores(2, 1, 5, 2)
        assert rep.acc == 7 / 10
        assert rep.bp == 1.0  # 3 reference segments, 3 hypothesis segments
        assert rep.sba == 2 / 3  # starts 0, 1 matched; 3 has only 5 at distance 2
        assert rep.eba == 2 / 3  # end 4 unmatched against hyp ends 1, 2, 6
