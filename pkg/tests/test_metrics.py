"""Metrics against independent brute-force oracles, plus the dense and
egocentric evaluation protocols."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nextact import metrics as mt
from nextact.data import FeatureSequence, Segment, SynthConfig, generate_synthetic
from nextact.errors import MetricError, ParameterError
from nextact.model import SrlParams
from nextact.seeding import stream


def brute_topk_hits(preds, labels, k):
    """Independent oracle: sort each row fully, tie-break on class index."""
    hits = []
    for row, label in zip(preds, labels):
        ranked = sorted(range(len(row)), key=lambda c: (-row[c], c))
        hits.append(label in ranked[:k])
    return hits


def random_case(rng, n=50, classes=20, ties=False):
    preds = rng.random((n, classes))
    if ties:  # quantize to force plenty of exact ties
        preds = np.round(preds * 4) / 4
    labels = rng.integers(0, classes, size=n)
    return preds, labels


class TestTopkAccuracy:
    def test_single_sample_argmax(self):
        assert mt.topk_accuracy([[0.1, 0.7, 0.2]], [1], 1) == 1.0
        assert mt.topk_accuracy([[0.1, 0.7, 0.2]], [0], 1) == 0.0

    def test_k_equals_classes(self, rng):
        preds = np.full((10, 5), 0.2)
        labels = rng.integers(0, 5, 10)
        assert mt.topk_accuracy(preds, labels, 5) == 1.0

    def test_matches_bruteforce_oracle(self, rng):
        for ties in (False, True):
            preds, labels = random_case(rng, ties=ties)
            for k in (1, 3, 5):
                expect = float(np.mean(brute_topk_hits(preds, labels, k)))
                assert mt.topk_accuracy(preds, labels, k) == expect

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            mt.topk_accuracy(np.zeros((0, 3)), [], 1)
        with pytest.raises(MetricError):
            mt.topk_accuracy([[0.5, 0.5]], [0], 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=10_000))
    def test_monotone_in_k(self, classes, seed):
        rng = np.random.default_rng(seed)
        preds, labels = random_case(rng, n=20, classes=classes)
        accs = [mt.topk_accuracy(preds, labels, k) for k in range(1, classes + 1)]
        assert all(a <= b for a, b in zip(accs, accs[1:]))
        assert accs[-1] == 1.0


class TestMeanTopkRecall:
    def test_single_class_all_correct(self):
        preds = [[0.9, 0.1], [0.8, 0.2]]
        assert mt.mean_topk_recall(preds, [0, 0], 1, [0]) == 1.0

    def test_two_classes_half(self):
        preds = [[1.0, 0.0], [1.0, 0.0]]
        assert mt.mean_topk_recall(preds, [0, 1], 1, [0, 1]) == 0.5

    def test_matches_bruteforce_tally(self, rng):
        preds, labels = random_case(rng, n=100, classes=20)
        class_list = list(range(0, 20, 2))
        hits = brute_topk_hits(preds, labels, 5)
        recalls = []
        for c in class_list:
            mask = labels == c
            if mask.any():
                recalls.append(np.mean([h for h, m in zip(hits, mask) if m]))
        expect = float(np.mean(recalls))
        assert mt.mean_topk_recall(preds, labels, 5, class_list) == expect

    def test_missing_class_skipped_with_warning(self, caplog):
        import logging

        preds = [[0.9, 0.1, 0.0]]
        with caplog.at_level(logging.WARNING, logger="nextact.metrics"):
            val = mt.mean_topk_recall(preds, [0], 1, [0, 2])
        assert val == 1.0
        assert any("no samples" in r.message for r in caplog.records)

    def test_empty_class_list_rejected(self):
        with pytest.raises(MetricError):
            mt.mean_topk_recall([[1.0]], [0], 1, [])


class TestMeanClassAccuracy:
    def test_perfect_predictor(self, rng):
        labels = rng.integers(0, 4, 40)
        preds = np.eye(4)[labels]
        assert mt.mean_class_accuracy(preds, labels) == 1.0

    def test_macro_not_micro(self):
        # class 0: 9 samples all right; class 1: 1 sample wrong -> macro 0.5
        preds = [[1.0, 0.0]] * 10
        labels = [0] * 9 + [1]
        assert mt.mean_class_accuracy(preds, labels) == 0.5

    def test_matches_bruteforce_tally(self, rng):
        preds, labels = random_case(rng, n=100, classes=10)
        top1 = [int(np.argmax(row)) for row in preds]
        accs = []
        for c in sorted(set(labels.tolist())):
            idx = [i for i, l in enumerate(labels) if l == c]
            accs.append(np.mean([top1[i] == c for i in idx]))
        assert mt.mean_class_accuracy(preds, labels) == float(np.mean(accs))

    def test_invariant_under_class_replication(self, rng):
        preds, labels = random_case(rng, n=60, classes=6)
        base = mt.mean_class_accuracy(preds, labels)
        mask = labels == 2
        preds2 = np.concatenate([preds] + [preds[mask]] * 3)
        labels2 = np.concatenate([labels] + [labels[mask]] * 3)
        assert mt.mean_class_accuracy(preds2, labels2) == base


class OracleDensePredictor:
    """Emits a one-hot on the true frame label (unlabeled frames: class 0)."""

    def __init__(self, n_classes):
        self.n = n_classes

    def predict_frames(self, seq, obs_idx, pred_idx):
        from nextact.data import frame_activity_labels

        labels = frame_activity_labels(seq)[np.asarray(pred_idx)]
        out = np.zeros((len(pred_idx), self.n))
        out[np.arange(len(pred_idx)), np.clip(labels, 0, None)] = 1.0
        return out


class UniformDensePredictor:
    def __init__(self, n_classes):
        self.n = n_classes

    def predict_frames(self, seq, obs_idx, pred_idx):
        return np.full((len(pred_idx), self.n), 1.0 / self.n)


class RandomArgmaxPredictor:
    def __init__(self, n_classes, seed=0):
        self.n = n_classes
        self.rng = np.random.default_rng(seed)

    def predict_frames(self, seq, obs_idx, pred_idx):
        out = np.zeros((len(pred_idx), self.n))
        out[np.arange(len(pred_idx)), self.rng.integers(0, self.n, len(pred_idx))] = 1.0
        return out


def dense_dataset(seed=0, n_videos=12, segments=12, fps=10, classes=5):
    cfg = SynthConfig(
        n_classes=classes, dim=6, n_videos=n_videos, segments_per_video=segments,
        frames_per_segment=fps, noise_std=0.1, seed=seed,
        transition=np.full((classes, classes), 1.0 / classes),
    )
    return generate_synthetic(cfg)


class TestEvaluateDense:
    def test_oracle_scores_one_everywhere(self):
        seqs, _ = dense_dataset()
        rep = mt.evaluate_dense(OracleDensePredictor(5), seqs, 0.2)
        assert rep.predicted_fractions == [0.1, 0.2, 0.3, 0.5]
        for v in rep.mean_class_accuracy.values():
            assert v == 1.0

    def test_uniform_random_predictor_near_chance(self):
        seqs, _ = dense_dataset(n_videos=20)
        rep = mt.evaluate_dense(RandomArgmaxPredictor(5, seed=3), seqs, 0.3)
        total = sum(rep.counts.values())
        assert total > 1000
        for frac, acc in rep.mean_class_accuracy.items():
            n = rep.counts[frac] / 5  # per-class sample count, roughly balanced
            sigma = np.sqrt(0.2 * 0.8 / n)
            assert abs(acc - 0.2) <= 4 * sigma

    def test_report_covers_configured_fractions(self):
        seqs, _ = dense_dataset(n_videos=4)
        rep = mt.evaluate_dense(OracleDensePredictor(5), seqs, 0.2, (0.25, 0.5))
        assert rep.predicted_fractions == [0.25, 0.5]
        assert set(rep.mean_class_accuracy) == {repr(0.25), repr(0.5)}

    def test_too_short_video_skipped(self):
        short = FeatureSequence("tiny", 0.25, 3, np.ones((3, 3)), [Segment(0.0, 0.75, 0, 0, 0)])
        seqs, _ = dense_dataset(n_videos=3)
        rep = mt.evaluate_dense(OracleDensePredictor(5), list(seqs) + [short], 0.2)
        assert rep.skipped == 1
        assert rep.videos == 3

    def test_bad_fractions_rejected(self):
        seqs, _ = dense_dataset(n_videos=2)
        with pytest.raises(ParameterError):
            mt.evaluate_dense(OracleDensePredictor(5), seqs, 1.5)
        with pytest.raises(ParameterError):
            mt.evaluate_dense(OracleDensePredictor(5), seqs, 0.2, (0.5, 0.1))


class TestEvaluateEgocentric:
    def test_report_shape_and_monotone_topk(self):
        cfg = SynthConfig(n_classes=6, dim=8, n_videos=6, segments_per_video=4,
                          frames_per_segment=8, noise_std=0.1, seed=4)
        seqs, vocab = generate_synthetic(cfg)
        params = SrlParams.create(8, 6, 2, 3, stream(0, "init"), dropout=0.0)
        rep = mt.evaluate_egocentric(params, seqs, 6, 8)
        assert rep.horizons == list(range(1, 9))
        act = rep.tasks["activity"]
        assert len(act["top1"]) == 8
        for t1, t5 in zip(act["top1"], act["top5"]):
            assert t5 >= t1
        assert rep.instances == sum(rep.counts.values())
        text = rep.to_json()
        assert '"protocol": "egocentric"' in text

    def test_many_shot_recall_emitted(self):
        cfg = SynthConfig(n_classes=6, dim=8, n_videos=6, segments_per_video=4,
                          frames_per_segment=8, noise_std=0.1, seed=4)
        seqs, vocab = generate_synthetic(cfg)
        params = SrlParams.create(8, 6, 2, 3, stream(0, "init"), dropout=0.0)
        many = {"activity": list(range(6)), "verb": [0, 1], "noun": [0, 1, 2]}
        rep = mt.evaluate_egocentric(params, seqs, 6, 8, many_shot=many)
        assert rep.tasks["activity"]["mean_top5_recall"] is not None
        assert len(rep.tasks["activity"]["mean_top5_recall"]) == 8


class TestDeriveManyShot:
    def test_threshold(self):
        labels = [0, 0, 0, 1, 2, 2]
        assert mt.derive_many_shot(labels, 2) == [0, 2]
        assert mt.derive_many_shot(labels, 1) == [0, 1, 2]
