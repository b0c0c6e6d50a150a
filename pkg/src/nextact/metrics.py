"""Evaluation metrics and protocols.

Top-k membership uses deterministic tie-breaking: among equal probabilities
the lower class index ranks first (stable argsort on negated scores).
Accuracy metrics are exact ratios of integer counts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureSequence, frame_activity_labels, make_instances_egocentric
from .errors import MetricError, ParameterError
from .model import SrlParams, rollout

log = logging.getLogger(__name__)

__all__ = [
    "topk_accuracy",
    "mean_topk_recall",
    "mean_class_accuracy",
    "EvalReport",
    "evaluate_egocentric",
    "evaluate_dense",
    "SrlDensePredictor",
    "derive_many_shot",
]

TASKS = ("activity", "verb", "noun")


def _as_matrix(preds) -> np.ndarray:
    mat = np.asarray(preds, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise MetricError(f"predictions must be a nonempty (n, classes) array, got {mat.shape}")
    return mat


def _topk_hits(mat: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -p keeps ascending class index among ties
    order = np.argsort(-mat, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def topk_accuracy(preds, labels, k: int) -> float:
    """Fraction of samples whose true label ranks in the top k."""
    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    mat = _as_matrix(preds)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (mat.shape[0],):
        raise MetricError(f"labels shape {labels.shape} does not match {mat.shape[0]} samples")
    return float(_topk_hits(mat, labels, k).mean())


def mean_topk_recall(preds, labels, k: int, class_list) -> float:
    """Macro top-k recall over the provided (many-shot) class list.

    Listed classes without any ground-truth sample are skipped with a
    warning; at least one listed class must have samples.
    """
    class_list = list(class_list)
    if not class_list:
        raise MetricError("class_list must be nonempty")
    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    mat = _as_matrix(preds)
    labels = np.asarray(labels, dtype=np.int64)
    hits = _topk_hits(mat, labels, k)
    recalls = []
    skipped = 0
    for c in class_list:
        mask = labels == c
        if not mask.any():
            skipped += 1
            continue
        recalls.append(float(hits[mask].mean()))
    if skipped:
        log.warning("mean_topk_recall: %d listed class(es) had no samples", skipped)
    if not recalls:
        raise MetricError("no listed class has ground-truth samples")
    return float(np.mean(recalls))


def mean_class_accuracy(preds, labels) -> float:
    """Macro average of per-class top-1 accuracy over classes present."""
    mat = _as_matrix(preds)
    labels = np.asarray(labels, dtype=np.int64)
    top1 = mat.argmax(axis=1)  # ties -> lowest index
    accs = [float((top1[labels == c] == c).mean()) for c in np.unique(labels)]
    return float(np.mean(accs))


def derive_many_shot(labels, threshold: int) -> list[int]:
    """Classes with at least ``threshold`` ground-truth samples."""
    labels = np.asarray(labels, dtype=np.int64)
    classes, counts = np.unique(labels, return_counts=True)
    return [int(c) for c, n in zip(classes, counts) if n >= threshold]


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    """Serializable evaluation summary for either protocol."""

    protocol: str
    horizons: list[int] | None = None
    instances: int = 0
    tasks: dict | None = None  # task -> {"top1": [...], "top5": [...], "mean_top5_recall": ...}
    observed_fraction: float | None = None
    predicted_fractions: list[float] | None = None
    mean_class_accuracy: dict | None = None  # str(fraction) -> accuracy
    videos: int = 0
    skipped: int = 0
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"protocol": self.protocol, "counts": self.counts}
        if self.protocol == "egocentric":
            out.update(horizons=self.horizons, instances=self.instances, tasks=self.tasks)
        else:
            out.update(
                observed_fraction=self.observed_fraction,
                predicted_fractions=self.predicted_fractions,
                mean_class_accuracy=self.mean_class_accuracy,
                videos=self.videos,
                skipped=self.skipped,
            )
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate_egocentric(
    params: SrlParams,
    sequences: list[FeatureSequence],
    o: int = 6,
    a: int = 8,
    many_shot: dict | None = None,
    ks=(1, 5),
) -> EvalReport:
    """Per-horizon Top-k accuracy (and macro recall) for all three heads."""
    preds = {task: {h: [] for h in range(1, a + 1)} for task in TASKS}
    labels = {task: {h: [] for h in range(1, a + 1)} for task in TASKS}
    n_instances = 0
    for seq in sequences:
        for inst in make_instances_egocentric(seq, o, a):
            res = rollout(params, inst.observed, [inst.horizon])
            h = inst.horizon
            for ti, task in enumerate(TASKS):
                preds[task][h].append(getattr(res, task)[h])
                labels[task][h].append(inst.labels[ti])
            n_instances += 1
    if n_instances == 0:
        raise MetricError("no eligible evaluation instances")
    horizons = [h for h in range(1, a + 1) if preds["activity"][h]]
    tasks_out = {}
    for task in TASKS:
        entry = {f"top{k}": [] for k in ks}
        entry["mean_top5_recall"] = [] if many_shot and task in many_shot else None
        for h in horizons:
            mat = np.stack(preds[task][h])
            lab = np.asarray(labels[task][h])
            for k in ks:
                kk = min(k, mat.shape[1])
                entry[f"top{k}"].append(topk_accuracy(mat, lab, kk))
            if entry["mean_top5_recall"] is not None:
                entry["mean_top5_recall"].append(
                    mean_topk_recall(mat, lab, min(5, mat.shape[1]), many_shot[task])
                )
        tasks_out[task] = entry
    return EvalReport(
        protocol="egocentric",
        horizons=horizons,
        instances=n_instances,
        tasks=tasks_out,
        counts={str(h): len(labels["activity"][h]) for h in horizons},
    )


class SrlDensePredictor:
    """Adapter giving the model the dense-protocol predictor interface."""

    def __init__(self, params: SrlParams):
        self.params = params

    def predict_frames(self, seq: FeatureSequence, obs_idx, pred_idx) -> np.ndarray:
        observed = seq.frames[np.asarray(obs_idx, dtype=np.int64)]
        n_steps = len(pred_idx)
        res = rollout(self.params, observed, list(range(1, n_steps + 1)))
        return np.stack([res.activity[t] for t in range(1, n_steps + 1)])


def evaluate_dense(
    predictor,
    sequences: list[FeatureSequence],
    observed_frac: float,
    predicted_fracs=(0.1, 0.2, 0.3, 0.5),
    o: int = 16,
) -> EvalReport:
    """Observe a fraction of each video, predict frame labels for the rest.

    The observed span is uniformly subsampled to ``o`` frames before
    encoding; scoring is macro accuracy over classes, cumulative up to each
    predicted fraction.  ``predictor`` needs one method:
    ``predict_frames(seq, obs_idx, pred_idx) -> (len(pred_idx), n_classes)``.
    """
    if not 0.0 < observed_frac < 1.0:
        raise ParameterError(f"observed_frac must be in (0, 1), got {observed_frac}")
    fracs = [float(f) for f in predicted_fracs]
    if not fracs or any(not 0.0 < f <= 1.0 for f in fracs) or sorted(fracs) != fracs:
        raise ParameterError(f"predicted_fracs must be ascending in (0, 1], got {fracs}")
    per_frac_preds = {f: [] for f in fracs}
    per_frac_labels = {f: [] for f in fracs}
    used = 0
    skipped = 0
    for seq in sequences:
        T = seq.n_frames
        n_obs = int(observed_frac * T)
        max_pred = min(int(round(max(fracs) * T)), T - n_obs)
        if n_obs < 1 or max_pred < 1:
            skipped += 1
            log.warning("%s: too short for dense evaluation (T=%d)", seq.video_id, T)
            continue
        obs_idx = np.round(np.linspace(0, n_obs - 1, num=o)).astype(np.int64)
        pred_idx = np.arange(n_obs, n_obs + max_pred)
        probs = np.asarray(predictor.predict_frames(seq, obs_idx, pred_idx))
        truth = frame_activity_labels(seq)[pred_idx]
        for f in fracs:
            lf = min(int(round(f * T)), max_pred)
            mask = truth[:lf] >= 0
            if mask.any():
                per_frac_preds[f].append(probs[:lf][mask])
                per_frac_labels[f].append(truth[:lf][mask])
        used += 1
    if used == 0:
        raise MetricError("no video long enough for dense evaluation")
    acc = {}
    for f in fracs:
        if per_frac_preds[f]:
            acc[repr(f)] = mean_class_accuracy(
                np.concatenate(per_frac_preds[f]), np.concatenate(per_frac_labels[f])
            )
        else:
            acc[repr(f)] = float("nan")
    return EvalReport(
        protocol="dense",
        observed_fraction=observed_frac,
        predicted_fractions=fracs,
        mean_class_accuracy=acc,
        videos=used,
        skipped=skipped,
        counts={repr(f): int(sum(len(x) for x in per_frac_labels[f])) for f in fracs},
    )
