"""Feature-file ingestion, annotations, instance generation, negative
sampling, label decomposition, and the synthetic activity-grammar generator.

Dataset directory layout (bit-exact, see README):

* ``meta.json``        — {"dim": int, "delta_s": float, "videos": [{"id", "frames"}]}
* ``<video_id>.f32``   — little-endian float32, row-major T x dim
* ``annotations.jsonl``— one JSON object per segment
* ``vocab.json``       — activities / verbs / nouns / activity_to_verb_noun

Frame index j covers time [j*delta, (j+1)*delta); a frame carries a segment's
label when its center falls inside [start_s, stop_s), first matching segment
winning.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    FormatError,
    ParameterError,
    ParseError,
    VocabularyError,
)

log = logging.getLogger(__name__)

__all__ = [
    "Segment",
    "FeatureSequence",
    "LabelVocab",
    "AnticipationInstance",
    "NegativeBank",
    "SAMPLING_MODES",
    "load_dataset",
    "write_dataset",
    "make_instances_egocentric",
    "make_instances_dense",
    "sample_negatives",
    "decompose_label",
    "frame_activity_labels",
    "SynthConfig",
    "make_transition",
    "generate_synthetic",
]

SAMPLING_MODES = ("same_video", "other_video", "all_video")


@dataclass
class Segment:
    start_s: float
    stop_s: float
    activity_id: int
    verb_id: int
    noun_id: int


@dataclass
class FeatureSequence:
    """One video's per-frame feature matrix plus its segment annotations."""

    video_id: str
    delta_s: float
    dim: int
    frames: np.ndarray  # (T, dim) float64
    segments: list[Segment] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_frames * self.delta_s


@dataclass
class LabelVocab:
    activities: list[str]
    verbs: list[str]
    nouns: list[str]
    activity_to_verb_noun: list[tuple[int, int]]

    def validate(self) -> None:
        if len(self.activity_to_verb_noun) != len(self.activities):
            raise ParseError(
                "vocab: activity_to_verb_noun must cover every activity "
                f"({len(self.activity_to_verb_noun)} entries for {len(self.activities)} activities)"
            )
        for a, (v, n) in enumerate(self.activity_to_verb_noun):
            if not (0 <= v < len(self.verbs) and 0 <= n < len(self.nouns)):
                raise ParseError(f"vocab: activity {a} maps to out-of-range verb/noun ({v}, {n})")


@dataclass
class AnticipationInstance:
    """One training/eval example: o observed frames, h future frames."""

    video_id: str
    observed: np.ndarray  # (o, dim)
    future: np.ndarray  # (horizon, dim), revision positives
    horizon: int
    labels: tuple[int, int, int]  # (activity, verb, noun)
    frame_activities: np.ndarray | None = None  # dense protocol diagnostics


# ---------------------------------------------------------------------------
# disk format


def _read_json(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}: {e.msg}") from None


def _canon_json(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def load_dataset(root) -> tuple[list[FeatureSequence], LabelVocab]:
    """Load every sequence plus the vocabulary, validating as it goes."""
    root = Path(root)
    meta = _read_json(root / "meta.json")
    for key in ("dim", "delta_s", "videos"):
        if key not in meta:
            raise ParseError(f"{root / 'meta.json'}: missing key {key!r}")
    dim = int(meta["dim"])
    delta = float(meta["delta_s"])
    if dim < 1 or delta <= 0:
        raise ParseError(f"{root / 'meta.json'}: dim must be >= 1 and delta_s > 0")

    raw_vocab = _read_json(root / "vocab.json")
    for key in ("activities", "verbs", "nouns", "activity_to_verb_noun"):
        if key not in raw_vocab:
            raise ParseError(f"{root / 'vocab.json'}: missing key {key!r}")
    vocab = LabelVocab(
        activities=list(raw_vocab["activities"]),
        verbs=list(raw_vocab["verbs"]),
        nouns=list(raw_vocab["nouns"]),
        activity_to_verb_noun=[tuple(p) for p in raw_vocab["activity_to_verb_noun"]],
    )
    vocab.validate()

    sequences: dict[str, FeatureSequence] = {}
    for entry in meta["videos"]:
        vid = str(entry["id"])
        frames = int(entry["frames"])
        fpath = root / f"{vid}.f32"
        try:
            raw = fpath.read_bytes()
        except FileNotFoundError:
            raise FormatError(f"{fpath}: feature file missing") from None
        expected = frames * dim * 4
        if len(raw) != expected:
            raise FormatError(
                f"{fpath}: {len(raw)} bytes != T*dim*4 = {frames}*{dim}*4 = {expected}"
            )
        mat = np.frombuffer(raw, dtype="<f4").reshape(frames, dim).astype(np.float64)
        if not np.isfinite(mat).all():
            raise FormatError(f"{fpath}: non-finite feature values")
        if vid in sequences:
            raise ParseError(f"{root / 'meta.json'}: duplicate video id {vid!r}")
        sequences[vid] = FeatureSequence(vid, delta, dim, mat)

    apath = root / "annotations.jsonl"
    try:
        lines = apath.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ParseError(f"{apath}: file not found") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{apath}:{lineno}: {e.msg}") from None
        try:
            vid = str(obj["video_id"])
            seg = Segment(
                float(obj["start_s"]),
                float(obj["stop_s"]),
                int(obj["activity_id"]),
                int(obj["verb_id"]),
                int(obj["noun_id"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{apath}:{lineno}: {e}") from None
        if vid not in sequences:
            raise ParseError(f"{apath}:{lineno}: unknown video id {vid!r}")
        seq = sequences[vid]
        if not (0.0 <= seg.start_s < seg.stop_s <= seq.duration_s + 1e-9):
            raise ParseError(
                f"{apath}:{lineno}: segment [{seg.start_s}, {seg.stop_s}) outside "
                f"[0, {seq.duration_s}]"
            )
        if not 0 <= seg.activity_id < len(vocab.activities):
            raise ParseError(f"{apath}:{lineno}: activity_id {seg.activity_id} out of range")
        if not 0 <= seg.verb_id < len(vocab.verbs):
            raise ParseError(f"{apath}:{lineno}: verb_id {seg.verb_id} out of range")
        if not 0 <= seg.noun_id < len(vocab.nouns):
            raise ParseError(f"{apath}:{lineno}: noun_id {seg.noun_id} out of range")
        seq.segments.append(seg)

    return list(sequences.values()), vocab


def write_dataset(root, sequences: list[FeatureSequence], vocab: LabelVocab) -> None:
    """Write the canonical on-disk form (deterministic bytes)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    deltas = {seq.delta_s for seq in sequences}
    dims = {seq.dim for seq in sequences}
    if len(deltas) > 1 or len(dims) > 1:
        raise DataError(f"write_dataset: mixed delta_s {deltas} or dim {dims}")
    delta = deltas.pop() if deltas else 0.25
    dim = dims.pop() if dims else 0

    meta = {
        "dim": dim,
        "delta_s": delta,
        "videos": [{"id": s.video_id, "frames": s.n_frames} for s in sequences],
    }
    (root / "meta.json").write_text(_canon_json(meta) + "\n", encoding="utf-8")
    (root / "vocab.json").write_text(
        _canon_json(
            {
                "activities": vocab.activities,
                "verbs": vocab.verbs,
                "nouns": vocab.nouns,
                "activity_to_verb_noun": [list(p) for p in vocab.activity_to_verb_noun],
            }
        )
        + "\n",
        encoding="utf-8",
    )
    with open(root / "annotations.jsonl", "w", encoding="utf-8") as fh:
        for seq in sequences:
            for seg in seq.segments:
                fh.write(
                    _canon_json(
                        {
                            "video_id": seq.video_id,
                            "start_s": seg.start_s,
                            "stop_s": seg.stop_s,
                            "activity_id": seg.activity_id,
                            "verb_id": seg.verb_id,
                            "noun_id": seg.noun_id,
                        }
                    )
                    + "\n"
                )
    for seq in sequences:
        (root / f"{seq.video_id}.f32").write_bytes(
            np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
        )


# ---------------------------------------------------------------------------
# instance generation


def make_instances_egocentric(
    seq: FeatureSequence,
    o: int = 6,
    a: int = 8,
    jitter: int = 0,
    rng: np.random.Generator | None = None,
) -> list[AnticipationInstance]:
    """Per eligible segment, one (o+a)-frame window split into ``a`` instances.

    The window ends one frame before the segment start (optionally shifted
    back by a random jitter of up to ``jitter`` frames).  The instance with
    horizon h observes window offsets (a-h)..(a-h+o-1) and keeps the next h
    frames as revision positives, so the target is always h steps past the
    last observed frame.  Segments without enough preceding video are skipped
    with a counted warning.
    """
    if o < 1 or a < 1:
        raise ParameterError(f"o and a must be >= 1, got o={o}, a={a}")
    if jitter < 0:
        raise ParameterError(f"jitter must be >= 0, got {jitter}")
    window = o + a
    out: list[AnticipationInstance] = []
    skipped = 0
    for seg in seq.segments:
        s_idx = int(round(seg.start_s / seq.delta_s))
        end = s_idx - 1
        if jitter > 0 and rng is not None:
            end -= int(rng.integers(0, jitter + 1))
        start = end - window + 1
        if start < 0 or end >= seq.n_frames:
            skipped += 1
            continue
        block = seq.frames[start : end + 1]
        labels = (seg.activity_id, seg.verb_id, seg.noun_id)
        for h in range(1, a + 1):
            lo = a - h
            out.append(
                AnticipationInstance(
                    video_id=seq.video_id,
                    observed=block[lo : lo + o],
                    future=block[lo + o : lo + o + h],
                    horizon=h,
                    labels=labels,
                )
            )
    if skipped:
        log.warning(
            "%s: skipped %d segment(s) without %d frames of preceding video",
            seq.video_id,
            skipped,
            window,
        )
    return out


def frame_activity_labels(seq: FeatureSequence) -> np.ndarray:
    """Per-frame activity ids via frame-center stabbing; -1 where unlabeled."""
    labels = np.full(seq.n_frames, -1, dtype=np.int64)
    centers = (np.arange(seq.n_frames) + 0.5) * seq.delta_s
    for seg in seq.segments:
        mask = (centers >= seg.start_s) & (centers < seg.stop_s) & (labels == -1)
        labels[mask] = seg.activity_id
    return labels


def make_instances_dense(
    seq: FeatureSequence,
    vocab: LabelVocab,
    o: int = 16,
    a: int = 16,
    stride: int = 1,
) -> list[AnticipationInstance]:
    """Sliding (o+a)-frame windows from video start to end.

    Emits floor((T-(o+a))/stride)+1 windows (none when T < o+a).  Labels come
    from the frame at the window end; windows whose target frame is unlabeled
    carry labels (-1, -1, -1) so callers can filter without changing counts.
    """
    if o < 1 or a < 1 or stride < 1:
        raise ParameterError(f"o, a, stride must be >= 1, got {o}, {a}, {stride}")
    window = o + a
    T = seq.n_frames
    if T < window:
        return []
    per_frame = frame_activity_labels(seq)
    out = []
    for start in range(0, T - window + 1, stride):
        target = start + window - 1
        act = int(per_frame[target])
        if act >= 0:
            v, n = vocab.activity_to_verb_noun[act]
            labels = (act, int(v), int(n))
        else:
            labels = (-1, -1, -1)
        out.append(
            AnticipationInstance(
                video_id=seq.video_id,
                observed=seq.frames[start : start + o],
                future=seq.frames[start + o : start + window],
                horizon=a,
                labels=labels,
                frame_activities=per_frame[start : start + window].copy(),
            )
        )
    return out


# ---------------------------------------------------------------------------
# negative sampling


class NegativeBank:
    """Pool of (feature, activity, video) entries for contrastive negatives."""

    def __init__(self, features: np.ndarray, activities: np.ndarray, video_ids: list[str]):
        if features.shape[0] == 0:
            raise DataError("negative bank is empty")
        self.features = np.ascontiguousarray(features, dtype=np.float64)
        self.activities = np.asarray(activities, dtype=np.int64)
        self.video_ids = np.asarray(video_ids, dtype=object)
        self._cache: dict = {}

    def __len__(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_sequences(
        cls, sequences: list[FeatureSequence], rng: np.random.Generator
    ) -> "NegativeBank":
        """One random frame per annotated segment."""
        feats, acts, vids = [], [], []
        for seq in sequences:
            for seg in seq.segments:
                lo = int(round(seg.start_s / seq.delta_s))
                hi = int(round(seg.stop_s / seq.delta_s))
                lo = max(0, min(lo, seq.n_frames - 1))
                hi = max(lo + 1, min(hi, seq.n_frames))
                j = int(rng.integers(lo, hi))
                feats.append(seq.frames[j])
                acts.append(seg.activity_id)
                vids.append(seq.video_id)
        if not feats:
            raise DataError("no annotated segments to build a negative bank from")
        return cls(np.stack(feats), np.asarray(acts), vids)

    def _eligible(self, activity_id: int, video_id: str, mode: str) -> np.ndarray:
        key = (mode, activity_id, video_id if mode != "all_video" else None)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        mask = self.activities != activity_id
        if mode == "same_video":
            mask &= self.video_ids == video_id
        elif mode == "other_video":
            mask &= self.video_ids != video_id
        elif mode != "all_video":
            raise ParameterError(f"sampling mode must be one of {SAMPLING_MODES}, got {mode!r}")
        idx = np.flatnonzero(mask)
        self._cache[key] = idx
        return idx

    def sample(
        self,
        activity_id: int,
        video_id: str,
        mode: str,
        count: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Uniform draw of ``count`` entries with a different activity.

        Without replacement while the eligible pool allows it; with
        replacement otherwise (keeps the contrastive sample count fixed).
        """
        if count < 0:
            raise ParameterError(f"count must be >= 0, got {count}")
        idx = self._eligible(activity_id, video_id, mode)
        if idx.size == 0:
            raise DataError(
                f"no eligible negatives for activity {activity_id} "
                f"(mode={mode}, video={video_id})"
            )
        if count == 0:
            return self.features[:0]
        replace = idx.size < count
        chosen = rng.choice(idx, size=count, replace=replace)
        return self.features[chosen]


def sample_negatives(bank: NegativeBank, positive: tuple[int, str], mode: str,
                     count: int, rng: np.random.Generator) -> np.ndarray:
    activity_id, video_id = positive
    return bank.sample(int(activity_id), video_id, mode, count, rng)


# ---------------------------------------------------------------------------
# label decomposition


def decompose_label(activity_name: str, verbs: list[str], nouns: list[str]) -> tuple[str, str]:
    """First verb-vocab token, then the first later noun-vocab token."""
    tokens = activity_name.split()
    verb_set = set(verbs)
    noun_set = set(nouns)
    verb_pos = None
    for i, tok in enumerate(tokens):
        if tok in verb_set:
            verb_pos = i
            break
    if verb_pos is None:
        raise VocabularyError(f"no verb found in activity name {activity_name!r}")
    for tok in tokens[verb_pos + 1 :]:
        if tok in noun_set:
            return tokens[verb_pos], tok
    raise VocabularyError(f"no noun found in activity name {activity_name!r}")


# ---------------------------------------------------------------------------
# synthetic generator


_VERB_POOL = [
    "take", "put", "open", "close", "wash", "cut",
    "pour", "stir", "peel", "mix", "fold", "spread",
]
_NOUN_POOL = [
    "cup", "plate", "knife", "bowl", "pan", "egg", "bread", "butter",
    "onion", "tomato", "spoon", "lid", "board", "jar", "towel", "pot",
]


def _factor_classes(n_classes: int) -> tuple[int, int]:
    """Most-square factorization n_classes = n_verbs * n_nouns, verbs <= nouns."""
    best = (1, n_classes)
    v = int(np.sqrt(n_classes))
    while v >= 1:
        if n_classes % v == 0:
            best = (v, n_classes // v)
            break
        v -= 1
    return best


def make_transition(kind: str, n_classes: int, stay: float = 0.8) -> np.ndarray:
    """Convenience transition matrices: 'cycle', 'sticky', or 'uniform'."""
    if kind == "cycle":
        m = np.zeros((n_classes, n_classes))
        m[np.arange(n_classes), (np.arange(n_classes) + 1) % n_classes] = 1.0
        return m
    if kind == "sticky":
        if not 0.0 <= stay <= 1.0:
            raise ParameterError(f"stay probability must be in [0, 1], got {stay}")
        off = (1.0 - stay) / (n_classes - 1)
        m = np.full((n_classes, n_classes), off)
        np.fill_diagonal(m, stay)
        return m
    if kind == "uniform":
        return np.full((n_classes, n_classes), 1.0 / n_classes)
    raise ParameterError(f"unknown transition kind {kind!r}")


@dataclass
class SynthConfig:
    n_classes: int = 20
    dim: int = 32
    n_videos: int = 50
    segments_per_video: int = 6
    frames_per_segment: int = 8
    transition: np.ndarray | None = None  # default: cycle
    noise_std: float = 0.1
    seed: int = 0
    n_verbs: int | None = None
    n_nouns: int | None = None
    delta_s: float = 0.25

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ParameterError(f"n_classes must be >= 2, got {self.n_classes}")
        if min(self.dim, self.n_videos, self.segments_per_video, self.frames_per_segment) < 1:
            raise ParameterError("dim, n_videos, segments_per_video, frames_per_segment must be >= 1")
        if self.noise_std < 0:
            raise ParameterError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.delta_s <= 0:
            raise ParameterError(f"delta_s must be > 0, got {self.delta_s}")
        if (self.n_verbs is None) != (self.n_nouns is None):
            raise ParameterError("give both n_verbs and n_nouns or neither")
        if self.n_verbs is not None and self.n_verbs * self.n_nouns != self.n_classes:
            raise ParameterError(
                f"n_verbs*n_nouns must equal n_classes ({self.n_verbs}*{self.n_nouns} != {self.n_classes})"
            )
        if self.transition is not None:
            t = np.asarray(self.transition, dtype=np.float64)
            if t.shape != (self.n_classes, self.n_classes):
                raise ParameterError(
                    f"transition must be ({self.n_classes}, {self.n_classes}), got {t.shape}"
                )
            if (t < 0).any() or not np.allclose(t.sum(axis=1), 1.0, atol=1e-9):
                raise ParameterError("transition rows must be nonnegative and sum to 1")


def _token(pool: list[str], i: int, stem: str) -> str:
    return pool[i] if i < len(pool) else f"{stem}{i}"


def generate_synthetic(config: SynthConfig) -> tuple[list[FeatureSequence], LabelVocab]:
    """Markov chain over activity classes; frames = class prototype + noise.

    Class c decomposes as (verb c // n_nouns, noun c % n_nouns); prototypes
    are fixed random unit vectors drawn once per dataset.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(config.seed), 0x5EED])))
    C, d = config.n_classes, config.dim
    trans = (
        np.asarray(config.transition, dtype=np.float64)
        if config.transition is not None
        else make_transition("cycle", C)
    )
    n_verbs, n_nouns = (
        (config.n_verbs, config.n_nouns)
        if config.n_verbs is not None
        else _factor_classes(C)
    )

    verbs = [_token(_VERB_POOL, i, "verb") for i in range(n_verbs)]
    nouns = [_token(_NOUN_POOL, i, "noun") for i in range(n_nouns)]
    activities = []
    mapping = []
    for c in range(C):
        v, n = c // n_nouns, c % n_nouns
        activities.append(f"{verbs[v]} {nouns[n]}")
        mapping.append((v, n))
    vocab = LabelVocab(activities, verbs, nouns, mapping)

    proto = rng.standard_normal((C, d))
    proto /= np.linalg.norm(proto, axis=1, keepdims=True)

    fps = config.frames_per_segment
    sequences = []
    for vi in range(config.n_videos):
        cls = int(rng.integers(C))
        frames = np.empty((config.segments_per_video * fps, d))
        segments = []
        for si in range(config.segments_per_video):
            block = proto[cls] + config.noise_std * rng.standard_normal((fps, d))
            frames[si * fps : (si + 1) * fps] = block
            v, n = mapping[cls]
            segments.append(
                Segment(
                    start_s=si * fps * config.delta_s,
                    stop_s=(si + 1) * fps * config.delta_s,
                    activity_id=cls,
                    verb_id=v,
                    noun_id=n,
                )
            )
            cls = int(rng.choice(C, p=trans[cls]))
        sequences.append(
            FeatureSequence(f"vid{vi:04d}", config.delta_s, d, frames, segments)
        )
    return sequences, vocab
