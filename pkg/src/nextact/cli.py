"""Command-line entry point.

Subcommands: synth, train, eval, rollout, ablate, gradcheck.
Settings resolve as: built-in defaults < preset < --config JSON file < flags.
Unknown keys in the config file are rejected before any work starts.

Exit codes: 0 success, 1 failed self-check (or I/O failure), 2 bad
configuration or parameters, 3 numeric abort during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import seeding
from .ablation import ablation_to_csv, run_ablation
from .config import merge_settings, preset_settings
from .data import (
    SynthConfig,
    generate_synthetic,
    load_dataset,
    make_transition,
    write_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    FormatError,
    InputError,
    MetricError,
    NumericError,
    ParameterError,
    ParseError,
    ShapeError,
    TrainingAbort,
    VocabularyError,
)
from .gradcheck import run_gradcheck
from .metrics import SrlDensePredictor, derive_many_shot, evaluate_dense, evaluate_egocentric
from .model import SrlParams, rollout
from .training import (
    OptimizerConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

_CONFIG_ERRORS = (
    ConfigError,
    ParameterError,
    ParseError,
    FormatError,
    CheckpointError,
    DataError,
    VocabularyError,
    MetricError,
    InputError,
    ShapeError,
)


class Emitter:
    """JSONL event sink: stdout by default, a file when --log-file is given."""

    def __init__(self, log_file=None):
        self._fh = open(log_file, "w", encoding="utf-8") if log_file else None

    def __call__(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
        else:
            print(line)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}:{e.lineno}: {e.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return obj


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x != ""]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x != ""]


_MODEL_KEYS = ("aggregator", "dropout", "alpha", "beta", "temperature", "state_init")
_OPT_KEYS = ("kind", "lr", "momentum", "beta1", "beta2", "eps", "weight_decay",
             "batch_size", "epochs", "seed", "lr_decay")
_TRAIN_KEYS = ("protocol", "o", "a", "stride", "n_contrast", "sampling_mode",
               "window_jitter", "threads")

_TRAIN_DEFAULTS = {
    "aggregator": "gru", "dropout": 0.5, "alpha": 0.5, "beta": 0.5,
    "temperature": 1.0, "state_init": "encoder",
    "protocol": "egocentric", "o": 6, "a": 8, "stride": 1,
    "n_contrast": 16, "sampling_mode": "all_video", "window_jitter": 0, "threads": 1,
    "kind": "sgd", "lr": 0.1, "momentum": 0.9, "beta1": 0.9, "beta2": 0.999,
    "eps": 1e-8, "weight_decay": 5e-5, "batch_size": 32, "epochs": 30,
    "seed": 0, "lr_decay": 1.0,
}


def _train_settings(args) -> dict:
    layers = [
        preset_settings(args.preset),
        _read_config_file(args.config),
        {k: getattr(args, k) for k in _TRAIN_DEFAULTS if getattr(args, k, None) is not None},
    ]
    return merge_settings(_TRAIN_DEFAULTS, *layers, allowed=set(_TRAIN_DEFAULTS))


def _build_train_config(s: dict) -> TrainConfig:
    opt = OptimizerConfig(**{k: s[k] for k in _OPT_KEYS})
    cfg = TrainConfig(optimizer=opt, **{k: s[k] for k in _TRAIN_KEYS})
    cfg.validate()
    return cfg


def _build_params(s: dict, dim: int, vocab, rng) -> SrlParams:
    return SrlParams.create(
        dim=dim,
        n_activities=len(vocab.activities),
        n_verbs=len(vocab.verbs),
        n_nouns=len(vocab.nouns),
        rng=rng,
        **{k: s[k] for k in _MODEL_KEYS},
    )


# ---------------------------------------------------------------------------
# subcommands


_SYNTH_DEFAULTS = {
    "n_classes": 20, "dim": 32, "n_videos": 50, "segments_per_video": 6,
    "frames_per_segment": 8, "noise_std": 0.1, "transition": "cycle",
    "transition_stay": 0.8, "n_verbs": None, "n_nouns": None,
    "delta_s": 0.25, "seed": 0,
}


def cmd_synth(args) -> int:
    flags = {k: getattr(args, k) for k in _SYNTH_DEFAULTS if getattr(args, k, None) is not None}
    s = merge_settings(
        _SYNTH_DEFAULTS, _read_config_file(args.config), flags,
        allowed=set(_SYNTH_DEFAULTS),
    )
    transition = s["transition"]
    if isinstance(transition, str):
        transition = make_transition(transition, int(s["n_classes"]), float(s["transition_stay"]))
    else:
        transition = np.asarray(transition, dtype=np.float64)
    cfg = SynthConfig(
        n_classes=int(s["n_classes"]),
        dim=int(s["dim"]),
        n_videos=int(s["n_videos"]),
        segments_per_video=int(s["segments_per_video"]),
        frames_per_segment=int(s["frames_per_segment"]),
        transition=transition,
        noise_std=float(s["noise_std"]),
        seed=int(s["seed"]),
        n_verbs=s["n_verbs"],
        n_nouns=s["n_nouns"],
        delta_s=float(s["delta_s"]),
    )
    cfg.validate()
    sequences, vocab = generate_synthetic(cfg)
    write_dataset(args.out, sequences, vocab)
    emit = Emitter(args.log_file)
    emit(
        {
            "event": "synth",
            "out": str(args.out),
            "videos": len(sequences),
            "segments": sum(len(q.segments) for q in sequences),
            "classes": len(vocab.activities),
            "dim": cfg.dim,
            "seed": cfg.seed,
        }
    )
    emit.close()
    return 0


def cmd_train(args) -> int:
    s = _train_settings(args)
    cfg = _build_train_config(s)
    sequences, vocab = load_dataset(args.data)
    if not sequences:
        raise DataError("dataset has no videos")
    dim = sequences[0].dim
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        params = resume.params
    else:
        params = _build_params(s, dim, vocab, seeding.stream(cfg.optimizer.seed, "init"))
    if params.dim != dim:
        raise ConfigError(f"model dim {params.dim} != dataset dim {dim}")

    emit = Emitter(args.log_file)
    metrics_path = args.metrics_log or (str(args.out) + ".metrics.jsonl")
    mfh = open(metrics_path, "w", encoding="utf-8")

    def on_epoch(event):
        emit({"event": "epoch", **event})
        mfh.write(json.dumps(event, sort_keys=True) + "\n")
        mfh.flush()

    try:
        ck, history = train(params, sequences, vocab, cfg, callbacks=[on_epoch], resume=resume)
    finally:
        mfh.close()
    save_checkpoint(ck, args.out)
    emit({"event": "done", "checkpoint": str(args.out), "epochs": len(history),
          "metrics_log": metrics_path})
    emit.close()
    return 0


def _load_for_eval(args):
    ck = load_checkpoint(args.checkpoint)
    sequences, vocab = load_dataset(args.data)
    if sequences and sequences[0].dim != ck.params.dim:
        raise ConfigError(
            f"checkpoint dim {ck.params.dim} != dataset dim {sequences[0].dim}"
        )
    return ck, sequences, vocab


def cmd_eval(args) -> int:
    ck, sequences, vocab = _load_for_eval(args)
    tc = ck.train_config
    protocol = args.protocol or tc.get("protocol", "egocentric")
    o = args.o if args.o is not None else tc.get("o", 6)
    a = args.a if args.a is not None else tc.get("a", 8)
    if protocol == "egocentric":
        many_shot = None
        if args.many_shot_threshold is not None:
            labels = {"activity": [], "verb": [], "noun": []}
            from .data import make_instances_egocentric

            for seq in sequences:
                for inst in make_instances_egocentric(seq, o, a):
                    labels["activity"].append(inst.labels[0])
                    labels["verb"].append(inst.labels[1])
                    labels["noun"].append(inst.labels[2])
            many_shot = {
                task: derive_many_shot(vals, args.many_shot_threshold)
                for task, vals in labels.items()
            }
        report = evaluate_egocentric(ck.params, sequences, o, a, many_shot=many_shot)
    elif protocol == "dense":
        report = evaluate_dense(
            SrlDensePredictor(ck.params),
            sequences,
            observed_frac=args.observed_frac,
            predicted_fracs=_float_list(args.predicted_fracs),
            o=o,
        )
    else:
        raise ConfigError(f"eval protocol must be egocentric or dense, got {protocol!r}")
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    emit = Emitter(args.log_file)
    emit({"event": "eval", "protocol": protocol, "out": str(args.out)})
    emit.close()
    return 0


def cmd_rollout(args) -> int:
    ck, sequences, _vocab = _load_for_eval(args)
    horizons = _int_list(args.horizons)
    o = args.o if args.o is not None else ck.train_config.get("o", 6)
    by_id = {seq.video_id: seq for seq in sequences}
    if args.video not in by_id:
        raise ConfigError(f"video {args.video!r} not in dataset")
    seq = by_id[args.video]
    end = args.end_frame if args.end_frame is not None else o - 1
    if end < o - 1 or end >= seq.n_frames:
        raise ConfigError(
            f"end frame {end} must lie in [{o - 1}, {seq.n_frames - 1}] for o={o}"
        )
    observed = seq.frames[end - o + 1 : end + 1]
    res = rollout(ck.params, observed, horizons)
    payload = {
        "video": args.video,
        "end_frame": end,
        "horizons": res.horizons,
        "activity": {str(h): res.activity[h].tolist() for h in res.horizons},
        "verb": {str(h): res.verb[h].tolist() for h in res.horizons},
        "noun": {str(h): res.noun[h].tolist() for h in res.horizons},
        "attention": [s.tolist() for s in res.attention],
    }
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_ablate(args) -> int:
    s = _train_settings(args)
    cfg = _build_train_config(s)
    sequences, vocab = load_dataset(args.data)
    if args.eval_data:
        eval_sequences, _ = load_dataset(args.eval_data)
        train_sequences = sequences
    else:
        holdout = args.holdout
        n_eval = max(1, int(round(len(sequences) * holdout)))
        if n_eval >= len(sequences):
            raise ConfigError("holdout fraction leaves no training videos")
        train_sequences = sequences[: len(sequences) - n_eval]
        eval_sequences = sequences[len(sequences) - n_eval :]
    model_cfg = {
        "dim": sequences[0].dim,
        "n_activities": len(vocab.activities),
        "n_verbs": len(vocab.verbs),
        "n_nouns": len(vocab.nouns),
        **{k: s[k] for k in _MODEL_KEYS},
    }
    emit = Emitter(args.log_file)
    rows = run_ablation(
        train_sequences, eval_sequences, vocab, model_cfg, cfg,
        seeds=_int_list(args.seeds),
        callbacks=[lambda ev: emit({"event": "ablate", **ev})],
    )
    Path(args.out).write_text(ablation_to_csv(rows), encoding="utf-8")
    if args.out_json:
        payload = [vars(r) for r in rows]
        Path(args.out_json).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    emit({"event": "done", "out": str(args.out), "rows": len(rows)})
    emit.close()
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(
        dim=args.dim, o=args.o, a=args.a, n_contrast=args.n_contrast,
        n_classes=args.classes, seed=args.seed, step=args.step,
        tolerance=args.tolerance, aggregator=args.aggregator, corrupt=args.corrupt,
    )
    print(
        json.dumps(
            {
                "event": "gradcheck",
                "passed": report.passed,
                "worst_relative_error": report.worst,
                "worst_parameter": report.worst_param,
                "tolerance": report.tolerance,
            },
            sort_keys=True,
        )
    )
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--log-file", dest="log_file", help="write JSONL events here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nextact",
        description="Train and evaluate the future-activity anticipation model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--n-videos", dest="n_videos", type=int)
    p.add_argument("--segments-per-video", dest="segments_per_video", type=int)
    p.add_argument("--frames-per-segment", dest="frames_per_segment", type=int)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--transition", choices=("cycle", "sticky", "uniform"))
    p.add_argument("--transition-stay", dest="transition_stay", type=float)
    p.add_argument("--n-verbs", dest="n_verbs", type=int)
    p.add_argument("--n-nouns", dest="n_nouns", type=int)
    p.add_argument("--delta-s", dest="delta_s", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics-log", dest="metrics_log")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--preset")
    for key in _TRAIN_DEFAULTS:
        flag = "--" + key.replace("_", "-")
        default_val = _TRAIN_DEFAULTS[key]
        kind = type(default_val)
        p.add_argument(flag, dest=key, type=(str if kind is str else kind), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--protocol", choices=("egocentric", "dense"))
    p.add_argument("--o", type=int)
    p.add_argument("--a", type=int)
    p.add_argument("--observed-frac", dest="observed_frac", type=float, default=0.2)
    p.add_argument("--predicted-fracs", dest="predicted_fracs", default="0.1,0.2,0.3,0.5")
    p.add_argument("--many-shot-threshold", dest="many_shot_threshold", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="multi-horizon prediction for one clip")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--end-frame", dest="end_frame", type=int,
                   help="index of the last observed frame (default: o-1)")
    p.add_argument("--horizons", default="1,2,3,4,5,6,7,8")
    p.add_argument("--o", type=int)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("ablate", help="train/evaluate the 8-setting component grid")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--holdout", type=float, default=0.25,
                   help="video fraction held out for eval when --eval-data is absent")
    p.add_argument("--out", required=True, help="grid CSV path")
    p.add_argument("--out-json", dest="out_json")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--preset")
    for key in _TRAIN_DEFAULTS:
        flag = "--" + key.replace("_", "-")
        default_val = _TRAIN_DEFAULTS[key]
        kind = type(default_val)
        p.add_argument(flag, dest=key, type=(str if kind is str else kind), default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    _add_common(p)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--o", type=int, default=3)
    p.add_argument("--a", type=int, default=2)
    p.add_argument("--n-contrast", dest="n_contrast", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--aggregator", choices=("gru", "lstm", "avg", "max"), default="gru")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # fault-injection test hook
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingAbort as e:
        print(
            json.dumps(
                {"event": "abort", "error": str(e), "diagnostics": e.diagnostics},
                sort_keys=True,
            ),
            file=sys.stderr,
        )
        return 3
    except NumericError as e:
        print(json.dumps({"event": "abort", "error": str(e)}), file=sys.stderr)
        return 3
    except _CONFIG_ERRORS as e:
        print(json.dumps({"event": "error", "error": str(e)}), file=sys.stderr)
        return 2
    except OSError as e:
        print(json.dumps({"event": "error", "error": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
