"""Optimizers, the end-to-end training loop, and checkpointing.

Classic (coupled) L2 weight decay for both optimizers: the decay term is
folded into the gradient before the update.  Learning-rate schedule is
constant; an optional step decay is exposed but off by default.

Determinism contract: (seed, config, dataset) fixes every byte of the final
checkpoint.  All randomness flows through named streams fanned out from the
seed; per-instance dropout generators and negatives are pre-drawn
sequentially before any (possibly parallel) dispatch, and gradients reduce
in fixed instance order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .data import (
    SAMPLING_MODES,
    FeatureSequence,
    LabelVocab,
    NegativeBank,
    make_instances_dense,
    make_instances_egocentric,
)
from .errors import (
    CheckpointError,
    DataError,
    NumericError,
    ParameterError,
    StateError,
    TrainingAbort,
)
from .model import SrlParams, forward_loss

__all__ = [
    "OptimizerConfig",
    "TrainConfig",
    "Optimizer",
    "sgd_step",
    "adam_step",
    "Checkpoint",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
]

MAGIC = b"NXACT001"


@dataclass
class OptimizerConfig:
    kind: str = "sgd"  # "sgd" | "adam"
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-5
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    lr_decay: float = 1.0  # per-epoch multiplier; 1.0 = constant schedule

    def validate(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ParameterError(f"optimizer kind must be sgd or adam, got {self.kind!r}")
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ParameterError(f"beta1/beta2 must be in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ParameterError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ParameterError(f"lr_decay must be in (0, 1], got {self.lr_decay}")


@dataclass
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    protocol: str = "egocentric"  # "egocentric" | "dense"
    o: int = 6
    a: int = 8
    stride: int = 1  # dense protocol
    n_contrast: int = 16  # contrastive sample count N (positive + negatives)
    sampling_mode: str = "all_video"
    window_jitter: int = 0
    threads: int = 1

    def validate(self) -> None:
        self.optimizer.validate()
        if self.protocol not in ("egocentric", "dense"):
            raise ParameterError(f"protocol must be egocentric or dense, got {self.protocol!r}")
        if self.o < 1 or self.a < 1 or self.stride < 1:
            raise ParameterError("o, a, stride must be >= 1")
        if self.n_contrast < 1:
            raise ParameterError(f"n_contrast must be >= 1, got {self.n_contrast}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ParameterError(
                f"sampling_mode must be one of {SAMPLING_MODES}, got {self.sampling_mode!r}"
            )
        if self.window_jitter < 0:
            raise ParameterError(f"window_jitter must be >= 0, got {self.window_jitter}")
        if self.threads < 1:
            raise ParameterError(f"threads must be >= 1, got {self.threads}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        opt = OptimizerConfig(**d.pop("optimizer"))
        return cls(optimizer=opt, **d)


def config_hash(model_cfg: dict, train_cfg: dict) -> str:
    blob = json.dumps({"model": model_cfg, "train": train_cfg}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# optimizers


def sgd_step(named_params, grads: dict, state: dict, cfg: OptimizerConfig, lr: float | None = None) -> None:
    """v <- momentum*v + g + wd*w ;  w <- w - lr*v  (in-place)."""
    lr = cfg.lr if lr is None else lr
    velocity = state.setdefault("velocity", {})
    for name, w in named_params:
        g = grads.get(name)
        if g is None:
            raise StateError(f"missing gradient for parameter {name!r}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
            velocity[name] = v
        step = g if cfg.weight_decay == 0.0 else g + cfg.weight_decay * w
        v *= cfg.momentum
        v += step
        w -= lr * v


def adam_step(named_params, grads: dict, state: dict, cfg: OptimizerConfig, lr: float | None = None) -> None:
    """Bias-corrected Adam with L2 decay folded into the gradient."""
    lr = cfg.lr if lr is None else lr
    m_state = state.setdefault("m", {})
    v_state = state.setdefault("v", {})
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, w in named_params:
        g = grads.get(name)
        if g is None:
            raise StateError(f"missing gradient for parameter {name!r}")
        if cfg.weight_decay != 0.0:
            g = g + cfg.weight_decay * w
        m = m_state.get(name)
        if m is None:
            m = np.zeros_like(w)
            m_state[name] = m
            v_state[name] = np.zeros_like(w)
        v = v_state[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        w -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


class Optimizer:
    """Dispatching facade over sgd_step/adam_step with serializable state."""

    def __init__(self, cfg: OptimizerConfig, state: dict | None = None):
        cfg.validate()
        self.cfg = cfg
        self.state = state if state is not None else {}

    def step(self, named_params, grads: dict, lr: float | None = None) -> None:
        if self.cfg.kind == "sgd":
            sgd_step(named_params, grads, self.state, self.cfg, lr)
        else:
            adam_step(named_params, grads, self.state, self.cfg, lr)

    def state_arrays(self):
        """(name, array) pairs for checkpointing, fixed order."""
        out = []
        for group in ("velocity", "m", "v"):
            for name, arr in self.state.get(group, {}).items():
                out.append((f"{group}.{name}", arr))
        return out

    def scalar_state(self) -> dict:
        return {"t": int(self.state.get("t", 0))}

    @classmethod
    def restore(cls, cfg: OptimizerConfig, arrays: dict[str, np.ndarray], scalars: dict) -> "Optimizer":
        state: dict = {}
        for key, arr in arrays.items():
            group, name = key.split(".", 1)
            state.setdefault(group, {})[name] = arr.copy()
        if scalars.get("t", 0):
            state["t"] = int(scalars["t"])
        return cls(cfg, state)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class Checkpoint:
    params: SrlParams
    optimizer_state: dict  # flat arrays name -> ndarray
    optimizer_scalars: dict
    train_config: dict
    epoch: int
    rng_states: dict
    hash: str


_STREAMS = ("shuffle", "sampling", "dropout", "jitter")


def _build_instances(sequences, vocab, cfg: TrainConfig, jitter_rng=None):
    out = []
    if cfg.protocol == "egocentric":
        for seq in sequences:
            out.extend(
                make_instances_egocentric(
                    seq, cfg.o, cfg.a, jitter=cfg.window_jitter, rng=jitter_rng
                )
            )
    else:
        for seq in sequences:
            out.extend(
                inst
                for inst in make_instances_dense(seq, vocab, cfg.o, cfg.a, cfg.stride)
                if inst.labels[0] >= 0
            )
    return out


def _child_rng(master: np.random.Generator) -> np.random.Generator:
    raw = master.integers(0, 2**63 - 1, size=2)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(raw[0]), int(raw[1])])))


def train(
    params: SrlParams,
    sequences: list[FeatureSequence],
    vocab: LabelVocab,
    cfg: TrainConfig,
    callbacks=(),
    resume: Checkpoint | None = None,
):
    """Run the full objective over shuffled mini-batches.

    Returns (Checkpoint, history) where history holds one dict of mean loss
    components per epoch.  Raises TrainingAbort on a non-finite loss.
    """
    cfg.validate()
    if not sequences:
        raise DataError("train: empty dataset")
    seed = cfg.optimizer.seed
    # The epoch target may grow across resumes; everything else is pinned.
    hash_cfg = cfg.to_dict()
    hash_cfg["optimizer"] = {k: v for k, v in hash_cfg["optimizer"].items() if k != "epochs"}
    chash = config_hash(params.config_dict(), hash_cfg)

    if resume is not None:
        if resume.hash != chash:
            raise CheckpointError(
                "resume checkpoint was produced under a different configuration"
            )
        streams = {n: seeding.restore_generator(resume.rng_states[n]) for n in _STREAMS}
        optimizer = Optimizer.restore(cfg.optimizer, resume.optimizer_state, resume.optimizer_scalars)
        start_epoch = resume.epoch
    else:
        streams = {n: seeding.stream(seed, n) for n in _STREAMS}
        optimizer = Optimizer(cfg.optimizer)
        start_epoch = 0

    bank = None
    if params.beta > 0.0:
        bank = NegativeBank.from_sequences(sequences, seeding.stream(seed, "bank"))

    named = params.named_arrays()
    instances = None
    if cfg.window_jitter == 0:
        instances = _build_instances(sequences, vocab, cfg)
        if not instances:
            raise DataError("train: no usable instances in the dataset")

    history: list[dict] = []
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(start_epoch, cfg.optimizer.epochs):
            if cfg.window_jitter > 0:
                instances = _build_instances(sequences, vocab, cfg, streams["jitter"])
                if not instances:
                    raise DataError("train: no usable instances in the dataset")
            lr = cfg.optimizer.lr * (cfg.optimizer.lr_decay ** epoch)
            order = streams["shuffle"].permutation(len(instances))
            sums = {"total": 0.0, "activity": 0.0, "verb": 0.0, "noun": 0.0, "revision": 0.0}
            seen = 0
            for bstart in range(0, len(order), cfg.optimizer.batch_size):
                batch = order[bstart : bstart + cfg.optimizer.batch_size]
                prepped = []
                for idx in batch:
                    inst = instances[idx]
                    negs = None
                    if bank is not None:
                        negs = [
                            bank.sample(
                                inst.labels[0], inst.video_id, cfg.sampling_mode,
                                cfg.n_contrast - 1, streams["sampling"],
                            )
                            for _ in range(inst.horizon)
                        ]
                    drop_rng = _child_rng(streams["dropout"]) if params.dropout > 0 else None
                    prepped.append((inst, negs, drop_rng))

                def run_one(job):
                    inst, negs, drop_rng = job
                    loss, comps, bound = forward_loss(params, inst, negs, drop_rng, training=True)
                    bound.graph.backward(loss)
                    return comps, bound.grad_by_name()

                try:
                    if executor is None:
                        results = [run_one(job) for job in prepped]
                    else:
                        results = list(executor.map(run_one, prepped))
                except NumericError as e:
                    raise TrainingAbort(
                        f"non-finite values at epoch {epoch}, "
                        f"batch {bstart // cfg.optimizer.batch_size}: {e}",
                        diagnostics={
                            "epoch": epoch,
                            "batch": bstart // cfg.optimizer.batch_size,
                            "error": str(e),
                        },
                    ) from e

                grad_acc = {name: np.zeros_like(arr) for name, arr in named}
                for bi, (comps, grads) in enumerate(results):
                    if not np.isfinite(comps["total"]):
                        raise TrainingAbort(
                            f"non-finite loss at epoch {epoch}, batch {bstart // cfg.optimizer.batch_size}",
                            diagnostics={
                                "epoch": epoch,
                                "batch": bstart // cfg.optimizer.batch_size,
                                "components": comps,
                            },
                        )
                    for name, g in grads.items():
                        grad_acc[name] += g
                    for key in sums:
                        sums[key] += comps[key]
                    seen += 1
                inv = 1.0 / len(results)
                for g in grad_acc.values():
                    g *= inv
                optimizer.step(named, grad_acc, lr)

            event = {
                "epoch": epoch,
                "lr": lr,
                "instances": seen,
                **{k: sums[k] / max(seen, 1) for k in sums},
            }
            history.append(event)
            for cb in callbacks:
                cb(event)
    finally:
        if executor is not None:
            executor.shutdown()

    ck = Checkpoint(
        params=params.clone(),
        optimizer_state={name: arr.copy() for name, arr in optimizer.state_arrays()},
        optimizer_scalars=optimizer.scalar_state(),
        train_config=cfg.to_dict(),
        epoch=cfg.optimizer.epochs,
        rng_states={n: seeding.generator_state(g) for n, g in streams.items()},
        hash=chash,
    )
    return ck, history


# ---------------------------------------------------------------------------
# checkpoint file format (see README for the byte layout)


def save_checkpoint(ck: Checkpoint, path) -> None:
    path = Path(path)
    params_list = [(name, arr) for name, arr in ck.params.named_arrays()]
    opt_list = sorted(ck.optimizer_state.items())
    header = {
        "version": 1,
        "hash": ck.hash,
        "epoch": ck.epoch,
        "model": ck.params.config_dict(),
        "train_config": ck.train_config,
        "rng": ck.rng_states,
        "params": [{"name": n, "shape": list(a.shape)} for n, a in params_list],
        "opt_arrays": [{"name": n, "shape": list(a.shape)} for n, a in opt_list],
        "opt_scalars": ck.optimizer_scalars,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in params_list + opt_list
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint file)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    hstart = len(MAGIC) + 4
    if hstart + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[hstart : hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")

    body = raw[hstart + hlen :]
    sizes = [
        int(np.prod(spec["shape"])) if spec["shape"] else 1
        for spec in header["params"] + header["opt_arrays"]
    ]
    expected = sum(sizes) * 8
    if len(body) != expected:
        raise CheckpointError(f"{path}: blob is {len(body)} bytes, expected {expected}")

    offset = 0
    arrays = []
    for spec in header["params"] + header["opt_arrays"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(spec["shape"]).copy()
        arrays.append((spec["name"], arr))
        offset += n * 8
    n_params = len(header["params"])
    params = SrlParams.from_config(header["model"], dict(arrays[:n_params]))
    return Checkpoint(
        params=params,
        optimizer_state=dict(arrays[n_params:]),
        optimizer_scalars=header["opt_scalars"],
        train_config=header["train_config"],
        epoch=int(header["epoch"]),
        rng_states=header["rng"],
        hash=header["hash"],
    )
