"""Anticipation model: observed-clip encoding, recursive prediction with
contrastive revision, cosine reattention, GRU fusion, multi-task heads,
multi-horizon rollout and cross-modality fusion.

Hidden size equals the feature dimension d throughout: the predicted state
lives in the same space as the frame features, which is what makes the
revision dot products and the reattention cosines meaningful.

One forward pass = one fresh graph.  Parameters are bound into the graph as
leaf tensors; after ``Graph.backward`` their gradients are collected by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .backend import kernels as K
from .errors import DataError, InputError, ParameterError
from .layers import (
    BoundGru,
    BoundLinear,
    BoundLstm,
    GruCell,
    LinearHead,
    LstmCell,
    cross_entropy,
    dropout,
    gru_step,
    linear,
    lstm_step,
)

__all__ = [
    "AGGREGATORS",
    "SrlParams",
    "RolloutState",
    "PredictionResult",
    "FusionMlp",
    "encode_observed",
    "predict_step",
    "revision_loss",
    "reattend",
    "fuse",
    "heads",
    "forward_loss",
    "rollout",
    "fuse_modalities_late",
    "fuse_modalities_attention",
    "attention_weights",
]

AGGREGATORS = ("gru", "lstm", "avg", "max")
STATE_INITS = ("encoder", "zero")


@dataclass
class SrlParams:
    """All learnable weights plus the architecture/objective hyperparameters."""

    dim: int
    n_activities: int
    n_verbs: int
    n_nouns: int
    aggregator: str
    dropout: float
    alpha: float
    beta: float
    use_reattend: bool
    state_init: str
    temperature: float
    agg_cell: GruCell | LstmCell | None
    gru1: GruCell
    gru2: GruCell
    head_a: LinearHead
    head_v: LinearHead
    head_n: LinearHead

    @classmethod
    def create(
        cls,
        dim: int,
        n_activities: int,
        n_verbs: int,
        n_nouns: int,
        rng: np.random.Generator,
        aggregator: str = "gru",
        dropout: float = 0.5,
        alpha: float = 0.5,
        beta: float = 0.5,
        use_reattend: bool = True,
        state_init: str = "encoder",
        temperature: float = 1.0,
    ) -> "SrlParams":
        _validate_config(
            dim, n_activities, n_verbs, n_nouns, aggregator, dropout, alpha, beta,
            state_init, temperature,
        )
        if aggregator == "gru":
            agg = GruCell.create(dim, dim, rng)
        elif aggregator == "lstm":
            agg = LstmCell.create(dim, dim, rng)
        else:
            agg = None
        return cls(
            dim=dim,
            n_activities=n_activities,
            n_verbs=n_verbs,
            n_nouns=n_nouns,
            aggregator=aggregator,
            dropout=dropout,
            alpha=alpha,
            beta=beta,
            use_reattend=use_reattend,
            state_init=state_init,
            temperature=temperature,
            agg_cell=agg,
            gru1=GruCell.create(2 * dim, dim, rng),
            gru2=GruCell.create(2 * dim, dim, rng),
            head_a=LinearHead.create(2 * dim, n_activities, rng),
            head_v=LinearHead.create(2 * dim, n_verbs, rng),
            head_n=LinearHead.create(2 * dim, n_nouns, rng),
        )

    def config_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_activities": self.n_activities,
            "n_verbs": self.n_verbs,
            "n_nouns": self.n_nouns,
            "aggregator": self.aggregator,
            "dropout": self.dropout,
            "alpha": self.alpha,
            "beta": self.beta,
            "use_reattend": self.use_reattend,
            "state_init": self.state_init,
            "temperature": self.temperature,
        }

    @classmethod
    def from_config(cls, cfg: dict, arrays: dict[str, np.ndarray]) -> "SrlParams":
        """Rebuild from a config dict plus named parameter arrays."""
        d = int(cfg["dim"])
        agg = cfg["aggregator"]
        if agg == "gru":
            agg_cell = GruCell.zeros(d, d)
        elif agg == "lstm":
            agg_cell = LstmCell.zeros(d, d)
        else:
            agg_cell = None
        params = cls(
            dim=d,
            n_activities=int(cfg["n_activities"]),
            n_verbs=int(cfg["n_verbs"]),
            n_nouns=int(cfg["n_nouns"]),
            aggregator=agg,
            dropout=float(cfg["dropout"]),
            alpha=float(cfg["alpha"]),
            beta=float(cfg["beta"]),
            use_reattend=bool(cfg["use_reattend"]),
            state_init=cfg["state_init"],
            temperature=float(cfg["temperature"]),
            agg_cell=agg_cell,
            gru1=GruCell.zeros(2 * d, d),
            gru2=GruCell.zeros(2 * d, d),
            head_a=LinearHead.zeros(2 * d, int(cfg["n_activities"])),
            head_v=LinearHead.zeros(2 * d, int(cfg["n_verbs"])),
            head_n=LinearHead.zeros(2 * d, int(cfg["n_nouns"])),
        )
        for name, arr in params.named_arrays():
            src = arrays[name]
            if src.shape != arr.shape:
                raise ParameterError(f"parameter {name}: shape {src.shape} != {arr.shape}")
            arr[...] = src
        return params

    def named_arrays(self):
        """(name, array) pairs in a fixed, documented order."""
        out = []
        if self.agg_cell is not None:
            out.extend(self.agg_cell.named_arrays("agg"))
        out.extend(self.gru1.named_arrays("gru1"))
        out.extend(self.gru2.named_arrays("gru2"))
        out.extend(self.head_a.named_arrays("head_a"))
        out.extend(self.head_v.named_arrays("head_v"))
        out.extend(self.head_n.named_arrays("head_n"))
        return out

    def clone(self) -> "SrlParams":
        return SrlParams.from_config(
            self.config_dict(), {n: a.copy() for n, a in self.named_arrays()}
        )

    def bind(self, graph: Graph) -> "BoundSrl":
        return BoundSrl(
            graph=graph,
            params=self,
            agg=self.agg_cell.bind(graph) if self.agg_cell is not None else None,
            gru1=self.gru1.bind(graph),
            gru2=self.gru2.bind(graph),
            head_a=self.head_a.bind(graph),
            head_v=self.head_v.bind(graph),
            head_n=self.head_n.bind(graph),
        )


def _validate_config(dim, n_a, n_v, n_n, aggregator, dropout, alpha, beta, state_init, temperature):
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if min(n_a, n_v, n_n) < 1:
        raise ParameterError("every head needs at least one class")
    if aggregator not in AGGREGATORS:
        raise ParameterError(f"aggregator must be one of {AGGREGATORS}, got {aggregator!r}")
    if not 0.0 <= dropout < 1.0:
        raise ParameterError(f"dropout must be in [0, 1), got {dropout}")
    if not 0.0 <= alpha <= 1.0 or not 0.0 <= beta <= 1.0:
        raise ParameterError(f"alpha and beta must lie in [0, 1], got {alpha}, {beta}")
    if state_init not in STATE_INITS:
        raise ParameterError(f"state_init must be one of {STATE_INITS}, got {state_init!r}")
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")


@dataclass
class BoundSrl:
    """Per-graph view of SrlParams: every array wrapped as a leaf tensor."""

    graph: Graph
    params: SrlParams
    agg: BoundGru | BoundLstm | None
    gru1: BoundGru
    gru2: BoundGru
    head_a: BoundLinear
    head_v: BoundLinear
    head_n: BoundLinear

    def named_leaves(self):
        out = []
        if self.agg is not None:
            out.extend((f"agg.{f}", t) for f, t in zip(("w", "u", "b"), self.agg.leaves))
        for prefix, cell in (("gru1", self.gru1), ("gru2", self.gru2)):
            out.extend((f"{prefix}.{f}", t) for f, t in zip(("w", "u", "b"), cell.leaves))
        for prefix, head in (("head_a", self.head_a), ("head_v", self.head_v), ("head_n", self.head_n)):
            out.append((f"{prefix}.w", head.w))
            out.append((f"{prefix}.b", head.b))
        return out

    def grad_by_name(self) -> dict[str, np.ndarray]:
        return {name: leaf.grad for name, leaf in self.named_leaves()}


@dataclass
class RolloutState:
    """Carrier for the recursive prediction loop."""

    h1: Tensor
    h2: Tensor
    t: int = 0
    attention: list = field(default_factory=list)
    revision_losses: list = field(default_factory=list)


@dataclass
class PredictionResult:
    """Per-horizon distributions plus the attention trace."""

    horizons: list[int]
    activity: dict[int, np.ndarray]
    verb: dict[int, np.ndarray]
    noun: dict[int, np.ndarray]
    attention: list[np.ndarray]


# ---------------------------------------------------------------------------
# forward building blocks


def encode_observed(bound: BoundSrl, feats: list[Tensor], training: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Aggregate the observed frame features into h_o.

    Recurrent aggregators run from a zero initial state; "avg"/"max" reduce
    elementwise.
    """
    if len(feats) == 0:
        raise InputError("encode_observed: empty observed sequence")
    p = bound.params
    if p.aggregator == "avg":
        return ad.mean_stack(feats)
    if p.aggregator == "max":
        return ad.max_stack(feats)
    g = bound.graph
    h = g.tensor(np.zeros(p.dim))
    if p.aggregator == "gru":
        for f in feats:
            x = dropout(f, p.dropout, training, rng)
            h = gru_step(bound.agg, x, h)
        return h
    c = g.tensor(np.zeros(p.dim))
    for f in feats:
        x = dropout(f, p.dropout, training, rng)
        h, c = lstm_step(bound.agg, x, h, c)
    return h


def predict_step(bound: BoundSrl, h_o: Tensor, state: RolloutState,
                 training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """One recursion step: h1_t from [h_o, h2_{t-1}] and h1_{t-1}."""
    p = bound.params
    x = ad.concat(h_o, state.h2)
    x = dropout(x, p.dropout, training, rng)
    return gru_step(bound.gru1, x, state.h1)


def revision_loss(h1_t: Tensor, positive: np.ndarray, negatives, temperature: float = 1.0) -> Tensor:
    """Contrastive loss over dot-product logits, positive at index 0.

    Sample features are constants (they come from a frozen extractor), so the
    gradient flows into h1_t only.
    """
    positive = np.ascontiguousarray(positive, dtype=np.float64)
    if positive.ndim != 1:
        raise InputError(f"revision_loss: positive must be a vector, got shape {positive.shape}")
    d = positive.shape[0]
    if h1_t.values.shape != (d,):
        raise InputError(
            f"revision_loss: state length {h1_t.values.shape} != sample length {d}"
        )
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.size == 0:
        samples = positive[None, :].copy()
    else:
        if negs.ndim != 2 or negs.shape[1] != d:
            raise InputError(f"revision_loss: negatives shape {negs.shape} incompatible with d={d}")
        samples = np.ascontiguousarray(np.concatenate([positive[None, :], negs]))
    g = h1_t.graph
    inv_temp = 1.0 / float(temperature)
    loss, probs = K.infonce(h1_t.values, samples, inv_temp)
    out = g.emit("revision_loss", (h1_t,), np.asarray(loss), None)

    def backprop():
        K.infonce_backward(float(out.grad), samples, probs, inv_temp, h1_t.grad)

    g._records[-1].backprop = backprop
    return out


def reattend(h1_t: Tensor, feats: list[Tensor], fmat: np.ndarray | None = None):
    """Cosine scores against each observed frame and their weighted sum.

    Returns (s_t, f1_t) with s_t in [-1, 1]^o and f1_t = sum_j s_j F_j.
    The weights are deliberately not renormalized.  Zero-norm vectors score 0.
    ``fmat`` may carry the pre-stacked (o, d) feature block to avoid
    restacking every step; it must match ``feats`` row for row.
    """
    if len(feats) == 0:
        raise InputError("reattend: empty observed sequence")
    g = h1_t.graph
    if fmat is None:
        fmat = np.ascontiguousarray(np.stack([f.values for f in feats]))
    h = h1_t.values
    if not h.flags.c_contiguous:
        h = np.ascontiguousarray(h)
    s_vals, fnorms, hnorm = K.cosine_scores(h, fmat)
    s = g.emit("cosine_scores", (h1_t,) + tuple(feats), s_vals, None)

    def backprop_s():
        dfmat = np.zeros_like(fmat)
        K.cosine_scores_backward(s.grad, h, fmat, s_vals, fnorms, hnorm, h1_t.grad, dfmat)
        for j, f in enumerate(feats):
            f.grad += dfmat[j]

    g._records[-1].backprop = backprop_s

    f1 = g.emit("attend_mix", (s,) + tuple(feats), K.attend_mix(s_vals, fmat), None)

    def backprop_mix():
        dfmat = np.zeros_like(fmat)
        K.attend_mix_backward(f1.grad, s_vals, fmat, s.grad, dfmat)
        for j, f in enumerate(feats):
            f.grad += dfmat[j]

    g._records[-1].backprop = backprop_mix
    return s, f1


def fuse(bound: BoundSrl, h1_t: Tensor, f1_t: Tensor, h2_prev: Tensor,
         training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Second GRU combines the prediction and the reattended context."""
    p = bound.params
    x = ad.concat(h1_t, f1_t)
    x = dropout(x, p.dropout, training, rng)
    return gru_step(bound.gru2, x, h2_prev)


def heads(bound: BoundSrl, h1_ts: Tensor, h2_ts: Tensor,
          training: bool = False, rng: np.random.Generator | None = None):
    """Three softmax heads over concat(h2, h1); one shared dropout mask."""
    p = bound.params
    hhat = ad.concat(h2_ts, h1_ts)
    hhat = dropout(hhat, p.dropout, training, rng)
    p_a = ad.softmax(linear(bound.head_a, hhat))
    p_v = ad.softmax(linear(bound.head_v, hhat))
    p_n = ad.softmax(linear(bound.head_n, hhat))
    return p_a, p_v, p_n


def _init_state(bound: BoundSrl, h_o: Tensor) -> RolloutState:
    if bound.params.state_init == "encoder":
        return RolloutState(h1=h_o, h2=h_o)
    zero1 = bound.graph.tensor(np.zeros(bound.params.dim))
    zero2 = bound.graph.tensor(np.zeros(bound.params.dim))
    return RolloutState(h1=zero1, h2=zero2)


def _advance(bound: BoundSrl, h_o: Tensor, feats, state: RolloutState,
             training: bool, rng, fmat: np.ndarray | None = None) -> None:
    """Run one anticipation step, mutating the rollout state."""
    h1 = predict_step(bound, h_o, state, training, rng)
    if bound.params.use_reattend:
        s, f1 = reattend(h1, feats, fmat)
        state.attention.append(s)
        h2 = fuse(bound, h1, f1, state.h2, training, rng)
    else:
        h2 = h1
    state.h1 = h1
    state.h2 = h2
    state.t += 1


def forward_loss(params: SrlParams, instance, negatives=None,
                 rng: np.random.Generator | None = None, training: bool = True):
    """Full training objective on one instance.

    total = L_a + alpha*(L_n + L_v) + beta * sum_t L_rev^t

    ``negatives`` is one (N-1, d) array per anticipation step (may be None
    when beta == 0).  Returns (loss tensor, components dict, bound view).
    Component values are unweighted; when a term's weight is zero it is
    skipped entirely, so alpha = beta = 0 returns exactly L_a.
    """
    horizon = int(instance.horizon)
    if horizon < 1:
        raise ParameterError(f"instance horizon must be >= 1, got {horizon}")
    g = Graph()
    bound = params.bind(g)
    fmat = np.ascontiguousarray(instance.observed, dtype=np.float64)
    feats = [g.tensor(row) for row in fmat]
    h_o = encode_observed(bound, feats, training, rng)
    state = _init_state(bound, h_o)

    use_revision = params.beta > 0.0
    if use_revision:
        future = np.asarray(instance.future, dtype=np.float64)
        if future.ndim != 2 or future.shape[0] < horizon:
            raise DataError(
                f"revision needs {horizon} future feature rows, got {future.shape}"
            )
    for t in range(1, horizon + 1):
        h1 = predict_step(bound, h_o, state, training, rng)
        if use_revision:
            negs = negatives[t - 1] if negatives is not None else ()
            state.revision_losses.append(
                revision_loss(h1, future[t - 1], negs, params.temperature)
            )
        if params.use_reattend:
            s, f1 = reattend(h1, feats, fmat)
            state.attention.append(s)
            h2 = fuse(bound, h1, f1, state.h2, training, rng)
        else:
            h2 = h1
        state.h1 = h1
        state.h2 = h2
        state.t = t

    p_a, p_v, p_n = heads(bound, state.h1, state.h2, training, rng)
    act, verb, noun = (int(v) for v in instance.labels)
    loss_a = cross_entropy(p_a, act)
    loss_v = cross_entropy(p_v, verb)
    loss_n = cross_entropy(p_n, noun)

    total = loss_a
    if params.alpha > 0.0:
        total = ad.add(total, ad.scale(ad.add(loss_n, loss_v), params.alpha))
    rev_sum = 0.0
    if state.revision_losses:
        rev = state.revision_losses[0]
        for term in state.revision_losses[1:]:
            rev = ad.add(rev, term)
        rev_sum = rev.item()
        total = ad.add(total, ad.scale(rev, params.beta))

    components = {
        "total": total.item(),
        "activity": loss_a.item(),
        "verb": loss_v.item(),
        "noun": loss_n.item(),
        "revision": rev_sum,
    }
    return total, components, bound


def rollout(params: SrlParams, observed, horizons) -> PredictionResult:
    """Deterministic multi-horizon anticipation (eval mode, no dropout).

    Revision is a training-time auxiliary and is not evaluated here.
    """
    horizons = [int(h) for h in horizons]
    if not horizons:
        raise ParameterError("rollout: horizons must be nonempty")
    if any(h < 1 for h in horizons):
        raise ParameterError(f"rollout: horizons must be >= 1, got {horizons}")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ParameterError(f"rollout: horizons must be strictly ascending, got {horizons}")
    g = Graph()
    bound = params.bind(g)
    fmat = np.ascontiguousarray(observed, dtype=np.float64)
    feats = [g.tensor(row) for row in fmat]
    h_o = encode_observed(bound, feats, training=False)
    state = _init_state(bound, h_o)
    wanted = set(horizons)
    result = PredictionResult(horizons, {}, {}, {}, [])
    for t in range(1, max(horizons) + 1):
        _advance(bound, h_o, feats, state, training=False, rng=None, fmat=fmat)
        if t in wanted:
            p_a, p_v, p_n = heads(bound, state.h1, state.h2, training=False)
            result.activity[t] = p_a.values.copy()
            result.verb[t] = p_v.values.copy()
            result.noun[t] = p_n.values.copy()
    result.attention = [s.values.copy() for s in state.attention]
    return result


# ---------------------------------------------------------------------------
# cross-modality fusion


def _check_fusable(results):
    if len(results) < 2:
        raise InputError("fusion needs at least two modality results")
    first = results[0]
    for r in results[1:]:
        if r.horizons != first.horizons:
            raise InputError(f"fusion: horizon sets differ ({r.horizons} vs {first.horizons})")
        for task in ("activity", "verb", "noun"):
            for h in first.horizons:
                if getattr(r, task)[h].shape != getattr(first, task)[h].shape:
                    raise InputError(f"fusion: label spaces differ for task {task!r}")


def fuse_modalities_late(results) -> PredictionResult:
    """Arithmetic mean of per-class probabilities per horizon."""
    results = list(results)
    _check_fusable(results)
    horizons = results[0].horizons
    fused = PredictionResult(list(horizons), {}, {}, {}, [])
    for task in ("activity", "verb", "noun"):
        for h in horizons:
            stack = np.stack([getattr(r, task)[h] for r in results])
            getattr(fused, task)[h] = stack.mean(axis=0)
    return fused


@dataclass
class FusionMlp:
    """Three linear layers with tanh between, softmax over modalities."""

    n_modalities: int
    in_dim: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def create(cls, dim: int, n_modalities: int, rng: np.random.Generator,
               hidden: tuple | None = None) -> "FusionMlp":
        from .layers import uniform_init

        in_dim = dim * n_modalities
        if hidden is None:
            hidden = (2 * dim * n_modalities, dim)
        h1, h2 = hidden
        return cls(
            n_modalities,
            in_dim,
            uniform_init(rng, in_dim, (in_dim, h1)), np.zeros(h1),
            uniform_init(rng, h1, (h1, h2)), np.zeros(h2),
            uniform_init(rng, h2, (h2, n_modalities)), np.zeros(n_modalities),
        )

    @classmethod
    def zeros(cls, dim: int, n_modalities: int, hidden: tuple | None = None) -> "FusionMlp":
        in_dim = dim * n_modalities
        if hidden is None:
            hidden = (2 * dim * n_modalities, dim)
        h1, h2 = hidden
        return cls(
            n_modalities,
            in_dim,
            np.zeros((in_dim, h1)), np.zeros(h1),
            np.zeros((h1, h2)), np.zeros(h2),
            np.zeros((h2, n_modalities)), np.zeros(n_modalities),
        )

    def named_arrays(self, prefix: str = "fusion"):
        return [
            (f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2),
            (f"{prefix}.w3", self.w3), (f"{prefix}.b3", self.b3),
        ]


def attention_weights(mlp: FusionMlp, observed_reps, graph: Graph):
    """Tape tensor of modality weights from the concatenated h_o vectors."""
    reps = [np.asarray(r, dtype=np.float64) for r in observed_reps]
    if len(reps) != mlp.n_modalities:
        raise InputError(
            f"attention fusion: got {len(reps)} representations for {mlp.n_modalities} modalities"
        )
    x = graph.tensor(np.concatenate(reps))
    if x.values.shape != (mlp.in_dim,):
        raise InputError(
            f"attention fusion: concatenated length {x.values.shape[0]} != {mlp.in_dim}"
        )
    leaves = {name: graph.tensor(arr) for name, arr in mlp.named_arrays()}
    h = ad.tanh(ad.add(ad.matmul(x, leaves["fusion.w1"]), leaves["fusion.b1"]))
    h = ad.tanh(ad.add(ad.matmul(h, leaves["fusion.w2"]), leaves["fusion.b2"]))
    logits = ad.add(ad.matmul(h, leaves["fusion.w3"]), leaves["fusion.b3"])
    return ad.softmax(logits), leaves


def fuse_modalities_attention(observed_reps, results, mlp: FusionMlp):
    """Convex combination of per-modality distributions, weights from the MLP.

    Returns (fused PredictionResult, modality weight vector).
    """
    results = list(results)
    _check_fusable(results)
    if len(results) != mlp.n_modalities:
        raise InputError(
            f"attention fusion: {len(results)} results for {mlp.n_modalities} modalities"
        )
    g = Graph()
    w, _ = attention_weights(mlp, observed_reps, g)
    horizons = results[0].horizons
    fused = PredictionResult(list(horizons), {}, {}, {}, [])
    for task in ("activity", "verb", "noun"):
        for h in horizons:
            stack = g.tensor(np.stack([getattr(r, task)[h] for r in results]))
            getattr(fused, task)[h] = ad.matmul(w, stack).values.copy()
    return fused, w.values.copy()
