"""Frozen tabular target models and a small trainable neural drafter.

The target side is exactly computable: count-based n-gram tables with
additive smoothing and recursive backoff, or a grammar served verbatim.
The drafter is a fixed-context embedding + tanh hidden layer + softmax
network with hand-written gradients, so every update is auditable and
checkable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import GrammarSpec
from .dists import LOG_FLOOR, ProbVector


class CheckpointError(Exception):
    """Raised for version, shape, or corruption problems in checkpoint files."""


# --- target adapters --------------------------------------------------------


def context_feature(context, order: int, vocab_size: int) -> np.ndarray:
    """Concatenated one-hot encodings of the last order-1 context tokens.

    Shorter contexts leave their leading slots at zero. Dimension is
    (order-1) * vocab_size.
    """
    m = order - 1
    f = np.zeros(m * vocab_size)
    tail = context[-m:] if m else []
    offset = m - len(tail)
    for i, tok in enumerate(tail):
        f[(offset + i) * vocab_size + int(tok)] = 1.0
    return f


class TabularTarget:
    """Count-based n-gram model with additive smoothing and backoff.

    next_dist(ctx)[y] = (count(ctx, y) + lam) / (count(ctx) + lam * |V|).
    Contexts never seen in the corpus back off to the (order-1)-gram table,
    recursively down to the unigram table, so lam = 0 never divides by zero.
    """

    def __init__(self, order: int, vocab_size: int, smoothing: float, counts):
        self.order = order
        self.vocab_size = vocab_size
        self.smoothing = smoothing
        self._counts = counts  # counts[k]: dict ctx-tuple(len k) -> (V,) count array
        self._rows: dict = {}

    @property
    def feature_dim(self) -> int:
        return (self.order - 1) * self.vocab_size

    def next_dist(self, context) -> ProbVector:
        for k in range(self.order - 1, -1, -1):
            ctx = tuple(context[-k:]) if k else ()
            if len(ctx) < k:
                continue
            counts = self._counts[k].get(ctx)
            if counts is None:
                continue
            key = (k, ctx)
            row = self._rows.get(key)
            if row is None:
                lam = self.smoothing
                probs = (counts + lam) / (counts.sum() + lam * self.vocab_size)
                row = ProbVector(probs / probs.sum(), validate=False)
                self._rows[key] = row
            return row
        raise RuntimeError("empty unigram table; target was fit on an empty corpus")

    def feature(self, context) -> np.ndarray:
        return context_feature(context, self.order, self.vocab_size)


def fit_tabular_target(corpus, order: int, smoothing: float, vocab_size: int) -> TabularTarget:
    """Count n-grams of all orders up to ``order`` over the corpus."""
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    if not corpus:
        raise ValueError("cannot fit a target on an empty corpus")
    counts = [dict() for _ in range(order)]
    for seq in corpus:
        for t, tok in enumerate(seq):
            for k in range(order):
                if t < k:
                    continue
                ctx = tuple(seq[t - k:t])
                row = counts[k].get(ctx)
                if row is None:
                    row = counts[k][ctx] = np.zeros(vocab_size)
                row[tok] += 1.0
    return TabularTarget(order, vocab_size, smoothing, counts)


class GrammarTarget:
    """Target adapter serving a grammar's exact conditional rows."""

    def __init__(self, spec: GrammarSpec):
        self.spec = spec
        self.order = spec.order
        self.vocab_size = spec.vocab_size

    @property
    def feature_dim(self) -> int:
        return (self.order - 1) * self.vocab_size

    def next_dist(self, context) -> ProbVector:
        ctx_len = self.order - 1
        ctx = tuple(context[-ctx_len:]) if ctx_len else ()
        if len(ctx) < ctx_len:
            raise ValueError(f"context shorter than grammar order - 1 ({ctx_len})")
        row = self.spec.transitions.get(ctx)
        if row is None:
            raise ValueError(f"no grammar row for context {ctx}")
        return row

    def feature(self, context) -> np.ndarray:
        return context_feature(context, self.order, self.vocab_size)


def target_feature(adapter, context) -> np.ndarray:
    """The adapter-provided feature vector for a (non-empty) context."""
    if len(context) == 0:
        raise ValueError("feature requires a non-empty context")
    return adapter.feature(context)


# --- drafter ------------------------------------------------------------------


@dataclass(frozen=True)
class DrafterDims:
    vocab: int
    embed: int
    feature: int  # 0 disables the feature channel
    context: int
    hidden: int

    def __post_init__(self):
        for name in ("vocab", "embed", "context", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"drafter dim {name} must be >= 1")
        if self.feature < 0:
            raise ValueError("feature dim must be >= 0")

    @property
    def input_dim(self) -> int:
        return self.context * self.embed + (self.embed if self.feature else 0)


@dataclass
class DrafterParameters:
    """The trainable parameter set; updates return new objects (snapshots)."""

    dims: DrafterDims
    embedding: np.ndarray          # (V, d)
    feat_proj: np.ndarray | None   # (F, d) when the feature channel is on
    w_hidden: np.ndarray           # (h, input_dim)
    b_hidden: np.ndarray           # (h,)
    w_out: np.ndarray              # (V, h)
    b_out: np.ndarray              # (V,)

    def _arrays(self):
        named = [("embedding", self.embedding)]
        if self.feat_proj is not None:
            named.append(("feat_proj", self.feat_proj))
        named += [("w_hidden", self.w_hidden), ("b_hidden", self.b_hidden),
                  ("w_out", self.w_out), ("b_out", self.b_out)]
        return named

    def copy(self) -> "DrafterParameters":
        return DrafterParameters(
            self.dims, self.embedding.copy(),
            None if self.feat_proj is None else self.feat_proj.copy(),
            self.w_hidden.copy(), self.b_hidden.copy(),
            self.w_out.copy(), self.b_out.copy())

    def zeros_like(self) -> "DrafterParameters":
        return DrafterParameters(
            self.dims, np.zeros_like(self.embedding),
            None if self.feat_proj is None else np.zeros_like(self.feat_proj),
            np.zeros_like(self.w_hidden), np.zeros_like(self.b_hidden),
            np.zeros_like(self.w_out), np.zeros_like(self.b_out))

    def add_scaled(self, other: "DrafterParameters", scale: float) -> "DrafterParameters":
        """self + scale * other, as a new snapshot."""
        if other.dims != self.dims:
            raise ValueError("parameter shapes do not match")
        out = self.copy()
        for (_, a), (_, b) in zip(out._arrays(), other._arrays()):
            a += scale * b
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self._arrays()])

    def set_flat(self, vec: np.ndarray):
        pos = 0
        for _, a in self._arrays():
            a.flat[:] = vec[pos:pos + a.size]
            pos += a.size
        if pos != vec.size:
            raise ValueError("flat vector length does not match parameter count")

    @property
    def num_params(self) -> int:
        return sum(a.size for _, a in self._arrays())


def init_drafter(dims: DrafterDims, seed: int) -> DrafterParameters:
    """Seeded uniform init in [-0.05, 0.05]; the initial policy is near uniform."""
    # 0xD12A namespaces init draws away from other consumers of the seed.
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xD12A))))

    def u(*shape):
        return gen.uniform(-0.05, 0.05, size=shape)

    return DrafterParameters(
        dims,
        embedding=u(dims.vocab, dims.embed),
        feat_proj=u(dims.feature, dims.embed) if dims.feature else None,
        w_hidden=u(dims.hidden, dims.input_dim),
        b_hidden=u(dims.hidden),
        w_out=u(dims.vocab, dims.hidden),
        b_out=u(dims.vocab))


def context_rows(context, c: int) -> np.ndarray:
    """Last c token ids of a context, left-padded with id 0."""
    tail = list(context[-c:])
    return np.array([0] * (c - len(tail)) + tail, dtype=np.intp)


@dataclass
class BatchedForward:
    """Forward-pass cache for a batch of contexts; feeds the backward pass."""

    params: DrafterParameters
    ctx_mat: np.ndarray            # (B, c) int
    features: np.ndarray | None    # (B, F)
    x: np.ndarray                  # (B, input_dim)
    hidden: np.ndarray             # (B, h)
    logits: np.ndarray             # (B, V)
    log_z: np.ndarray              # (B,) log-partition of each row
    probs: np.ndarray              # (B, V)

    def logprob(self, row: int, token: int) -> float:
        return float(self.logits[row, token] - self.log_z[row])

    def logprobs_of(self, tokens: np.ndarray) -> np.ndarray:
        return self.logits[np.arange(len(tokens)), tokens] - self.log_z

    def log_probs(self) -> np.ndarray:
        return self.logits - self.log_z[:, None]


def forward_batch(params: DrafterParameters, ctx_mat: np.ndarray,
                  features: np.ndarray | None = None) -> BatchedForward:
    dims = params.dims
    ctx_mat = np.atleast_2d(np.asarray(ctx_mat, dtype=np.intp))
    batch = ctx_mat.shape[0]
    x_tok = params.embedding[ctx_mat].reshape(batch, dims.context * dims.embed)
    if dims.feature:
        if features is None:
            raise ValueError("drafter expects a feature vector but none was given")
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape != (batch, dims.feature):
            raise ValueError(f"feature shape {features.shape} does not match "
                             f"(batch={batch}, F={dims.feature})")
        x = np.concatenate([x_tok, features @ params.feat_proj], axis=1)
    else:
        if features is not None:
            raise ValueError("feature given but drafter has no feature channel")
        x = x_tok
    hidden = np.tanh(x @ params.w_hidden.T + params.b_hidden)
    logits = hidden @ params.w_out.T + params.b_out
    shift = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - shift)
    z = ez.sum(axis=1)
    probs = ez / z[:, None]
    log_z = shift[:, 0] + np.log(z)
    return BatchedForward(params, ctx_mat, features, x, hidden, logits, log_z, probs)


def backward_batch(fwd: BatchedForward, upstream: np.ndarray) -> DrafterParameters:
    """Parameter gradient of sum_b <upstream[b], logits[b]> given the cache."""
    params = fwd.params
    dims = params.dims
    upstream = np.atleast_2d(upstream)
    grad = params.zeros_like()
    grad.w_out[:] = upstream.T @ fwd.hidden
    grad.b_out[:] = upstream.sum(axis=0)
    d_hidden = upstream @ params.w_out
    d_act = d_hidden * (1.0 - fwd.hidden ** 2)
    grad.w_hidden[:] = d_act.T @ fwd.x
    grad.b_hidden[:] = d_act.sum(axis=0)
    d_x = d_act @ params.w_hidden
    tok_dim = dims.context * dims.embed
    d_tok = d_x[:, :tok_dim].reshape(-1, dims.context, dims.embed)
    np.add.at(grad.embedding, fwd.ctx_mat, d_tok)
    if dims.feature:
        grad.feat_proj[:] = fwd.features.T @ d_x[:, tok_dim:]
    return grad


@dataclass
class DrafterOutput:
    """Next-token distribution plus the activations needed for backward."""

    dist: ProbVector
    cache: BatchedForward

    @property
    def logits(self) -> np.ndarray:
        return self.cache.logits[0]

    def logprob(self, token: int) -> float:
        return self.cache.logprob(0, token)


def drafter_forward(params: DrafterParameters, context,
                    feature: np.ndarray | None = None) -> DrafterOutput:
    """Distribution over the next token given the last ``context`` tokens.

    Uses the last c ids, left-padded with token 0; probabilities are a
    softmax and therefore strictly positive.
    """
    if len(context) < 1:
        raise ValueError("drafter context must be non-empty")
    ctx = context_rows(context, params.dims.context)[None, :]
    feat = None if feature is None else np.asarray(feature, dtype=np.float64)[None, :]
    fwd = forward_batch(params, ctx, feat)
    return DrafterOutput(ProbVector(fwd.probs[0], validate=False), fwd)


def drafter_backward(output: DrafterOutput, upstream: np.ndarray) -> DrafterParameters:
    """Gradient w.r.t. all parameters for a per-logit upstream gradient."""
    return backward_batch(output.cache, np.asarray(upstream, dtype=np.float64))


def sft_step(params: DrafterParameters, prefix, next_token: int, lr: float,
             feature: np.ndarray | None = None):
    """One cross-entropy gradient step on -log pi(next_token | prefix).

    Returns (updated parameters, loss). lr = 0 leaves parameters unchanged.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    out = drafter_forward(params, prefix, feature)
    loss = -out.logprob(next_token)
    upstream = out.cache.probs[0].copy()
    upstream[next_token] -= 1.0  # d(-log p_y)/d logits = probs - onehot
    grad = drafter_backward(out, upstream)
    return params.add_scaled(grad, -lr), float(loss)


def warmup_lr(base_lr: float, step: int, total_steps: int, warmup_ratio: float) -> float:
    """Linear warmup to base_lr over the first warmup_ratio of steps, then constant."""
    warm = max(1, int(round(total_steps * warmup_ratio)))
    return base_lr * min(1.0, (step + 1) / warm)


# --- checkpoint format --------------------------------------------------------
#
# Text file: header line "PPOWCKPT v1", a dims line, then one line per named
# array as `name (d0,d1,...) v0 v1 ...` with full-precision decimal values.
# Trailing `# key = value` comment lines echo the run configuration.

CKPT_MAGIC = "PPOWCKPT v1"


def checkpoint_save(params: DrafterParameters, path, config_echo: dict | None = None):
    d = params.dims
    lines = [CKPT_MAGIC,
             f"dims {d.vocab} {d.embed} {d.feature} {d.context} {d.hidden}"]
    for name, arr in params._arrays():
        shape = ",".join(str(s) for s in arr.shape)
        vals = " ".join(repr(float(v)) for v in arr.ravel())
        lines.append(f"{name} ({shape}) {vals}")
    for key, value in (config_echo or {}).items():
        lines.append(f"# {key} = {value}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def checkpoint_load(path, expected_dims: DrafterDims | None = None) -> DrafterParameters:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad or missing header (expected {CKPT_MAGIC!r})")
    if len(lines) < 2 or not lines[1].startswith("dims "):
        raise CheckpointError(f"{path}: missing dims line")
    try:
        v, d_, f, c, h = (int(t) for t in lines[1].split()[1:])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed dims line") from exc
    dims = DrafterDims(v, d_, f, c, h)
    if expected_dims is not None and dims != expected_dims:
        raise CheckpointError(
            f"{path}: checkpoint dims {dims} do not match expected {expected_dims}")
    arrays = {}
    for line in lines[2:]:
        if not line or line.startswith("#"):
            continue
        try:
            name, shape_s, rest = line.split(" ", 2)
            shape = tuple(int(s) for s in shape_s.strip("()").split(",") if s)
            vals = np.array([float(t) for t in rest.split()])
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupted array line for {line[:24]!r}") from exc
        if vals.size != int(np.prod(shape)):
            raise CheckpointError(
                f"{path}: array {name} has {vals.size} values, expected {np.prod(shape)}")
        arrays[name] = vals.reshape(shape)
    expected_names = {"embedding", "w_hidden", "b_hidden", "w_out", "b_out"}
    if dims.feature:
        expected_names.add("feat_proj")
    if set(arrays) != expected_names:
        raise CheckpointError(
            f"{path}: arrays {sorted(arrays)} do not match expected {sorted(expected_names)}")
    params = DrafterParameters(
        dims, arrays["embedding"], arrays.get("feat_proj"),
        arrays["w_hidden"], arrays["b_hidden"], arrays["w_out"], arrays["b_out"])
    shapes = {
        "embedding": (dims.vocab, dims.embed),
        "feat_proj": (dims.feature, dims.embed),
        "w_hidden": (dims.hidden, dims.input_dim),
        "b_hidden": (dims.hidden,),
        "w_out": (dims.vocab, dims.hidden),
        "b_out": (dims.vocab,),
    }
    for name, arr in params._arrays():
        if arr.shape != shapes[name]:
            raise CheckpointError(f"{path}: array {name} has shape {arr.shape}, "
                                  f"expected {shapes[name]}")
    return params


def mean_target_kl(adapter, params: DrafterParameters, corpus,
                   use_feature: bool = False, max_positions: int = 2000) -> float:
    """Mean KL(P_t || Q_t) over corpus positions; the SFT progress metric."""
    total = 0.0
    n = 0
    for seq in corpus:
        for t in range(1, len(seq)):
            ctx = seq[:t]
            p = adapter.next_dist(ctx)
            feat = adapter.feature(ctx) if use_feature else None
            q = drafter_forward(params, ctx, feat).dist
            mask = p.p > 0
            total += float(np.sum(p.p[mask] * (np.log(p.p[mask])
                                               - np.log(np.maximum(q.p[mask], LOG_FLOOR)))))
            n += 1
            if n >= max_positions:
                return total / n
    if n == 0:
        raise ValueError("corpus has no scorable positions")
    return total / n
