"""Tokenized training text, synthetic stochastic grammars, and prefix iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dists import ProbVector, sample_index

log = logging.getLogger(__name__)

# A token sequence is a plain list of ids; kept unboxed for speed.
TokenSeq = list


class VocabularyError(ValueError):
    """A symbol is missing from a non-byte vocabulary."""


@dataclass(frozen=True)
class Vocabulary:
    """Dense token-id space with printable symbols.

    ``byte_level`` vocabularies map ids 0..255 to raw byte values and
    tokenize any byte string; symbolic vocabularies map single characters.
    """

    id_to_symbol: tuple
    byte_level: bool = False

    def __post_init__(self):
        if len(self.id_to_symbol) < 2:
            raise ValueError("vocabulary needs at least 2 symbols")
        if len(set(self.id_to_symbol)) != len(self.id_to_symbol):
            raise ValueError("vocabulary symbols must be unique")

    @property
    def size(self) -> int:
        return len(self.id_to_symbol)

    @classmethod
    def bytes_vocab(cls) -> "Vocabulary":
        symbols = tuple(chr(i) if 32 <= i < 127 else f"\\x{i:02x}" for i in range(256))
        return cls(symbols, byte_level=True)

    @classmethod
    def symbolic(cls, symbols) -> "Vocabulary":
        return cls(tuple(symbols))


def tokenize(text, vocab: Vocabulary) -> TokenSeq:
    """Map text to token ids; byte vocabularies accept bytes or str."""
    if vocab.byte_level:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        return list(data)
    lookup = {sym: i for i, sym in enumerate(vocab.id_to_symbol)}
    ids = []
    for ch in text:
        if ch not in lookup:
            raise VocabularyError(f"symbol {ch!r} not in vocabulary")
        ids.append(lookup[ch])
    return ids


def detokenize(tokens: TokenSeq, vocab: Vocabulary):
    """Inverse of tokenize; returns bytes for byte vocabularies, str otherwise."""
    for t in tokens:
        if not 0 <= t < vocab.size:
            raise VocabularyError(f"token id {t} out of range for |V|={vocab.size}")
    if vocab.byte_level:
        return bytes(tokens)
    return "".join(vocab.id_to_symbol[t] for t in tokens)


@dataclass
class GrammarSpec:
    """An exact n-gram generative process.

    ``order`` is the n-gram order; transition contexts have length
    order-1. ``start_dist`` picks the initial context from
    ``start_contexts``; generated sequences begin with those tokens.
    """

    vocab_size: int
    order: int
    transitions: dict = field(repr=False)
    start_contexts: list = field(repr=False)
    start_dist: ProbVector = field(repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("grammar order must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("grammar vocabulary must have >= 2 symbols")
        ctx_len = self.order - 1
        for ctx, row in self.transitions.items():
            if len(ctx) != ctx_len:
                raise ValueError(f"context {ctx} has length {len(ctx)}, expected {ctx_len}")
            if len(row) != self.vocab_size:
                raise ValueError(f"row for {ctx} has {len(row)} entries, expected {self.vocab_size}")
        if len(self.start_contexts) != len(self.start_dist):
            raise ValueError("start distribution length does not match start contexts")
        self._check_reachable()

    def _check_reachable(self):
        """Every context reachable from a start context must have a row."""
        ctx_len = self.order - 1
        seen = set()
        frontier = [tuple(c) for c in self.start_contexts]
        while frontier:
            ctx = frontier.pop()
            if ctx in seen:
                continue
            seen.add(ctx)
            row = self.transitions.get(ctx)
            if row is None:
                raise ValueError(f"reachable context {ctx} has no transition row")
            for y in np.flatnonzero(row.p > 0.0):
                nxt = (ctx + (int(y),))[-ctx_len:] if ctx_len else ()
                if nxt not in seen:
                    frontier.append(nxt)

    def contexts(self):
        return self.transitions.keys()


def random_grammar(
    vocab_size: int,
    order: int,
    seed: int,
    concentration: float = 0.3,
    flat_fraction: float = 0.0,
    flat_concentration: float = 5.0,
) -> GrammarSpec:
    """Sample a dense random grammar with Dirichlet transition rows.

    Low ``concentration`` gives peaky (easy-to-predict) rows. When
    ``flat_fraction`` > 0, that share of contexts instead gets rows from
    ``flat_concentration``, producing a mix of confident and diffuse
    contexts.
    """
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    ctx_len = order - 1
    contexts = [()]
    for _ in range(ctx_len):
        contexts = [c + (y,) for c in contexts for y in range(vocab_size)]
    n_flat = int(round(flat_fraction * len(contexts)))
    flat_idx = set(gen.choice(len(contexts), size=n_flat, replace=False).tolist()) if n_flat else set()
    transitions = {}
    for i, ctx in enumerate(contexts):
        alpha = flat_concentration if i in flat_idx else concentration
        row = gen.dirichlet(np.full(vocab_size, alpha))
        transitions[ctx] = ProbVector(row / row.sum(), validate=False)
    start = ProbVector(np.full(len(contexts), 1.0 / len(contexts)))
    return GrammarSpec(vocab_size, order, transitions, contexts, start)


def sample_grammar_corpus(spec: GrammarSpec, num_sequences: int, length: int, seed: int) -> list:
    """Draw i.i.d. sequences from the grammar; sequence i is sharded by (seed, i)."""
    if length < spec.order:
        raise ValueError(f"sequence length {length} < grammar order {spec.order}")
    ctx_len = spec.order - 1
    out = []
    for i in range(num_sequences):
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        start_idx = sample_index(spec.start_dist.p, float(gen.random()))
        seq = list(spec.start_contexts[start_idx])
        while len(seq) < length:
            ctx = tuple(seq[-ctx_len:]) if ctx_len else ()
            row = spec.transitions[ctx]
            seq.append(sample_index(row.p, float(gen.random())))
        out.append(seq[:length])
    return out


def iter_training_prefixes(corpus, min_prefix: int, window: int):
    """Yield (prefix, continuation) for every window start that fits.

    Starts use stride 1: prefix lengths min_prefix..len(seq)-window, so a
    full window of continuation always remains. Sequences too short for a
    single start are skipped and counted in a log line.
    """
    if min_prefix < 1:
        raise ValueError("min_prefix must be >= 1")
    skipped = 0
    for seq in corpus:
        if len(seq) < min_prefix + window:
            skipped += 1
            continue
        for j in range(min_prefix, len(seq) - window + 1):
            yield seq[:j], seq[j:]
    if skipped:
        log.info("iter_training_prefixes: skipped %d sequences shorter than %d",
                 skipped, min_prefix + window)


# --- plain-text formats ---------------------------------------------------
#
# Grammar file: one row per line, `context_tokens -> p_0 p_1 ... p_{V-1}`,
# plus `order N` / `vocab N` directives and `start ctx -> p` lines.
# Corpus file: one whitespace-separated token-id sequence per line.


def save_grammar(spec: GrammarSpec, path):
    lines = [f"order {spec.order}", f"vocab {spec.vocab_size}"]
    for ctx, p in zip(spec.start_contexts, spec.start_dist.p):
        lhs = " ".join(str(t) for t in ctx)
        prefix = f"start {lhs}".rstrip()
        lines.append(f"{prefix} -> {float(p)!r}")
    for ctx in sorted(spec.transitions):
        row = spec.transitions[ctx]
        lhs = " ".join(str(t) for t in ctx)
        vals = " ".join(repr(float(v)) for v in row.p)
        lines.append(f"{lhs} -> {vals}" if lhs else f"-> {vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grammar(path) -> GrammarSpec:
    order = None
    vocab = None
    transitions = {}
    start_contexts = []
    start_probs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "order":
                order = int(parts[1])
            elif parts[0] == "vocab":
                vocab = int(parts[1])
            elif parts[0] == "start":
                if "->" not in parts:
                    raise ValueError(f"{path}:{lineno}: malformed start line")
                sep = parts.index("->")
                start_contexts.append(tuple(int(t) for t in parts[1:sep]))
                start_probs.append(float(parts[sep + 1]))
            else:
                if "->" not in parts:
                    raise ValueError(f"{path}:{lineno}: malformed row")
                sep = parts.index("->")
                ctx = tuple(int(t) for t in parts[:sep])
                row = np.array([float(v) for v in parts[sep + 1:]])
                transitions[ctx] = ProbVector(row)
    if order is None or vocab is None:
        raise ValueError(f"{path}: missing order/vocab directive")
    return GrammarSpec(vocab, order, transitions, start_contexts, ProbVector(np.array(start_probs)))


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for seq in corpus:
            fh.write(" ".join(str(t) for t in seq) + "\n")


def load_corpus(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append([int(t) for t in line.split()])
    return out
