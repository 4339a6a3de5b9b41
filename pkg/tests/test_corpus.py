import numpy as np
import pytest

from ppow.corpus import (GrammarSpec, Vocabulary, VocabularyError, detokenize,
                         iter_training_prefixes, load_corpus, load_grammar,
                         random_grammar, sample_grammar_corpus, save_corpus,
                         save_grammar, tokenize)
from ppow.dists import ProbVector, one_hot


def test_tokenize_empty_and_bytes():
    vocab = Vocabulary.bytes_vocab()
    assert tokenize(b"", vocab) == []
    assert tokenize("ab", vocab) == [97, 98]
    assert detokenize([97, 98], vocab) == b"ab"


def test_tokenize_roundtrip_random_bytes():
    vocab = Vocabulary.bytes_vocab()
    data = np.random.default_rng(0).integers(0, 256, size=1024).astype(np.uint8).tobytes()
    assert detokenize(tokenize(data, vocab), vocab) == data


def test_symbolic_vocab_missing_symbol():
    vocab = Vocabulary.symbolic("abc")
    assert tokenize("cab", vocab) == [2, 0, 1]
    assert detokenize([2, 0, 1], vocab) == "cab"
    with pytest.raises(VocabularyError):
        tokenize("abd", vocab)


def test_vocabulary_invariants():
    with pytest.raises(ValueError):
        Vocabulary.symbolic("a")  # too small
    with pytest.raises(ValueError):
        Vocabulary.symbolic("aa")  # duplicate


def _deterministic_grammar():
    # 0 -> 1 -> 0 -> ... with certainty
    rows = {(0,): one_hot(1, 2), (1,): one_hot(0, 2)}
    return GrammarSpec(2, 2, rows, [(0,)], ProbVector([1.0]))


def test_deterministic_grammar_sequences_identical():
    spec = _deterministic_grammar()
    seqs = sample_grammar_corpus(spec, 5, 8, seed=3)
    assert all(s == seqs[0] for s in seqs)
    assert seqs[0] == [0, 1, 0, 1, 0, 1, 0, 1]


def test_sampling_deterministic_given_seed():
    spec = random_grammar(6, 2, seed=9)
    a = sample_grammar_corpus(spec, 20, 16, seed=5)
    b = sample_grammar_corpus(spec, 20, 16, seed=5)
    assert a == b
    c = sample_grammar_corpus(spec, 20, 16, seed=6)
    assert a != c


def test_unigram_frequency_monte_carlo():
    # binomial 3-sigma bound around 0.5 at n=1e5: 3*sqrt(0.25/1e5) ~ 0.0047
    spec = GrammarSpec(2, 1, {(): ProbVector([0.5, 0.5])}, [()], ProbVector([1.0]))
    seqs = sample_grammar_corpus(spec, 100_000, 1, seed=11)
    freq0 = sum(1 for s in seqs if s[0] == 0) / len(seqs)
    assert abs(freq0 - 0.5) < 0.005


def test_grammar_rows_chi_square():
    from scipy import stats

    spec = random_grammar(4, 2, seed=21, concentration=1.0)
    seqs = sample_grammar_corpus(spec, 4000, 26, seed=13)
    counts = {ctx: np.zeros(4) for ctx in spec.contexts()}
    for seq in seqs:
        for t in range(1, len(seq)):
            counts[(seq[t - 1],)][seq[t]] += 1
    for ctx, obs in counts.items():
        expected = spec.transitions[ctx].p * obs.sum()
        keep = expected > 5
        _, p = stats.chisquare(obs[keep], expected[keep] * obs[keep].sum() / expected[keep].sum())
        assert p > 0.01, f"context {ctx} failed chi-square (p={p})"


def test_iter_training_prefixes_counts():
    seq = list(range(12))
    pairs = list(iter_training_prefixes([seq], min_prefix=1, window=10))
    assert len(pairs) == 2
    assert pairs[0][0] == [0] and len(pairs[0][1]) >= 10
    exact = list(iter_training_prefixes([list(range(11))], 1, 10))
    assert len(exact) == 1
    assert list(iter_training_prefixes([], 1, 10)) == []


def test_iter_training_prefixes_skips_short(caplog):
    pairs = list(iter_training_prefixes([[1, 2], list(range(11))], 1, 10))
    assert len(pairs) == 1


def test_reachability_check():
    rows = {(0,): one_hot(1, 2)}  # context (1,) reachable but missing
    with pytest.raises(ValueError, match="reachable"):
        GrammarSpec(2, 2, rows, [(0,)], ProbVector([1.0]))


def test_grammar_file_roundtrip(tmp_path):
    spec = random_grammar(5, 2, seed=4)
    path = tmp_path / "g.txt"
    save_grammar(spec, path)
    loaded = load_grammar(path)
    assert loaded.order == spec.order and loaded.vocab_size == spec.vocab_size
    for ctx, row in spec.transitions.items():
        assert np.array_equal(loaded.transitions[ctx].p, row.p)
    assert loaded.start_contexts == spec.start_contexts


def test_unigram_grammar_file_roundtrip(tmp_path):
    spec = GrammarSpec(2, 1, {(): ProbVector([0.25, 0.75])}, [()], ProbVector([1.0]))
    path = tmp_path / "g1.txt"
    save_grammar(spec, path)
    loaded = load_grammar(path)
    assert np.array_equal(loaded.transitions[()].p, [0.25, 0.75])


def test_corpus_file_roundtrip(tmp_path):
    corpus = [[1, 2, 3], [0, 0, 5, 9]]
    path = tmp_path / "c.txt"
    save_corpus(corpus, path)
    assert load_corpus(path) == corpus
