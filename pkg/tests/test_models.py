import numpy as np
import pytest

from conlearn import autodiff as ad
from conlearn import models
from conlearn.models import Vocab

from test_autodiff import assert_grad_matches_fd


def _zero_params(template: ad.ParamSet) -> ad.ParamSet:
    return ad.ParamSet({n: np.zeros_like(a) for n, a in template.items()})


@pytest.fixture
def vocab():
    return Vocab.build(("a", "b", "z"))


def test_vocab_bijection(vocab):
    for i, tok in enumerate(vocab.tokens):
        assert vocab.index(tok) == i
        assert vocab.decode([i]) == [tok]
    assert vocab.encode("abz") == [vocab.index(c) for c in "abz"]


def test_vocab_unknown_token(vocab):
    with pytest.raises(models.InputError):
        vocab.index("q")


def test_vocab_duplicate_tokens_rejected():
    with pytest.raises(models.InputError):
        Vocab(tokens=("x", "x", "y"))


# --- MLP --------------------------------------------------------------------

def test_mlp_zero_weights_softmax_uniform():
    params = _zero_params(models.init_mlp(np.random.default_rng(0), 4, 8, 3))
    g = ad.Graph()
    out = models.mlp_forward(g.add_params(params), np.zeros((2, 4)), head="softmax")
    np.testing.assert_allclose(out.dists[0].value, np.full((2, 3), 1 / 3), atol=1e-12)


def test_mlp_zero_weights_sigmoid_half():
    params = _zero_params(models.init_mlp(np.random.default_rng(0), 4, 8, 5))
    g = ad.Graph()
    out = models.mlp_forward(g.add_params(params), np.zeros((1, 4)), head="sigmoid")
    np.testing.assert_allclose(out.dists[0].value, np.full((1, 5), 0.5), atol=1e-12)


def test_mlp_softmax_normalized():
    rng = np.random.default_rng(7)
    params = models.init_mlp(rng, 6, 16, 4)
    g = ad.Graph()
    out = models.mlp_forward(g.add_params(params), rng.normal(size=(5, 6)))
    np.testing.assert_allclose(out.dists[0].value.sum(axis=1), np.ones(5), atol=1e-9)
    assert (out.dists[0].value >= 0).all()


def test_mlp_width_mismatch():
    params = models.init_mlp(np.random.default_rng(0), 4, 8, 3)
    g = ad.Graph()
    with pytest.raises(ad.ContractError):
        models.mlp_forward(g.add_params(params), np.zeros((1, 5)))


# --- seq2seq ------------------------------------------------------------------

def test_seq2seq_zero_weights_uniform_steps(vocab):
    params = _zero_params(models.init_seq2seq(np.random.default_rng(0), len(vocab), 8, 12))
    g = ad.Graph()
    src = np.array([[3, 4, 5, vocab.pad]])
    gold = np.array([[4, 3, vocab.eos]])
    out = models.seq2seq_forward(g.add_params(params), src, np.array([3]), vocab,
                                 "teacher_forced", gold, np.array([3]))
    for dist in out.dists:
        np.testing.assert_allclose(dist.value, np.full((1, len(vocab)), 1 / len(vocab)), atol=1e-6)


def test_seq2seq_sample_reproducible(vocab):
    rng = np.random.default_rng(11)
    params = models.init_seq2seq(rng, len(vocab), 8, 12)

    def draw():
        g = ad.Graph()
        src = np.array([[3, 4, 3, 4]])
        return models.seq2seq_forward(g.add_params(params), src, np.array([4]), vocab,
                                      "sample", max_lens=np.array([8]),
                                      rng=np.random.default_rng(99))

    a, b = draw(), draw()
    assert a.tokens == b.tokens
    np.testing.assert_array_equal(a.log_prob.value, b.log_prob.value)


def test_seq2seq_greedy_stops_at_eos_or_budget(vocab):
    rng = np.random.default_rng(3)
    params = models.init_seq2seq(rng, len(vocab), 8, 12)
    g = ad.Graph()
    src = np.array([[3, 4], [4, 5]])
    out = models.seq2seq_forward(g.add_params(params), src, np.array([2, 2]), vocab,
                                 "greedy", max_lens=np.array([5, 5]))
    assert all(len(t) <= 5 for t in out.tokens)
    assert len(out.truncated) == 2


def test_seq2seq_unknown_token_rejected(vocab):
    params = models.init_seq2seq(np.random.default_rng(0), len(vocab), 8, 12)
    g = ad.Graph()
    with pytest.raises(models.InputError):
        models.seq2seq_forward(g.add_params(params), np.array([[99]]), np.array([1]),
                               vocab, "greedy", max_lens=np.array([3]))


def test_seq2seq_logprob_is_sum_of_step_logps(vocab):
    rng = np.random.default_rng(5)
    params = models.init_seq2seq(rng, len(vocab), 8, 12)
    g = ad.Graph()
    src = np.array([[3, 4, 5, 3]])
    out = models.seq2seq_forward(g.add_params(params), src, np.array([4]), vocab,
                                 "greedy", max_lens=np.array([6]))
    emitted = out.tokens[0] + ([] if out.truncated[0] else [vocab.eos])
    manual = sum(np.log(d.value[0, tok]) for d, tok in zip(out.dists, emitted))
    assert out.log_prob.value[0] == pytest.approx(manual, rel=1e-9)


def test_sample_rows_frequencies_match_distribution():
    rng = np.random.default_rng(123)
    probs = np.array([0.5, 0.2, 0.25, 0.05])
    n = 10_000
    draws = models.sample_rows(rng, np.tile(probs, (n, 1)))
    counts = np.bincount(draws, minlength=4) / n
    stderr = np.sqrt(probs * (1 - probs) / n)
    assert (np.abs(counts - probs) <= 3 * stderr).all()


# --- tagger ----------------------------------------------------------------------

def test_tagger_zero_weights_uniform():
    params = _zero_params(models.init_tagger(np.random.default_rng(0), 10, 9, 8, 12))
    g = ad.Graph()
    out = models.tagger_forward(g.add_params(params), np.array([[1, 2, 3]]), np.array([3]))
    assert len(out.dists) == 3
    for dist in out.dists:
        np.testing.assert_allclose(dist.value, np.full((1, 9), 1 / 9), atol=1e-12)


def test_tagger_normalized_and_length_preserving():
    rng = np.random.default_rng(9)
    params = models.init_tagger(rng, 10, 9, 8, 12)
    g = ad.Graph()
    ids = rng.integers(0, 10, size=(3, 5))
    out = models.tagger_forward(g.add_params(params), ids, np.array([5, 5, 5]))
    assert len(out.dists) == 5
    for dist in out.dists:
        np.testing.assert_allclose(dist.value.sum(axis=1), np.ones(3), atol=1e-9)


def test_tagger_empty_sequence_rejected():
    params = models.init_tagger(np.random.default_rng(0), 10, 9, 8, 12)
    g = ad.Graph()
    with pytest.raises(models.InputError):
        models.tagger_forward(g.add_params(params), np.zeros((1, 0), dtype=int), np.array([0]))


# --- losses pass the gradient check ----------------------------------------------

def test_classifier_nll_matches_fd():
    rng = np.random.default_rng(21)
    params = models.init_mlp(rng, 3, 5, 4)
    feats = rng.normal(size=(2, 3))
    labels = [1, 3]

    def build(ps):
        g = ad.Graph()
        out = models.mlp_forward(g.add_params(ps), feats)
        return models.nll_class(out.dists[0], labels)

    assert_grad_matches_fd(build, params)


def test_multilabel_bce_matches_fd():
    rng = np.random.default_rng(22)
    params = models.init_mlp(rng, 3, 5, 4)
    feats = rng.normal(size=(2, 3))
    targets = np.array([[1, 0, 0, 1], [0, 1, 0, 0]], dtype=float)

    def build(ps):
        g = ad.Graph()
        out = models.mlp_forward(g.add_params(ps), feats, head="sigmoid")
        return models.bce_multilabel(out.dists[0], targets)

    assert_grad_matches_fd(build, params)


def test_sequence_nll_matches_fd():
    vocab = Vocab.build(("a", "b", "z"))
    rng = np.random.default_rng(23)
    params = models.init_seq2seq(rng, len(vocab), 4, 6)
    src = np.array([[3, 4, 5], [4, 5, vocab.pad]])
    src_lens = np.array([3, 2])
    gold = np.array([[4, 3, vocab.eos], [5, vocab.eos, vocab.pad]])
    gold_lens = np.array([3, 2])

    def build(ps):
        g = ad.Graph()
        out = models.seq2seq_forward(g.add_params(ps), src, src_lens, vocab,
                                     "teacher_forced", gold, gold_lens)
        return models.sequence_nll(out.dists, gold, gold_lens)

    assert_grad_matches_fd(build, params)


def test_tagger_nll_matches_fd():
    rng = np.random.default_rng(24)
    params = models.init_tagger(rng, 6, 4, 3, 5)
    ids = np.array([[1, 2, 0], [3, 4, 5]])
    lens = np.array([3, 2])
    gold = np.array([[0, 1, 2], [3, 0, 0]])

    def build(ps):
        g = ad.Graph()
        out = models.tagger_forward(g.add_params(ps), ids, lens)
        return models.sequence_nll(out.dists, gold, lens)

    assert_grad_matches_fd(build, params)
