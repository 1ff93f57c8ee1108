"""Desk-scale model families built on the autodiff tape.

Three families cover the tasks: an MLP classifier (softmax or per-class
sigmoid head), a single-layer seq2seq LSTM transducer, and a single-layer
LSTM tagger. Batches are 2-D (batch, features) arrays; sequences are handled
step-wise with per-row validity masks, so variable lengths share one graph.

Free-running decodes (greedy / sampled) return the emitted token ids per row
together with a differentiable total log-probability node; sampled decodes
consume the supplied random generator only, never global state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Graph, Node, ParamSet

INIT_SCALE = 0.08


class InputError(Exception):
    pass


@dataclass(frozen=True)
class Vocab:
    """Token <-> index bijection with reserved BOS/EOS/PAD entries."""

    tokens: tuple
    bos: int = 0
    eos: int = 1
    pad: int = 2

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise InputError("vocabulary tokens must be unique")
        if len({self.bos, self.eos, self.pad}) != 3:
            raise InputError("reserved indices must be distinct")

    @classmethod
    def build(cls, symbols) -> "Vocab":
        return cls(tokens=("<bos>", "<eos>", "<pad>") + tuple(symbols))

    def __len__(self):
        return len(self.tokens)

    def index(self, token) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise InputError(f"unknown token {token!r}") from None

    def encode(self, seq) -> list:
        return [self.index(t) for t in seq]

    def decode(self, ids) -> list:
        return [self.tokens[i] for i in ids]


@dataclass
class ModelOutput:
    """Per-position distributions plus, for free-running decodes, the emitted
    token ids and their total log-probability node."""

    dists: list
    head: str = "softmax"
    tokens: list | None = None
    log_prob: Node | None = None
    truncated: list | None = None


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _uniform(rng, shape):
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


def _add_lstm(params: ParamSet, rng, prefix: str, in_dim: int, hidden: int):
    params.add(f"{prefix}.wx", _uniform(rng, (in_dim, 4 * hidden)))
    params.add(f"{prefix}.wh", _uniform(rng, (hidden, 4 * hidden)))
    params.add(f"{prefix}.b", _uniform(rng, (4 * hidden,)))


def init_mlp(rng, in_dim: int, hidden: int, out_dim: int) -> ParamSet:
    p = ParamSet()
    p.add("w1", _uniform(rng, (in_dim, hidden)))
    p.add("b1", _uniform(rng, (hidden,)))
    p.add("w2", _uniform(rng, (hidden, out_dim)))
    p.add("b2", _uniform(rng, (out_dim,)))
    return p


def init_seq2seq(rng, vocab_size: int, embed: int = 32, hidden: int = 64) -> ParamSet:
    p = ParamSet()
    p.add("embed", _uniform(rng, (vocab_size, embed)))
    _add_lstm(p, rng, "enc", embed, hidden)
    _add_lstm(p, rng, "dec", embed, hidden)
    p.add("out.w", _uniform(rng, (hidden, vocab_size)))
    p.add("out.b", _uniform(rng, (vocab_size,)))
    return p


def init_tagger(rng, vocab_size: int, n_tags: int, embed: int = 32, hidden: int = 64) -> ParamSet:
    p = ParamSet()
    p.add("embed", _uniform(rng, (vocab_size, embed)))
    _add_lstm(p, rng, "rnn", embed, hidden)
    p.add("out.w", _uniform(rng, (hidden, n_tags)))
    p.add("out.b", _uniform(rng, (n_tags,)))
    return p


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def mlp_forward(p: dict, features: np.ndarray, head: str = "softmax") -> ModelOutput:
    """features: (batch, in_dim) constants; p: graph nodes of init_mlp params."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != p["w1"].value.shape[0]:
        raise ContractError(
            f"feature width {features.shape[1]} does not match first layer {p['w1'].value.shape[0]}")
    g = p["w1"].graph
    x = g.const(features)
    h = ad.tanh(ad.matmul(x, p["w1"]) + p["b1"])
    logits = ad.matmul(h, p["w2"]) + p["b2"]
    if head == "softmax":
        return ModelOutput(dists=[ad.softmax(logits)], head="softmax")
    if head == "sigmoid":
        return ModelOutput(dists=[ad.sigmoid(logits)], head="sigmoid")
    raise ContractError(f"unknown head {head!r}")


def lstm_step(p: dict, prefix: str, x: Node, h: Node, c: Node) -> tuple[Node, Node]:
    hidden = c.value.shape[1]
    z = ad.matmul(x, p[f"{prefix}.wx"]) + ad.matmul(h, p[f"{prefix}.wh"]) + p[f"{prefix}.b"]
    i = ad.sigmoid(ad.slice_cols(z, 0, hidden))
    f = ad.sigmoid(ad.slice_cols(z, hidden, 2 * hidden))
    u = ad.tanh(ad.slice_cols(z, 2 * hidden, 3 * hidden))
    o = ad.sigmoid(ad.slice_cols(z, 3 * hidden, 4 * hidden))
    c2 = f * c + i * u
    return o * ad.tanh(c2), c2


def _check_ids(ids, vocab_size):
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise InputError(f"token id outside vocabulary of size {vocab_size}")
    return ids


def run_lstm(p: dict, prefix: str, ids: np.ndarray, lens: np.ndarray) -> tuple[list, Node, Node]:
    """Masked LSTM over right-padded (batch, steps) token ids.

    Returns the per-step hidden nodes and the final (h, c); rows freeze at
    their own length, so the final state is the state at each row's last
    real token.
    """
    g = p["embed"].graph
    ids = _check_ids(ids, p["embed"].value.shape[0])
    batch, steps = ids.shape
    hidden = p[f"{prefix}.wh"].value.shape[0]
    h = g.const(np.zeros((batch, hidden)))
    c = g.const(np.zeros((batch, hidden)))
    hs = []
    for t in range(steps):
        x = ad.index_select(p["embed"], ids[:, t])
        h2, c2 = lstm_step(p, prefix, x, h, c)
        mask = g.const((t < lens).astype(np.float64)[:, None])
        h = mask * h2 + (1.0 - mask) * h
        c = mask * c2 + (1.0 - mask) * c
        hs.append(h)
    return hs, h, c


def encode_source(p: dict, src_ids: np.ndarray, src_lens: np.ndarray) -> tuple[Node, Node]:
    _, h, c = run_lstm(p, "enc", src_ids, src_lens)
    return h, c


def decode_steps(p: dict, h: Node, c: Node, gold_ids: np.ndarray, gold_lens: np.ndarray,
                 bos: int) -> list:
    """Teacher-forced decoder: per-step distributions aligned to the gold."""
    g = h.graph
    gold_ids = _check_ids(gold_ids, p["embed"].value.shape[0])
    batch, steps = gold_ids.shape
    dists = []
    prev = np.full(batch, bos, dtype=np.intp)
    for t in range(steps):
        x = ad.index_select(p["embed"], prev)
        h2, c2 = lstm_step(p, "dec", x, h, c)
        mask = g.const((t < gold_lens).astype(np.float64)[:, None])
        h = mask * h2 + (1.0 - mask) * h
        c = mask * c2 + (1.0 - mask) * c
        dists.append(ad.softmax(ad.matmul(h, p["out.w"]) + p["out.b"]))
        prev = gold_ids[:, t]
    return dists


def sample_rows(rng, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of a (batch, classes) probability array."""
    cs = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1))
    return np.minimum((cs < u).sum(axis=1), probs.shape[1] - 1).astype(np.intp)


def decode_free(p: dict, h: Node, c: Node, mode: str, max_lens: np.ndarray,
                bos: int, eos: int, rng=None) -> ModelOutput:
    """Free-running decode (greedy argmax or sampled) from an initial state.

    Emits until EOS or each row's own step budget; the log-probability node
    covers every emitted token including the EOS. Rows that never emit EOS
    are flagged truncated.
    """
    if mode not in ("greedy", "sample"):
        raise ContractError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ContractError("sample mode needs a random generator")
    g = h.graph
    max_lens = np.asarray(max_lens, dtype=np.intp)
    batch = h.value.shape[0]
    if max_lens.shape != (batch,) or max_lens.min() < 1:
        raise ContractError("max_lens must give every row a budget of at least 1")
    alive = np.ones(batch, dtype=bool)
    tokens = [[] for _ in range(batch)]
    log_prob = g.const(np.zeros(batch))
    dists = []
    prev = np.full(batch, bos, dtype=np.intp)
    for t in range(int(max_lens.max())):
        x = ad.index_select(p["embed"], prev)
        h, c = lstm_step(p, "dec", x, h, c)
        dist = ad.softmax(ad.matmul(h, p["out.w"]) + p["out.b"])
        dists.append(dist)
        if mode == "greedy":
            chosen = dist.value.argmax(axis=1).astype(np.intp)
        else:
            chosen = sample_rows(rng, dist.value)
        step_alive = alive & (t < max_lens)
        lp = ad.log(ad.take_per_row(dist, chosen))
        log_prob = log_prob + lp * g.const(step_alive.astype(np.float64))
        for b in range(batch):
            if step_alive[b] and chosen[b] != eos:
                tokens[b].append(int(chosen[b]))
        alive = step_alive & (chosen != eos)
        if not alive.any():
            break
        prev = chosen
    return ModelOutput(dists=dists, tokens=tokens, log_prob=log_prob,
                       truncated=list(alive))


def seq2seq_forward(p: dict, src_ids: np.ndarray, src_lens: np.ndarray, vocab: Vocab,
                    mode: str, gold_ids: np.ndarray | None = None,
                    gold_lens: np.ndarray | None = None,
                    max_lens: np.ndarray | None = None, rng=None) -> ModelOutput:
    """Batched transducer forward pass.

    mode "teacher_forced" needs gold_ids/gold_lens; "greedy" and "sample"
    need max_lens (per-row budgets) and, for sampling, an rng.
    """
    h, c = encode_source(p, src_ids, src_lens)
    if mode == "teacher_forced":
        if gold_ids is None or gold_lens is None:
            raise ContractError("teacher_forced needs gold ids and lengths")
        start = np.full(src_ids.shape[0], vocab.bos, dtype=np.intp)
        gold_in = np.concatenate([start[:, None], gold_ids[:, :-1]], axis=1) if gold_ids.shape[1] else gold_ids
        dists = []
        g = h.graph
        batch, steps = gold_ids.shape
        for t in range(steps):
            x = ad.index_select(p["embed"], gold_in[:, t])
            h2, c2 = lstm_step(p, "dec", x, h, c)
            mask = g.const((t < gold_lens).astype(np.float64)[:, None])
            h = mask * h2 + (1.0 - mask) * h
            c = mask * c2 + (1.0 - mask) * c
            dists.append(ad.softmax(ad.matmul(h, p["out.w"]) + p["out.b"]))
        return ModelOutput(dists=dists)
    if max_lens is None:
        raise ContractError(f"mode {mode!r} needs per-row max_lens")
    return decode_free(p, h, c, mode, max_lens, vocab.bos, vocab.eos, rng=rng)


def tagger_forward(p: dict, ids: np.ndarray, lens: np.ndarray) -> ModelOutput:
    """One tag distribution per input position (lengths mask the padding)."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 2 or ids.shape[1] == 0 or np.asarray(lens).min() < 1:
        raise InputError("tagger needs non-empty token sequences")
    hs, _, _ = run_lstm(p, "rnn", ids, np.asarray(lens))
    dists = [ad.softmax(ad.matmul(h, p["out.w"]) + p["out.b"]) for h in hs]
    return ModelOutput(dists=dists)


# ---------------------------------------------------------------------------
# supervised losses
# ---------------------------------------------------------------------------

def nll_class(dist: Node, labels) -> Node:
    """Mean negative log-likelihood of the labels under one distribution node."""
    return ad.neg(ad.mean(ad.log(ad.take_per_row(dist, labels))))


def sequence_nll(dists: list, gold_ids: np.ndarray, gold_lens: np.ndarray) -> Node:
    """Per-token mean NLL over the valid (unpadded) positions."""
    g = dists[0].graph
    total = None
    valid = 0.0
    for t, dist in enumerate(dists):
        mask = (t < gold_lens).astype(np.float64)
        valid += mask.sum()
        lp = ad.log(ad.take_per_row(dist, gold_ids[:, t])) * g.const(mask)
        total = lp if total is None else total + lp
    return ad.neg(ad.sum_(total)) / max(valid, 1.0)


def bce_multilabel(probs: Node, targets: np.ndarray) -> Node:
    """Mean Bernoulli cross-entropy for a per-class sigmoid head."""
    g = probs.graph
    y = g.const(np.asarray(targets, dtype=np.float64))
    one = g.const(np.ones_like(targets, dtype=np.float64))
    return ad.neg(ad.mean(y * ad.log(probs) + (one - y) * ad.log(one - probs)))
