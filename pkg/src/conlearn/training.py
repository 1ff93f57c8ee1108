"""Single-experiment training loop and the task adapters it drives.

The loop follows the usual constrained semi-supervised shape: sample a
labeled batch, take the supervised gradient; sample an unlabeled batch,
build the constraint loss on the labeled inputs (labels unread) plus the
unlabeled inputs, take its gradient; hand both flat gradients to the
integration mechanism; Adam-step the combined direction.

Determinism: one seed spawns two independent generator streams, one for
everything the baseline also does (init, shuffling) and one consumed only by
the constraint machinery (unlabeled batch choice, candidate sampling). A
constrained run with zero constraint weight therefore replays the baseline
stream exactly and ends bit-identical to it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import constraints as ce
from . import metrics as mt
from . import models
from . import tasks
from .config import RunConfig
from .integrators import IntegratorState, combine
from .logic import LogicKind


@dataclass
class RunResult:
    config: RunConfig
    status: str = "ok"
    main_metric: float = float("nan")
    violation_rate: float = float("nan")
    hbetas: dict = field(default_factory=dict)
    lambda_final: float = 0.0
    lambda_trace: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    steps: int = 0
    wall_seconds: float = 0.0


# ---------------------------------------------------------------------------
# task adapters
# ---------------------------------------------------------------------------

class SteAdapter:
    metric = "token_accuracy"

    def __init__(self, cfg: RunConfig):
        self.vocab = tasks.STE_VOCAB
        self.specs = tasks.ste_specs()
        train = tasks.gen_ste(True, cfg.labeled, seed=cfg.data_seed, unlabeled=cfg.unlabeled)
        test = tasks.gen_ste(False, cfg.test_count, seed=cfg.data_seed + 1)
        self.train_pairs = train.pairs
        self.unlabeled_pool = train.unlabeled
        self.test_pairs = test.pairs

    def init_params(self, rng):
        return models.init_seq2seq(rng, len(self.vocab))

    def _encode_sources(self, srcs):
        lens = np.array([len(s) for s in srcs])
        ids = np.full((len(srcs), max(lens.max(), 1)), self.vocab.pad, dtype=np.intp)
        for i, s in enumerate(srcs):
            ids[i, : len(s)] = self.vocab.encode(s)
        return ids, lens

    def _encode_targets(self, tgts):
        lens = np.array([len(t) + 1 for t in tgts])  # gold tokens plus EOS
        ids = np.full((len(tgts), lens.max()), self.vocab.pad, dtype=np.intp)
        for i, t in enumerate(tgts):
            ids[i, : len(t)] = self.vocab.encode(t)
            ids[i, len(t)] = self.vocab.eos
        return ids, lens

    def _budgets(self, srcs):
        return np.array([3 * (len(s) // 2) + 3 for s in srcs])

    def supervised_loss(self, pnodes, batch):
        srcs = [s for s, _ in batch]
        src_ids, src_lens = self._encode_sources(srcs)
        gold_ids, gold_lens = self._encode_targets([t for _, t in batch])
        out = models.seq2seq_forward(pnodes, src_ids, src_lens, self.vocab,
                                     "teacher_forced", gold_ids, gold_lens)
        return models.sequence_nll(out.dists, gold_ids, gold_lens)

    def constraint_context(self, pnodes, inputs):
        src_ids, src_lens = self._encode_sources(inputs)
        h, c = models.encode_source(pnodes, src_ids, src_lens)
        budgets = self._budgets(inputs)
        graph = h.graph
        vocab = self.vocab

        def rows_to_candidates(out):
            strings = ["".join(vocab.decode(t)) for t in out.tokens]
            return [(strings[i], ad.index_select(out.log_prob, [i]))
                    for i in range(len(strings))]

        def top1_fn():
            out = models.decode_free(pnodes, h, c, "greedy", budgets, vocab.bos, vocab.eos)
            return rows_to_candidates(out)

        def sample_fn(k, rng):
            rows = np.repeat(np.arange(len(inputs)), k)
            hk = ad.index_select(h, rows)
            ck = ad.index_select(c, rows)
            out = models.decode_free(pnodes, hk, ck, "sample", budgets[rows],
                                     vocab.bos, vocab.eos, rng=rng)
            flat = rows_to_candidates(out)
            return [flat[i * k:(i + 1) * k] for i in range(len(inputs))]

        return ce.CallbackSequenceContext(inputs, graph, top1_fn, sample_fn)

    def predict(self, params, inputs):
        preds = []
        for chunk in _chunks(inputs, 128):
            g = ad.Graph()
            pnodes = g.add_params(params)
            src_ids, src_lens = self._encode_sources(chunk)
            out = models.seq2seq_forward(pnodes, src_ids, src_lens, self.vocab,
                                         "greedy", max_lens=self._budgets(chunk))
            preds.extend("".join(self.vocab.decode(t)) for t in out.tokens)
        return preds


class HierAdapter:
    metric = "accuracy"

    def __init__(self, cfg: RunConfig):
        self.specs = tasks.hier_specs()
        train = tasks.gen_hierlabel(cfg.labeled, seed=cfg.data_seed, unlabeled=cfg.unlabeled)
        # the test slice attenuates the parent evidence on leaf examples, so
        # an undertrained model leaves hierarchy-violation headroom there
        test = tasks.gen_hierlabel(cfg.test_count, seed=cfg.data_seed + 1,
                                   leaf_parent_factor=0.3, structure_seed=cfg.data_seed)
        self.train_pairs = train.pairs
        self.unlabeled_pool = train.unlabeled
        self.test_pairs = test.pairs

    def init_params(self, rng):
        return models.init_mlp(rng, tasks.HIER_FEATURE_DIM, 64, len(tasks.HIER_LABELS))

    def supervised_loss(self, pnodes, batch):
        feats = np.array([f for f, _ in batch])
        bits = np.array([b for _, b in batch], dtype=np.float64)
        out = models.mlp_forward(pnodes, feats, head="sigmoid")
        return models.bce_multilabel(out.dists[0], bits)

    def constraint_context(self, pnodes, inputs):
        out = models.mlp_forward(pnodes, np.array(inputs), head="sigmoid")
        return ce.MultilabelContext(out.dists[0], inputs)

    def predict(self, params, inputs):
        preds = []
        for chunk in _chunks(inputs, 256):
            g = ad.Graph()
            out = models.mlp_forward(g.add_params(params), np.array(chunk), head="sigmoid")
            preds.extend(tuple(int(v) for v in row) for row in (out.dists[0].value > 0.5))
        return preds


class BioAdapter:
    metric = "f1"

    def __init__(self, cfg: RunConfig):
        self.vocab = tasks.BIO_VOCAB
        self.specs = tasks.bio_specs()
        train = tasks.gen_bio(cfg.labeled, seed=cfg.data_seed, unlabeled=cfg.unlabeled)
        test = tasks.gen_bio(cfg.test_count, seed=cfg.data_seed + 1)
        self.train_pairs = train.pairs
        self.unlabeled_pool = train.unlabeled
        self.test_pairs = test.pairs

    def init_params(self, rng):
        return models.init_tagger(rng, len(self.vocab), len(tasks.BIO_TAGS))

    def _encode_words(self, seqs):
        lens = np.array([len(s) for s in seqs])
        ids = np.full((len(seqs), lens.max()), self.vocab.pad, dtype=np.intp)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = self.vocab.encode(s)
        return ids, lens

    def supervised_loss(self, pnodes, batch):
        words = [w for w, _ in batch]
        ids, lens = self._encode_words(words)
        gold = np.zeros_like(ids)
        for i, (_, tag_seq) in enumerate(batch):
            gold[i, : len(tag_seq)] = tag_seq
        out = models.tagger_forward(pnodes, ids, lens)
        return models.sequence_nll(out.dists, gold, lens)

    def constraint_context(self, pnodes, inputs):
        ids, lens = self._encode_words(inputs)
        out = models.tagger_forward(pnodes, ids, lens)
        return ce.TaggerContext(out.dists, lens, inputs)

    def predict(self, params, inputs):
        preds = []
        for chunk in _chunks(inputs, 128):
            g = ad.Graph()
            ids, lens = self._encode_words(chunk)
            out = models.tagger_forward(g.add_params(params), ids, lens)
            choices = np.stack([d.value.argmax(axis=1) for d in out.dists], axis=1)
            preds.extend(tuple(int(t) for t in choices[i, : lens[i]]) for i in range(len(chunk)))
        return preds


class PairAdapter:
    metric = "accuracy"

    def __init__(self, cfg: RunConfig):
        self.specs = tasks.pair_specs()
        train = tasks.gen_pairrel(cfg.labeled, seed=cfg.data_seed, unlabeled=cfg.unlabeled)
        test = tasks.gen_pairrel(cfg.test_count, seed=cfg.data_seed + 1,
                                  structure_seed=cfg.data_seed)
        self.train_pairs = train.pairs
        self.unlabeled_pool = train.unlabeled
        self.test_pairs = test.pairs

    def init_params(self, rng):
        return models.init_mlp(rng, tasks.PAIR_FEATURE_DIM, 64, len(tasks.REL_CLASSES))

    def _forward_both(self, pnodes, inputs):
        fwd = np.array([f for f, _ in inputs])
        rev = np.array([r for _, r in inputs])
        dist_f = models.mlp_forward(pnodes, fwd).dists[0]
        dist_r = models.mlp_forward(pnodes, rev).dists[0]
        return dist_f, dist_r

    def supervised_loss(self, pnodes, batch):
        dist_f, dist_r = self._forward_both(pnodes, [inp for inp, _ in batch])
        rels_f = [r[0] for _, r in batch]
        rels_r = [r[1] for _, r in batch]
        return (models.nll_class(dist_f, rels_f) + models.nll_class(dist_r, rels_r)) * 0.5

    def constraint_context(self, pnodes, inputs):
        dist_f, dist_r = self._forward_both(pnodes, inputs)
        return ce.PairContext(dist_f, dist_r, inputs)

    def predict(self, params, inputs):
        preds = []
        for chunk in _chunks(inputs, 256):
            g = ad.Graph()
            dist_f, dist_r = self._forward_both(g.add_params(params), chunk)
            cf = dist_f.value.argmax(axis=1)
            cr = dist_r.value.argmax(axis=1)
            preds.extend((int(a), int(b)) for a, b in zip(cf, cr))
        return preds


ADAPTERS = {"ste": SteAdapter, "hierlabel": HierAdapter, "bio": BioAdapter,
            "pairrel": PairAdapter}


def _chunks(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

def run_experiment(cfg: RunConfig) -> RunResult:
    """Train one configuration and evaluate on its held-out test set.

    Numeric failures mark the result failed instead of raising, so grid runs
    continue past a diverged cell.
    """
    cfg = cfg.resolved()
    result = RunResult(config=cfg)
    start = time.perf_counter()
    try:
        _run(cfg, result)
    except (ad.NumericError, FloatingPointError) as err:
        result.status = f"failed:{type(err).__name__}"
    result.wall_seconds = time.perf_counter() - start
    return result


def _run(cfg: RunConfig, result: RunResult):
    main_ss, con_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng_main = np.random.default_rng(main_ss)
    rng_con = np.random.default_rng(con_ss)

    adapter = ADAPTERS[cfg.task](cfg)
    params = adapter.init_params(rng_main)
    adam = ad.init_adam(params, lr=cfg.lr)
    logic_kind = LogicKind(cfg.logic, cfg.implication)
    integ = None
    if cfg.constrained:
        integ = IntegratorState(mechanism=cfg.mechanism, dim=params.total_size(),
                                lam1=cfg.lam1, lam2=cfg.lam2, eta_lam=cfg.eta_lam)

    n_train = len(adapter.train_pairs)
    pool = adapter.unlabeled_pool
    for _ in range(cfg.epochs):
        order = rng_main.permutation(n_train)
        for batch_ix in _chunks(list(order), cfg.batch_size):
            batch = [adapter.train_pairs[i] for i in batch_ix]
            graph = ad.Graph()
            pnodes = graph.add_params(params)
            sup_loss = adapter.supervised_loss(pnodes, batch)
            g_sup = ad.flatten(ad.backward(graph, sup_loss))

            if cfg.constrained:
                con_inputs = [inp for inp, _ in batch]
                closs, c_value = _constraint_term(adapter, cfg, logic_kind, pnodes,
                                                  con_inputs, pool, rng_con)
                g_con = ad.flatten(ad.backward(graph, closs))
                outcome = combine(integ, g_sup, g_con, c_value)
                grad_vec = outcome.grad
                result.lambda_trace.append(outcome.lam)
                result.diagnostics.append({
                    "dot_con_supref": outcome.dot_con_supref,
                    "dot_sup_conref": outcome.dot_sup_conref,
                    "con_projected": outcome.con_projected,
                    "sup_projected": outcome.sup_projected,
                    "lam": outcome.lam,
                    "c_value": c_value,
                })
            else:
                grad_vec = g_sup

            params, adam = ad.adam_step(params, ad.unflatten(grad_vec, params), adam)
            result.steps += 1

    test_inputs = [inp for inp, _ in adapter.test_pairs]
    golds = [out for _, out in adapter.test_pairs]
    preds = adapter.predict(params, test_inputs)
    result.main_metric = mt.main_metric(adapter.metric, preds, golds)
    result.violation_rate = mt.violation_rate(list(zip(test_inputs, preds)), adapter.specs)
    satisfaction = 1.0 - result.violation_rate
    result.hbetas = {beta: mt.hbeta(result.main_metric, satisfaction, beta)
                     for beta in cfg.beta_grid}
    if cfg.mechanism == "static":
        result.lambda_final = cfg.lam2
    elif cfg.mechanism == "monotone":
        result.lambda_final = integ.lam
    else:
        result.lambda_final = 0.0


def _constraint_term(adapter, cfg, logic_kind, pnodes, labeled_inputs, pool, rng_con):
    """C(x_L) + C(x_U): constraint loss over the labeled batch inputs (labels
    unread) plus an unlabeled batch when a pool exists."""
    ctx = adapter.constraint_context(pnodes, labeled_inputs)
    closs, c_value = ce.constraint_loss(ctx, adapter.specs, cfg.loss_type, cfg.strategy,
                                        logic_kind, rng=rng_con, k=cfg.k)
    if pool:
        picks = rng_con.integers(0, len(pool), size=min(len(labeled_inputs), len(pool)))
        ctx_u = adapter.constraint_context(pnodes, [pool[i] for i in picks])
        closs_u, c_value_u = ce.constraint_loss(ctx_u, adapter.specs, cfg.loss_type,
                                                cfg.strategy, logic_kind, rng=rng_con, k=cfg.k)
        closs = closs + closs_u
        c_value = 0.5 * (c_value + c_value_u)
    return closs, c_value
