"""Constraint specifications and the constraint-loss engine.

A ConstraintSpec is either symbolic (a formula set plus grounding rules
binding atoms to model probabilities or to a decoded output) or programmatic
(a violation-degree oracle only). The engine builds the constraint loss from
a model-output context, an exploration strategy and a loss type:

    explore      top-1 decode, k samples (with log-probability nodes), or
                 exhaustive enumeration of the output space
    psl_loss     1 - soft truth value of the grounded formulas (soft type)
    reinforce    violation-weighted log-probability surrogate (binary/real)

Exhaustive exploration is only legal with the soft loss; REINFORCE needs
log-probability nodes which enumeration does not carry. None of this reads
gold labels: contexts hold inputs and model outputs only.

For top-1/sampling with the soft loss, each candidate output selects which
grounded instances are active, namely the instances that candidate violates;
atom values still bind to the model's probabilities so gradients flow. A
candidate violating nothing contributes zero loss, mirroring the REINFORCE
convention of penalizing violating samples only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import logic as lg

LOSS_TYPES = ("soft", "binary", "real")
STRATEGIES = ("top1", "sampling", "exhaustive")

#: hard ceiling on exhaustively enumerated outcomes per example
ENUMERATION_CAP = 4096


class ConstraintError(Exception):
    pass


class CapacityError(ConstraintError):
    pass


class ConfigurationError(ConstraintError):
    pass


@dataclass(frozen=True)
class ConstraintSpec:
    """One constraint: symbolic (formulas + grounders) and/or programmatic.

    ground_probs(ctx, i, candidate) yields (formula, atom->prob) instances
    for example i; candidate None means "all groundings" (exhaustive).
    ground_bool(inp, out) yields (formula, atom->bit) instances for a decoded
    output. degree_fn overrides the default violation degree (the fraction of
    bool-violated instances).
    """

    name: str
    formulas: tuple = ()
    ground_probs: object = None
    ground_bool: object = None
    degree_fn: object = None

    @property
    def is_symbolic(self) -> bool:
        return self.ground_probs is not None

    def violation_degree(self, inp, out) -> float:
        if self.degree_fn is not None:
            degree = float(self.degree_fn(inp, out))
        elif self.ground_bool is not None:
            instances = self.ground_bool(inp, out)
            if not instances:
                return 0.0
            bad = sum(1 for f, a in instances if not lg.eval_bool(f, a))
            degree = bad / len(instances)
        else:
            raise ConstraintError(f"spec {self.name!r} has neither degree_fn nor ground_bool")
        if not (0.0 <= degree <= 1.0):
            raise ConstraintError(f"spec {self.name!r} produced degree {degree} outside [0,1]")
        return degree

    def bool_violated(self, inp, out) -> bool:
        """Boolean check via classical evaluation of the grounded formulas."""
        if self.ground_bool is None:
            raise ConstraintError(f"spec {self.name!r} is not symbolic")
        return any(not lg.eval_bool(f, a) for f, a in self.ground_bool(inp, out))


@dataclass
class Candidate:
    output: object
    log_prob: ad.Node | None = None
    prob: float | None = None


@dataclass
class ExampleCandidates:
    index: int
    input: object
    candidates: list


@dataclass
class ExplorationResult:
    strategy: str
    groups: list
    ctx: object = None


def prob_at(dist: ad.Node, row: int, col: int) -> ad.Node:
    """Scalar (1,)-shaped node for one entry of a 2-D distribution node."""
    return ad.take_per_row(ad.index_select(dist, [row]), [col])


# ---------------------------------------------------------------------------
# model-output contexts
# ---------------------------------------------------------------------------

class SoftmaxContext:
    """Single softmax head: outputs are class indices."""

    def __init__(self, dist: ad.Node, inputs):
        self.dist = dist
        self.inputs = list(inputs)
        self.graph = dist.graph

    def __len__(self):
        return len(self.inputs)

    def _rows(self, choices):
        lp = ad.log(ad.take_per_row(self.dist, choices))
        return [(int(c), ad.index_select(lp, [i])) for i, c in enumerate(choices)]

    def top1(self):
        return self._rows(self.dist.value.argmax(axis=1))

    def sample(self, k, rng):
        from .models import sample_rows
        per_example = [[] for _ in self.inputs]
        for _ in range(k):
            for i, cand in enumerate(self._rows(sample_rows(rng, self.dist.value))):
                per_example[i].append(cand)
        return per_example

    def enumerate_outputs(self, cap):
        n_classes = self.dist.value.shape[1]
        if n_classes > cap:
            raise CapacityError(
                f"{n_classes} outcomes exceed the cap of {cap}; use top1 or sampling")
        return [[(c, float(self.dist.value[i, c])) for c in range(n_classes)]
                for i in range(len(self.inputs))]


class MultilabelContext:
    """Per-class sigmoid head: outputs are 0/1 tuples over the label set."""

    def __init__(self, probs: ad.Node, inputs):
        self.probs = probs
        self.inputs = list(inputs)
        self.graph = probs.graph

    def __len__(self):
        return len(self.inputs)

    def _rows(self, bits: np.ndarray):
        mask = bits.astype(bool)
        one = self.graph.const(np.ones_like(self.probs.value))
        chosen = ad.where(mask, self.probs, one - self.probs)
        lp = ad.sum_(ad.log(chosen), axis=1)
        return [(tuple(int(b) for b in bits[i]), ad.index_select(lp, [i]))
                for i in range(bits.shape[0])]

    def top1(self):
        return self._rows((self.probs.value > 0.5).astype(int))

    def sample(self, k, rng):
        per_example = [[] for _ in self.inputs]
        for _ in range(k):
            bits = (rng.random(self.probs.value.shape) < self.probs.value).astype(int)
            for i, cand in enumerate(self._rows(bits)):
                per_example[i].append(cand)
        return per_example

    def enumerate_outputs(self, cap):
        n = self.probs.value.shape[1]
        if 2 ** n > cap:
            raise CapacityError(f"2^{n} outcomes exceed the cap of {cap}; use top1 or sampling")
        grid = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1  # (2^n, n)
        outcomes = [tuple(int(b) for b in row) for row in grid]
        p = self.probs.value
        # product over labels of p or (1-p), vectorized into a (B, 2^n) table
        chosen = np.where(grid[None, :, :].astype(bool), p[:, None, :], 1.0 - p[:, None, :])
        table = chosen.prod(axis=2)
        return [[(outcomes[m], float(table[i, m])) for m in range(grid.shape[0])]
                for i in range(len(self.inputs))]


class PairContext:
    """Two softmax heads over the same class set (forward and reverse
    direction of a pair task); outputs are (forward, reverse) class tuples."""

    def __init__(self, dist_fwd: ad.Node, dist_rev: ad.Node, inputs):
        self.dist_fwd = dist_fwd
        self.dist_rev = dist_rev
        self.inputs = list(inputs)
        self.graph = dist_fwd.graph

    def __len__(self):
        return len(self.inputs)

    def _rows(self, cf, cr):
        lp = ad.log(ad.take_per_row(self.dist_fwd, cf)) + ad.log(ad.take_per_row(self.dist_rev, cr))
        return [((int(a), int(b)), ad.index_select(lp, [i]))
                for i, (a, b) in enumerate(zip(cf, cr))]

    def top1(self):
        return self._rows(self.dist_fwd.value.argmax(axis=1), self.dist_rev.value.argmax(axis=1))

    def sample(self, k, rng):
        from .models import sample_rows
        per_example = [[] for _ in self.inputs]
        for _ in range(k):
            cf = sample_rows(rng, self.dist_fwd.value)
            cr = sample_rows(rng, self.dist_rev.value)
            for i, cand in enumerate(self._rows(cf, cr)):
                per_example[i].append(cand)
        return per_example

    def enumerate_outputs(self, cap):
        n = self.dist_fwd.value.shape[1]
        if n * n > cap:
            raise CapacityError(f"{n * n} outcomes exceed the cap of {cap}; use top1 or sampling")
        out = []
        for i in range(len(self.inputs)):
            pf, pr = self.dist_fwd.value[i], self.dist_rev.value[i]
            out.append([((a, b), float(pf[a] * pr[b])) for a in range(n) for b in range(n)])
        return out


class TaggerContext:
    """Per-position softmax over tags; outputs are tag-index tuples cut to
    each example's length."""

    def __init__(self, dists: list, lens, inputs):
        self.dists = dists
        self.lens = np.asarray(lens)
        self.inputs = list(inputs)
        self.graph = dists[0].graph

    def __len__(self):
        return len(self.inputs)

    def _rows(self, choices: np.ndarray):
        lp = None
        for t, dist in enumerate(self.dists):
            step = ad.log(ad.take_per_row(dist, choices[:, t]))
            step = step * self.graph.const((t < self.lens).astype(np.float64))
            lp = step if lp is None else lp + step
        return [(tuple(int(c) for c in choices[i, : self.lens[i]]), ad.index_select(lp, [i]))
                for i in range(choices.shape[0])]

    def top1(self):
        choices = np.stack([d.value.argmax(axis=1) for d in self.dists], axis=1)
        return self._rows(choices)

    def sample(self, k, rng):
        from .models import sample_rows
        per_example = [[] for _ in self.inputs]
        for _ in range(k):
            choices = np.stack([sample_rows(rng, d.value) for d in self.dists], axis=1)
            for i, cand in enumerate(self._rows(choices)):
                per_example[i].append(cand)
        return per_example

    def enumerate_outputs(self, cap):
        n_tags = self.dists[0].value.shape[1]
        out = []
        for i in range(len(self.inputs)):
            length = int(self.lens[i])
            if n_tags ** length > cap:
                raise CapacityError(
                    f"{n_tags}^{length} outcomes exceed the cap of {cap}; use top1 or sampling")
            rows = [((), 1.0)]
            for t in range(length):
                p = self.dists[t].value[i]
                rows = [(tags + (c,), prob * float(p[c])) for tags, prob in rows for c in range(n_tags)]
            out.append(rows)
        return out


class CallbackSequenceContext:
    """Autoregressive decoder context; decoding is delegated to closures so
    the model owns its exploration (each sample is a fresh trajectory)."""

    def __init__(self, inputs, graph, top1_fn, sample_fn):
        self.inputs = list(inputs)
        self.graph = graph
        self._top1 = top1_fn
        self._sample = sample_fn

    def __len__(self):
        return len(self.inputs)

    def top1(self):
        return self._top1()

    def sample(self, k, rng):
        return self._sample(k, rng)

    def enumerate_outputs(self, cap):
        raise CapacityError("sequence output space is unbounded; use top1 or sampling")


# ---------------------------------------------------------------------------
# exploration
# ---------------------------------------------------------------------------

def check_pair(loss_type: str, strategy: str):
    if loss_type not in LOSS_TYPES:
        raise ConfigurationError(f"unknown loss type {loss_type!r}")
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    if strategy == "exhaustive" and loss_type != "soft":
        raise ConfigurationError(
            "exhaustive exploration is only legal with the soft loss type")


def explore(ctx, strategy: str, rng=None, k: int = 1,
            cap: int = ENUMERATION_CAP) -> ExplorationResult:
    """Collect candidate outputs per example under the chosen strategy."""
    if strategy == "top1":
        groups = [ExampleCandidates(i, inp, [Candidate(out, log_prob=lp)])
                  for i, (inp, (out, lp)) in enumerate(zip(ctx.inputs, ctx.top1()))]
    elif strategy == "sampling":
        if k < 1:
            raise ConfigurationError(f"sampling needs k >= 1, got {k}")
        if rng is None:
            raise ConfigurationError("sampling needs a random generator")
        sampled = ctx.sample(k, rng)
        groups = [ExampleCandidates(i, inp, [Candidate(out, log_prob=lp) for out, lp in cands])
                  for i, (inp, cands) in enumerate(zip(ctx.inputs, sampled))]
    elif strategy == "exhaustive":
        enumerated = ctx.enumerate_outputs(cap)
        groups = [ExampleCandidates(i, inp, [Candidate(out, prob=pr) for out, pr in cands])
                  for i, (inp, cands) in enumerate(zip(ctx.inputs, enumerated))]
    else:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    return ExplorationResult(strategy=strategy, groups=groups, ctx=ctx)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _mean_nodes(graph, nodes, count=None):
    count = len(nodes) if count is None else count
    if not nodes:
        return graph.const(np.zeros(1))
    total = nodes[0]
    for n in nodes[1:]:
        total = total + n
    return total * (1.0 / count)


def reinforce_loss(result: ExplorationResult, specs, kind: str) -> tuple[ad.Node, float]:
    """Violation-weighted log-probability surrogate.

    loss = mean over examples of (1/k) sum over violating candidates of
    r(y) * log p(y), summed over specs; r is 1 (binary) or the violation
    degree (real), treated as a constant. Returns (loss node, mean violation
    degree) -- the latter is the non-negative measure fed to the monotone
    mechanism.
    """
    if kind not in ("binary", "real"):
        raise ConfigurationError(f"reinforce_loss handles binary/real, not {kind!r}")
    graph = result.ctx.graph
    per_spec = []
    degree_total, degree_count = 0.0, 0
    for spec in specs:
        group_terms = []
        for group in result.groups:
            terms = []
            for cand in group.candidates:
                if cand.log_prob is None:
                    raise ConstraintError(
                        "candidates lack log-probability nodes (exhaustive exploration?); "
                        "REINFORCE losses need top1 or sampling")
                degree = spec.violation_degree(group.input, cand.output)
                degree_total += degree
                degree_count += 1
                if degree > 0.0:
                    r = 1.0 if kind == "binary" else degree
                    terms.append(cand.log_prob * r)
            group_terms.append(_mean_nodes(graph, terms, count=len(group.candidates)))
        per_spec.append(_mean_nodes(graph, group_terms))
    loss = per_spec[0]
    for n in per_spec[1:]:
        loss = loss + n
    loss = ad.sum_(loss)
    c_value = degree_total / max(degree_count, 1)
    return loss, c_value


def psl_loss(result: ExplorationResult, specs, logic_kind: lg.LogicKind) -> tuple[ad.Node, float]:
    """Soft-logic loss: 1 - soft truth value per grounded instance.

    Exhaustive: atoms bind directly to model probabilities over all
    groundings. Top-1/sampling: each candidate activates the instances it
    violates (atoms still bind to probabilities), averaged over candidates.
    Per spec the instance losses are averaged; specs sum.
    """
    ctx = result.ctx
    graph = ctx.graph
    per_spec = []
    for spec in specs:
        if not spec.is_symbolic:
            raise ConstraintError(
                f"spec {spec.name!r} is programmatic; use reinforce_loss for it")
        group_terms = []
        for group in result.groups:
            if result.strategy == "exhaustive":
                instances = spec.ground_probs(ctx, group.index, None)
                losses = [1.0 - lg.eval_soft(f, binding, logic_kind) for f, binding in instances]
                losses = [graph.lift(x) for x in losses]
                group_terms.append(_mean_nodes(graph, losses))
            else:
                cand_terms = []
                for cand in group.candidates:
                    instances = spec.ground_probs(ctx, group.index, cand.output)
                    losses = [1.0 - lg.eval_soft(f, binding, logic_kind) for f, binding in instances]
                    losses = [graph.lift(x) for x in losses]
                    cand_terms.append(_mean_nodes(graph, losses))
                group_terms.append(_mean_nodes(graph, cand_terms))
        per_spec.append(_mean_nodes(graph, group_terms))
    loss = per_spec[0]
    for n in per_spec[1:]:
        loss = loss + n
    loss = ad.sum_(loss)
    return loss, float(loss.value)


def constraint_loss(ctx, specs, loss_type: str, strategy: str,
                    logic_kind: lg.LogicKind = lg.DEFAULT_LOGIC, rng=None,
                    k: int = 1, cap: int = ENUMERATION_CAP) -> tuple[ad.Node, float]:
    """Dispatch explore -> psl_loss / reinforce_loss for K >= 1 specs.

    Returns (scalar loss node, non-negative violation measure).
    """
    check_pair(loss_type, strategy)
    if not specs:
        raise ConfigurationError("constraint_loss needs at least one spec")
    result = explore(ctx, strategy, rng=rng, k=k, cap=cap)
    if loss_type == "soft":
        return psl_loss(result, specs, logic_kind)
    return reinforce_loss(result, specs, loss_type)
