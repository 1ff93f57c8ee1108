"""Synthetic task generators and their constraint definitions.

Four desk-scale tasks exercise the constraint machinery:

    ste        character transducer (az|bz)* -> (za|bbb)* with the b-count
               constraint: the target must carry exactly three b's per source
               b. Programmatic violation degree only (no soft loss here).
    hierlabel  8-label multilabel classification over a 2-level hierarchy
               (4 parents, one child each); symbolic rules child => parent.
    bio        BIO tagging over tags {O, B0..I3} where no core argument may
               open twice; symbolic uniqueness formulas per core plus the
               duplicate-count violation degree.
    pairrel    3-class relation (ent/con/neu) on ordered feature pairs; each
               item carries both directions so the relation rules ground on
               (forward, reverse) prediction pairs.

Generators are pure functions of their parameters and seed; gold outputs
satisfy every constraint by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import logic as lg
from .constraints import ConstraintSpec, prob_at
from .models import InputError, Vocab


@dataclass
class Dataset:
    task: str
    seed: int
    pairs: list
    unlabeled: list = field(default_factory=list)


@dataclass
class TaskSpec:
    name: str
    metric: str
    specs: tuple
    label_space: tuple = ()
    vocab: Vocab | None = None


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


# ---------------------------------------------------------------------------
# STE: synthetic transduction
# ---------------------------------------------------------------------------

STE_VOCAB = Vocab.build(("a", "b", "z"))


def ste_transduce(src: str) -> str:
    """Apply az -> za, bz -> bbb chunkwise; src must match (az|bz)*."""
    if len(src) % 2:
        raise InputError(f"source {src!r} does not match (az|bz)*")
    out = []
    for i in range(0, len(src), 2):
        chunk = src[i:i + 2]
        if chunk == "az":
            out.append("za")
        elif chunk == "bz":
            out.append("bbb")
        else:
            raise InputError(f"source {src!r} does not match (az|bz)*")
    return "".join(out)


def ste_violation(src: str, out: str) -> float:
    """Length-normalized quadratic miss of the 3x b-count relation, in [0,1]."""
    xb = src.count("b")
    yb = out.count("b")
    total = len(src) + len(out)
    if total == 0:
        return 0.0
    return min(1.0, (3 * xb - yb) ** 2 / total)


def ste_specs() -> tuple:
    return (ConstraintSpec(name="b_count_triple",
                           degree_fn=lambda src, out: ste_violation(src, out)),)


def ste_task_spec() -> TaskSpec:
    return TaskSpec(name="ste", metric="token_accuracy", specs=ste_specs(), vocab=STE_VOCAB)


def gen_ste(train: bool, count: int, seed: int, unlabeled: int = 0) -> Dataset:
    """Chunk counts uniform in [3,6] (train) or [3,8] (test); chunks are az
    or bz with probability 1/2 each."""
    if count < 1:
        raise InputError("count must be >= 1")
    rng = _rng(seed)
    hi = 6 if train else 8

    def draw():
        n = int(rng.integers(3, hi + 1))
        return "".join("az" if rng.random() < 0.5 else "bz" for _ in range(n))

    pairs = []
    for _ in range(count):
        src = draw()
        pairs.append((src, ste_transduce(src)))
    pool = [draw() for _ in range(unlabeled)]
    return Dataset(task="ste", seed=seed, pairs=pairs, unlabeled=pool)


# ---------------------------------------------------------------------------
# hierlabel: multilabel hierarchy
# ---------------------------------------------------------------------------

N_BRANCHES = 4
HIER_LABELS = tuple(f"parent{i}" for i in range(N_BRANCHES)) + \
    tuple(f"child{i}" for i in range(N_BRANCHES))
HIER_FEATURE_DIM = 12


def _hier_rule(i: int) -> lg.Formula:
    return lg.parse_formula(f"child{i} => parent{i}")


def hier_specs() -> tuple:
    specs = []
    for i in range(N_BRANCHES):
        formula = _hier_rule(i)
        child_ix, parent_ix = N_BRANCHES + i, i

        def ground_probs(ctx, ex, cand, _f=formula, _c=child_ix, _p=parent_ix, _i=i):
            if cand is not None and not (cand[_c] == 1 and cand[_p] == 0):
                return []
            binding = {f"child{_i}": prob_at(ctx.probs, ex, _c),
                       f"parent{_i}": prob_at(ctx.probs, ex, _p)}
            return [(_f, binding)]

        def ground_bool(inp, out, _f=formula, _c=child_ix, _p=parent_ix, _i=i):
            return [(_f, {f"child{_i}": out[_c], f"parent{_i}": out[_p]})]

        specs.append(ConstraintSpec(name=f"hier_rule{i}", formulas=(formula,),
                                    ground_probs=ground_probs, ground_bool=ground_bool))
    return tuple(specs)


def hier_task_spec() -> TaskSpec:
    return TaskSpec(name="hierlabel", metric="accuracy", specs=hier_specs(),
                    label_space=HIER_LABELS)


def gen_hierlabel(count: int, seed: int, unlabeled: int = 0, noise: float = 0.45,
                  parent_scale: float = 0.8, child_scale: float = 1.6,
                  leaf_parent_factor: float = 1.0,
                  structure_seed: int | None = None) -> Dataset:
    """Per-leaf Gaussian feature clusters; a leaf carries its child and parent
    labels, a trunk example the parent only. Branch and child directions are
    orthogonal; the parent direction is scaled down so predicting the parent
    bit is the harder part of the signal.

    `structure_seed` fixes the cluster geometry; train/test splits share it
    while drawing examples from different `seed`s."""
    if count < 1:
        raise InputError("count must be >= 1")
    rng = _rng(seed)
    geometry = _rng(seed if structure_seed is None else structure_seed)
    basis, _ = np.linalg.qr(geometry.normal(size=(HIER_FEATURE_DIM, HIER_FEATURE_DIM)))
    parent_dirs = basis[:N_BRANCHES]
    child_dirs = basis[N_BRANCHES:2 * N_BRANCHES]

    def draw():
        branch = int(rng.integers(N_BRANCHES))
        is_leaf = rng.random() < 0.5
        center = parent_scale * parent_dirs[branch]
        labels = [0] * len(HIER_LABELS)
        labels[branch] = 1
        if is_leaf:
            center = leaf_parent_factor * center + child_scale * child_dirs[branch]
            labels[N_BRANCHES + branch] = 1
        feats = center + noise * rng.normal(size=HIER_FEATURE_DIM)
        return tuple(feats.tolist()), tuple(labels)

    pairs = [draw() for _ in range(count)]
    pool = [draw()[0] for _ in range(unlabeled)]
    return Dataset(task="hierlabel", seed=seed, pairs=pairs, unlabeled=pool)


# ---------------------------------------------------------------------------
# bio: unique core roles
# ---------------------------------------------------------------------------

N_CORES = 4
BIO_TAGS = ("O",) + tuple(t for i in range(N_CORES) for t in (f"B{i}", f"I{i}"))
BIO_WORDS = tuple(f"wb{i}" for i in range(N_CORES)) + \
    tuple(f"wi{i}" for i in range(N_CORES)) + tuple(f"wo{i}" for i in range(8))
BIO_VOCAB = Vocab.build(BIO_WORDS)


def _b_index(core: int) -> int:
    return 1 + 2 * core


def bio_core_formula(core: int, length: int) -> lg.Formula:
    """B_core at position i implies no other position opens the same core."""
    parts = []
    for i in range(length):
        others = lg.big_and([lg.Not(lg.Atom(f"B{core}({j})")) for j in range(length) if j != i])
        parts.append(lg.Implies(lg.Atom(f"B{core}({i})"), others))
    return lg.big_and(parts)


def bio_duplicate_degree(tags, core: int) -> float:
    """Excess openings of one core divided by the sequence length."""
    count = sum(1 for t in tags if t == _b_index(core))
    return max(0, count - 1) / len(tags) if tags else 0.0


def bio_violation_degree(tags) -> float:
    """Total excess openings across all cores over the sequence length."""
    return sum(bio_duplicate_degree(tags, core) for core in range(N_CORES))


def bio_specs(template_length: int = 10) -> tuple:
    specs = []
    for core in range(N_CORES):
        b_ix = _b_index(core)

        def ground_probs(ctx, ex, cand, _core=core, _b=b_ix):
            if cand is None:
                length = int(ctx.lens[ex])
                out = []
                for i in range(length):
                    others = lg.big_and([lg.Not(lg.Atom(f"B{_core}({j})"))
                                         for j in range(length) if j != i])
                    formula = lg.Implies(lg.Atom(f"B{_core}({i})"), others)
                    binding = {f"B{_core}({p})": prob_at(ctx.dists[p], ex, _b)
                               for p in range(length)}
                    out.append((formula, binding))
                return out
            opened = [i for i, t in enumerate(cand) if t == _b]
            if len(opened) < 2:
                return []
            out = []
            for a in opened:
                for b_pos in opened:
                    if a == b_pos:
                        continue
                    formula = lg.Implies(lg.Atom(f"B{_core}({a})"),
                                         lg.Not(lg.Atom(f"B{_core}({b_pos})")))
                    binding = {f"B{_core}({a})": prob_at(ctx.dists[a], ex, _b),
                               f"B{_core}({b_pos})": prob_at(ctx.dists[b_pos], ex, _b)}
                    out.append((formula, binding))
            return out

        def ground_bool(inp, out, _core=core, _b=b_ix):
            length = len(out)
            instances = []
            for i in range(length):
                others = lg.big_and([lg.Not(lg.Atom(f"B{_core}({j})"))
                                     for j in range(length) if j != i])
                formula = lg.Implies(lg.Atom(f"B{_core}({i})"), others)
                binding = {f"B{_core}({p})": int(out[p] == _b) for p in range(length)}
                instances.append((formula, binding))
            return instances

        specs.append(ConstraintSpec(
            name=f"unique_B{core}",
            formulas=(bio_core_formula(core, template_length),),
            ground_probs=ground_probs,
            ground_bool=ground_bool,
            degree_fn=lambda inp, out, _core=core: bio_duplicate_degree(out, _core)))
    return tuple(specs)


def bio_task_spec(template_length: int = 10) -> TaskSpec:
    return TaskSpec(name="bio", metric="f1", specs=bio_specs(template_length),
                    label_space=BIO_TAGS, vocab=BIO_VOCAB)


def gen_bio(count: int, seed: int, seq_len_range=(6, 10), unlabeled: int = 0,
            noise: float = 0.25) -> Dataset:
    """Token identities cue tags up to `noise`; gold tag sequences never open
    a core twice."""
    if count < 1:
        raise InputError("count must be >= 1")
    lo, hi = seq_len_range
    rng = _rng(seed)
    o_words = [f"wo{i}" for i in range(8)]

    def draw():
        length = int(rng.integers(lo, hi + 1))
        tags = [0] * length
        n_cores = int(rng.integers(1, N_CORES + 1))
        cores = rng.choice(N_CORES, size=n_cores, replace=False)
        for core in cores:
            span = int(rng.integers(1, 3))
            for _ in range(8):  # rejection sampling for a free slot
                start = int(rng.integers(0, length))
                stop = min(start + span, length)
                if all(tags[p] == 0 for p in range(start, stop)):
                    tags[start] = _b_index(core)
                    for p in range(start + 1, stop):
                        tags[p] = _b_index(core) + 1
                    break
        words = []
        for t in tags:
            if rng.random() < noise:
                words.append(BIO_WORDS[int(rng.integers(len(BIO_WORDS)))])
            elif t == 0:
                words.append(o_words[int(rng.integers(len(o_words)))])
            else:
                core, is_inside = (t - 1) // 2, (t - 1) % 2
                words.append(f"wi{core}" if is_inside else f"wb{core}")
        return tuple(words), tuple(tags)

    pairs = [draw() for _ in range(count)]
    pool = [draw()[0] for _ in range(unlabeled)]
    return Dataset(task="bio", seed=seed, pairs=pairs, unlabeled=pool)


# ---------------------------------------------------------------------------
# pairrel: relation rules on ordered pairs
# ---------------------------------------------------------------------------

REL_CLASSES = ("ent", "con", "neu")
ENT, CON, NEU = 0, 1, 2
PAIR_LATENT_DIM = 4
PAIR_FEATURE_DIM = 2 * PAIR_LATENT_DIM

PAIR_RULES = {
    "R2": "con(x1,x2) => con(x2,x1)",
    "R3": "ent(x1,x2) => !con(x2,x1)",
    "R4": "neu(x1,x2) => !con(x2,x1)",
}

_RULE_PREMISE = {"R2": CON, "R3": ENT, "R4": NEU}
_RULE_HEAD_NEGATED = {"R2": False, "R3": True, "R4": True}


def pair_specs() -> tuple:
    specs = []
    for rule, text in PAIR_RULES.items():
        formula = lg.parse_formula(text)
        premise = _RULE_PREMISE[rule]
        head_negated = _RULE_HEAD_NEGATED[rule]

        def _violated(first, second, _premise=premise, _neg=head_negated):
            if first != _premise:
                return False
            return (second != CON) if not _neg else (second == CON)

        def ground_probs(ctx, ex, cand, _f=formula, _premise=premise, _neg=head_negated,
                         _violated=_violated):
            name_fwd = f"{REL_CLASSES[_premise]}(x1,x2)"
            name_rev = "con(x2,x1)"
            dists = (ctx.dist_fwd, ctx.dist_rev)
            out = []
            for first_dist, second_dist in ((0, 1), (1, 0)):
                if cand is not None:
                    first = cand[first_dist]
                    second = cand[second_dist]
                    if not _violated(first, second):
                        continue
                binding = {name_fwd: prob_at(dists[first_dist], ex, _premise),
                           name_rev: prob_at(dists[second_dist], ex, CON)}
                out.append((_f, binding))
            return out

        def ground_bool(inp, out, _f=formula, _premise=premise):
            name_fwd = f"{REL_CLASSES[_premise]}(x1,x2)"
            name_rev = "con(x2,x1)"
            instances = []
            for first, second in ((out[0], out[1]), (out[1], out[0])):
                binding = {name_fwd: int(first == _premise), name_rev: int(second == CON)}
                instances.append((_f, binding))
            return instances

        specs.append(ConstraintSpec(name=rule, formulas=(formula,),
                                    ground_probs=ground_probs, ground_bool=ground_bool))
    return tuple(specs)


def pair_task_spec() -> TaskSpec:
    return TaskSpec(name="pairrel", metric="accuracy", specs=pair_specs(),
                    label_space=REL_CLASSES)


def gen_pairrel(count: int, seed: int, unlabeled: int = 0, noise: float = 0.25,
                con_band: float = 0.55, ent_margin: float = 1.1,
                structure_seed: int | None = None) -> Dataset:
    """Latent point pairs labeled by one signed score s = w . (x1 - x2):
    |s| < con_band contradicts (symmetrically), s > ent_margin entails, the
    rest is neutral; the reverse direction scores -s with the same rule, so
    gold label pairs satisfy R2-R4 by construction. `structure_seed` fixes
    the scoring direction so train/test splits share one rule."""
    if count < 1:
        raise InputError("count must be >= 1")
    rng = _rng(seed)
    geometry = _rng(seed if structure_seed is None else structure_seed)
    w = geometry.normal(size=PAIR_LATENT_DIM)
    w /= np.linalg.norm(w)

    def label(s: float) -> int:
        if abs(s) < con_band:
            return CON
        return ENT if s > ent_margin else NEU

    def draw():
        x1 = rng.normal(size=PAIR_LATENT_DIM)
        x2 = rng.normal(size=PAIR_LATENT_DIM)
        s = float(w @ (x1 - x2))
        rels = (label(s), label(-s))
        fwd = np.concatenate([x1, x2]) + noise * rng.normal(size=PAIR_FEATURE_DIM)
        rev = np.concatenate([x2, x1]) + noise * rng.normal(size=PAIR_FEATURE_DIM)
        return (tuple(fwd.tolist()), tuple(rev.tolist())), rels

    pairs = [draw() for _ in range(count)]
    pool = [draw()[0] for _ in range(unlabeled)]
    return Dataset(task="pairrel", seed=seed, pairs=pairs, unlabeled=pool)


# ---------------------------------------------------------------------------
# inspection format
# ---------------------------------------------------------------------------

def _encode_input(task, inp):
    if task == "ste":
        return inp
    if task == "hierlabel":
        return ",".join(f"{v:.6g}" for v in inp)
    if task == "bio":
        return " ".join(inp)
    if task == "pairrel":
        fwd, rev = inp
        return ",".join(f"{v:.6g}" for v in fwd) + ";" + ",".join(f"{v:.6g}" for v in rev)
    raise InputError(f"unknown task {task!r}")


def _encode_output(task, out):
    if task == "ste":
        return out
    if task == "hierlabel":
        return "".join(str(b) for b in out)
    if task == "bio":
        return " ".join(BIO_TAGS[t] for t in out)
    if task == "pairrel":
        return f"{REL_CLASSES[out[0]]} {REL_CLASSES[out[1]]}"
    raise InputError(f"unknown task {task!r}")


def dataset_to_lines(dataset: Dataset) -> list[str]:
    """Line-oriented text form: input TAB output, unlabeled inputs last with
    an empty output field."""
    lines = [f"{_encode_input(dataset.task, i)}\t{_encode_output(dataset.task, o)}"
             for i, o in dataset.pairs]
    lines += [f"{_encode_input(dataset.task, i)}\t" for i in dataset.unlabeled]
    return lines


def write_dataset(dataset: Dataset, path):
    with open(path, "w") as fh:
        fh.write("\n".join(dataset_to_lines(dataset)) + "\n")
