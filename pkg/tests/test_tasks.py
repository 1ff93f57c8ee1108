import numpy as np
import pytest

from conlearn import autodiff as ad
from conlearn import logic as lg
from conlearn import tasks
from conlearn.constraints import MultilabelContext, explore, psl_loss
from conlearn.models import InputError


# --- STE ---------------------------------------------------------------------

def test_ste_transduce_paper_example():
    assert tasks.ste_transduce("azbzbz") == "zabbbbbb"


def test_ste_transduce_edge_cases():
    assert tasks.ste_transduce("") == ""
    assert tasks.ste_transduce("bz") == "bbb"


def test_ste_transduce_rejects_malformed():
    for bad in ("a", "ab", "azb", "qz"):
        with pytest.raises(InputError):
            tasks.ste_transduce(bad)


def test_gen_ste_satisfies_count_relation_and_bounds():
    ds = tasks.gen_ste(train=True, count=300, seed=1)
    for src, tgt in ds.pairs:
        assert tgt.count("b") == 3 * src.count("b")
        assert 6 <= len(src) <= 12
        assert tgt == tasks.ste_transduce(src)


def test_gen_ste_test_split_longer():
    ds = tasks.gen_ste(train=False, count=300, seed=2)
    lens = {len(src) for src, _ in ds.pairs}
    assert max(lens) == 16
    assert min(lens) >= 6


def test_gen_ste_deterministic():
    a = tasks.gen_ste(True, 50, seed=7, unlabeled=10)
    b = tasks.gen_ste(True, 50, seed=7, unlabeled=10)
    assert a.pairs == b.pairs
    assert a.unlabeled == b.unlabeled


def test_ste_violation_values():
    assert tasks.ste_violation("azbz", "zabbb") == 0.0
    assert tasks.ste_violation("azbz", "zab") == pytest.approx(4 / 7)
    assert tasks.ste_violation("bzbz", "bbbbbb") == 0.0
    assert tasks.ste_violation("bzbzbzbz", "") == 1.0  # clamped
    assert tasks.ste_violation("", "") == 0.0


def test_ste_gold_pairs_never_violate():
    ds = tasks.gen_ste(True, 100, seed=3)
    spec = tasks.ste_specs()[0]
    assert all(spec.violation_degree(s, t) == 0.0 for s, t in ds.pairs)


# --- hierlabel ------------------------------------------------------------------

def test_hierlabel_golds_satisfy_rules():
    ds = tasks.gen_hierlabel(200, seed=5)
    specs = tasks.hier_specs()
    for feats, labels in ds.pairs:
        for spec in specs:
            assert spec.violation_degree(feats, labels) == 0.0
            assert not spec.bool_violated(feats, labels)


def test_hierlabel_violation_detected():
    spec = tasks.hier_specs()[2]  # child2 => parent2
    bits = [0] * 8
    bits[4 + 2] = 1  # child2 without parent2
    assert spec.violation_degree(None, tuple(bits)) == 1.0
    bits[2] = 1
    assert spec.violation_degree(None, tuple(bits)) == 0.0


def test_hierlabel_exhaustive_is_legal_and_binds_two_atoms():
    g = ad.Graph()
    probs = ad.sigmoid(g.param(np.zeros((1, 8)), "raw"))
    ctx = MultilabelContext(probs, inputs=["x"])
    result = explore(ctx, "exhaustive")
    assert len(result.groups[0].candidates) == 256
    spec = tasks.hier_specs()[0]
    instances = spec.ground_probs(ctx, 0, None)
    assert len(instances) == 1
    _, binding = instances[0]
    assert set(binding) == {"child0", "parent0"}


def test_hierlabel_deterministic():
    a = tasks.gen_hierlabel(40, seed=11, unlabeled=5)
    b = tasks.gen_hierlabel(40, seed=11, unlabeled=5)
    assert a.pairs == b.pairs
    assert a.unlabeled == b.unlabeled
    assert all(u not in [p[0] for p in a.pairs] for u in a.unlabeled)


# --- bio -------------------------------------------------------------------------

def _tag_ids(names):
    return tuple(tasks.BIO_TAGS.index(n) for n in names)


def test_bio_degree_examples():
    assert tasks.bio_violation_degree(_tag_ids(["B1", "I1", "B1", "O"])) == pytest.approx(0.25)
    assert tasks.bio_violation_degree(_tag_ids(["B0", "B1", "B2", "B3"])) == 0.0
    assert tasks.bio_violation_degree(_tag_ids(["B0", "I0", "O", "B0"])) == pytest.approx(0.25)
    assert tasks.bio_violation_degree(_tag_ids(["B2", "B2", "B2", "O"])) == pytest.approx(0.5)


def test_bio_specs_sum_matches_total_degree():
    out = _tag_ids(["B1", "B1", "B0", "B0", "O"])
    total = sum(spec.violation_degree(None, out) for spec in tasks.bio_specs())
    assert total == pytest.approx(tasks.bio_violation_degree(out))


def test_bio_gold_sequences_never_violate():
    ds = tasks.gen_bio(150, seed=9)
    for words, tags in ds.pairs:
        assert len(words) == len(tags)
        assert tasks.bio_violation_degree(tags) == 0.0
        for spec in tasks.bio_specs():
            assert not spec.bool_violated(words, tags)


def test_bio_bool_check_matches_degree():
    spec = tasks.bio_specs()[1]  # core 1
    dup = _tag_ids(["B1", "O", "B1"])
    ok = _tag_ids(["B1", "I1", "O"])
    assert spec.bool_violated(None, dup)
    assert spec.violation_degree(None, dup) > 0
    assert not spec.bool_violated(None, ok)
    assert spec.violation_degree(None, ok) == 0.0


def test_bio_deterministic_and_lengths():
    a = tasks.gen_bio(60, seed=4, seq_len_range=(5, 8))
    b = tasks.gen_bio(60, seed=4, seq_len_range=(5, 8))
    assert a.pairs == b.pairs
    assert all(5 <= len(w) <= 8 for w, _ in a.pairs)


# --- pairrel ----------------------------------------------------------------------

def test_pairrel_golds_satisfy_rules():
    ds = tasks.gen_pairrel(300, seed=13)
    specs = tasks.pair_specs()
    for (fwd, rev), rels in ds.pairs:
        for spec in specs:
            assert spec.violation_degree((fwd, rev), rels) == 0.0


def test_pairrel_rule_r2_detects_asymmetric_contradiction():
    r2 = next(s for s in tasks.pair_specs() if s.name == "R2")
    assert r2.violation_degree(None, (tasks.CON, tasks.NEU)) > 0
    assert r2.violation_degree(None, (tasks.CON, tasks.CON)) == 0.0


def test_pairrel_r3_grounding_soft_value():
    r3 = next(s for s in tasks.pair_specs() if s.name == "R3")
    binding = {"ent(x1,x2)": 0.8, "con(x2,x1)": 0.5}
    soft = lg.eval_soft(r3.formulas[0], binding, lg.DEFAULT_LOGIC)
    assert soft == pytest.approx(0.5)
    assert 1.0 - soft == pytest.approx(0.5)


def test_pairrel_class_balance_reasonable():
    ds = tasks.gen_pairrel(600, seed=17)
    counts = np.zeros(3)
    for _, (rf, rr) in ds.pairs:
        counts[rf] += 1
        counts[rr] += 1
    frac = counts / counts.sum()
    assert (frac > 0.1).all(), frac


# --- serialization ------------------------------------------------------------------

def test_dataset_lines_format():
    ds = tasks.gen_ste(True, 5, seed=1, unlabeled=2)
    lines = tasks.dataset_to_lines(ds)
    assert len(lines) == 7
    assert all("\t" in line for line in lines)
    src, tgt = lines[0].split("\t")
    assert tasks.ste_transduce(src) == tgt
    assert lines[-1].endswith("\t")


def test_dataset_lines_bio_and_pair():
    bio_lines = tasks.dataset_to_lines(tasks.gen_bio(3, seed=2))
    assert all(len(line.split("\t")) == 2 for line in bio_lines)
    words, tag_names = bio_lines[0].split("\t")
    assert len(words.split()) == len(tag_names.split())
    pair_lines = tasks.dataset_to_lines(tasks.gen_pairrel(3, seed=2))
    assert all(line.split("\t")[1].split()[0] in tasks.REL_CLASSES for line in pair_lines)


def test_write_dataset(tmp_path):
    ds = tasks.gen_hierlabel(4, seed=3)
    path = tmp_path / "hier.tsv"
    tasks.write_dataset(ds, path)
    assert len(path.read_text().strip().splitlines()) == 4
