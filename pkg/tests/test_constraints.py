import numpy as np
import pytest

from conlearn import autodiff as ad
from conlearn import constraints as ce
from conlearn import logic as lg
from conlearn.constraints import (
    Candidate, ConstraintSpec, MultilabelContext, PairContext, SoftmaxContext,
    TaggerContext, constraint_loss, explore, psl_loss, reinforce_loss,
)


def _softmax_ctx(probs_rows, n_examples=None):
    """Context with fixed class probabilities, parameterized by logits so
    gradients exist."""
    g = ad.Graph()
    probs = np.atleast_2d(np.asarray(probs_rows, dtype=float))
    logits = g.param(np.log(probs), "logits")
    dist = ad.softmax(logits)
    return SoftmaxContext(dist, inputs=list(range(probs.shape[0])))


def _class_spec(violating_classes, graded=None):
    """Programmatic spec over class-index outputs."""
    bad = set(violating_classes)

    def degree(inp, out):
        if out not in bad:
            return 0.0
        return 1.0 if graded is None else graded[out]

    return ConstraintSpec(name="toy", degree_fn=degree)


# --- explore -----------------------------------------------------------------

def test_explore_top1_picks_argmax():
    ctx = _softmax_ctx([[0.2, 0.5, 0.3]])
    result = explore(ctx, "top1")
    assert len(result.groups) == 1
    assert len(result.groups[0].candidates) == 1
    assert result.groups[0].candidates[0].output == 1


def test_explore_exhaustive_probabilities_sum_to_one():
    ctx = _softmax_ctx([[0.2, 0.5, 0.3], [0.6, 0.15, 0.25]])
    result = explore(ctx, "exhaustive")
    for group in result.groups:
        assert len(group.candidates) == 3
        total = sum(c.prob for c in group.candidates)
        assert total == pytest.approx(1.0, abs=1e-6)
        assert all(c.log_prob is None for c in group.candidates)


def test_explore_sampling_reproducible_and_sized():
    ctx = _softmax_ctx([[0.3, 0.3, 0.4]])
    a = explore(ctx, "sampling", rng=np.random.default_rng(5), k=10)
    b = explore(ctx, "sampling", rng=np.random.default_rng(5), k=10)
    outs_a = [c.output for c in a.groups[0].candidates]
    outs_b = [c.output for c in b.groups[0].candidates]
    assert len(outs_a) == 10
    assert outs_a == outs_b


def test_explore_sampling_needs_rng_and_positive_k():
    ctx = _softmax_ctx([[0.9, 0.1]])
    with pytest.raises(ce.ConfigurationError):
        explore(ctx, "sampling", rng=None, k=3)
    with pytest.raises(ce.ConfigurationError):
        explore(ctx, "sampling", rng=np.random.default_rng(0), k=0)


def test_enumeration_cap_enforced():
    g = ad.Graph()
    dists = [ad.softmax(g.param(np.zeros((1, 9)), f"l{t}")) for t in range(5)]
    ctx = TaggerContext(dists, lens=[5], inputs=["x"])
    with pytest.raises(ce.CapacityError):
        explore(ctx, "exhaustive")


def test_exhaustive_with_reinforce_rejected():
    ctx = _softmax_ctx([[0.5, 0.5]])
    with pytest.raises(ce.ConfigurationError):
        constraint_loss(ctx, [_class_spec({0})], "binary", "exhaustive")


# --- reinforce loss ------------------------------------------------------------

def test_reinforce_zero_when_all_satisfy():
    ctx = _softmax_ctx([[0.2, 0.5, 0.3]])
    result = explore(ctx, "top1")
    loss, c_value = reinforce_loss(result, [_class_spec({0})], "binary")
    assert float(loss.value) == 0.0
    assert c_value == 0.0
    grads = ad.backward(ctx.graph, loss)
    np.testing.assert_array_equal(grads["logits"], np.zeros((1, 3)))


def test_reinforce_single_violating_candidate_value():
    p = np.exp(-1.2)
    rest = (1.0 - p) / 3
    ctx = _softmax_ctx([[p, rest, rest, rest]])
    result = explore(ctx, "top1")
    assert result.groups[0].candidates[0].output == 0
    loss, c_value = reinforce_loss(result, [_class_spec({0})], "binary")
    assert float(loss.value) == pytest.approx(-1.2, abs=1e-9)
    assert c_value == 1.0
    # minimizing the surrogate lowers the violating class probability
    grads = ad.backward(ctx.graph, loss)
    assert grads["logits"][0, 0] > 0


def test_reinforce_on_exhaustive_candidates_rejected():
    ctx = _softmax_ctx([[0.5, 0.5]])
    result = explore(ctx, "exhaustive")
    with pytest.raises(ce.ConstraintError):
        reinforce_loss(result, [_class_spec({0})], "binary")


def test_binary_equals_real_for_zero_one_degrees():
    ctx = _softmax_ctx([[0.25, 0.25, 0.5], [0.1, 0.8, 0.1]])
    rng = np.random.default_rng(0)
    result = explore(ctx, "sampling", rng=rng, k=7)
    spec = _class_spec({2})
    loss_b, cb = reinforce_loss(result, [spec], "binary")
    loss_r, cr = reinforce_loss(result, [spec], "real")
    assert float(loss_b.value) == pytest.approx(float(loss_r.value), abs=1e-12)
    assert cb == pytest.approx(cr)


def test_real_uses_graded_degrees():
    p = np.exp(-1.0)
    ctx = _softmax_ctx([[p, (1 - p) / 2, (1 - p) / 2]])
    result = explore(ctx, "top1")
    loss, c_value = reinforce_loss(result, [_class_spec({0}, graded={0: 0.25})], "real")
    assert float(loss.value) == pytest.approx(-0.25, abs=1e-9)
    assert c_value == pytest.approx(0.25)


def test_sampled_gradient_matches_expected_violation_gradient():
    # small-k smoke version of the exhaustive-oracle equivalence
    probs = np.array([[0.5, 0.2, 0.3]])
    spec = _class_spec({2})
    k = 4000

    ctx = _softmax_ctx(probs)
    result = explore(ctx, "sampling", rng=np.random.default_rng(77), k=k)
    loss, _ = reinforce_loss(result, [spec], "binary")
    sampled = ad.backward(ctx.graph, loss)["logits"]

    ctx2 = _softmax_ctx(probs)
    terms = [c.prob * spec.violation_degree(None, c.output)
             for c in explore(ctx2, "exhaustive").groups[0].candidates]
    # exact expected violation sum_y p(y) r(y), differentiated through p
    exact_loss = None
    for cand in explore(ctx2, "exhaustive").groups[0].candidates:
        r = spec.violation_degree(None, cand.output)
        if r == 0.0:
            continue
        term = ce.prob_at(ctx2.dist, 0, cand.output) * r
        exact_loss = term if exact_loss is None else exact_loss + term
    exact = ad.backward(ctx2.graph, ad.sum_(exact_loss))["logits"]
    rel = np.abs(sampled - exact) / np.maximum(np.abs(exact), 1e-3)
    assert rel.max() < 0.15


# --- psl loss -------------------------------------------------------------------

def _hier_spec():
    formula = lg.parse_formula("s => f")

    def ground_probs(ctx, ex, cand):
        if cand is not None and not (cand[0] == 1 and cand[1] == 0):
            return []
        return [(formula, {"s": ce.prob_at(ctx.probs, ex, 0), "f": ce.prob_at(ctx.probs, ex, 1)})]

    def ground_bool(inp, out):
        return [(formula, {"s": out[0], "f": out[1]})]

    return ConstraintSpec(name="hier", formulas=(formula,),
                          ground_probs=ground_probs, ground_bool=ground_bool)


def _multilabel_ctx(probs_rows):
    g = ad.Graph()
    probs = np.atleast_2d(np.asarray(probs_rows, dtype=float))
    raw = g.param(np.log(probs / (1 - probs)), "raw")
    return MultilabelContext(ad.sigmoid(raw), inputs=list(range(probs.shape[0])))


def test_psl_hierarchy_loss_and_gradient():
    ctx = _multilabel_ctx([[0.9, 0.6]])
    result = explore(ctx, "exhaustive")
    loss, c_value = psl_loss(result, [_hier_spec()], lg.LogicKind("lukasiewicz", "residuated"))
    assert float(loss.value) == pytest.approx(0.3, abs=1e-9)
    assert c_value == pytest.approx(0.3, abs=1e-9)
    grads = ad.backward(ctx.graph, loss)
    # dL/dP_s = +1, dL/dP_f = -1 through the sigmoid jacobian
    jac = np.array([0.9 * 0.1, 0.6 * 0.4])
    np.testing.assert_allclose(grads["raw"][0], [jac[0], -jac[1]], rtol=1e-9)


def test_psl_satisfied_with_slack_is_zero():
    ctx = _multilabel_ctx([[0.4, 0.6]])
    result = explore(ctx, "exhaustive")
    loss, _ = psl_loss(result, [_hier_spec()], lg.LogicKind("lukasiewicz", "residuated"))
    assert float(loss.value) == pytest.approx(0.0, abs=1e-12)


def test_psl_rejects_programmatic_spec():
    ctx = _multilabel_ctx([[0.5, 0.5]])
    result = explore(ctx, "exhaustive")
    with pytest.raises(ce.ConstraintError):
        psl_loss(result, [_class_spec({0})], lg.DEFAULT_LOGIC)


def test_psl_in_unit_interval_single_spec():
    rng = np.random.default_rng(4)
    for _ in range(10):
        ctx = _multilabel_ctx(rng.uniform(0.05, 0.95, size=(3, 2)))
        result = explore(ctx, "exhaustive")
        loss, _ = psl_loss(result, [_hier_spec()], lg.DEFAULT_LOGIC)
        assert 0.0 <= float(loss.value) <= 1.0


def test_psl_sampling_selects_violated_instances():
    # candidate (1,0) violates s=>f and activates the instance; (1,1) does not
    ctx = _multilabel_ctx([[0.9, 0.6]])
    spec = _hier_spec()
    result = ce.ExplorationResult(
        strategy="sampling",
        groups=[ce.ExampleCandidates(0, 0, [Candidate((1, 0), log_prob=None),
                                            Candidate((1, 1), log_prob=None)])],
        ctx=ctx)
    loss, _ = psl_loss(result, [spec], lg.LogicKind("lukasiewicz", "residuated"))
    # violating candidate contributes 0.3, satisfying candidate 0; mean 0.15
    assert float(loss.value) == pytest.approx(0.15, abs=1e-9)


def test_constraint_loss_sums_over_specs():
    ctx = _softmax_ctx([[0.5, 0.2, 0.3]])
    spec_a = _class_spec({0})
    spec_b = _class_spec({0, 1})
    loss_ab, _ = constraint_loss(ctx, [spec_a, spec_b], "binary", "top1")
    ctx2 = _softmax_ctx([[0.5, 0.2, 0.3]])
    loss_a, _ = constraint_loss(ctx2, [spec_a], "binary", "top1")
    ctx3 = _softmax_ctx([[0.5, 0.2, 0.3]])
    loss_b, _ = constraint_loss(ctx3, [spec_b], "binary", "top1")
    assert float(loss_ab.value) == pytest.approx(float(loss_a.value) + float(loss_b.value),
                                                 abs=1e-12)


def test_constraint_loss_never_reads_gold_labels():
    # the context API carries inputs and model outputs only; identical
    # contexts give identical losses no matter what the gold labels are
    ctx_a = _softmax_ctx([[0.5, 0.2, 0.3]])
    ctx_b = _softmax_ctx([[0.5, 0.2, 0.3]])
    la, _ = constraint_loss(ctx_a, [_class_spec({0})], "binary", "top1")
    lb, _ = constraint_loss(ctx_b, [_class_spec({0})], "binary", "top1")
    assert float(la.value) == float(lb.value)


def test_pair_context_enumeration():
    g = ad.Graph()
    df = ad.softmax(g.param(np.log(np.array([[0.6, 0.3, 0.1]])), "lf"))
    dr = ad.softmax(g.param(np.log(np.array([[0.2, 0.5, 0.3]])), "lr"))
    ctx = PairContext(df, dr, inputs=["pair"])
    result = explore(ctx, "exhaustive")
    cands = result.groups[0].candidates
    assert len(cands) == 9
    assert sum(c.prob for c in cands) == pytest.approx(1.0, abs=1e-9)
    top = explore(ctx, "top1").groups[0].candidates[0]
    assert top.output == (0, 1)


def test_multilabel_context_exhaustive_and_top1():
    ctx = _multilabel_ctx([[0.9, 0.2, 0.7]])
    result = explore(ctx, "exhaustive")
    cands = result.groups[0].candidates
    assert len(cands) == 8
    assert sum(c.prob for c in cands) == pytest.approx(1.0, abs=1e-9)
    assert explore(ctx, "top1").groups[0].candidates[0].output == (1, 0, 1)


def test_spec_degree_range_enforced():
    bad = ConstraintSpec(name="bad", degree_fn=lambda i, o: 1.5)
    with pytest.raises(ce.ConstraintError):
        bad.violation_degree(None, None)
