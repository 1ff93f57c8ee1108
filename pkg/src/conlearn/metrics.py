"""Main-task metrics, constraint-violation rate and the H-beta score."""

from __future__ import annotations

import math

METRIC_KINDS = ("accuracy", "token_accuracy", "f1")


class MetricError(Exception):
    pass


def hbeta(m1: float, m2: float, beta: float) -> float:
    """Harmonic combination of two [0,1] metrics, weighted like F-beta.

    beta -> 0 weighs m1; large beta weighs m2. Defined as 0 when either
    argument is 0.
    """
    if beta <= 0:
        raise MetricError(f"beta must be positive, got {beta}")
    if not (0.0 <= m1 <= 1.0 and 0.0 <= m2 <= 1.0):
        raise MetricError(f"metrics must lie in [0,1], got m1={m1}, m2={m2}")
    if m1 * m2 == 0.0:
        return 0.0
    b2 = beta * beta
    return (1.0 + b2) * m1 * m2 / (m2 + b2 * m1)


def violation_rate(pairs, specs) -> float:
    """Fraction of (input, decoded output) pairs violating any constraint.

    A pair violates when any spec reports violation_degree > 0.
    """
    pairs = list(pairs)
    if not pairs:
        raise MetricError("violation_rate needs a non-empty evaluation set")
    bad = 0
    for inp, out in pairs:
        if any(spec.violation_degree(inp, out) > 0.0 for spec in specs):
            bad += 1
    return bad / len(pairs)


def token_accuracy(pred, gold) -> float:
    """Positionwise accuracy; length-mismatch positions count as wrong."""
    if len(pred) == 0 and len(gold) == 0:
        return 1.0
    denom = max(len(pred), len(gold))
    hits = sum(1 for p, g in zip(pred, gold) if p == g)
    return hits / denom


def micro_f1(preds, golds, ignore="O") -> float:
    """Token-level micro-F1 over the non-`ignore` tags."""
    tp = pred_pos = gold_pos = 0
    for p_seq, g_seq in zip(preds, golds):
        for p, g in zip(p_seq, g_seq):
            if p != ignore:
                pred_pos += 1
                if p == g:
                    tp += 1
            if g != ignore:
                gold_pos += 1
    if pred_pos == 0 or gold_pos == 0 or tp == 0:
        return 0.0
    precision = tp / pred_pos
    recall = tp / gold_pos
    return 2 * precision * recall / (precision + recall)


def main_metric(kind: str, predictions, golds) -> float:
    """Dispatch on the task's metric kind; lengths must match."""
    if len(predictions) != len(golds):
        raise MetricError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if kind == "accuracy":
        return sum(1 for p, g in zip(predictions, golds) if p == g) / len(golds)
    if kind == "token_accuracy":
        return sum(token_accuracy(p, g) for p, g in zip(predictions, golds)) / len(golds)
    if kind == "f1":
        return micro_f1(predictions, golds)
    raise MetricError(f"unknown metric kind {kind!r}")


def mean_std(values) -> tuple[float, float]:
    """Mean and population (ddof=0) standard deviation."""
    values = list(values)
    n = len(values)
    if n == 0:
        raise MetricError("mean_std of an empty sequence")
    mu = sum(values) / n
    var = sum((v - mu) ** 2 for v in values) / n
    return mu, math.sqrt(var)
