"""Mechanisms combining the supervised gradient and the constraint gradient.

Five mechanisms over flat gradient vectors:

    static     fixed weights lam1 * g_sup + lam2 * g_con
    monotone   g_sup + lam * g_con with dual-ascent weight lam growing from 0
    proj_sup   g_con projected orthogonal to the averaged past g_sup
    proj_con   g_sup projected orthogonal to the averaged past g_con
    proj_both  both projections against the respective references

Projection removes the component of a vector opposing a reference gradient
(only applied when their dot product is negative), so one task's update
cannot directly undo the other's progress. References are cumulative running
means over the whole run, updated every step with the post-projection
gradients; they start at zero and the near-zero guard skips projection on
the first step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MECHANISMS = ("static", "monotone", "proj_sup", "proj_con", "proj_both")

REF_NORM_FLOOR = 1e-12


class IntegratorError(Exception):
    pass


@dataclass
class IntegratorState:
    mechanism: str
    dim: int
    lam1: float = 1.0
    lam2: float = 1.0
    eta_lam: float = 0.01
    lam: float = 0.0
    g_sup_ref: np.ndarray = field(default=None)
    g_con_ref: np.ndarray = field(default=None)
    n_sup: int = 0
    n_con: int = 0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise IntegratorError(f"unknown mechanism {self.mechanism!r}; choose from {MECHANISMS}")
        if self.g_sup_ref is None:
            self.g_sup_ref = np.zeros(self.dim)
        if self.g_con_ref is None:
            self.g_con_ref = np.zeros(self.dim)


@dataclass
class CombineOutcome:
    grad: np.ndarray
    lam: float
    dot_con_supref: float = 0.0
    dot_sup_conref: float = 0.0
    con_projected: bool = False
    sup_projected: bool = False
    ref_guard_hit: bool = False


def project(v: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, bool]:
    """Remove from v its component along ref when v . ref < 0.

    Returns (vector, fired). A near-zero reference (norm < 1e-12) skips the
    projection and returns v unchanged.
    """
    if v.shape != ref.shape:
        raise IntegratorError(f"length mismatch: {v.shape} vs {ref.shape}")
    ref_sq = float(ref @ ref)
    if ref_sq < REF_NORM_FLOOR * REF_NORM_FLOOR:
        return v, False
    dot = float(v @ ref)
    if dot >= 0.0:
        return v, False
    return v - (dot / ref_sq) * ref, True


def _running_mean(ref: np.ndarray, n: int, g: np.ndarray) -> tuple[np.ndarray, int]:
    n += 1
    return ref + (g - ref) / n, n


def combine(state: IntegratorState, g_sup: np.ndarray, g_con: np.ndarray,
            c_value: float) -> CombineOutcome:
    """One integration step; mutates `state` (lam, references, counters).

    `c_value` is the current non-negative constraint-violation measure; only
    the monotone mechanism consumes it.
    """
    g_sup = np.asarray(g_sup, dtype=np.float64)
    g_con = np.asarray(g_con, dtype=np.float64)
    if g_sup.shape != (state.dim,) or g_con.shape != (state.dim,):
        raise IntegratorError(
            f"gradient shapes {g_sup.shape}, {g_con.shape} do not match dim {state.dim}")

    out = CombineOutcome(grad=None, lam=state.lam,
                         dot_con_supref=float(g_con @ state.g_sup_ref),
                         dot_sup_conref=float(g_sup @ state.g_con_ref))

    sup_used, con_used = g_sup, g_con
    if state.mechanism == "static":
        out.grad = state.lam1 * g_sup + state.lam2 * g_con
    elif state.mechanism == "monotone":
        if c_value < 0:
            raise IntegratorError(f"monotone needs a non-negative violation measure, got {c_value}")
        out.grad = g_sup + state.lam * g_con
        out.lam = state.lam
        state.lam = state.lam + state.eta_lam * c_value
    elif state.mechanism == "proj_sup":
        con_used, out.con_projected = project(g_con, state.g_sup_ref)
        out.grad = g_sup + con_used
    elif state.mechanism == "proj_con":
        sup_used, out.sup_projected = project(g_sup, state.g_con_ref)
        out.grad = sup_used + g_con
    else:  # proj_both
        sup_used, out.sup_projected = project(g_sup, state.g_con_ref)
        con_used, out.con_projected = project(g_con, state.g_sup_ref)
        out.grad = sup_used + con_used

    if not np.all(np.isfinite(out.grad)):
        raise IntegratorError("combined gradient is not finite")

    # references track the post-projection gradients (Algorithm order)
    state.g_sup_ref, state.n_sup = _running_mean(state.g_sup_ref, state.n_sup, sup_used)
    state.g_con_ref, state.n_con = _running_mean(state.g_con_ref, state.n_con, con_used)
    return out
