"""Leakage, perturbation, interference and efficacy measurements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .memory import EditRequest, KnowledgeBase, LinearMemory

# Default relative residual under which a past edit counts as satisfied.
EFFICACY_REL_TOL = 0.1


@dataclass(frozen=True)
class StepRecord:
    """Per-step measurements of a sequential run."""

    step: int
    method: str
    delta_norm: float
    cum_delta_norm: float
    leakage: float
    efficacy_proxy: float
    residual_norm: float
    refresh_event: bool


@dataclass(frozen=True)
class InterferenceReport:
    """Pairwise Frobenius inner products of a run's update matrices."""

    gram: np.ndarray
    min_offdiag: float
    nonconflict: bool


def knowledge_leakage(
    w0: np.ndarray, cum_delta: np.ndarray, kb: KnowledgeBase
) -> float:
    """|| (W0 + sum Delta) @ K0 - V0 ||_F against the original weights.

    Measures how far the cumulative update has drifted the memory's outputs
    on the protected keys.
    """
    if w0.shape != cum_delta.shape:
        raise ContractError("w0 and cum_delta shapes disagree")
    if w0.shape != (kb.d_out, kb.d_in):
        raise ContractError(
            f"weights of shape {w0.shape} do not match knowledge base "
            f"({kb.d_out}, {kb.d_in})"
        )
    return float(np.linalg.norm((w0 + cum_delta) @ kb.k0 - kb.v0))


def cum_perturbation_norm(deltas: list[np.ndarray]) -> float:
    """Frobenius norm of the summed update matrices."""
    if not deltas:
        raise ContractError("cum_perturbation_norm needs at least one delta")
    total = np.zeros_like(deltas[0])
    for d in deltas:
        if d.shape != total.shape:
            raise ContractError("delta shapes disagree")
        total += d
    return float(np.linalg.norm(total))


def pairwise_interference(deltas: list[np.ndarray]) -> InterferenceReport:
    """Full T x T Gram of Frobenius inner products between updates.

    The nonconflict flag allows slack proportional to the largest squared
    update norm, so round-off is never reported as conflict.
    """
    if len(deltas) < 2:
        raise ContractError("pairwise_interference needs at least two deltas")
    shape = deltas[0].shape
    if any(d.shape != shape for d in deltas):
        raise ContractError("delta shapes disagree")
    flat = np.stack([d.ravel() for d in deltas])
    gram = flat @ flat.T
    gram = (gram + gram.T) / 2.0
    off = gram[~np.eye(len(deltas), dtype=bool)]
    min_offdiag = float(off.min())
    tol = 1e-9 * float(np.max(np.diag(gram)))
    return InterferenceReport(
        gram=gram, min_offdiag=min_offdiag, nonconflict=min_offdiag >= -tol
    )


def edit_efficacy(
    mem: LinearMemory, past_edits: list[EditRequest], rel_tol: float = EFFICACY_REL_TOL
) -> float:
    """Fraction of past edit columns the current memory reproduces.

    A column (k, v) counts when ||W k - v|| / max(||v||, 1e-12) <= rel_tol.
    """
    if not rel_tol > 0:
        raise ContractError("rel_tol must be positive")
    if not past_edits:
        raise ContractError("edit_efficacy needs at least one past edit")
    keys = np.concatenate([r.keys for r in past_edits], axis=1)
    targets = np.concatenate([r.targets for r in past_edits], axis=1)
    return efficacy_from_columns(mem.weights, keys, targets, rel_tol)


def efficacy_from_columns(
    weights: np.ndarray, keys: np.ndarray, targets: np.ndarray, rel_tol: float
) -> float:
    """edit_efficacy on pre-stacked key/target columns (hot path for runs)."""
    if keys.shape[1] == 0:
        raise ContractError("efficacy needs at least one column")
    err = np.linalg.norm(weights @ keys - targets, axis=0)
    denom = np.maximum(np.linalg.norm(targets, axis=0), 1e-12)
    return float(np.mean(err / denom <= rel_tol))


def specificity_proxy(
    w0: np.ndarray, cum_delta: np.ndarray, kb: KnowledgeBase, holdout: np.ndarray
) -> float:
    """Leakage restricted to held-out pre-trained columns.

    The linear analogue of unrelated-fact specificity: columns in `holdout`
    never enter any Gram the editor sees, so any drift there is collateral.
    """
    return knowledge_leakage(w0, cum_delta, kb.restrict(holdout))
