"""Protected-knowledge Gram accumulation and approximate null-space projectors.

The Gram matrix C = lambda1 * K0 @ K0.T + sum_i K_i @ K_i.T aggregates the
second moments of everything the editor must not disturb.  Because C is
full-rank in practice, the "null space" is approximate: the span of
eigenvectors whose eigenvalues fall below a threshold epsilon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ContractError, NumericalError
from .memory import KnowledgeBase

SYMMETRY_RTOL = 1e-8


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


@dataclass(frozen=True)
class GramAccumulator:
    """Second-moment statistics of protected knowledge.

    base holds lambda1 * K0 @ K0.T (fixed), history accumulates the outer
    products of edited keys.  Both stay symmetric PSD by construction.
    """

    lambda1: float
    base: np.ndarray
    history: np.ndarray
    edits_absorbed: int = 0
    columns_absorbed: int = 0

    def current(self) -> np.ndarray:
        return self.base + self.history

    @property
    def d_in(self) -> int:
        return self.base.shape[0]


@dataclass(frozen=True)
class Projector:
    """Symmetric idempotent matrix onto the approximate null space.

    retained_dim counts the eigenvalues of the source Gram strictly below
    epsilon; spectrum_kept holds those eigenvalues for diagnostics.
    """

    p: np.ndarray
    epsilon: float
    retained_dim: int
    spectrum_kept: np.ndarray
    built_at_step: int

    @property
    def d_in(self) -> int:
        return self.p.shape[0]

    def spectrum_json(self) -> str:
        """Retained spectrum as a JSON array, for offline leakage analysis."""
        return json.dumps([float(x) for x in self.spectrum_kept])


def gram_init(kb: KnowledgeBase, lambda1: float) -> GramAccumulator:
    """Fresh accumulator with base = lambda1 * K0 @ K0.T and empty history."""
    if lambda1 < 0:
        raise ConfigurationError("lambda1 must be nonnegative")
    base = _symmetrize(lambda1 * (kb.k0 @ kb.k0.T))
    return GramAccumulator(
        lambda1=lambda1,
        base=base,
        history=np.zeros((kb.d_in, kb.d_in)),
        edits_absorbed=0,
        columns_absorbed=kb.n0,
    )


def gram_absorb(acc: GramAccumulator, keys: np.ndarray) -> GramAccumulator:
    """Accumulator with one more edit's keys folded into the history term."""
    if keys.ndim != 2 or keys.shape[0] != acc.d_in:
        raise ContractError(
            f"keys of shape {keys.shape} do not match Gram dimension {acc.d_in}"
        )
    if keys.shape[1] < 1:
        raise ContractError("cannot absorb an empty key batch")
    history = _symmetrize(acc.history + keys @ keys.T)
    return replace(
        acc,
        history=history,
        edits_absorbed=acc.edits_absorbed + 1,
        columns_absorbed=acc.columns_absorbed + keys.shape[1],
    )


def build_projector(c: np.ndarray, epsilon: float, step: int) -> Projector:
    """Projector onto the span of eigenvectors of C with eigenvalue < epsilon.

    C is symmetrized before the decomposition and eigenvalues are clamped at
    zero from below (PSD round-off can dip to -1e-14).  The threshold is
    strict: directions with eigenvalue exactly epsilon count as occupied.
    """
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be positive")
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ContractError("C must be a square matrix")
    if not np.all(np.isfinite(c)):
        raise NumericalError("C contains non-finite entries")
    c_norm = np.linalg.norm(c)
    if np.linalg.norm(c - c.T) > SYMMETRY_RTOL * max(c_norm, 1.0):
        raise ContractError("C is asymmetric beyond tolerance")
    c_sym = _symmetrize(c)
    try:
        eigvals, eigvecs = np.linalg.eigh(c_sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    eigvals = np.maximum(eigvals, 0.0)
    small = eigvals < epsilon
    u_small = eigvecs[:, small]
    p = _symmetrize(u_small @ u_small.T)
    return Projector(
        p=p,
        epsilon=epsilon,
        retained_dim=int(small.sum()),
        spectrum_kept=eigvals[small],
        built_at_step=step,
    )


def threshold_for_null_fraction(c: np.ndarray, fraction: float) -> float:
    """Eigenvalue threshold under which at least `fraction` of C's spectrum falls.

    Convenience for constructing truncated-projector regimes where the raw
    spectrum scale is run-dependent.  Returns a value strictly above the
    floor(fraction * d)-th smallest clamped eigenvalue.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError("fraction must lie in (0, 1]")
    eigvals = np.maximum(np.linalg.eigvalsh(_symmetrize(c)), 0.0)
    d = len(eigvals)
    k = max(1, int(np.ceil(fraction * d)))
    eigvals = np.sort(eigvals)
    below = eigvals[k - 1]
    above = eigvals[k] if k < d else below * 2 + 1.0
    if above > below:
        return float((below + above) / 2.0)
    return float(np.nextafter(below, np.inf))


def refresh_due(step: int, tau: int) -> bool:
    """Whether the projector must be rebuilt before edit `step`.

    Rebuilds happen before edits 1, tau+1, 2*tau+1, ... so the first edit
    always sees a current projector.
    """
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    if step < 1:
        raise ContractError("step must be >= 1")
    return (step - 1) % tau == 0
