"""Closed-form weight-update rules.

Every editor is a pure function from (current weights, protection state,
edit request) to an update matrix Delta.  All closed forms have the shape
Delta @ G = R @ K.T @ (...) and are computed by LU factorization of G.T with
an explicit condition estimate, never by forming an inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import ConfigurationError, ContractError, NumericalError, SingularSystemError
from .memory import EditRequest, KnowledgeBase, LinearMemory, residual
from .projector import GramAccumulator, Projector

METHOD_KINDS = ("memit", "memit_h", "memit_r", "alphaedit", "alphaedit_h", "betaedit")

# Beyond this condition estimate the step is rejected rather than silently
# producing garbage.
CONDITION_LIMIT = 1e12

# A solve residual above this marks the update as degraded.
SOLVE_RESIDUAL_LIMIT = 1e-6


@dataclass(frozen=True)
class MethodSpec:
    """Which update rule to run and its knobs."""

    kind: str = "betaedit"
    lambda1: float = 100.0
    lambda2: float = 10.0
    rect_keep_ratio: float | None = None
    epsilon: float = 0.02
    tau: int = 1000

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigurationError(
                f"kind must be one of {METHOD_KINDS}, got {self.kind!r}"
            )
        if self.lambda1 < 0:
            raise ConfigurationError("lambda1 must be nonnegative")
        if not self.lambda2 > 0:
            raise ConfigurationError("lambda2 must be positive")
        if self.rect_keep_ratio is not None and not 0.0 < self.rect_keep_ratio <= 1.0:
            raise ConfigurationError("rect_keep_ratio must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.tau < 1:
            raise ConfigurationError("tau must be a positive integer")


@dataclass(frozen=True)
class UpdateResult:
    """An update matrix plus solver diagnostics."""

    delta: np.ndarray
    solve_residual: float
    condition_estimate: float

    @property
    def degraded(self) -> bool:
        return self.solve_residual > SOLVE_RESIDUAL_LIMIT


def _solve_right(system: np.ndarray, rhs: np.ndarray) -> UpdateResult:
    """Solve X @ system = rhs for X via LU of system.T, with diagnostics."""
    if not np.all(np.isfinite(system)):
        raise NumericalError("system matrix contains non-finite entries")
    at = np.asfortranarray(system.T)
    anorm = np.linalg.norm(at, 1)
    lu, piv, info = lapack.dgetrf(at)
    if info > 0:
        raise SingularSystemError("system matrix is exactly singular")
    if info < 0:
        raise NumericalError(f"LU factorization failed (info={info})")
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0:
        raise NumericalError(f"condition estimation failed (info={info})")
    cond = math.inf if rcond == 0.0 else 1.0 / rcond
    if cond > CONDITION_LIMIT:
        raise SingularSystemError(
            f"system matrix condition estimate {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )
    x = scipy.linalg.lu_solve((lu, piv), rhs.T).T
    rhs_norm = np.linalg.norm(rhs)
    solve_residual = np.linalg.norm(x @ system - rhs) / max(rhs_norm, np.finfo(float).tiny)
    if rhs_norm == 0.0:
        solve_residual = 0.0
    return UpdateResult(delta=x, solve_residual=float(solve_residual), condition_estimate=cond)


def memit_update(
    mem: LinearMemory,
    kb: KnowledgeBase,
    req: EditRequest,
    lambda1: float,
    history_gram: np.ndarray | None = None,
) -> UpdateResult:
    """Ridge-regularized closed form.

    Solves Delta @ (lambda1 * K0 K0^T + [history] + K_t K_t^T) = R K_t^T.
    With history_gram supplied this is the history-aware rule; without it,
    the vanilla history-agnostic one.
    """
    if lambda1 < 0:
        raise ConfigurationError("lambda1 must be nonnegative")
    if kb.d_in != mem.d_in or kb.d_out != mem.d_out:
        raise ContractError("knowledge base and memory dimensions disagree")
    r = residual(mem, req)
    g = lambda1 * (kb.k0 @ kb.k0.T) + req.keys @ req.keys.T
    if history_gram is not None:
        if history_gram.shape != g.shape:
            raise ContractError(
                f"history_gram shape {history_gram.shape} does not match {g.shape}"
            )
        g = g + history_gram
    return _solve_right(g, r @ req.keys.T)


def memit_r_update(
    mem: LinearMemory,
    kb: KnowledgeBase,
    req: EditRequest,
    lambda1: float,
    random_key_pool: np.ndarray,
) -> UpdateResult:
    """History-aware form with the true history replaced by random keys.

    At step t the first (t-1) * m pool columns stand in for the keys of the
    t-1 earlier edits.
    """
    if random_key_pool.ndim != 2 or random_key_pool.shape[0] != mem.d_in:
        raise ContractError("random_key_pool must be a (d_in, n) matrix")
    needed = (req.step_index - 1) * req.m
    if random_key_pool.shape[1] < needed:
        raise ConfigurationError(
            f"random key pool holds {random_key_pool.shape[1]} columns, "
            f"step {req.step_index} needs {needed}"
        )
    if needed == 0:
        return memit_update(mem, kb, req, lambda1)
    fake = random_key_pool[:, :needed]
    return memit_update(mem, kb, req, lambda1, history_gram=fake @ fake.T)


def _projected_update(
    mem: LinearMemory,
    proj: Projector,
    req: EditRequest,
    lambda2: float,
    protection_gram: np.ndarray | None,
) -> UpdateResult:
    if not lambda2 > 0:
        raise ConfigurationError("lambda2 must be positive")
    if proj.d_in != mem.d_in:
        raise ContractError(
            f"projector dimension {proj.d_in} does not match memory d_in {mem.d_in}"
        )
    r = residual(mem, req)
    a = req.keys @ req.keys.T
    if protection_gram is not None:
        if protection_gram.shape != a.shape:
            raise ContractError(
                f"protection gram shape {protection_gram.shape} does not match {a.shape}"
            )
        a = a + protection_gram
    # lambda2*I + A @ P is non-symmetric in general; the general LU path in
    # _solve_right handles it.
    system = lambda2 * np.eye(mem.d_in) + a @ proj.p
    return _solve_right(system, r @ req.keys.T @ proj.p)


def alphaedit_update(
    mem: LinearMemory,
    proj: Projector,
    req: EditRequest,
    lambda2: float,
    history_gram: np.ndarray | None = None,
) -> UpdateResult:
    """Null-space-projected update with a lambda2 stabilizer.

    Delta = R K^T P (lambda2 I + (K K^T + [history]) P)^{-1}.  The projector
    is built from the pre-trained Gram only; history_gram, if given, enters
    the solve but not the projector (the history-aware variant).
    """
    return _projected_update(mem, proj, req, lambda2, history_gram)


def betaedit_update(
    mem: LinearMemory,
    proj: Projector,
    gram: GramAccumulator,
    req: EditRequest,
    lambda2: float,
) -> UpdateResult:
    """Null-space update that also penalizes leakage through the full Gram.

    Delta = R K^T P (lambda2 I + (K K^T + C) P)^{-1} where
    C = lambda1 K0 K0^T + sum_{i<t} K_i K_i^T and P is the null-space
    projector of C (possibly stale by up to tau-1 steps).
    """
    if gram.d_in != mem.d_in:
        raise ContractError(
            f"gram dimension {gram.d_in} does not match memory d_in {mem.d_in}"
        )
    return _projected_update(mem, proj, req, lambda2, gram.current())


def rect_sparsify(delta: np.ndarray, keep_ratio: float) -> np.ndarray:
    """Keep only the ceil(keep_ratio * size) largest-magnitude entries.

    Ties at the cutoff magnitude are broken by row-major position, keeping
    earlier indices.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ConfigurationError("keep_ratio must lie in (0, 1]")
    if keep_ratio == 1.0:
        return delta.copy()
    flat = delta.ravel()
    keep = math.ceil(keep_ratio * flat.size)
    # Stable sort on descending magnitude preserves row-major order at ties.
    order = np.argsort(-np.abs(flat), kind="stable")[:keep]
    out = np.zeros_like(flat)
    out[order] = flat[order]
    return out.reshape(delta.shape)


def apply_update(mem: LinearMemory, delta: np.ndarray) -> LinearMemory:
    """New memory with weights W + Delta; the input memory is untouched."""
    if delta.shape != mem.weights.shape:
        raise ContractError(
            f"delta shape {delta.shape} does not match weights {mem.weights.shape}"
        )
    if not np.all(np.isfinite(delta)):
        raise NumericalError("delta contains non-finite entries")
    return LinearMemory(weights=mem.weights + delta)
