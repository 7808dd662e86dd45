"""Synthetic pre-trained knowledge and streams of edit requests.

A linear associative memory is a weight matrix W that stores key/value
associations: W @ k0_i = v0_i for every pre-trained pair.  Edit streams are
sequences of new (key, target) batches with controllable collision and
conflict structure, so that sequential-editing behavior can be studied in
isolation from any real model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError

CONFLICT_MODES = ("aligned", "independent")

# Pool of shared keys used when collision_rate > 0, as a fraction of the
# stream length.
COLLISION_POOL_FRACTION = 0.05

# In aligned mode keys are drawn around a shared direction so that update
# matrices overlap with mostly nonnegative pairwise inner products; this is
# the noise scale relative to the shared unit direction.
ALIGNED_KEY_NOISE = 0.5

# Relative residual magnitudes of generated edits, keeping every edit
# non-trivial without dominating the memory.
RESIDUAL_REL_RANGE = (0.1, 0.5)


@dataclass(frozen=True)
class LinearMemory:
    """Editable weight matrix of shape (d_out, d_in)."""

    weights: np.ndarray

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class KnowledgeBase:
    """Pre-trained key/value matrices K0 (d_in, n0) and V0 (d_out, n0)."""

    k0: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        if self.k0.ndim != 2 or self.v0.ndim != 2:
            raise ContractError("k0 and v0 must be matrices")
        if self.k0.shape[1] != self.v0.shape[1]:
            raise ContractError(
                f"k0 has {self.k0.shape[1]} columns but v0 has {self.v0.shape[1]}"
            )
        norms = np.linalg.norm(self.k0, axis=0)
        if np.any(norms == 0.0):
            raise ContractError("k0 contains an all-zero column")

    @property
    def d_in(self) -> int:
        return self.k0.shape[0]

    @property
    def d_out(self) -> int:
        return self.v0.shape[0]

    @property
    def n0(self) -> int:
        return self.k0.shape[1]

    def restrict(self, columns: np.ndarray) -> "KnowledgeBase":
        """Knowledge base limited to the given column indices."""
        return KnowledgeBase(k0=self.k0[:, columns], v0=self.v0[:, columns])


@dataclass(frozen=True)
class EditRequest:
    """One editing step: keys K_t (d_in, m) and target values V_t (d_out, m)."""

    step_index: int
    keys: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.step_index < 1:
            raise ContractError("step_index must be >= 1")
        if self.keys.ndim != 2 or self.targets.ndim != 2:
            raise ContractError("keys and targets must be matrices")
        if self.keys.shape[1] != self.targets.shape[1]:
            raise ContractError("keys and targets must have the same column count")
        if self.keys.shape[1] < 1:
            raise ContractError("an edit needs at least one column")
        if np.any(np.linalg.norm(self.keys, axis=0) == 0.0):
            raise ContractError("every key column must have positive norm")

    @property
    def m(self) -> int:
        return self.keys.shape[1]


@dataclass(frozen=True)
class StreamConfig:
    """Controls the random edit stream fed to a sequential run."""

    seed: int = 0
    num_edits: int = 100
    batch_size: int = 1
    collision_rate: float = 0.0
    conflict_mode: str = "independent"
    key_scale: float = 1.0
    residual_range: tuple[float, float] = RESIDUAL_REL_RANGE

    def __post_init__(self):
        if self.num_edits < 0:
            raise ConfigurationError("num_edits must be >= 0")
        if len(self.residual_range) != 2:
            raise ConfigurationError("residual_range must be a (lo, hi) pair")
        lo, hi = self.residual_range
        if not (0.0 < lo <= hi):
            raise ConfigurationError("residual_range must satisfy 0 < lo <= hi")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0.0 <= self.collision_rate <= 1.0:
            raise ConfigurationError("collision_rate must lie in [0, 1]")
        if self.conflict_mode not in CONFLICT_MODES:
            raise ConfigurationError(
                f"conflict_mode must be one of {CONFLICT_MODES}, got {self.conflict_mode!r}"
            )
        if not self.key_scale > 0:
            raise ConfigurationError("key_scale must be positive")


def _unit_columns(rng: np.random.Generator, d: int, n: int, scale: float) -> np.ndarray:
    cols = rng.standard_normal((d, n))
    norms = np.linalg.norm(cols, axis=0)
    # Probability-zero event, but a zero column would poison normalization.
    while np.any(norms == 0.0):
        bad = norms == 0.0
        cols[:, bad] = rng.standard_normal((d, int(bad.sum())))
        norms = np.linalg.norm(cols, axis=0)
    return cols * (scale / norms)


def synth_knowledge(
    seed: int, d_in: int, d_out: int, n0: int, key_scale: float = 1.0
) -> tuple[KnowledgeBase, LinearMemory]:
    """Random weights plus a key/value store they reproduce exactly.

    W has i.i.d. standard-normal entries scaled by 1/sqrt(d_in); the n0 key
    columns are i.i.d. normal, normalized to norm key_scale; V0 = W @ K0 so
    exactness holds by construction.
    """
    if d_in < 1 or d_out < 1 or n0 < 1:
        raise ConfigurationError("d_in, d_out and n0 must all be >= 1")
    if not key_scale > 0:
        raise ConfigurationError("key_scale must be positive")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)
    k0 = _unit_columns(rng, d_in, n0, key_scale)
    v0 = w @ k0
    return KnowledgeBase(k0=k0, v0=v0), LinearMemory(weights=w)


def synth_structured_knowledge(
    seed: int,
    d_in: int,
    d_out: int,
    n0: int,
    key_scale: float = 1.0,
    strong_rank: int | None = None,
    tail_scale: float = 1e-3,
) -> tuple[KnowledgeBase, LinearMemory]:
    """Like synth_knowledge, but with keys concentrated near a subspace.

    Key columns have full-strength components in a strong_rank-dimensional
    subspace and components of relative magnitude tail_scale outside it, so
    K0 @ K0.T has a sharp spectral knee.  This makes eigenvalue thresholds
    meaningful: the tail of the Gram spectrum is small but nonzero, exactly
    the regime where an approximate null space exists.
    """
    if strong_rank is None:
        strong_rank = d_in // 2
    if not 1 <= strong_rank <= d_in:
        raise ConfigurationError("strong_rank must lie in [1, d_in]")
    if not tail_scale >= 0:
        raise ConfigurationError("tail_scale must be nonnegative")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)
    k0 = rng.standard_normal((d_in, n0))
    k0[strong_rank:, :] *= tail_scale
    # Random rotation so the strong subspace is not axis-aligned.
    q, _ = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    k0 = q @ k0
    norms = np.linalg.norm(k0, axis=0)
    k0 = k0 * (key_scale / norms)
    v0 = w @ k0
    return KnowledgeBase(k0=k0, v0=v0), LinearMemory(weights=w)


def _sample_key(
    rng: np.random.Generator,
    d_in: int,
    key_scale: float,
    aligned_dir: np.ndarray | None,
) -> np.ndarray:
    """One fresh key column; in aligned mode keys cluster around a shared direction."""
    g = rng.standard_normal(d_in)
    if aligned_dir is not None:
        g = aligned_dir + ALIGNED_KEY_NOISE * g / np.linalg.norm(g)
    return g * (key_scale / np.linalg.norm(g))


def generate_edit_stream(
    cfg: StreamConfig, kb: KnowledgeBase, mem: LinearMemory
) -> list[EditRequest]:
    """Sample num_edits requests against the given memory.

    Keys are fresh random columns of norm key_scale, except that with
    probability collision_rate a key is re-drawn (with replacement) from a
    small shared pool.  Targets deviate from W @ k by a relative magnitude in
    cfg.residual_range: along a run-wide unit direction u in aligned mode
    (all residuals share a half-space), isotropically in independent mode.
    """
    if kb.d_in != mem.d_in or kb.d_out != mem.d_out:
        raise ContractError("knowledge base and memory dimensions disagree")
    rng = np.random.default_rng([cfg.seed, 0xED17])
    t_total = cfg.num_edits
    if t_total == 0:
        return []

    d_in, d_out = mem.d_in, mem.d_out
    aligned = cfg.conflict_mode == "aligned"
    aligned_key_dir = None
    aligned_res_dir = None
    if aligned:
        aligned_key_dir = rng.standard_normal(d_in)
        aligned_key_dir /= np.linalg.norm(aligned_key_dir)
        aligned_res_dir = rng.standard_normal(d_out)
        aligned_res_dir /= np.linalg.norm(aligned_res_dir)

    pool_size = math.ceil(COLLISION_POOL_FRACTION * t_total)
    pool = np.column_stack(
        [_sample_key(rng, d_in, cfg.key_scale, aligned_key_dir) for _ in range(pool_size)]
    )

    lo, hi = cfg.residual_range
    requests = []
    for t in range(1, t_total + 1):
        cols = []
        for _ in range(cfg.batch_size):
            if cfg.collision_rate > 0 and rng.random() < cfg.collision_rate:
                cols.append(pool[:, rng.integers(pool_size)])
            else:
                cols.append(_sample_key(rng, d_in, cfg.key_scale, aligned_key_dir))
        keys = np.column_stack(cols)
        wk = mem.weights @ keys
        wk_norms = np.linalg.norm(wk, axis=0)
        amps = rng.uniform(lo, hi, size=cfg.batch_size)
        if aligned:
            targets = wk + aligned_res_dir[:, None] * (amps * wk_norms)[None, :]
        else:
            dirs = rng.standard_normal((d_out, cfg.batch_size))
            dirs /= np.linalg.norm(dirs, axis=0)
            targets = wk + dirs * (amps * wk_norms)[None, :]
        requests.append(EditRequest(step_index=t, keys=keys, targets=targets))
    return requests


def sample_key_pool(
    seed: int, d_in: int, n: int, key_scale: float = 1.0, aligned_dir: np.ndarray | None = None
) -> np.ndarray:
    """n key columns drawn from the stream generator's key distribution.

    Used by the random-history editing variant, which substitutes these for
    the true historical keys.
    """
    rng = np.random.default_rng([seed, 0x9001])
    if n == 0:
        return np.zeros((d_in, 0))
    return np.column_stack(
        [_sample_key(rng, d_in, key_scale, aligned_dir) for _ in range(n)]
    )


def residual(mem: LinearMemory, req: EditRequest) -> np.ndarray:
    """R_t = V_t - W @ K_t, the part of the edit the memory does not yet store."""
    if req.keys.shape[0] != mem.d_in or req.targets.shape[0] != mem.d_out:
        raise ContractError(
            f"request dims ({req.keys.shape[0]}, {req.targets.shape[0]}) do not "
            f"match memory ({mem.d_in}, {mem.d_out})"
        )
    return req.targets - mem.weights @ req.keys
