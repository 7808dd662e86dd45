"""Sequential editing runs, oracle cross-checks, and hyperparameter sweeps."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .editors import (
    MethodSpec,
    alphaedit_update,
    apply_update,
    betaedit_update,
    memit_update,
    rect_sparsify,
)
from .errors import ConfigurationError, ContractError, SingularSystemError
from .memory import (
    EditRequest,
    KnowledgeBase,
    LinearMemory,
    StreamConfig,
    generate_edit_stream,
    residual,
    sample_key_pool,
    synth_knowledge,
    synth_structured_knowledge,
)
from .metrics import (
    InterferenceReport,
    StepRecord,
    efficacy_from_columns,
    knowledge_leakage,
    pairwise_interference,
)
from .projector import (
    GramAccumulator,
    Projector,
    build_projector,
    gram_absorb,
    gram_init,
    refresh_due,
)

GRAM_NORMALIZE_MODES = ("none", "by_columns")

# Fraction of pre-trained columns protected when holdout is enabled; the
# remainder measures specificity.
HOLDOUT_PROTECTED_FRACTION = 0.8

# Margin for the strict cumulative-norm inequality in the theorem check.
THEOREM_STRICT_MARGIN = 1e-10

_PROJECTOR_KINDS = {"alphaedit", "alphaedit_h", "betaedit"}
_HISTORY_KINDS = {"memit_h", "alphaedit_h", "betaedit"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sequential run needs."""

    stream: StreamConfig = StreamConfig()
    method: MethodSpec = MethodSpec()
    d_in: int = 64
    d_out: int = 32
    n0: int = 200
    metrics_every: int = 10
    holdout: bool = False
    gram_normalize: str = "none"
    store_deltas: bool = False
    efficacy_rel_tol: float = 0.1
    # "isotropic" keys, or "structured" keys concentrated near a subspace of
    # dimension knowledge_strong_rank with tail components of relative scale
    # knowledge_tail_scale (gives the Gram spectrum a knee).
    knowledge: str = "isotropic"
    knowledge_strong_rank: int | None = None
    knowledge_tail_scale: float = 1e-3

    def __post_init__(self):
        if self.d_in < 1 or self.d_out < 1 or self.n0 < 1:
            raise ConfigurationError("d_in, d_out and n0 must all be >= 1")
        if self.knowledge not in ("isotropic", "structured"):
            raise ConfigurationError("knowledge must be 'isotropic' or 'structured'")
        if self.metrics_every < 1:
            raise ConfigurationError("metrics_every must be >= 1")
        if self.stream.num_edits > 0 and self.metrics_every > self.stream.num_edits:
            raise ConfigurationError("metrics_every must not exceed num_edits")
        if self.gram_normalize not in GRAM_NORMALIZE_MODES:
            raise ConfigurationError(
                f"gram_normalize must be one of {GRAM_NORMALIZE_MODES}"
            )
        if not self.efficacy_rel_tol > 0:
            raise ConfigurationError("efficacy_rel_tol must be positive")


@dataclass
class EditTrace:
    """Outcome of one sequential run."""

    config: ExperimentConfig
    records: list[StepRecord]
    final_weights_digest: str
    stream_digest: str
    aborted_at: int | None = None
    interference: InterferenceReport | None = None
    deltas: list[np.ndarray] | None = None
    # O(1)-memory interference summary: <Delta_t, sum_{s<t} Delta_s> per step.
    running_interference: list[float] = field(default_factory=list)
    specificity: list[float] | None = None

    @property
    def aborted(self) -> bool:
        return self.aborted_at is not None


def stream_digest(stream: list[EditRequest]) -> str:
    h = hashlib.sha256()
    for req in stream:
        h.update(np.ascontiguousarray(req.keys).tobytes())
        h.update(np.ascontiguousarray(req.targets).tobytes())
    return h.hexdigest()


def _weights_digest(mem: LinearMemory) -> str:
    return hashlib.sha256(np.ascontiguousarray(mem.weights).tobytes()).hexdigest()


def run_sequence(
    cfg: ExperimentConfig,
    kb: KnowledgeBase | None = None,
    mem: LinearMemory | None = None,
    stream: list[EditRequest] | None = None,
) -> EditTrace:
    """Drive T sequential edits with the configured method.

    kb, mem and stream may be injected (they must be mutually consistent);
    otherwise they are synthesized from the stream seed.  Key absorption into
    the history Gram happens after computing each step's update, so the t-th
    update protects edits 1..t-1 only.
    """
    if kb is None or mem is None:
        if cfg.knowledge == "structured":
            kb, mem = synth_structured_knowledge(
                cfg.stream.seed, cfg.d_in, cfg.d_out, cfg.n0, cfg.stream.key_scale,
                strong_rank=cfg.knowledge_strong_rank,
                tail_scale=cfg.knowledge_tail_scale,
            )
        else:
            kb, mem = synth_knowledge(
                cfg.stream.seed, cfg.d_in, cfg.d_out, cfg.n0, cfg.stream.key_scale
            )
    if stream is None:
        stream = generate_edit_stream(cfg.stream, kb, mem)
    if kb.d_in != mem.d_in or kb.d_out != mem.d_out:
        raise ContractError("knowledge base and memory dimensions disagree")

    kind = cfg.method.kind
    w0 = mem.weights.copy()
    digest_in = stream_digest(stream)
    t_total = len(stream)

    holdout_idx = None
    protected_kb = kb
    if cfg.holdout:
        n_protected = max(1, int(HOLDOUT_PROTECTED_FRACTION * kb.n0))
        protected_idx = np.arange(n_protected)
        holdout_idx = np.arange(n_protected, kb.n0)
        protected_kb = kb.restrict(protected_idx)

    # Protection state per method family.
    hist_gram = gram_init(protected_kb, 0.0)  # plain sum of edited-key outer products
    beta_gram = gram_init(protected_kb, cfg.method.lambda1)
    base_gram = gram_init(protected_kb, 1.0).current()  # K0 K0^T, lambda1-free
    rand_hist = np.zeros((mem.d_in, mem.d_in))
    rand_pool = None
    if kind == "memit_r" and t_total > 0:
        max_m = max(req.m for req in stream)
        rand_pool = sample_key_pool(
            cfg.stream.seed, mem.d_in, t_total * max_m, cfg.stream.key_scale
        )
    proj: Projector | None = None

    records: list[StepRecord] = []
    deltas: list[np.ndarray] | None = [] if cfg.store_deltas else None
    running_interference: list[float] = []
    specificity: list[float] | None = [] if cfg.holdout else None
    cum = np.zeros_like(w0)
    total_cols = sum(req.m for req in stream)
    past_keys = np.empty((mem.d_in, total_cols))
    past_targets = np.empty((mem.d_out, total_cols))
    cols_seen = 0
    pool_cols_used = 0
    aborted_at = None

    for req in stream:
        t = req.step_index
        refresh_event = False
        if kind in _PROJECTOR_KINDS and refresh_due(t, cfg.method.tau):
            if kind == "betaedit":
                c = beta_gram.current()
                absorbed = beta_gram.columns_absorbed
            else:
                c = base_gram
                absorbed = protected_kb.n0
            if cfg.gram_normalize == "by_columns":
                c = c / absorbed
            proj = build_projector(c, cfg.method.epsilon, t)
            refresh_event = True

        try:
            if kind == "memit":
                result = memit_update(mem, protected_kb, req, cfg.method.lambda1)
            elif kind == "memit_h":
                result = memit_update(
                    mem, protected_kb, req, cfg.method.lambda1,
                    history_gram=hist_gram.history,
                )
            elif kind == "memit_r":
                result = memit_update(
                    mem, protected_kb, req, cfg.method.lambda1, history_gram=rand_hist
                )
            elif kind == "alphaedit":
                result = alphaedit_update(mem, proj, req, cfg.method.lambda2)
            elif kind == "alphaedit_h":
                result = alphaedit_update(
                    mem, proj, req, cfg.method.lambda2, history_gram=hist_gram.history
                )
            else:
                result = betaedit_update(mem, proj, beta_gram, req, cfg.method.lambda2)
        except SingularSystemError:
            aborted_at = t
            break

        delta = result.delta
        if cfg.method.rect_keep_ratio is not None:
            delta = rect_sparsify(delta, cfg.method.rect_keep_ratio)
        resid_norm = float(np.linalg.norm(residual(mem, req)))
        mem = apply_update(mem, delta)
        running_interference.append(float(np.sum(delta * cum)))
        cum += delta
        if deltas is not None:
            deltas.append(delta)

        # Absorb this step's keys only after the update used the old state.
        if kind in _HISTORY_KINDS:
            if kind == "betaedit":
                beta_gram = gram_absorb(beta_gram, req.keys)
            else:
                hist_gram = gram_absorb(hist_gram, req.keys)
        elif kind == "memit_r":
            fake = rand_pool[:, pool_cols_used : pool_cols_used + req.m]
            rand_hist = rand_hist + fake @ fake.T
            rand_hist = (rand_hist + rand_hist.T) / 2.0
            pool_cols_used += req.m

        past_keys[:, cols_seen : cols_seen + req.m] = req.keys
        past_targets[:, cols_seen : cols_seen + req.m] = req.targets
        cols_seen += req.m

        if t % cfg.metrics_every == 0 or t == t_total:
            records.append(
                StepRecord(
                    step=t,
                    method=kind,
                    delta_norm=float(np.linalg.norm(delta)),
                    cum_delta_norm=float(np.linalg.norm(cum)),
                    leakage=knowledge_leakage(w0, cum, kb),
                    efficacy_proxy=efficacy_from_columns(
                        mem.weights,
                        past_keys[:, :cols_seen],
                        past_targets[:, :cols_seen],
                        cfg.efficacy_rel_tol,
                    ),
                    residual_norm=resid_norm,
                    refresh_event=refresh_event,
                )
            )
            if specificity is not None:
                specificity.append(
                    knowledge_leakage(w0, cum, kb.restrict(holdout_idx))
                )

    interference = None
    if deltas is not None and len(deltas) >= 2:
        interference = pairwise_interference(deltas)

    return EditTrace(
        config=cfg,
        records=records,
        final_weights_digest=_weights_digest(mem),
        stream_digest=digest_in,
        aborted_at=aborted_at,
        interference=interference,
        deltas=deltas,
        running_interference=running_interference,
        specificity=specificity,
    )


@dataclass(frozen=True)
class TheoremSeedResult:
    """Theorem check on one seed: history-aware vs history-agnostic."""

    seed: int
    nonconflict_aware: bool
    nonconflict_agnostic: bool
    conclusive: bool
    prefix_ok: bool
    min_margin: float
    sketch_fraction: float
    final_cum_aware: float
    final_cum_agnostic: float

    @property
    def passed(self) -> bool:
        return self.conclusive and self.prefix_ok


@dataclass(frozen=True)
class TheoremReport:
    results: list[TheoremSeedResult]
    num_conclusive: int
    num_passed: int

    @property
    def all_conclusive_passed(self) -> bool:
        return all(r.prefix_ok for r in self.results if r.conclusive)


def _prefix_norms(deltas: list[np.ndarray]) -> np.ndarray:
    cum = np.zeros_like(deltas[0])
    out = np.empty(len(deltas))
    for i, d in enumerate(deltas):
        cum += d
        out[i] = np.linalg.norm(cum)
    return out


def verify_theorem1(base_cfg: ExperimentConfig, seeds: list[int]) -> TheoremReport:
    """Compare history-aware vs history-agnostic ridge editing per seed.

    Both methods consume a byte-identical aligned stream with the same
    lambda1.  A seed is conclusive when both runs are non-conflicting;
    conclusive seeds must then show strictly smaller cumulative perturbation
    for the history-aware method at every prefix length >= 2.  The
    aggregated interference inequality from the accompanying argument
    (sum_{s<t} <Delta_t, Delta_s> smaller for history-aware) is reported as
    a fraction of steps where it holds.
    """
    if base_cfg.stream.conflict_mode != "aligned":
        raise ConfigurationError("theorem verification requires aligned streams")
    results = []
    for seed in seeds:
        stream_cfg = replace(base_cfg.stream, seed=seed)
        kb, mem = synth_knowledge(
            seed, base_cfg.d_in, base_cfg.d_out, base_cfg.n0, stream_cfg.key_scale
        )
        stream = generate_edit_stream(stream_cfg, kb, mem)
        runs = {}
        for kind in ("memit_h", "memit"):
            cfg = replace(
                base_cfg,
                stream=stream_cfg,
                method=replace(base_cfg.method, kind=kind),
                store_deltas=True,
            )
            runs[kind] = run_sequence(cfg, kb=kb, mem=mem, stream=stream)
        aware, agnostic = runs["memit_h"], runs["memit"]
        assert aware.stream_digest == agnostic.stream_digest

        nc_aware = bool(aware.interference and aware.interference.nonconflict)
        nc_agnostic = bool(agnostic.interference and agnostic.interference.nonconflict)
        conclusive = nc_aware and nc_agnostic

        prefix_aware = _prefix_norms(aware.deltas)
        prefix_agnostic = _prefix_norms(agnostic.deltas)
        margins = prefix_agnostic[1:] - prefix_aware[1:]
        prefix_ok = bool(np.all(margins > THEOREM_STRICT_MARGIN))

        g_b, g_a = aware.interference.gram, agnostic.interference.gram
        t_count = g_b.shape[0]
        hold = 0
        for t in range(1, t_count):
            if g_b[t, :t].sum() <= g_a[t, :t].sum() + THEOREM_STRICT_MARGIN:
                hold += 1
        sketch_fraction = hold / max(t_count - 1, 1)

        results.append(
            TheoremSeedResult(
                seed=seed,
                nonconflict_aware=nc_aware,
                nonconflict_agnostic=nc_agnostic,
                conclusive=conclusive,
                prefix_ok=prefix_ok,
                min_margin=float(margins.min()),
                sketch_fraction=sketch_fraction,
                final_cum_aware=float(prefix_aware[-1]),
                final_cum_agnostic=float(prefix_agnostic[-1]),
            )
        )
    return TheoremReport(
        results=results,
        num_conclusive=sum(r.conclusive for r in results),
        num_passed=sum(r.passed for r in results),
    )


def oracle_solve(
    mem: LinearMemory, kb: KnowledgeBase, req: EditRequest, lambda1: float
) -> np.ndarray:
    """Independent solver for the ridge stationarity system.

    Solves Delta @ (lambda1 K0 K0^T + K1 K1^T) = R K1^T by hand-written
    Gaussian elimination with partial pivoting, sharing no code with the
    production LU path.  Meant for small dimensions (d_in <= 64).
    """
    r = residual(mem, req)
    g = lambda1 * (kb.k0 @ kb.k0.T) + req.keys @ req.keys.T
    a = np.array(g.T, dtype=float)
    rhs = np.array((r @ req.keys.T).T, dtype=float)
    n = a.shape[0]
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot, col]) < 1e3 * np.finfo(float).tiny:
            raise SingularSystemError("oracle: singular system")
        if pivot != col:
            a[[col, pivot]] = a[[pivot, col]]
            rhs[[col, pivot]] = rhs[[pivot, col]]
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :] -= np.outer(factors, a[col])
        rhs[col + 1 :] -= np.outer(factors, rhs[col])
    x = np.zeros_like(rhs)
    for row in range(n - 1, -1, -1):
        x[row] = (rhs[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x.T


def objective_value(
    mem: LinearMemory,
    delta: np.ndarray,
    kb: KnowledgeBase,
    req: EditRequest,
    lambda1: float,
    proj: Projector | None = None,
) -> float:
    """Regularized least-squares objective at the given update.

    ||(W + D) K1 - V1||_F^2 + lambda1 ||(W + D) K0 - V0||_F^2 where D is
    delta, composed with the projector when one is supplied.
    """
    if delta.shape != mem.weights.shape:
        raise ContractError("delta shape does not match weights")
    d = delta @ proj.p if proj is not None else delta
    w = mem.weights + d
    edit_term = np.linalg.norm(w @ req.keys - req.targets) ** 2
    preserve_term = np.linalg.norm(w @ kb.k0 - kb.v0) ** 2
    return float(edit_term + lambda1 * preserve_term)


@dataclass(frozen=True)
class SweepPoint:
    value: float
    final_efficacy: float
    final_leakage: float
    final_cum_norm: float
    aborted: bool


SWEEP_PARAMS = ("lambda1", "tau", "keep_ratio")


def sweep(
    base_cfg: ExperimentConfig, param: str, values: list[float]
) -> list[SweepPoint]:
    """One run per value, shared seed, summarized by the final record."""
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(f"param must be one of {SWEEP_PARAMS}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    points = []
    for value in values:
        if param == "lambda1":
            method = replace(base_cfg.method, lambda1=float(value))
        elif param == "tau":
            method = replace(base_cfg.method, tau=int(value))
        else:
            method = replace(base_cfg.method, rect_keep_ratio=float(value))
        trace = run_sequence(replace(base_cfg, method=method))
        last = trace.records[-1] if trace.records else None
        points.append(
            SweepPoint(
                value=float(value),
                final_efficacy=last.efficacy_proxy if last else float("nan"),
                final_leakage=last.leakage if last else float("nan"),
                final_cum_norm=last.cum_delta_norm if last else float("nan"),
                aborted=trace.aborted,
            )
        )
    return points
