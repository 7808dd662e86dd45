"""Command-line interface: run, verify, sweep.

Outputs are plain CSV/JSON for offline plotting.  Exit codes: 0 ok,
2 configuration error, 3 aborted run, 4 numerical error.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .editors import MethodSpec, memit_update
from .errors import ConfigurationError, NulleditError, NumericalError
from .harness import (
    ExperimentConfig,
    run_sequence,
    sweep,
    verify_theorem1,
    oracle_solve,
)
from .memory import EditRequest, StreamConfig, synth_knowledge
from .projector import build_projector, threshold_for_null_fraction
from .harness import EditTrace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_NUMERICAL = 4

TRACE_HEADER = (
    "step,method,delta_norm,cum_delta_norm,leakage,efficacy_proxy,"
    "residual_norm,refresh_event"
)

VERIFY_SUITES = ("oracle", "theorem1", "projector", "leakage")

_DEFAULTS = {
    "seed": 0,
    "dims": {"d_in": 64, "d_out": 32, "n0": 200},
    "stream": {
        "num_edits": 100,
        "batch_size": 1,
        "collision_rate": 0.0,
        "conflict_mode": "independent",
        "key_scale": 1.0,
        "residual_range": [0.1, 0.5],
    },
    "method": {
        "kind": "betaedit",
        "lambda1": 100.0,
        "lambda2": 10.0,
        "epsilon": 0.02,
        "tau": 1000,
        "rect_keep_ratio": None,
    },
    "knowledge": {"kind": "isotropic", "strong_rank": None, "tail_scale": 1e-3},
    "metrics_every": 10,
    "holdout": False,
    "gram_normalize": "none",
    "store_deltas": False,
    "efficacy_rel_tol": 0.1,
}

# memit and variants default to the customary heavy ridge weight.
_MEMIT_LAMBDA1_DEFAULT = 15000.0


def _merge_section(defaults: dict, given: dict, path: str) -> dict:
    merged = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigurationError(f"unknown config key: {path}{key}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{path}{key} must be an object")
            merged[key] = _merge_section(defaults[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Resolve a raw JSON object into a validated ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    merged = _merge_section(_DEFAULTS, raw, "")
    method_raw = merged["method"]
    if (
        method_raw["kind"] in ("memit", "memit_h", "memit_r")
        and "method" in raw
        and "lambda1" not in raw.get("method", {})
    ):
        method_raw = dict(method_raw, lambda1=_MEMIT_LAMBDA1_DEFAULT)
    try:
        method = MethodSpec(
            kind=method_raw["kind"],
            lambda1=float(method_raw["lambda1"]),
            lambda2=float(method_raw["lambda2"]),
            epsilon=float(method_raw["epsilon"]),
            tau=int(method_raw["tau"]),
            rect_keep_ratio=(
                None
                if method_raw["rect_keep_ratio"] is None
                else float(method_raw["rect_keep_ratio"])
            ),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"method: {exc}") from exc
    try:
        stream = StreamConfig(
            seed=int(merged["seed"]),
            num_edits=int(merged["stream"]["num_edits"]),
            batch_size=int(merged["stream"]["batch_size"]),
            collision_rate=float(merged["stream"]["collision_rate"]),
            conflict_mode=merged["stream"]["conflict_mode"],
            key_scale=float(merged["stream"]["key_scale"]),
            residual_range=tuple(float(v) for v in merged["stream"]["residual_range"]),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"stream: {exc}") from exc
    dims = merged["dims"]
    knowledge = merged["knowledge"]
    return ExperimentConfig(
        stream=stream,
        method=method,
        d_in=int(dims["d_in"]),
        d_out=int(dims["d_out"]),
        n0=int(dims["n0"]),
        metrics_every=int(merged["metrics_every"]),
        holdout=bool(merged["holdout"]),
        gram_normalize=merged["gram_normalize"],
        store_deltas=bool(merged["store_deltas"]),
        efficacy_rel_tol=float(merged["efficacy_rel_tol"]),
        knowledge=knowledge["kind"],
        knowledge_strong_rank=(
            None if knowledge["strong_rank"] is None else int(knowledge["strong_rank"])
        ),
        knowledge_tail_scale=float(knowledge["tail_scale"]),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.stream.seed,
        "dims": {"d_in": cfg.d_in, "d_out": cfg.d_out, "n0": cfg.n0},
        "stream": {
            "num_edits": cfg.stream.num_edits,
            "batch_size": cfg.stream.batch_size,
            "collision_rate": cfg.stream.collision_rate,
            "conflict_mode": cfg.stream.conflict_mode,
            "key_scale": cfg.stream.key_scale,
            "residual_range": list(cfg.stream.residual_range),
        },
        "method": {
            "kind": cfg.method.kind,
            "lambda1": cfg.method.lambda1,
            "lambda2": cfg.method.lambda2,
            "epsilon": cfg.method.epsilon,
            "tau": cfg.method.tau,
            "rect_keep_ratio": cfg.method.rect_keep_ratio,
        },
        "knowledge": {
            "kind": cfg.knowledge,
            "strong_rank": cfg.knowledge_strong_rank,
            "tail_scale": cfg.knowledge_tail_scale,
        },
        "metrics_every": cfg.metrics_every,
        "holdout": cfg.holdout,
        "gram_normalize": cfg.gram_normalize,
        "store_deltas": cfg.store_deltas,
        "efficacy_rel_tol": cfg.efficacy_rel_tol,
    }


def parse_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return config_from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_trace_csv(trace: EditTrace, path: Path) -> None:
    """Serialize records to CSV; aborted runs carry an extra aborted_at column."""
    header = TRACE_HEADER
    if trace.aborted:
        header += ",aborted_at"
    lines = [header]
    for rec in trace.records:
        row = ",".join(
            [
                str(rec.step),
                rec.method,
                _fmt(rec.delta_norm),
                _fmt(rec.cum_delta_norm),
                _fmt(rec.leakage),
                _fmt(rec.efficacy_proxy),
                _fmt(rec.residual_norm),
                "true" if rec.refresh_event else "false",
            ]
        )
        if trace.aborted:
            row += f",{trace.aborted_at}"
        lines.append(row)
    path.write_text("\n".join(lines) + "\n")


def write_manifest(cfg: ExperimentConfig, out_dir: Path, outputs: list[Path]) -> None:
    manifest = {
        "config_hash": config_hash(cfg),
        "tool_version": __version__,
        "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cmd_run(
    config_path: str,
    out_dir: str,
    seed: int | None = None,
    metrics_every: int | None = None,
) -> int:
    cfg = parse_config(config_path)
    if seed is not None:
        cfg = replace(cfg, stream=replace(cfg.stream, seed=seed))
    if metrics_every is not None:
        cfg = replace(cfg, metrics_every=metrics_every)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.csv"
    try:
        trace = run_sequence(cfg)
    except NumericalError as exc:
        write_manifest(cfg, out, [])
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_trace_csv(trace, trace_path)
    write_manifest(cfg, out, [trace_path])
    if trace.aborted:
        print(f"run aborted at step {trace.aborted_at}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def _suite_oracle(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    errors = []
    for i in range(100):
        d_in = int(rng.integers(2, 33))
        d_out = int(rng.integers(1, 17))
        n0 = d_in + int(rng.integers(1, 20))
        lam = float(rng.choice([1.0, 100.0, 15000.0]))
        kb, mem = synth_knowledge(seed * 1000 + i, d_in, d_out, n0)
        keys = rng.standard_normal((d_in, 1))
        keys /= np.linalg.norm(keys)
        targets = mem.weights @ keys + 0.3 * rng.standard_normal((d_out, 1))
        req = EditRequest(step_index=1, keys=keys, targets=targets)
        prod = memit_update(mem, kb, req, lam).delta
        orac = oracle_solve(mem, kb, req, lam)
        errors.append(
            float(np.linalg.norm(prod - orac) / max(np.linalg.norm(orac), 1e-300))
        )
    max_err = max(errors)
    return {
        "checks": [{"name": "oracle_agreement", "passed": max_err <= 1e-8,
                    "max_relative_error": max_err, "instances": len(errors)}],
        "passed": max_err <= 1e-8,
    }


def _suite_projector(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    checks = []
    ok = True
    for i in range(50):
        d = int(rng.integers(8, 48))
        null_dim = max(1, d // 4)
        r = d - null_dim
        b = rng.standard_normal((d, r))
        c = b @ b.T
        # request exactly the true null fraction so the threshold lands in the
        # spectral gap, not inside the noise floor of the zero eigenvalues
        eps = threshold_for_null_fraction(c, (null_dim - 0.5) / d)
        proj = build_projector(c, eps, step=1)
        sym = np.linalg.norm(proj.p - proj.p.T) <= 1e-10 * max(np.linalg.norm(proj.p), 1.0)
        idem = np.linalg.norm(proj.p @ proj.p - proj.p) <= 1e-8 * max(
            1.0, np.linalg.norm(proj.p)
        )
        eigvals = np.maximum(np.linalg.eigvalsh((c + c.T) / 2), 0.0)
        count_ok = proj.retained_dim == int((eigvals < eps).sum())
        # exact annihilation: rank-deficient C with nonzero spectrum above eps
        nonzero = np.sort(eigvals)[d - r :]
        annihilate = True
        if nonzero.min() > eps:
            p_exact = build_projector(c, min(eps, nonzero.min() / 2), step=1)
            annihilate = np.linalg.norm(p_exact.p @ b) <= 1e-8 * np.linalg.norm(b)
        ok = bool(ok and sym and idem and count_ok and annihilate)
        if not (sym and idem and count_ok and annihilate):
            checks.append({"name": f"instance_{i}", "passed": False})
    checks.insert(0, {"name": "projector_invariants", "passed": ok, "instances": 50})
    return {"checks": checks, "passed": ok}


def _suite_theorem1(seed: int) -> dict:
    base = ExperimentConfig(
        stream=StreamConfig(seed=seed, num_edits=100, conflict_mode="aligned"),
        method=MethodSpec(kind="memit_h", lambda1=100.0),
        d_in=64, d_out=32, n0=200,
        metrics_every=10,
    )
    report = verify_theorem1(base, seeds=list(range(seed, seed + 20)))
    checks = [
        {
            "seed": r.seed,
            "conclusive": r.conclusive,
            "passed": r.prefix_ok if r.conclusive else None,
            "status": ("pass" if r.passed else "fail") if r.conclusive else "inconclusive",
            "min_margin": r.min_margin,
            "final_cum_aware": r.final_cum_aware,
            "final_cum_agnostic": r.final_cum_agnostic,
        }
        for r in report.results
    ]
    return {
        "checks": checks,
        "num_conclusive": report.num_conclusive,
        "passed": report.all_conclusive_passed,
    }


def _suite_leakage(seed: int) -> dict:
    from .projector import gram_init

    checks = []
    ok = True
    for s in range(seed, seed + 5):
        kb, mem = synth_knowledge(s, 64, 32, 200)
        eps = threshold_for_null_fraction(gram_init(kb, 1.0).current(), 0.25)
        cfg = ExperimentConfig(
            stream=StreamConfig(seed=s, num_edits=500, conflict_mode="aligned"),
            method=MethodSpec(kind="alphaedit", lambda2=1000.0, epsilon=eps, tau=1000),
            metrics_every=10,
        )
        trace = run_sequence(cfg, kb=kb, mem=mem)
        series = [r.leakage for r in trace.records]
        growing = series[-1] > 100.0 * max(series[0], 1e-300)
        nonzero = series[0] > 0.0
        checks.append(
            {"seed": s, "passed": growing and nonzero,
             "leakage_first": series[0], "leakage_final": series[-1]}
        )
        ok = ok and growing and nonzero
    return {"checks": checks, "passed": ok}


def cmd_verify(suite: str, out_dir: str, seed: int = 0) -> int:
    if suite not in VERIFY_SUITES:
        print(f"unknown suite {suite!r}; choose from {VERIFY_SUITES}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = {
        "oracle": _suite_oracle,
        "projector": _suite_projector,
        "theorem1": _suite_theorem1,
        "leakage": _suite_leakage,
    }[suite]
    report = runner(seed)
    report["suite"] = suite
    (out / f"verify_{suite}.json").write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def cmd_sweep(
    config_path: str, param: str, values_csv: str, out_dir: str,
    seed: int | None = None,
) -> int:
    cfg = parse_config(config_path)
    if seed is not None:
        cfg = replace(cfg, stream=replace(cfg.stream, seed=seed))
    try:
        values = [float(v) for v in values_csv.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigurationError(f"bad sweep values {values_csv!r}: {exc}") from exc
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    max_workers = int(os.environ.get("NULLEDIT_THREADS", "1"))
    max_workers = max(1, min(max_workers, len(values)))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            points = list(pool.map(lambda v: sweep(cfg, param, [v])[0], values))
    else:
        points = sweep(cfg, param, values)

    lines = ["value,final_efficacy,final_leakage,final_cum_norm"]
    for p in points:
        lines.append(
            ",".join([_fmt(p.value), _fmt(p.final_efficacy), _fmt(p.final_leakage),
                      _fmt(p.final_cum_norm)])
        )
    sweep_path = out / "sweep.csv"
    sweep_path.write_text("\n".join(lines) + "\n")
    write_manifest(cfg, out, [sweep_path])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nulledit",
        description="Sequential model-editing laboratory on synthetic linear memories.",
        epilog=(
            "exit codes: 0 success, 2 configuration error, 3 aborted run, "
            "4 numerical error. NULLEDIT_THREADS caps sweep parallelism."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one sequential editing run")
    p_run.add_argument("--config", required=True, help="JSON config path")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="seed override")
    p_run.add_argument("--metrics-every", type=int, default=None, help="cadence override")

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("--suite", required=True, choices=VERIFY_SUITES)
    p_verify.add_argument("--out", required=True, help="output directory")
    p_verify.add_argument("--seed", type=int, default=0, help="base seed")

    p_sweep = sub.add_parser("sweep", help="sweep one hyperparameter")
    p_sweep.add_argument("--config", required=True, help="JSON config path")
    p_sweep.add_argument("--param", required=True, choices=("lambda1", "tau", "keep_ratio"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.add_argument("--seed", type=int, default=None, help="seed override")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            code = cmd_run(args.config, args.out, args.seed, args.metrics_every)
        elif args.command == "verify":
            code = cmd_verify(args.suite, args.out, args.seed)
        else:
            code = cmd_sweep(args.config, args.param, args.values, args.out, args.seed)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except NulleditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
