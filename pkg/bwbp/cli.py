#!/usr/bin/env python3
"""
Batch front-end of bwbp.

    bwbp <subcommand> --model <path> [--seed u64] [--reps N] [--horizon N]
         [--zcap N] [--n N] [--cap N] [--workers N] [--out prefix]
         [--format json|csv|both] [--log-level LEVEL]

Every job writes `<out>.report.json`; tabular results also go to
`<out>.data.csv` unless --format json. One summary line is printed on
stdout. Exit codes: 0 success, 1 structural error, 2 assumption violation,
3 capacity or escaped-mass refusal.
"""

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd
from loguru import logger

from bwbp import __version__
from bwbp.criteria import classify
from bwbp.estimate import decay_rate, dichotomy_scan, extinction_from_records, outcome_frame, survival_growth
from bwbp.model import describe, validate
from bwbp.modelfile import load_model
from bwbp.simulate import records_to_frame, run_replicates, summarize_outcomes
from bwbp.spine import check_prop1
from bwbp.utils.errors import AssumptionViolationError, BwbpError
from bwbp.utils.utils import file_sha256, get_setting, log_dataframe_summary, setup_logging, write_csv, write_json

SUBCOMMANDS = ("validate", "classify", "simulate", "prop1", "extinction", "decay", "dichotomy", "growth")
FORMATS = ("json", "csv", "both")
DEFAULT_SEED = int(get_setting("DEFAULT_SEED", 0x5EED))
RESULTS_DIR = Path(get_setting("RESULTS_DIR", "results"))
DEFAULT_N = {
    "classify": int(get_setting("DEFAULT_N", 3)),
    "prop1": int(get_setting("DEFAULT_N", 3)),
    "decay": int(get_setting("DEFAULT_DECAY_N", 12)),
}


@dataclass
class JobConfig:
    """One CLI invocation. Optional fields fall back to config.json defaults."""

    model_path: Path
    subcommand: str
    seed: int = DEFAULT_SEED
    reps: Optional[int] = None
    horizon: int = int(get_setting("DEFAULT_HORIZON", 200))
    z_cap: int = int(get_setting("DEFAULT_ZCAP", 10**6))
    n: Optional[int] = None
    cap: int = int(get_setting("DEFAULT_CAP", 256))
    workers: int = int(get_setting("DEFAULT_WORKERS", 1))
    out: Optional[Path] = None
    format: str = "both"
    band: int = int(get_setting("DEFAULT_BAND", 10))
    horizons: List[int] = field(default_factory=lambda: list(get_setting("DICHOTOMY_HORIZONS", [10, 50, 100])))
    log_level: Optional[str] = None

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        if self.format not in FORMATS:
            raise ValueError(f"--format must be one of {FORMATS}")
        self.model_path = Path(self.model_path)
        if self.seed < 0 or self.seed >= 1 << 64:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        if self.reps is not None and self.reps < 1:
            raise ValueError("--reps must be >= 1")
        if self.workers < 1:
            raise ValueError("--workers must be >= 1")
        if self.out is None:
            self.out = RESULTS_DIR / f"{self.model_path.stem}_{self.subcommand}"
        self.out = Path(self.out)

    @property
    def mc_reps(self) -> int:
        return self.reps if self.reps is not None else int(get_setting("DEFAULT_REPS", 10_000))

    @property
    def n_value(self) -> int:
        return self.n if self.n is not None else DEFAULT_N.get(self.subcommand, 3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bwbp", description="Branching-within-branching processes: simulation and extinction criteria")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--model", required=True, help="Fichier modèle JSON")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Graine maître (u64)")
    parser.add_argument("--reps", type=int, help="Nombre de réplicats Monte-Carlo (prop1: active le côté arbre MC)")
    parser.add_argument("--horizon", type=int, default=JobConfig.horizon)
    parser.add_argument("--zcap", type=int, default=JobConfig.z_cap, help="Seuil d'explosion sur Z_n")
    parser.add_argument("--n", type=int, help="Horizon exact (classify, prop1, decay)")
    parser.add_argument("--cap", type=int, default=JobConfig.cap, help="Borne d'état des calculs exacts")
    parser.add_argument("--workers", type=int, default=JobConfig.workers)
    parser.add_argument("--out", help="Préfixe des fichiers de sortie")
    parser.add_argument("--format", choices=FORMATS, default="both")
    parser.add_argument("--band", type=int, default=JobConfig.band, help="Borne B de la bande [1, B] (dichotomy)")
    parser.add_argument("--horizons", type=int, nargs="+", help="Horizons de dichotomy")
    parser.add_argument("--log-level", dest="log_level", help="Niveau loguru (sinon BWBP_LOG_LEVEL ou config.json)")
    return parser


def parse_args(argv: Optional[List[str]] = None) -> JobConfig:
    args = build_parser().parse_args(argv)
    cfg = JobConfig(
        model_path=Path(args.model),
        subcommand=args.subcommand,
        seed=args.seed,
        reps=args.reps,
        horizon=args.horizon,
        z_cap=args.zcap,
        n=args.n,
        cap=args.cap,
        workers=args.workers,
        out=Path(args.out) if args.out else None,
        format=args.format,
        band=args.band,
        log_level=args.log_level,
    )
    if args.horizons:
        cfg.horizons = list(args.horizons)
    return cfg


def print_banner(cfg: JobConfig) -> None:
    print("=" * 80, file=sys.stderr)
    print(f"   🧫 BWBP {__version__} : {cfg.subcommand}", file=sys.stderr)
    print("=" * 80, file=sys.stderr)
    print(f"📄 model   : {cfg.model_path}", file=sys.stderr)
    print(f"🎲 seed    : {cfg.seed}", file=sys.stderr)
    print(f"⚙️  workers : {cfg.workers}", file=sys.stderr)
    print(f"💾 out     : {cfg.out}", file=sys.stderr)
    print("=" * 80 + "\n", file=sys.stderr)


def _dispatch(cfg: JobConfig, spec) -> Tuple[dict, Optional[pd.DataFrame], str, int]:
    """Runs the subcommand: (payload, table or None, stdout line, exit code)."""
    sub = cfg.subcommand
    if sub == "validate":
        describe(spec)
        report = validate(spec)
        status = 0 if report.all_hold else 2
        line = "assumptions=ok" if report.all_hold else "assumptions=violated " + "; ".join(report.violations)
        return {"assumptions": report}, None, line, status

    if sub == "classify":
        report = classify(spec, profile_n=cfg.n_value, cap=cfg.cap)
        return {"criterion": report}, None, report.summary(), 0

    if sub == "simulate":
        records = run_replicates(spec, [1], cfg.horizon, cfg.z_cap, cfg.mc_reps, cfg.seed, cfg.workers)
        counts = summarize_outcomes(records)
        payload = {"outcomes": counts, "reps": cfg.mc_reps, "horizon": cfg.horizon, "z_cap": cfg.z_cap}
        line = " ".join(f"{k}={v}" for k, v in counts.items())
        return payload, records_to_frame(records, include_hist=True), line, 0

    if sub == "prop1":
        table = check_prop1(spec, cfg.n_value, mc_reps=cfg.reps or 0, seed=cfg.seed, cap=cfg.cap, workers=cfg.workers)
        line = f"n={table.n} max_diff={table.max_diff:.3g} aggregate={table.aggregate_lhs:.6g}/{table.aggregate_rhs:.6g}"
        return {"prop1": table}, table.to_frame(), line, 0

    if sub == "extinction":
        try:
            verdict = classify(spec).verdict.value
        except AssumptionViolationError as e:
            logger.warning(f"no verdict attached: {e}")
            verdict = None
        records = run_replicates(spec, [1], cfg.horizon, cfg.z_cap, cfg.mc_reps, cfg.seed, cfg.workers)
        result = extinction_from_records(records, cfg.horizon, cfg.z_cap, verdict)
        return {"extinction": result}, outcome_frame(records), result.summary(), 0

    if sub == "decay":
        fit = decay_rate(spec, cfg.n_value, cfg.cap)
        last = fit.rows[-1].ratio if fit.rows else float("nan")
        line = f"last_ratio={last:.6g} predicted_limit={fit.predicted_limit:.6g} kappa={fit.kappa_used.kappa:g}"
        return {"decay": fit}, fit.to_frame(), line, 0

    if sub == "dichotomy":
        scan = dichotomy_scan(spec, cfg.horizons, cfg.band, cfg.mc_reps, cfg.seed, z_cap=cfg.z_cap, workers=cfg.workers)
        line = " ".join(f"n{r.horizon}={r.fraction:.4g}" for r in scan.rows) + f" nonincreasing={scan.nonincreasing}"
        return {"dichotomy": scan}, scan.to_frame(), line, 0

    summary = survival_growth(spec, cfg.horizon, cfg.z_cap, cfg.mc_reps, cfg.seed, workers=cfg.workers)
    if summary.degenerate:
        line = f"survivors={summary.survivors} tstar_always_one={summary.tstar_always_one}"
    elif summary.insufficient:
        line = f"survivors={summary.survivors} insufficient surviving paths"
    else:
        line = f"survivors={summary.survivors} " + " ".join(f"P(T*>{t})={f:.3g}" for t, f in summary.fractions.items())
    return {"growth": summary}, summary.to_frame(), line, 0


def run_job(cfg: JobConfig) -> int:
    """
    Runs one job and writes its artifacts.

    Returns:
        Code de sortie (0, 1, 2 ou 3)
    """
    header = {
        "subcommand": cfg.subcommand,
        "model": cfg.model_path.name,
        "seed": cfg.seed,
        "version": __version__,
    }
    report_path = cfg.out.with_name(cfg.out.name + ".report.json")
    data_path = cfg.out.with_name(cfg.out.name + ".data.csv")
    try:
        header["model_sha256"] = file_sha256(cfg.model_path)
        spec = load_model(cfg.model_path)
        header["label"] = spec.label
        payload, table, line, status = _dispatch(cfg, spec)
    except BwbpError as e:
        logger.error(f"❌ {e}")
        error = {"error": str(e), "module": e.module, "exit_code": e.exit_code}
        if isinstance(e, AssumptionViolationError) and e.report is not None:
            error["assumptions"] = e.report
        write_json({**header, **error}, report_path)
        print(f"error={type(e).__name__} {e}")
        return e.exit_code
    except (OSError, ValueError) as e:
        logger.error(f"❌ [cli] {e}")
        write_json({**header, "error": f"[cli] {e}", "module": "cli", "exit_code": 1}, report_path)
        print(f"error={type(e).__name__} {e}")
        return 1

    write_json({**header, **payload}, report_path)
    if table is not None and cfg.format in ("csv", "both"):
        log_dataframe_summary(table, data_path.name)
        write_csv(table, data_path)
    print(line)
    logger.success(f"✅ {cfg.subcommand} terminé → {report_path}")
    return status


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = parse_args(argv)
    except ValueError as e:
        setup_logging()
        logger.error(f"❌ [cli] {e}")
        return 1
    setup_logging(cfg.log_level)
    print_banner(cfg)
    return run_job(cfg)


if __name__ == "__main__":
    sys.exit(main())
