#!/usr/bin/env python3
"""
Estimators that confront the classifier with simulation.

- extinction_prob : Monte-Carlo extinction frequency with a Wilson 95% interval
- decay_rate      : exact E T_n^* = nu^n P(Z'_n > 0) and its successive ratios
- dichotomy_scan  : share of paths with Z_n in a bounded band, per horizon
- survival_growth : contaminated-cell counts on surviving paths

Cap hits count as survival. Paths still alive at the horizon also count as
survival but are reported apart (censored_fraction), so extinction
estimates are lower bounds.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger
from scipy import stats

from bwbp.criteria import KappaClass, inf_theta, kappa_class, mean_log
from bwbp.model import ModelSpec, is_degenerate_sharing
from bwbp.simulate import OutcomeKind, RunRecord, run_replicates
from bwbp.spine import abpre_env, abpre_exact
from bwbp.utils.errors import AssumptionViolationError
from bwbp.utils.utils import get_setting

CONFIDENCE = 0.95
DEFAULT_SEED = int(get_setting("DEFAULT_SEED", 0x5EED))
DEFAULT_CAP = int(get_setting("DEFAULT_CAP", 256))
GROWTH_LEVELS = tuple(get_setting("GROWTH_LEVELS", [1, 2, 5, 10]))
MIN_SURVIVING_PATHS = int(get_setting("MIN_SURVIVING_PATHS", 30))
TAIL_WINDOW = 10
EARLY_GENERATION = 5


def wilson_interval(successes: int, trials: int, confidence: float = CONFIDENCE):
    """Wilson score interval for a binomial proportion (scipy's binomtest)."""
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    point = successes / trials
    return min(ci.low, point), max(ci.high, point)


@dataclass
class EstimateResult:
    point: float
    ci_low: float
    ci_high: float
    reps: int
    horizon: int
    z_cap: int
    censored_fraction: float
    counts: Dict[str, int] = field(default_factory=dict)
    verdict: Optional[str] = None

    @property
    def survival_upper(self) -> float:
        """Upper bound of the survival probability (1 - lower extinction bound)."""
        return 1.0 - self.ci_low

    @property
    def survival_lower(self) -> float:
        return 1.0 - self.ci_high

    def summary(self) -> str:
        return (
            f"extinction={self.point:.6g} ci=[{self.ci_low:.6g},{self.ci_high:.6g}] "
            f"censored={self.censored_fraction:.3g} reps={self.reps}"
        )

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "confidence": CONFIDENCE,
            "reps": self.reps,
            "horizon": self.horizon,
            "z_cap": self.z_cap,
            "censored_fraction": self.censored_fraction,
            "counts": self.counts,
            "verdict": self.verdict,
        }


def extinction_from_records(
    records: Sequence[RunRecord], horizon: int, z_cap: int, verdict: Optional[str] = None
) -> EstimateResult:
    reps = len(records)
    if reps == 0:
        raise ValueError("no replicate to estimate from")
    counts = {kind.value: 0 for kind in OutcomeKind}
    for rec in records:
        counts[rec.outcome.kind.value] += 1
    extinct = counts[OutcomeKind.EXTINCT.value]
    censored = counts[OutcomeKind.ALIVE_AT_HORIZON.value] / reps
    low, high = wilson_interval(extinct, reps)
    result = EstimateResult(extinct / reps, low, high, reps, horizon, z_cap, censored, counts, verdict)
    if censored > 0:
        logger.warning(f"⚠️ {censored:.3g} of the replicates neither died nor hit the cap by n={horizon}")
    return result


def extinction_prob(
    spec: ModelSpec,
    z0: int = 1,
    horizon: int = 200,
    z_cap: int = 10**6,
    reps: int = 10_000,
    seed: int = DEFAULT_SEED,
    workers: int = 1,
    verdict: Optional[str] = None,
) -> EstimateResult:
    """
    Fraction of replicates that die out, with a Wilson 95% interval.

    Args:
        spec: Modèle
        z0: Parasites de la cellule ancêtre
        horizon: Dernière génération simulée
        z_cap: Seuil d'explosion (compté comme survie)
        reps: Nombre de réplicats (>= 1)
        seed: Graine maître
        workers: Processus parallèles
        verdict: Verdict du classifieur, recopié pour contexte
    """
    if reps < 1:
        raise ValueError("extinction_prob needs reps >= 1")
    records = run_replicates(spec, [z0], horizon, z_cap, reps, seed, workers)
    result = extinction_from_records(records, horizon, z_cap, verdict)
    logger.info(f"🎯 P(extinction) {spec.label}: {result.summary()}")
    return result


def outcome_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    """One row per replicate: outcome, stopping generation, final Z_n and T_n^*."""
    return pd.DataFrame(
        [
            {
                "replicate": rec.replicate_index,
                "outcome": rec.outcome.kind.value,
                "generation": rec.rows[-1].n,
                "Z_n": rec.rows[-1].z,
                "T_star": rec.rows[-1].t_star,
            }
            for rec in records
        ]
    )


@dataclass(frozen=True)
class DecayRow:
    n: int
    e_tstar: float
    ratio: float


@dataclass
class DecayFit:
    rows: List[DecayRow]
    predicted_limit: float
    kappa_used: Optional[KappaClass]
    escaped: float = 0.0

    @property
    def ratios(self) -> List[float]:
        return [r.ratio for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=["n", "e_tstar", "ratio"])

    def to_dict(self) -> dict:
        return {
            "rows": [r.__dict__ for r in self.rows],
            "predicted_limit": self.predicted_limit,
            "kappa_class": self.kappa_used,
            "kappa": self.kappa_used.kappa if self.kappa_used is not None else None,
            "escaped": self.escaped,
        }


def decay_rate(spec: ModelSpec, n_max: int, cap: int = DEFAULT_CAP) -> DecayFit:
    """
    E T_n^* for n = 1..n_max through P(Z'_n > 0) (exact ABPRE law), with the
    ratios E T_n^* / E T_{n-1}^* and their predicted limit nu * inf_theta.

    Raises:
        AssumptionViolationError: si l'ABPRE n'est pas sous-critique
        EscapedMassError: propagée depuis abpre_exact
    """
    env = abpre_env(spec)
    if not mean_log(env) < 0.0:
        raise AssumptionViolationError("decay_rate needs a subcritical ABPRE (E log g'(1) < 0)", "estimate")
    dist = abpre_exact(env, 1, n_max, cap)
    nu = env.nu
    values = [nu**m * float(s) for m, s in enumerate(dist.survival)]
    rows = []
    for m in range(1, n_max + 1):
        if values[m - 1] <= 0.0 or values[m] <= 0.0:
            logger.warning(f"E T_n^* vanishes at n={m}; ratios stop there")
            break
        rows.append(DecayRow(m, values[m], values[m] / values[m - 1]))
    fit = DecayFit(rows, nu * inf_theta(env).value, kappa_class(env), float(dist.escaped[-1]))
    logger.info(
        f"📉 decay {spec.label}: last ratio {fit.rows[-1].ratio if fit.rows else float('nan'):.6g} "
        f"vs predicted limit {fit.predicted_limit:.6g} ({fit.kappa_used.value})"
    )
    return fit


@dataclass(frozen=True)
class DichotomyRow:
    horizon: int
    fraction: float
    se: float
    in_band: int


@dataclass
class DichotomyScan:
    """Share of replicates with 1 <= Z_n <= band at each horizon."""

    rows: List[DichotomyRow]
    band: int
    reps: int

    @property
    def nonincreasing(self) -> bool:
        """Each fraction at most the previous one plus 2 standard errors of the difference."""
        return all(
            b.fraction <= a.fraction + 2.0 * math.hypot(a.se, b.se) for a, b in zip(self.rows, self.rows[1:])
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=["horizon", "fraction", "se", "in_band"])

    def to_dict(self) -> dict:
        return {
            "band": [1, self.band],
            "reps": self.reps,
            "rows": [r.__dict__ for r in self.rows],
            "nonincreasing": self.nonincreasing,
        }


def _z_at(rec: RunRecord, n: int) -> Optional[int]:
    """Z_n of a record, 0 after extinction, None after a cap hit."""
    if n < len(rec.rows):
        return rec.rows[n].z
    return 0 if rec.extinct else None


def dichotomy_scan(
    spec: ModelSpec,
    horizons: Sequence[int],
    band: int,
    reps: int,
    seed: int = DEFAULT_SEED,
    z0: int = 1,
    z_cap: int = 10**6,
    workers: int = 1,
) -> DichotomyScan:
    """
    Fraction of replicates with Z_n in [1, band] for each horizon n.

    Paths stopped by the explosion cap (z_cap > band) are counted outside
    the band at every later horizon.
    """
    if band < 1:
        raise ValueError("dichotomy_scan needs band >= 1")
    if not horizons:
        raise ValueError("dichotomy_scan needs at least one horizon")
    horizons = sorted(int(h) for h in horizons)
    z_cap = max(z_cap, band + 1)
    records = run_replicates(spec, [z0], horizons[-1], z_cap, reps, seed, workers)
    rows = []
    for h in horizons:
        hits = 0
        for rec in records:
            z = _z_at(rec, h)
            if z is not None and 1 <= z <= band:
                hits += 1
        f = hits / reps
        rows.append(DichotomyRow(h, f, math.sqrt(f * (1.0 - f) / reps), hits))
    scan = DichotomyScan(rows, band, reps)
    logger.info(f"⚖️ dichotomy {spec.label}: " + ", ".join(f"n={r.horizon}: {r.fraction:.4g}" for r in rows))
    return scan


@dataclass
class GrowthSummary:
    """
    Contaminated-cell counts on non-extinct paths.

    Non-degenerate sharing: share of survivors (and of cap hits) whose final
    T_n^* exceeds each level. Degenerate sharing: whether T_n^* = 1 along
    every surviving path.
    """

    degenerate: bool
    reps: int
    horizon: int
    z_cap: int
    survivors: int
    cap_hits: int
    insufficient: bool = False
    fractions: Dict[int, float] = field(default_factory=dict)
    cap_hit_fractions: Dict[int, float] = field(default_factory=dict)
    tail_growth_fraction: Optional[float] = None
    tstar_always_one: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "degenerate": self.degenerate,
            "reps": self.reps,
            "horizon": self.horizon,
            "z_cap": self.z_cap,
            "survivors": self.survivors,
            "cap_hits": self.cap_hits,
            "insufficient_surviving_paths": self.insufficient,
            "fractions": {str(t): f for t, f in self.fractions.items()},
            "cap_hit_fractions": {str(t): f for t, f in self.cap_hit_fractions.items()},
            "tail_growth_fraction": self.tail_growth_fraction,
            "tstar_always_one": self.tstar_always_one,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"level": t, "fraction": self.fractions.get(t), "cap_hit_fraction": self.cap_hit_fractions.get(t)}
                for t in sorted(set(self.fractions) | set(self.cap_hit_fractions))
            ],
            columns=["level", "fraction", "cap_hit_fraction"],
        )


def _share_above(paths: Sequence[RunRecord], level: int) -> float:
    return sum(1 for rec in paths if rec.rows[-1].t_star > level) / len(paths)


def _tail_grows(rec: RunRecord) -> bool:
    """min of T_n^* over the last generations exceeds its value at n = 5."""
    if len(rec.rows) <= EARLY_GENERATION + TAIL_WINDOW:
        return False
    tail = min(row.t_star for row in rec.rows[-TAIL_WINDOW:])
    return tail > rec.rows[EARLY_GENERATION].t_star


def survival_growth(
    spec: ModelSpec,
    horizon: int,
    z_cap: int,
    reps: int,
    seed: int = DEFAULT_SEED,
    levels: Sequence[int] = GROWTH_LEVELS,
    z0: int = 1,
    workers: int = 1,
) -> GrowthSummary:
    records = run_replicates(spec, [z0], horizon, z_cap, reps, seed, workers)
    survivors = [rec for rec in records if not rec.extinct]
    cap_hits = [rec for rec in survivors if rec.outcome.kind is OutcomeKind.EXPLOSION_CAP_HIT]
    degenerate = is_degenerate_sharing(spec)
    summary = GrowthSummary(degenerate, reps, horizon, z_cap, len(survivors), len(cap_hits))

    if degenerate:
        summary.tstar_always_one = all(row.t_star == 1 for rec in survivors for row in rec.rows)
        logger.info(f"🌱 growth {spec.label} (dégénéré): T_n^* = 1 on all survivors: {summary.tstar_always_one}")
        return summary

    if len(survivors) < MIN_SURVIVING_PATHS:
        summary.insufficient = True
        logger.warning(
            f"⚠️ {spec.label}: only {len(survivors)} surviving paths (< {MIN_SURVIVING_PATHS}), no fraction reported"
        )
        return summary
    summary.fractions = {int(t): _share_above(survivors, t) for t in levels}
    if cap_hits:
        summary.cap_hit_fractions = {int(t): _share_above(cap_hits, t) for t in levels}
        summary.tail_growth_fraction = sum(_tail_grows(rec) for rec in cap_hits) / len(cap_hits)
    logger.info(
        f"🌱 growth {spec.label}: {len(survivors)} survivors, "
        + ", ".join(f"P(T* > {t})={f:.3g}" for t, f in summary.fractions.items())
    )
    return summary
