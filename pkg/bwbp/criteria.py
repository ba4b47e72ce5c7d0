#!/usr/bin/env python3
"""
Extinction criteria of the BwBP.

Everything is computed exactly from the finite-support laws: the ABPRE
functionals E log g'(1), E g'(1) log g'(1), the convex function
theta -> E g'(1)^theta and its infimum on [0, 1], then the verdict.

Degenerate sharing (all parasites of a cell go to one daughter) makes the
parasite count itself a BPRE driven by N; the verdict then only needs
E log E(Z_1|N) and whether P(Z_1 > 0|N) can vanish. Otherwise

    extinction a.s.  <=>  nu <= 1, or nu > 1, E log g'(1) < 0 and
                          inf_theta E g'(1)^theta <= 1/nu.

Comparisons on these boundaries use TOLERANCE and are listed in the report.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from loguru import logger

from bwbp.model import TOLERANCE, ModelSpec, moments, validate
from bwbp.spine import AbpreSpec, abpre_env, abpre_exact
from bwbp.utils.errors import AssumptionViolationError, EscapedMassError
from bwbp.utils.utils import compensated_sum, get_setting

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
THETA_FLOOR = 1e-12
DEFAULT_CAP = int(get_setting("DEFAULT_CAP", 256))


class Verdict(str, enum.Enum):
    ALMOST_SURE_EXTINCTION = "AlmostSureExtinction"
    POSITIVE_SURVIVAL = "PositiveSurvival"


class AbpreClass(str, enum.Enum):
    SUPERCRITICAL = "Supercritical"
    CRITICAL = "Critical"
    SUBCRITICAL = "Subcritical"


class KappaClass(str, enum.Enum):
    STRONGLY = "Strongly"
    INTERMEDIATE = "Intermediate"
    WEAKLY = "Weakly"

    @property
    def kappa(self) -> float:
        return {"Strongly": 0.0, "Intermediate": 0.5, "Weakly": 1.5}[self.value]


class ThetaInfimum(NamedTuple):
    arg: float
    value: float


def mean_log(env: AbpreSpec) -> float:
    """E log g'(1); -inf as soon as a positive-weight environment has mean 0."""
    terms = []
    for e in env:
        if e.weight <= 0.0:
            continue
        if e.mean <= 0.0:
            return -math.inf
        terms.append(e.weight * math.log(e.mean))
    return compensated_sum(terms)


def xlogx(env: AbpreSpec) -> float:
    """E g'(1) log g'(1) with 0 log 0 = 0."""
    return compensated_sum(e.weight * e.mean * math.log(e.mean) for e in env if e.mean > 0.0)


def mean_offspring(env: AbpreSpec) -> float:
    """E g'(1), equal to gamma / nu."""
    return compensated_sum(e.weight * e.mean for e in env)


def theta_objective(env: AbpreSpec, theta: float) -> float:
    """
    E g'(1)^theta for theta in [0, 1], with 0^theta = 0 for theta > 0 and 0^0 = 1.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    if theta == 0.0:
        return compensated_sum(e.weight for e in env)
    return compensated_sum(e.weight * e.mean**theta for e in env if e.mean > 0.0)


def _golden_section(f, lo: float, hi: float, tol: float) -> Tuple[float, float]:
    """Minimum of a convex f on [lo, hi], bracket shrunk below tol."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = (a + b) / 2.0
    return x, f(x)


def inf_theta(env: AbpreSpec, tol: float = 1e-10) -> ThetaInfimum:
    """
    inf_{0 <= theta <= 1} E g'(1)^theta.

    Golden-section search on [1e-12, 1], then compared with both endpoints
    (the objective may jump at 0 when an environment has mean 0). Ties go
    to the smaller theta.
    """
    objective = lambda t: theta_objective(env, t)
    arg, value = _golden_section(objective, THETA_FLOOR, 1.0, tol)
    candidates = [(objective(0.0), 0.0), (value, arg), (objective(1.0), 1.0)]
    best_value, best_arg = min(candidates)
    return ThetaInfimum(best_arg, best_value)


def abpre_class(mean_log_value: float) -> AbpreClass:
    if mean_log_value > TOLERANCE:
        return AbpreClass.SUPERCRITICAL
    if mean_log_value < -TOLERANCE:
        return AbpreClass.SUBCRITICAL
    return AbpreClass.CRITICAL


def kappa_class(env: AbpreSpec) -> KappaClass:
    """Subregime of a subcritical ABPRE by the sign of E g'(1) log g'(1)."""
    if not mean_log(env) < 0.0:
        raise ValueError("kappa_class needs a subcritical ABPRE (E log g'(1) < 0)")
    value = xlogx(env)
    if abs(value) <= TOLERANCE:
        return KappaClass.INTERMEDIATE
    return KappaClass.STRONGLY if value < 0.0 else KappaClass.WEAKLY


def abpre_survival(env: AbpreSpec) -> bool:
    """
    The ABPRE survives with positive probability iff E log g'(1) > 0 and
    E log^-(1 - g(0)) < inf; with finite supports the latter only fails
    when some positive-weight environment law is the point mass at 0.
    """
    killing = any(e.weight > 0.0 and e.law.support == (0,) for e in env)
    return mean_log(env) > 0.0 and not killing


def asge_constants(env: AbpreSpec) -> Tuple[int, Optional[float]]:
    """
    Constants (C, eps) with P(Z'_1 <= C) = 1 and P(0 < g'(1) < eps) = 0:
    largest atom of any environment law and smallest positive environment mean.
    """
    c = max((e.law.max_value for e in env if e.weight > 0.0), default=0)
    positive = [e.mean for e in env if e.weight > 0.0 and e.mean > 0.0]
    return c, (min(positive) if positive else None)


@dataclass
class TStarProfile:
    """E T_n^* = nu^n P(Z'_n > 0) for n = 0..n_max."""

    values: List[float]
    cap: int
    escaped: float = 0.0

    @property
    def bounded_by_one(self) -> bool:
        return all(v <= 1.0 + TOLERANCE for v in self.values)

    def to_dict(self) -> dict:
        return {"values": self.values, "cap": self.cap, "escaped": self.escaped, "bounded_by_one": self.bounded_by_one}


def tstar_profile(spec: ModelSpec, n_max: int, cap: int = DEFAULT_CAP) -> TStarProfile:
    env = abpre_env(spec)
    dist = abpre_exact(env, 1, n_max, cap)
    values = [float(env.nu**m * s) for m, s in enumerate(dist.survival)]
    return TStarProfile(values, cap, float(dist.escaped[-1]))


def case_a_quantities(spec: ModelSpec) -> Tuple[float, bool]:
    """
    (E log E(Z_1|N), E log^- P(Z_1 > 0|N) = inf) for degenerate sharing.

    N = 0 contributes log 0 to the first and an infinite log^- to the second.
    """
    terms = []
    meanlog_minus_inf = False
    logminus_infinite = False
    for k, pk in spec.offspring.atoms:
        if pk <= 0.0:
            continue
        if k == 0:
            meanlog_minus_inf = logminus_infinite = True
            continue
        total = spec.sharing[k].total_law()
        if total.mean <= 0.0:
            meanlog_minus_inf = True
        else:
            terms.append(pk * math.log(total.mean))
        if total.support == (0,):
            logminus_infinite = True
    meanlog = -math.inf if meanlog_minus_inf else compensated_sum(terms)
    return meanlog, logminus_infinite


@dataclass
class CriterionReport:
    label: str
    nu: float
    gamma: float
    mean_offspring: float
    mean_log_g: float
    xlogx: float
    inf_theta_value: float
    inf_theta_arg: float
    abpre_class: AbpreClass
    kappa_class: Optional[KappaClass]
    degenerate_case: bool
    case_a_meanlog: Optional[float]
    case_a_logminus_infinite: Optional[bool]
    verdict: Verdict
    abpre_survives: bool
    asge_c: int
    asge_eps: Optional[float]
    boundary_flags: List[str] = field(default_factory=list)
    tstar_profile: Optional[TStarProfile] = None

    @property
    def kappa(self) -> Optional[float]:
        return self.kappa_class.kappa if self.kappa_class is not None else None

    def expected_verdict(self) -> Verdict:
        return decide_verdict(
            self.degenerate_case,
            self.nu,
            self.mean_log_g,
            self.inf_theta_value,
            self.case_a_meanlog,
            self.case_a_logminus_infinite,
        )

    @property
    def consistent(self) -> bool:
        """Verdict agrees with the other fields, and kappa is set iff the ABPRE is subcritical."""
        kappa_ok = (self.kappa_class is not None) == (self.abpre_class is AbpreClass.SUBCRITICAL)
        return kappa_ok and self.verdict is self.expected_verdict()

    def summary(self) -> str:
        """One line for stdout."""
        return (
            f"verdict={self.verdict.value} nu={self.nu:g} gamma={self.gamma:g} "
            f"inf_theta={self.inf_theta_value:g}@{self.inf_theta_arg:.1f}"
        )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "nu": self.nu,
            "gamma": self.gamma,
            "mean_offspring": self.mean_offspring,
            "mean_log_g": self.mean_log_g,
            "xlogx": self.xlogx,
            "inf_theta_value": self.inf_theta_value,
            "inf_theta_arg": self.inf_theta_arg,
            "abpre_class": self.abpre_class,
            "kappa_class": self.kappa_class,
            "kappa": self.kappa,
            "degenerate_case": self.degenerate_case,
            "case_a_meanlog": self.case_a_meanlog,
            "case_a_logminus_infinite": self.case_a_logminus_infinite,
            "verdict": self.verdict,
            "abpre_survives": self.abpre_survives,
            "asge_c": self.asge_c,
            "asge_eps": self.asge_eps,
            "boundary_flags": self.boundary_flags,
            "tolerance": TOLERANCE,
            "tstar_profile": self.tstar_profile,
        }


def decide_verdict(
    degenerate: bool,
    nu: float,
    mean_log_value: float,
    inf_value: float,
    case_a_meanlog: Optional[float] = None,
    case_a_logminus_infinite: Optional[bool] = None,
) -> Verdict:
    if degenerate:
        extinct = case_a_meanlog <= TOLERANCE or bool(case_a_logminus_infinite)
    else:
        extinct = nu <= 1.0 + TOLERANCE or (mean_log_value < 0.0 and inf_value <= 1.0 / nu + TOLERANCE)
    return Verdict.ALMOST_SURE_EXTINCTION if extinct else Verdict.POSITIVE_SURVIVAL


def _boundary_flags(report: CriterionReport) -> List[str]:
    flags = []
    if report.degenerate_case:
        if report.case_a_meanlog is not None and abs(report.case_a_meanlog) <= TOLERANCE:
            flags.append("case_a_meanlog_zero")
        return flags
    if abs(report.nu - 1.0) <= TOLERANCE:
        flags.append("nu_equals_one")
    if abs(report.mean_log_g) < TOLERANCE:
        flags.append("mean_log_zero")
    if report.nu > 0 and abs(report.inf_theta_value - 1.0 / report.nu) <= TOLERANCE:
        flags.append("inf_theta_equals_inv_nu")
    if report.abpre_class is AbpreClass.SUBCRITICAL and abs(report.xlogx) <= TOLERANCE:
        flags.append("xlogx_zero")
    return flags


def classify(spec: ModelSpec, profile_n: int = 0, cap: int = DEFAULT_CAP) -> CriterionReport:
    """
    Almost-sure extinction versus positive survival of the parasites.

    Args:
        spec: Modèle à classer
        profile_n: Si > 0, joint au rapport le profil exact E T_n^*, n <= profile_n
        cap: Borne d'état pour ce profil

    Raises:
        AssumptionViolationError: si (A1)-(A3) ne sont pas toutes vérifiées
    """
    assumptions = validate(spec)
    if not assumptions.all_hold:
        raise AssumptionViolationError(
            "classification undefined: " + "; ".join(assumptions.violations), "criteria", assumptions
        )
    nu, gamma, _ = moments(spec)
    env = abpre_env(spec)
    ml = mean_log(env)
    xl = xlogx(env)
    arg, value = inf_theta(env)
    cls = abpre_class(ml)
    kappa = kappa_class(env) if cls is AbpreClass.SUBCRITICAL else None
    degenerate = assumptions.degenerate_sharing
    case_a_meanlog, case_a_infinite = case_a_quantities(spec) if degenerate else (None, None)
    c, eps = asge_constants(env)

    profile = None
    if profile_n > 0:
        try:
            profile = tstar_profile(spec, profile_n, cap)
        except EscapedMassError as e:
            logger.warning(f"E T_n^* profile skipped: {e}")

    report = CriterionReport(
        label=spec.label,
        nu=nu,
        gamma=gamma,
        mean_offspring=mean_offspring(env),
        mean_log_g=ml,
        xlogx=xl,
        inf_theta_value=value,
        inf_theta_arg=arg,
        abpre_class=cls,
        kappa_class=kappa,
        degenerate_case=degenerate,
        case_a_meanlog=case_a_meanlog,
        case_a_logminus_infinite=case_a_infinite,
        verdict=decide_verdict(degenerate, nu, ml, value, case_a_meanlog, case_a_infinite),
        abpre_survives=abpre_survival(env),
        asge_c=c,
        asge_eps=eps,
        tstar_profile=profile,
    )
    report.boundary_flags = _boundary_flags(report)
    for flag in report.boundary_flags:
        logger.warning(f"⚠️ {spec.label}: boundary within tolerance ({flag})")
    if (
        profile is not None
        and not degenerate
        and report.verdict is Verdict.ALMOST_SURE_EXTINCTION
        and not profile.bounded_by_one
    ):
        logger.warning(f"⚠️ {spec.label}: E T_n^* exceeds 1 for some n <= {profile_n} despite the extinction verdict")

    logger.info(
        f"\n🧪 CLASSIFICATION {spec.label or '(sans nom)'}\n"
        f"  • nu, gamma        : {nu:.6g}, {gamma:.6g}\n"
        f"  • E log g'(1)      : {ml:.6g} ({cls.value})\n"
        f"  • inf_theta        : {value:.6g} @ theta={arg:.4g}\n"
        f"  • cas dégénéré     : {degenerate}\n"
        f"  • verdict          : {report.verdict.value}\n"
    )
    return report


def theta_grid(env: AbpreSpec, step: float = 1e-6) -> ThetaInfimum:
    """Brute-force minimum of theta_objective over a regular grid of [0, 1]."""
    thetas = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    values = np.zeros_like(thetas)
    for e in env:
        if e.mean > 0.0:
            values += e.weight * e.mean**thetas
    values[0] = theta_objective(env, 0.0)
    i = int(np.argmin(values))
    return ThetaInfimum(float(thetas[i]), float(values[i]))
