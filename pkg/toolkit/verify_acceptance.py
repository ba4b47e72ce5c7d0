#!/usr/bin/env python3
"""
Script de vérification des critères d'acceptation de bwbp.
Rejoue chaque critère sur la galerie de modèles et affiche PASS/FAIL.

    python toolkit/verify_acceptance.py [--quick] [--workers N]

--quick divise le nombre de réplicats Monte-Carlo par 10.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np
from loguru import logger

PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from bwbp.criteria import Verdict, classify, inf_theta, mean_log, mean_offspring, theta_grid, theta_objective  # noqa: E402
from bwbp.estimate import decay_rate, dichotomy_scan, extinction_prob, survival_growth  # noqa: E402
from bwbp.model import ModelSpec, OffspringLaw, SharingLaw, moments, truncate  # noqa: E402
from bwbp.modelfile import load_model  # noqa: E402
from bwbp.simulate import run_replicates  # noqa: E402
from bwbp.spine import abpre_env, check_prop1  # noqa: E402
from bwbp.utils.sampling import make_rng  # noqa: E402
from bwbp.utils.utils import dumps_report, get_setting  # noqa: E402

# Configuration logging
logger.remove()
logger.add(
    sys.stderr,
    level="INFO",
    format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}",
)

MODELS_DIR = PROJECT_ROOT / get_setting("MODELS_DIR", "models")
GALLERY = ["bs", "ld", "sa_0.2_0.2", "w", "nu1_bs", "nu1_sa", "bs_multinomial", "ld_leftmost", "iid_02"]
SEED = int(get_setting("DEFAULT_SEED", 24301))
SA_ETSTAR_3 = 8 * (1 - 0.9722368)


def model(name: str) -> ModelSpec:
    return load_model(MODELS_DIR / f"{name}.json")


def random_models(count: int, seed: int = 2024):
    """Modèles aléatoires : k <= 4, supports de taille <= 5."""
    rng = make_rng(seed)
    for _ in range(count):
        ks = sorted(set(int(k) for k in rng.integers(1, 5, size=int(rng.integers(1, 4)))))
        weights = rng.random(len(ks)) + 0.05
        sharing = {}
        for k in ks:
            vectors = sorted({tuple(int(x) for x in rng.integers(0, 5, size=k)) for _ in range(int(rng.integers(1, 6)))})
            probs = rng.random(len(vectors)) + 0.05
            sharing[k] = SharingLaw(k, tuple(zip(vectors, probs / probs.sum())))
        yield ModelSpec(OffspringLaw(tuple(zip(ks, weights / weights.sum()))), sharing, "random")


def check_prop1_identity(reps: int, workers: int) -> bool:
    worst = max(check_prop1(model(name), n, cap=64).max_diff for name in ("bs", "sa_0.2_0.2") for n in (1, 2, 3))
    logger.info(f"   max |diff| = {worst:.3g}")
    return worst < 1e-9


def check_mean_identity(reps: int, workers: int) -> bool:
    specs = [model(name) for name in GALLERY] + list(random_models(50))
    worst = 0.0
    for spec in specs:
        nu, gamma, _ = moments(spec)
        worst = max(worst, abs(mean_offspring(abpre_env(spec)) - gamma / nu))
    logger.info(f"   max |E g'(1) - gamma/nu| = {worst:.3g}")
    return worst < 1e-12


def check_classifier_vs_mc(reps: int, workers: int) -> bool:
    ok = True
    sa = model("sa_0.2_0.2")
    est = extinction_prob(sa, reps=reps, seed=SEED, workers=workers)
    ok &= classify(sa).verdict is Verdict.ALMOST_SURE_EXTINCTION and est.survival_upper < 0.005

    bs = model("bs")
    est = extinction_prob(bs, reps=reps, seed=SEED, workers=workers)
    ok &= classify(bs).verdict is Verdict.POSITIVE_SURVIVAL and est.survival_lower > 0.05

    ld = model("ld")
    report = classify(ld)
    path = run_replicates(ld, [1], 20, 1 << 40, 1, SEED)[0]
    ok &= report.degenerate_case and report.verdict is Verdict.POSITIVE_SURVIVAL
    ok &= path.z_series == [2**n for n in range(21)]

    nu1 = model("nu1_sa")
    est = extinction_prob(nu1, reps=reps, seed=SEED, workers=workers)
    ok &= classify(nu1).verdict is Verdict.ALMOST_SURE_EXTINCTION and est.survival_upper < 0.01
    return bool(ok)


def check_inf_theta(reps: int, workers: int) -> bool:
    envs = [abpre_env(model(name)) for name in GALLERY] + [abpre_env(s) for s in random_models(50, seed=7)]
    worst = max(abs(inf_theta(env).value - theta_grid(env).value) for env in envs)
    w = abpre_env(model("w"))
    arg, value = inf_theta(w)
    logger.info(f"   max |golden - grid| = {worst:.3g}; W: arg={arg:.4f} value={value:.5f}")
    return worst < 1e-9 and abs(arg - 0.1375) < 5e-3 and abs(value - theta_grid(w).value) < 1e-4


def check_truncation(reps: int, workers: int) -> bool:
    thetas = np.round(np.arange(0.0, 1.0001, 0.01), 2)
    for name in GALLERY:
        env = abpre_env(model(name))
        for M in (1, 2, 4, 8):
            cut = abpre_env(truncate(model(name), M))
            if any(theta_objective(cut, t) > theta_objective(env, t) + 1e-12 for t in thetas):
                logger.error(f"   {name}, M={M}: objective increased")
                return False
            if mean_log(cut) > mean_log(env):
                logger.error(f"   {name}, M={M}: mean_log increased")
                return False
    return True


def check_decay(reps: int, workers: int) -> bool:
    fit = decay_rate(model("sa_0.2_0.2"), 12)
    increasing = all(b >= a for a, b in zip(fit.ratios, fit.ratios[1:]))
    logger.info(f"   ratio(12) = {fit.ratios[-1]:.6f}; E T_3^* = {fit.rows[2].e_tstar:.10f}")
    return increasing and abs(fit.ratios[-1] - 0.8) < 0.02 and abs(fit.rows[2].e_tstar - SA_ETSTAR_3) < 1e-9


def check_dichotomy(reps: int, workers: int) -> bool:
    scan = dichotomy_scan(model("bs"), [10, 50, 100], 10, reps // 10, SEED, workers=workers)
    return scan.nonincreasing and scan.rows[-1].fraction < 0.02


def check_growth(reps: int, workers: int) -> bool:
    bs = survival_growth(model("bs"), 30, 10**6, reps // 10, SEED, workers=workers)
    ld = survival_growth(model("ld"), 30, 10**6, reps // 10, SEED, workers=workers)
    frac = bs.cap_hit_fractions.get(10, 0.0)
    logger.info(f"   BS P(T* > 10 | cap hit) = {frac:.4f}; LD T* = 1: {ld.tstar_always_one}")
    return frac >= 0.95 and bool(ld.tstar_always_one)


def check_determinism(reps: int, workers: int) -> bool:
    sa = model("sa_0.2_0.2")
    one = extinction_prob(sa, reps=reps // 10, seed=SEED, workers=1)
    many = extinction_prob(sa, reps=reps // 10, seed=SEED, workers=max(workers, 8))
    return dumps_report(one.to_dict()) == dumps_report(many.to_dict())


def main():
    """Exécution de tous les critères d'acceptation."""
    parser = argparse.ArgumentParser(description="Vérification des critères d'acceptation")
    parser.add_argument("--quick", action="store_true", help="Réplicats divisés par 10")
    parser.add_argument("--workers", type=int, default=4)
    args = parser.parse_args()
    reps = 10_000 if args.quick else 100_000

    logger.info("🎯 VÉRIFICATION DES CRITÈRES D'ACCEPTATION")
    logger.info("=" * 60)

    tests = [
        ("1. Identité spine / arbre exacte", check_prop1_identity),
        ("2. E g'(1) = gamma / nu", check_mean_identity),
        ("3. Classifieur vs Monte-Carlo", check_classifier_vs_mc),
        ("4. inf_theta vs grille", check_inf_theta),
        ("5. Inégalités de troncature", check_truncation),
        ("6. Vitesse de décroissance de E T_n^*", check_decay),
        ("7. Dichotomie extinction / explosion", check_dichotomy),
        ("8. Régimes de croissance de T_n^*", check_growth),
        ("9. Déterminisme multi-processus", check_determinism),
    ]

    results = {}
    for test_name, test_func in tests:
        logger.info(f"\n📋 Test: {test_name}")
        start = time.perf_counter()
        try:
            results[test_name] = test_func(reps, args.workers)
        except Exception as e:
            logger.error(f"❌ {test_name}: {e}")
            results[test_name] = False
        logger.info(f"   ⏱️ {time.perf_counter() - start:.1f} s")

    # Rapport final
    logger.info("\n" + "=" * 60)
    logger.info("📊 RAPPORT FINAL")
    logger.info("=" * 60)

    passed = sum(results.values())
    total = len(results)
    for test_name, passed_test in results.items():
        status = "✅ PASS" if passed_test else "❌ FAIL"
        logger.info(f"{status} {test_name}")

    logger.info(f"\n🏆 RÉSULTAT GLOBAL: {passed}/{total} critères satisfaits")
    if passed == total:
        logger.success("✅ TOUS LES CRITÈRES SONT SATISFAITS")
        return 0
    logger.error(f"❌ {total - passed} critère(s) en échec")
    return 1


if __name__ == "__main__":
    sys.exit(main())
