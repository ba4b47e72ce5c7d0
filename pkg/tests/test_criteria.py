import math

import numpy as np
import pytest
from scipy.optimize import brentq

from bwbp.criteria import (
    AbpreClass,
    KappaClass,
    Verdict,
    abpre_class,
    abpre_survival,
    asge_constants,
    case_a_quantities,
    classify,
    decide_verdict,
    inf_theta,
    kappa_class,
    mean_log,
    mean_offspring,
    theta_grid,
    theta_objective,
    tstar_profile,
    xlogx,
)
from bwbp.model import FiniteLaw, ModelSpec, OffspringLaw, SharingLaw, make_leftmost, moments, truncate
from bwbp.spine import AbpreSpec, EnvEntry, abpre_env
from bwbp.utils.errors import AssumptionViolationError
from bwbp.utils.sampling import make_rng
from tests.helpers import GALLERY, gallery_model, random_model


def two_env(mean_a: float, mean_b: float) -> AbpreSpec:
    """Two equally likely environments with laws on {0, 4} of the given means."""
    entries = tuple(
        EnvEntry(j, 2, 0.5, FiniteLaw(((0, 1 - m / 4), (4, m / 4)))) for j, m in ((1, mean_a), (2, mean_b))
    )
    return AbpreSpec(entries, 2.0, "two_env")


def permute_daughters(spec: ModelSpec, rng) -> ModelSpec:
    """Same model with the daughters of each k relabelled and the atoms listed in reverse."""
    sharing = {}
    for k, law in spec.sharing.items():
        order = rng.permutation(k)
        atoms = tuple((tuple(int(vector[i]) for i in order), prob) for vector, prob in reversed(law.atoms))
        sharing[k] = SharingLaw(k, atoms)
    return ModelSpec(spec.offspring, sharing, spec.label)


def verdict_or_violation(spec: ModelSpec):
    try:
        return classify(spec).verdict
    except AssumptionViolationError:
        return "violation"


def collapsed_marginal_model() -> ModelSpec:
    """First daughter always gets 2; the sharing probabilities sum to 1 + 5e-13."""
    law = SharingLaw(2, (((2, 0), 0.3), ((2, 1), 0.7000000000005)))
    return ModelSpec(OffspringLaw(((2, 1.0),)), {2: law}, "collapsed")


class TestFunctionals:
    def test_sa(self, sa):
        env = abpre_env(sa)
        assert mean_log(env) == pytest.approx(math.log(0.4), abs=1e-12)
        assert xlogx(env) == pytest.approx(0.4 * math.log(0.4), abs=1e-12)
        assert mean_offspring(env) == pytest.approx(0.4, abs=1e-15)

    def test_mean_log_minus_inf(self, ld):
        assert mean_log(abpre_env(ld)) == -math.inf

    def test_objective_values(self, w):
        env = abpre_env(w)
        assert theta_objective(env, 0.0) == pytest.approx(1.0)
        assert theta_objective(env, 1.0) == pytest.approx(2.05, abs=1e-12)
        assert theta_objective(env, 0.5) == pytest.approx(0.5 * (2 + math.sqrt(0.1)), abs=1e-12)

    def test_objective_jumps_at_zero(self, ld):
        env = abpre_env(ld)
        assert theta_objective(env, 0.0) == 1.0
        assert theta_objective(env, 1e-9) == pytest.approx(0.5, abs=1e-8)

    @pytest.mark.parametrize("theta", [-0.1, 1.5])
    def test_objective_domain(self, bs, theta):
        with pytest.raises(ValueError):
            theta_objective(abpre_env(bs), theta)

    def test_objective_is_convex(self):
        rng = make_rng(77)
        thetas = np.linspace(0.01, 1.0, 60)
        for _ in range(30):
            env = abpre_env(random_model(rng))
            values = np.array([theta_objective(env, t) for t in thetas])
            assert np.all(np.diff(values, 2) >= -1e-12)

    @pytest.mark.parametrize("name", GALLERY)
    def test_mixed_mean_is_gamma_over_nu(self, name):
        spec = gallery_model(name)
        nu, gamma, _ = moments(spec)
        assert mean_offspring(abpre_env(spec)) == pytest.approx(gamma / nu, abs=1e-12)

    def test_mixed_mean_random_models(self):
        rng = make_rng(505)
        for _ in range(50):
            spec = random_model(rng)
            nu, gamma, _ = moments(spec)
            assert mean_offspring(abpre_env(spec)) == pytest.approx(gamma / nu, abs=1e-12)

    @pytest.mark.parametrize("name", ["bs", "sa_0.2_0.2", "w", "iid_02"])
    def test_jensen(self, name):
        env = abpre_env(gallery_model(name))
        assert mean_log(env) <= math.log(mean_offspring(env)) + 1e-12


class TestInfTheta:
    def test_sa_reaches_one(self, sa):
        arg, value = inf_theta(abpre_env(sa))
        assert arg == 1.0
        assert value == pytest.approx(0.4, abs=1e-12)

    def test_bs_ties_go_to_zero(self, bs):
        assert inf_theta(abpre_env(bs)) == (0.0, pytest.approx(1.0, abs=1e-12))

    def test_w_interior(self, w):
        env = abpre_env(w)
        arg, value = inf_theta(env)
        assert arg == pytest.approx(math.log(math.log(10) / math.log(4)) / math.log(40), abs=5e-3)
        assert 0.0 < arg < 1.0
        grid_arg, grid_value = theta_grid(env)
        assert value == pytest.approx(grid_value, abs=1e-9)
        assert arg == pytest.approx(grid_arg, abs=1e-3)

    def test_below_objective_everywhere(self, w):
        env = abpre_env(w)
        _, value = inf_theta(env)
        assert all(value <= theta_objective(env, t) + 1e-12 for t in np.linspace(0, 1, 101))

    @pytest.mark.parametrize("M", [1, 2, 4, 8])
    def test_truncation_never_raises_the_infimum(self, w, M):
        full = inf_theta(abpre_env(w)).value
        cut = abpre_env(truncate(w, M))
        assert inf_theta(cut).value <= full + 1e-12
        assert mean_log(cut) <= mean_log(abpre_env(w)) + 1e-12

    @pytest.mark.parametrize("name", GALLERY)
    def test_matches_grid_on_gallery(self, name):
        env = abpre_env(gallery_model(name))
        assert inf_theta(env).value == pytest.approx(theta_grid(env).value, abs=1e-9)

    def test_matches_grid_on_random_models(self):
        rng = make_rng(7)
        for _ in range(20):
            env = abpre_env(random_model(rng))
            assert inf_theta(env).value == pytest.approx(theta_grid(env).value, abs=1e-9)

    def test_nonnegative_mean_log_pins_infimum_at_one(self):
        rng = make_rng(11)
        envs = [abpre_env(gallery_model(name)) for name in GALLERY]
        envs += [abpre_env(random_model(rng)) for _ in range(50)]
        checked = 0
        for env in envs:
            if mean_log(env) >= 0.0:
                assert inf_theta(env).value >= 1.0 - 1e-12
                checked += 1
        assert checked > 0


class TestTruncationInequalities:
    @pytest.mark.parametrize("rule", ["mean", "clipped_mean"])
    @pytest.mark.parametrize("M", [1, 2, 4, 8])
    @pytest.mark.parametrize("name", GALLERY)
    def test_objective_and_mean_log_drop(self, name, M, rule):
        spec = gallery_model(name)
        env, cut = abpre_env(spec), abpre_env(truncate(spec, M, rule=rule))
        for theta in np.round(np.arange(0.0, 1.0001, 0.01), 2):
            assert theta_objective(cut, float(theta)) <= theta_objective(env, float(theta)) + 1e-12
        assert mean_log(cut) <= mean_log(env) + 1e-12


class TestClasses:
    @pytest.mark.parametrize(
        "value, expected",
        [(0.3, AbpreClass.SUPERCRITICAL), (0.0, AbpreClass.CRITICAL), (1e-13, AbpreClass.CRITICAL), (-0.3, AbpreClass.SUBCRITICAL)],
    )
    def test_abpre_class(self, value, expected):
        assert abpre_class(value) is expected

    def test_sa_strongly(self, sa):
        assert kappa_class(abpre_env(sa)) is KappaClass.STRONGLY
        assert KappaClass.STRONGLY.kappa == 0.0

    def test_w_weakly(self, w):
        assert kappa_class(abpre_env(w)) is KappaClass.WEAKLY
        assert KappaClass.WEAKLY.kappa == 1.5

    def test_intermediate(self):
        b = 0.1
        a = brentq(lambda x: x * math.log(x) + b * math.log(b), 1.0, 2.0, xtol=1e-15, rtol=1e-15)
        env = two_env(a, b)
        assert mean_log(env) < 0
        assert kappa_class(env) is KappaClass.INTERMEDIATE
        assert KappaClass.INTERMEDIATE.kappa == 0.5

    def test_kappa_needs_subcritical(self, bs):
        with pytest.raises(ValueError):
            kappa_class(abpre_env(bs))

    def test_abpre_survival(self):
        assert abpre_survival(two_env(2.0, 1.5))
        assert not abpre_survival(two_env(2.0, 0.1))
        assert not abpre_survival(two_env(2.0, 0.0))

    def test_asge_constants(self, w, sa):
        assert asge_constants(abpre_env(w)) == (8, pytest.approx(0.1))
        assert asge_constants(abpre_env(sa)) == (2, pytest.approx(0.4))


class TestDegenerateCase:
    def test_ld_quantities(self, ld):
        meanlog, infinite = case_a_quantities(ld)
        assert meanlog == pytest.approx(math.log(2.0))
        assert not infinite

    def test_dead_split_forces_extinction(self, nu1_bs):
        # p_0 > 0: log 0 enters the mean and the log^- moment is infinite
        spec = make_leftmost(nu1_bs.offspring, {2: FiniteLaw.point(4)})
        meanlog, infinite = case_a_quantities(spec)
        assert meanlog == -math.inf
        assert infinite
        assert classify(spec).verdict is Verdict.ALMOST_SURE_EXTINCTION

    @pytest.mark.parametrize(
        "meanlog, infinite, expected",
        [
            (0.5, False, Verdict.POSITIVE_SURVIVAL),
            (0.0, False, Verdict.ALMOST_SURE_EXTINCTION),
            (-0.5, False, Verdict.ALMOST_SURE_EXTINCTION),
            (0.5, True, Verdict.ALMOST_SURE_EXTINCTION),
        ],
    )
    def test_decision(self, meanlog, infinite, expected):
        assert decide_verdict(True, 2.0, -math.inf, 0.5, meanlog, infinite) is expected


class TestClassify:
    def test_sa(self, sa):
        report = classify(sa)
        assert report.verdict is Verdict.ALMOST_SURE_EXTINCTION
        assert report.abpre_class is AbpreClass.SUBCRITICAL
        assert report.kappa == 0.0
        assert report.summary() == "verdict=AlmostSureExtinction nu=2 gamma=0.8 inf_theta=0.4@1.0"

    def test_bs_survives(self, bs):
        report = classify(bs)
        assert report.verdict is Verdict.POSITIVE_SURVIVAL
        assert report.abpre_class is AbpreClass.CRITICAL
        assert report.kappa_class is None
        assert "mean_log_zero" in report.boundary_flags

    def test_ld_degenerate_survives(self, ld):
        report = classify(ld)
        assert report.degenerate_case
        assert report.verdict is Verdict.POSITIVE_SURVIVAL

    @pytest.mark.parametrize("name", ["nu1_bs", "nu1_sa"])
    def test_critical_tree_goes_extinct(self, name):
        report = classify(gallery_model(name))
        assert report.verdict is Verdict.ALMOST_SURE_EXTINCTION
        assert "nu_equals_one" in report.boundary_flags

    def test_w_survives(self, w):
        # inf_theta ~ 0.969 > 1/2
        report = classify(w)
        assert report.verdict is Verdict.POSITIVE_SURVIVAL
        assert report.kappa_class is KappaClass.WEAKLY

    def test_assumptions_violated(self, trivial_p1):
        with pytest.raises(AssumptionViolationError, match=r"\(A2\)") as info:
            classify(trivial_p1)
        assert info.value.exit_code == 2
        assert info.value.report is not None

    @pytest.mark.parametrize("name", GALLERY)
    def test_report_consistent(self, name):
        report = classify(gallery_model(name))
        assert report.consistent
        assert report.to_dict()["tolerance"] == 1e-12

    def test_profile_attached(self, sa):
        report = classify(sa, profile_n=3, cap=32)
        assert report.tstar_profile.values == pytest.approx([1.0, 0.4, 0.288, 8 * (1 - 0.9722368)], abs=1e-12)
        assert report.tstar_profile.bounded_by_one

    def test_profile_skipped_when_cap_too_small(self):
        spec = ModelSpec(OffspringLaw(((2, 1.0),)), {2: SharingLaw(2, (((3, 3), 1.0),))}, "triple")
        assert classify(spec, profile_n=3, cap=2).tstar_profile is None

    def test_collapsed_marginal_classifies(self):
        report = classify(collapsed_marginal_model())
        assert report.verdict is Verdict.POSITIVE_SURVIVAL
        assert report.mean_log_g == pytest.approx(0.5 * math.log(1.4), abs=1e-12)

    @pytest.mark.parametrize("name", GALLERY)
    def test_verdict_ignores_daughter_order(self, name):
        spec = gallery_model(name)
        base = classify(spec)
        rng = make_rng(31)
        for _ in range(3):
            report = classify(permute_daughters(spec, rng))
            assert report.verdict is base.verdict
            assert report.inf_theta_value == pytest.approx(base.inf_theta_value, abs=1e-12)
            assert report.degenerate_case == base.degenerate_case

    def test_verdict_ignores_daughter_order_random(self):
        rng = make_rng(59)
        for _ in range(30):
            spec = random_model(rng)
            assert verdict_or_violation(permute_daughters(spec, rng)) == verdict_or_violation(spec)


class TestTStarProfile:
    def test_bs_grows(self, bs):
        profile = tstar_profile(bs, 4, 64)
        assert profile.values[0] == 1.0
        assert not profile.bounded_by_one

    def test_ld_stays_one(self, ld):
        assert tstar_profile(ld, 6, 128).values == pytest.approx([1.0] * 7, abs=1e-12)
