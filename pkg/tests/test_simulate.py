import numpy as np
import pytest
from scipy import stats

from bwbp.model import ModelSpec, OffspringLaw, SharingLaw
from bwbp.simulate import (
    CLEAN_SATURATION,
    GenerationState,
    OutcomeKind,
    advance,
    exact_expected_counts,
    init,
    records_to_frame,
    run,
    run_replicates,
    step,
)
from bwbp.utils.errors import EscapedMassError, ParasiteOverflowError
from bwbp.utils.sampling import make_rng, replicate_rng


class TestInit:
    @pytest.mark.parametrize("cells", [[1], [5], [1, 2, 2]])
    def test_contaminated_start(self, cells):
        state = init(cells)
        assert sorted(state.contaminated.tolist()) == sorted(cells)
        assert state.clean_cells == 0
        assert state.generation == 0
        assert state.z_total == sum(cells)

    @pytest.mark.parametrize("cells", [[], [0], [1, -2]])
    def test_bad_start(self, cells):
        with pytest.raises(ValueError):
            init(cells)

    def test_clean_offset(self):
        state = init([1], clean_cells=3)
        assert state.total_cells == 4

    def test_histogram(self):
        state = GenerationState(np.array([1, 1, 3, 20], dtype=np.int64), clean_cells=5)
        hist = state.histogram(16)
        assert len(hist) == 18
        assert hist[0] == 5 and hist[1] == 2 and hist[3] == 1 and hist[-1] == 1
        assert sum(hist[1:]) == state.t_star


class TestStep:
    def test_ld_is_deterministic(self, ld, rng):
        nxt = step(init([1]), ld, rng)
        assert nxt.contaminated.tolist() == [2]
        assert nxt.clean_cells == 1
        assert nxt.generation == 1

    def test_bs_first_generation_frequencies(self, bs):
        rng = make_rng(7)
        counts = {"two": 0, "split": 0, "none": 0}
        trials = 20_000
        for _ in range(trials):
            nxt = step(init([1]), bs, rng)
            shape = sorted(nxt.contaminated.tolist())
            if shape == [2]:
                counts["two"] += 1
                assert nxt.clean_cells == 1
            elif shape == [1, 1]:
                counts["split"] += 1
                assert nxt.clean_cells == 0
            else:
                pytest.fail(f"impossible generation {shape}")
        for key, p in (("two", 0.5), ("split", 0.5)):
            se = np.sqrt(p * (1 - p) / trials)
            assert abs(counts[key] / trials - p) < 4 * se

    def test_p0_one_kills_everything(self, p0_one, rng):
        nxt = step(init([3]), p0_one, rng)
        assert nxt.t_star == 0
        assert nxt.clean_cells == 0
        assert nxt.z_total == 0

    def test_absorption_and_tstar_below_z(self, sa):
        rng = make_rng(11)
        state = init([2])
        for _ in range(40):
            previous = state
            state = step(state, sa, rng)
            assert state.t_star <= state.z_total
            if previous.z_total == 0:
                assert state.z_total == 0

    def test_cell_count_of_binary_tree(self, bs):
        state = advance(init([1]), bs, 8, make_rng(3))
        assert state.total_cells == 2**8
        assert not state.saturated

    def test_clean_counter_saturates(self, ld, rng):
        state = GenerationState(np.array([1], dtype=np.int64), clean_cells=CLEAN_SATURATION - 1)
        nxt = step(state, ld, rng)
        assert nxt.saturated
        assert nxt.clean_cells == CLEAN_SATURATION
        assert step(nxt, ld, rng).saturated

    def test_overflow_is_signalled(self, rng):
        huge = ModelSpec(OffspringLaw(((2, 1.0),)), {2: SharingLaw(2, (((1 << 40, 0), 1.0),))}, "huge")
        state = step(init([1]), huge, rng)
        assert state.z_total == 1 << 40
        with pytest.raises(ParasiteOverflowError):
            step(state, huge, rng)


class TestRun:
    def test_p0_one_extinct_at_one(self, p0_one, rng):
        record = run(p0_one, init([1]), 10, 100, rng)
        assert record.outcome.kind is OutcomeKind.EXTINCT
        assert str(record.outcome) == "Extinct(1)"
        assert record.z_series == [1, 0]

    def test_ld_hits_cap_at_ten(self, ld, rng):
        record = run(ld, init([1]), 200, 1000, rng)
        assert str(record.outcome) == "ExplosionCapHit(10)"
        assert record.z_series == [2**n for n in range(11)]

    def test_alive_at_horizon(self, ld, rng):
        record = run(ld, init([1]), 5, 10**6, rng)
        assert record.outcome.kind is OutcomeKind.ALIVE_AT_HORIZON
        assert [row.n for row in record.rows] == list(range(6))

    def test_overflow_counts_as_explosion(self, rng):
        huge = ModelSpec(OffspringLaw(((2, 1.0),)), {2: SharingLaw(2, (((1 << 40, 0), 1.0),))}, "huge")
        record = run(huge, init([1]), 10, 1 << 62, rng)
        assert record.outcome.kind is OutcomeKind.EXPLOSION_CAP_HIT

    @pytest.mark.parametrize("horizon, z_cap", [(0, 10), (5, 0)])
    def test_bad_arguments(self, ld, rng, horizon, z_cap):
        with pytest.raises(ValueError):
            run(ld, init([1]), horizon, z_cap, rng)

    def test_sa_dies_out(self, sa):
        records = run_replicates(sa, [1], 200, 10**6, 500, seed=5)
        assert all(rec.extinct for rec in records)


class TestReplicates:
    def test_order_and_worker_independence(self, bs):
        serial = run_replicates(bs, [1], 12, 10**4, 40, seed=99, workers=1)
        parallel = run_replicates(bs, [1], 12, 10**4, 40, seed=99, workers=3)
        assert [r.replicate_index for r in parallel] == list(range(40))
        assert [r.z_series for r in serial] == [r.z_series for r in parallel]
        assert [r.tstar_series for r in serial] == [r.tstar_series for r in parallel]
        assert [str(r.outcome) for r in serial] == [str(r.outcome) for r in parallel]

    def test_replicate_streams_are_keyed(self):
        a = replicate_rng(1, 0).integers(0, 2**62, size=4)
        b = replicate_rng(1, 0).integers(0, 2**62, size=4)
        c = replicate_rng(1, 1).integers(0, 2**62, size=4)
        assert a.tolist() == b.tolist()
        assert a.tolist() != c.tolist()

    def test_frame(self, sa):
        records = run_replicates(sa, [1], 5, 100, 10, seed=1)
        df = records_to_frame(records, include_hist=True)
        assert list(df.columns[:6]) == ["replicate", "n", "Z_n", "T_star", "T_n", "clean_saturated"]
        assert "T_gt" in df.columns
        assert len(df) == sum(len(r.rows) for r in records)

    def test_reps_zero_rejected(self, bs):
        with pytest.raises(ValueError):
            run_replicates(bs, [1], 5, 100, 0, seed=1)


class TestExactExpectedCounts:
    def test_bs_one_generation(self, bs):
        counts = exact_expected_counts(bs, 1, 8)
        assert counts.table[1, :3].tolist() == pytest.approx([0.5, 1.0, 0.5], abs=1e-15)
        assert counts.tstar[1] == pytest.approx(1.5)

    def test_sa_one_generation(self, sa):
        counts = exact_expected_counts(sa, 1, 8)
        assert counts.get(1, 0) == pytest.approx(1.6, abs=1e-15)
        assert counts.get(1, 1) == 0.0
        assert counts.get(1, 2) == pytest.approx(0.4, abs=1e-15)

    def test_sa_three_generations(self, sa):
        counts = exact_expected_counts(sa, 3, 32)
        assert counts.tstar[3] == pytest.approx(8 * (1 - 0.9722368), abs=1e-12)

    def test_total_cells_is_nu_power(self, bs):
        counts = exact_expected_counts(bs, 4, 64)
        assert counts.table[4].sum() == pytest.approx(16.0, abs=1e-9)
        assert counts.zbar[4] == pytest.approx(16.0, abs=1e-9)

    def test_refuses_small_cap(self, w):
        with pytest.raises(EscapedMassError):
            exact_expected_counts(w, 3, 2)

    def test_horizon_limit(self, bs):
        with pytest.raises(ValueError):
            exact_expected_counts(bs, 7, 8)

    @pytest.mark.parametrize("name", ["bs", "sa"])
    def test_monte_carlo_agrees(self, name, request):
        spec = request.getfixturevalue(name)
        n, cap, reps = 3, 16, 4000
        exact = exact_expected_counts(spec, n, cap)
        start = init([1])
        hist = np.array(
            [advance(start, spec, n, replicate_rng(17, r)).histogram(cap) for r in range(reps)], dtype=float
        )
        means, se = hist.mean(axis=0), hist.std(axis=0, ddof=1) / np.sqrt(reps)
        cells = spec.offspring.max_value**n
        for c in range(cap + 1):
            expected = exact.get(n, c)
            if se[c] > 0.0:
                assert abs(means[c] - expected) <= 4 * se[c] + 1e-9
            elif means[c] == 0.0 and expected > 0.0:
                # a replicate holds class c with probability >= expected / cells
                assert stats.binom.pmf(0, reps, expected / cells) > 1e-6
            else:
                assert means[c] == pytest.approx(expected, abs=1e-9)
