#!/usr/bin/env python3
"""
Spine of the cell tree and the associated branching process in random
environment (ABPRE).

Along the spine the daughter count is size-biased (P(T = k) = k p_k / nu) and
the followed daughter C is uniform on 1..T. The parasite count of the spine
cell is then a branching process whose environment picks, with weight
p_k / nu, the offspring law of the single coordinate X^(j,k). Expected cell
counts of the tree and laws of this process are tied by

    P_z(Z'_n = k) = nu^{-n} E_z T_{n,k},

which `check_prop1` verifies table-wise.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from bwbp.model import FiniteLaw, ModelSpec
from bwbp.simulate import CompiledModel, advance, exact_expected_counts, init
from bwbp.utils.errors import AssumptionViolationError, EscapedMassError
from bwbp.utils.sampling import AliasTable, replicate_rng
from bwbp.utils.utils import compensated_sum, get_setting

INT64_MAX = (1 << 63) - 1
ABPRE_MAX_HORIZON = 14
ABPRE_MAX_ESCAPED = 0.5
DEFAULT_SEED = int(get_setting("DEFAULT_SEED", 0x5EED))
DEFAULT_CAP = int(get_setting("DEFAULT_CAP", 256))


@dataclass(frozen=True)
class EnvEntry:
    """One environment: daughter j of a k-split, picked with weight p_k / nu."""

    j: int
    k: int
    weight: float
    law: FiniteLaw

    @property
    def mean(self) -> float:
        return self.law.mean


@dataclass(frozen=True)
class AbpreSpec:
    entries: Tuple[EnvEntry, ...]
    nu: float
    label: str = ""

    def __iter__(self) -> Iterator[EnvEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries], dtype=float)

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.entries], dtype=float)

    @property
    def max_value(self) -> int:
        return max(e.law.max_value for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "nu": self.nu,
            "envs": [
                {"j": e.j, "k": e.k, "weight": e.weight, "mean": e.mean, "law": e.law.to_pairs()}
                for e in self.entries
            ],
        }


def abpre_env(spec: ModelSpec) -> AbpreSpec:
    """
    Environment law of the ABPRE: one entry per (j, k), 1 <= j <= k, k in the
    offspring support.

    Raises:
        AssumptionViolationError: si nu = 0 (p_0 = 1), la spine n'existe pas
    """
    nu = spec.nu
    if nu <= 0.0:
        raise AssumptionViolationError("nu = 0 (p_0 = 1): no spine, the ABPRE is undefined", "spine")
    entries = []
    for k in spec.ks:
        weight = spec.offspring.prob(k) / nu
        law = spec.sharing[k]
        for j in range(1, k + 1):
            entries.append(EnvEntry(j, k, weight, law.marginal(j)))
    return AbpreSpec(tuple(entries), nu, spec.label)


@dataclass(frozen=True)
class SpineDraw:
    t: int
    c: int


class SpineSampler:
    """Size-biased daughter counts and uniform daughter indices for one model."""

    def __init__(self, spec: ModelSpec):
        nu = spec.nu
        if nu <= 0.0:
            raise AssumptionViolationError("nu = 0 (p_0 = 1): no spine to sample", "spine")
        self.ks = np.array(spec.ks, dtype=np.int64)
        self.size_biased = np.array([k * spec.offspring.prob(k) / nu for k in spec.ks])
        self.table = AliasTable(self.ks, self.size_biased)

    def draw(self, rng: np.random.Generator) -> SpineDraw:
        t = int(self.table.draw_one(rng))
        return SpineDraw(t, int(rng.integers(1, t + 1)))

    def draw_many(self, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
        t = self.table.draw(rng, size)
        return t, rng.integers(1, t + 1)


def sample_spine_step(spec: Union[ModelSpec, SpineSampler], rng: np.random.Generator) -> SpineDraw:
    sampler = spec if isinstance(spec, SpineSampler) else SpineSampler(spec)
    return sampler.draw(rng)


@dataclass
class AbpreTrajectory:
    """Z'_0..Z'_m; `truncated` when the next step could overflow int64 (then m < n)."""

    values: List[int]
    truncated: bool = False
    envs: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def survived(self) -> bool:
        return self.values[-1] > 0


def _offspring_sum(z: int, law: FiniteLaw, rng: np.random.Generator) -> int:
    """Sum of z iid draws of `law` via a single multinomial over its atoms."""
    counts = rng.multinomial(z, law.probs)
    return int(counts @ law.values)


def simulate_abpre(env: AbpreSpec, z0: int, n: int, rng: np.random.Generator) -> AbpreTrajectory:
    """
    One path of the ABPRE: Lambda_m iid by weight, then Z'_{m+1} is the sum of
    Z'_m iid draws from the picked law. 0 is absorbing.
    """
    if n < 0 or z0 < 0:
        raise ValueError("simulate_abpre needs n >= 0 and z0 >= 0")
    table = AliasTable(np.arange(len(env)), env.weights)
    largest = max(env.max_value, 1)
    path = AbpreTrajectory([int(z0)])
    z = int(z0)
    for _ in range(n):
        if z == 0:
            path.values.append(0)
            continue
        if z * largest > INT64_MAX:
            path.truncated = True
            break
        entry = env.entries[int(table.draw_one(rng))]
        path.envs.append((entry.j, entry.k))
        z = _offspring_sum(z, entry.law, rng)
        path.values.append(z)
    return path


def simulate_spine(spec: ModelSpec, z0: int, n: int, rng: np.random.Generator) -> AbpreTrajectory:
    """
    Parasite count of the spine cell V_0, V_1, ... followed inside the tree:
    draw (T, C), then keep coordinate C of the sum of Z_{V_m} sharing vectors
    drawn from SharingLaw(T). Same law as `simulate_abpre(abpre_env(spec), ...)`.
    """
    if n < 0 or z0 < 0:
        raise ValueError("simulate_spine needs n >= 0 and z0 >= 0")
    sampler = SpineSampler(spec)
    compiled = CompiledModel(spec)
    largest = max(compiled.max_total, 1)
    path = AbpreTrajectory([int(z0)])
    z = int(z0)
    for _ in range(n):
        if z == 0:
            path.values.append(0)
            continue
        if z * largest > INT64_MAX:
            path.truncated = True
            break
        draw = sampler.draw(rng)
        path.envs.append((draw.c, draw.t))
        counts = rng.multinomial(z, compiled.probs[draw.t])
        z = int((counts @ compiled.vectors[draw.t])[draw.c - 1])
        path.values.append(z)
    return path


@dataclass
class AbpreDistribution:
    """
    Law of Z'_m for m = 0..n on 0..cap (`history[m]`), plus the mass that
    left 0..cap by generation m (`escaped[m]`).
    """

    n: int
    z0: int
    cap: int
    history: np.ndarray
    escaped: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return self.history[self.n]

    def prob(self, k: int, m: Optional[int] = None) -> float:
        m = self.n if m is None else m
        return float(self.history[m, k]) if 0 <= k <= self.cap else 0.0

    @property
    def survival(self) -> np.ndarray:
        """P(Z'_m > 0) per generation; escaped mass is above cap, hence alive."""
        return self.history[:, 1:].sum(axis=1) + self.escaped


def _horner_mix(dist: np.ndarray, law_vec: np.ndarray, cap: int) -> Tuple[np.ndarray, float]:
    """
    sum_z dist[z] * law^{*z}, cut at cap, by Horner's scheme in the convolution
    algebra. Returns the cut result and the mass dropped above cap.
    """
    top = int(np.flatnonzero(dist)[-1]) if dist.any() else 0
    acc = np.zeros(cap + 1)
    acc[0] = dist[top]
    lost = []
    for z in range(top - 1, -1, -1):
        before = acc.sum()
        acc = np.convolve(acc, law_vec)[: cap + 1]
        lost.append(before - acc.sum())
        acc[0] += dist[z]
    return acc, compensated_sum(lost)


def abpre_exact(env: AbpreSpec, z0: int, n: int, cap: int) -> AbpreDistribution:
    """
    Exact law of Z'_n under the cap: at each generation the next law is the
    weight-mixture over environments of the current law composed with the
    environment law.

    Args:
        env: Environnement de l'ABPRE
        z0: Nombre initial de parasites
        n: Horizon (au plus ABPRE_MAX_HORIZON)
        cap: Plus grand état suivi exactement

    Raises:
        EscapedMassError: si plus de la moitié de la masse sort de 0..cap
    """
    if not 0 <= n <= ABPRE_MAX_HORIZON:
        raise ValueError(f"abpre_exact supports 0 <= n <= {ABPRE_MAX_HORIZON}, got {n}")
    if cap < 1:
        raise ValueError("abpre_exact needs cap >= 1")
    if z0 < 0:
        raise ValueError("abpre_exact needs z0 >= 0")
    history = np.zeros((n + 1, cap + 1))
    escaped = np.zeros(n + 1)
    if z0 > cap:
        raise EscapedMassError(f"start z0={z0} is already above cap={cap}", "spine", 1.0)
    history[0, z0] = 1.0

    laws = []
    for e in env:
        vec, _ = e.law.pmf(cap)
        trimmed = np.trim_zeros(vec, "b")
        laws.append((e.weight, trimmed if trimmed.size else np.zeros(1)))

    for m in range(1, n + 1):
        parts, lost = [], []
        for weight, vec in laws:
            nxt, dropped = _horner_mix(history[m - 1], vec, cap)
            parts.append(weight * nxt)
            lost.append(weight * dropped)
        history[m] = np.sum(parts, axis=0)
        escaped[m] = escaped[m - 1] + compensated_sum(lost)
        if escaped[m] > ABPRE_MAX_ESCAPED:
            raise EscapedMassError(
                f"cap={cap} loses {escaped[m]:.3g} of the law of Z'_{m}; raise --cap or lower n",
                "spine",
                escaped[m],
            )
    if escaped[n] > 0:
        logger.debug(f"abpre_exact: escaped mass {escaped[n]:.3g} above cap={cap} at n={n}")
    return AbpreDistribution(n, z0, cap, history, escaped)


@dataclass(frozen=True)
class Prop1Row:
    k: int
    lhs: float
    rhs: float
    diff: float
    se: float = 0.0


@dataclass
class Prop1Table:
    """P(Z'_n = k) against nu^{-n} E T_{n,k}, row by row, plus the aggregate over k >= 1."""

    n: int
    nu: float
    rows: List[Prop1Row]
    aggregate_lhs: float
    aggregate_rhs: float
    tree_side: str = "exact"
    reps: int = 0

    @property
    def max_diff(self) -> float:
        return max((r.diff for r in self.rows), default=0.0)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "tree_side": self.tree_side,
            "reps": self.reps,
            "rows": [{"k": r.k, "lhs": r.lhs, "rhs": r.rhs, "diff": r.diff, "se": r.se} for r in self.rows],
            "aggregate": {"lhs": self.aggregate_lhs, "rhs": self.aggregate_rhs},
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=["k", "lhs", "rhs", "diff", "se"])


def _prop1_chunk(args) -> List[Tuple[int, np.ndarray]]:
    spec, z0, n, cap, seed, indices = args
    compiled = CompiledModel(spec)
    start = init([z0])
    out = []
    for r in indices:
        state = advance(start, compiled, n, replicate_rng(seed, r))
        hist = np.bincount(np.minimum(state.contaminated, cap + 1), minlength=cap + 2).astype(float)
        hist[0] = state.clean_cells
        out.append((r, hist))
    return out


def _tree_counts_mc(spec: ModelSpec, z0: int, n: int, cap: int, reps: int, seed: int, workers: int):
    """Per-replicate T_{n,0..cap} and T_{n,>cap}, reassembled in replicate order."""
    indices = list(range(reps))
    if workers <= 1:
        results = _prop1_chunk((spec, z0, n, cap, seed, indices))
    else:
        jobs = [(spec, z0, n, cap, seed, indices[i::workers]) for i in range(workers) if indices[i::workers]]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [item for chunk in pool.map(_prop1_chunk, jobs) for item in chunk]
        results.sort(key=lambda item: item[0])
    return np.vstack([hist for _, hist in results])


def check_prop1(
    spec: ModelSpec,
    n: int,
    mc_reps: int = 0,
    seed: int = DEFAULT_SEED,
    cap: int = DEFAULT_CAP,
    z0: int = 1,
    workers: int = 1,
) -> Prop1Table:
    """
    Compares P_z(Z'_n = k) (exact, `abpre_exact`) with nu^{-n} E_z T_{n,k}.

    The tree side is exact (`exact_expected_counts`) when mc_reps = 0, else the
    Monte-Carlo mean over mc_reps replicates with its standard error.
    """
    env = abpre_env(spec)
    nu = env.nu
    scale = nu ** (-n)
    dist = abpre_exact(env, z0, n, cap)
    lhs = dist.probs

    if mc_reps <= 0:
        counts = exact_expected_counts(spec, n, cap, z0)
        rhs = counts.table[n] * scale
        se = np.zeros(cap + 1)
        rhs_aggregate = counts.tstar[n] * scale + counts.escaped[n]
        tree_side, reps = "exact", 0
    else:
        matrix = _tree_counts_mc(spec, z0, n, cap, mc_reps, seed, workers)
        means = matrix.mean(axis=0) * scale
        stderr = (matrix.std(axis=0, ddof=1) if mc_reps > 1 else np.zeros(cap + 2)) * scale / np.sqrt(mc_reps)
        rhs, se = means[: cap + 1], stderr[: cap + 1]
        rhs_aggregate = float(means[1:].sum())
        tree_side, reps = "monte_carlo", mc_reps

    rows = [
        Prop1Row(k, float(lhs[k]), float(rhs[k]), float(abs(lhs[k] - rhs[k])), float(se[k]))
        for k in range(cap + 1)
        if lhs[k] != 0.0 or rhs[k] != 0.0
    ]
    table = Prop1Table(n, nu, rows, float(dist.survival[n]), float(rhs_aggregate), tree_side, reps)
    logger.info(
        f"🧬 spine/tree identity ({spec.label}, n={n}, tree side {tree_side}): "
        f"max |diff| = {table.max_diff:.3g}, P(Z'_n>0) = {table.aggregate_lhs:.6g} "
        f"vs nu^-n E T*_n = {table.aggregate_rhs:.6g}"
    )
    return table
