#!/usr/bin/env python3
"""
Forward simulation of the BwBP, generation by generation.

A generation is kept as the multiset of parasite counts of the contaminated
cells plus a counter of clean cells; genealogies are never stored. Each
contaminated cell with z parasites draws its daughter count N = k, then the
z parasites pick sharing atoms (one multinomial draw over the atoms of
SharingLaw(k)) and daughter j receives the j-th coordinate of the summed
vectors. Clean cells only feed the clean counter.

Also provides the exact small-horizon recursion for E_z T_{n,c}, used as a
brute-force oracle.
"""

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from bwbp.model import ModelSpec
from bwbp.utils.errors import EscapedMassError, ParasiteOverflowError
from bwbp.utils.sampling import AliasTable, replicate_rng
from bwbp.utils.utils import get_setting

INT64_MAX = (1 << 63) - 1
CLEAN_SATURATION = int(get_setting("CLEAN_SATURATION", 1 << 40))
HIST_CAP = int(get_setting("HIST_CAP", 16))
EXACT_MAX_HORIZON = 6
EXACT_MAX_ESCAPED = 0.1


class CompiledModel:
    """Sampling tables of a ModelSpec (alias table for N, atom arrays per k)."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.offspring_table = AliasTable(spec.offspring.values, spec.offspring.probs)
        self.offspring_values = spec.offspring.values
        self.offspring_probs = spec.offspring.probs
        self.ks = spec.ks
        self.vectors = {k: spec.sharing[k].vectors for k in self.ks}
        self.probs = {k: spec.sharing[k].probs for k in self.ks}
        # largest total offspring of a single parasite, for the overflow guard
        self.max_total = max((int(v.sum(axis=1).max()) for v in self.vectors.values()), default=0)


def compile_model(spec: Union[ModelSpec, CompiledModel]) -> CompiledModel:
    return spec if isinstance(spec, CompiledModel) else CompiledModel(spec)


@dataclass(frozen=True, eq=False)
class GenerationState:
    """
    One generation: parasite counts of the contaminated cells, clean-cell counter, n.

    `saturated` flags a clean counter stuck at CLEAN_SATURATION, in which case
    total_cells is only a lower bound.
    """

    contaminated: np.ndarray
    clean_cells: int = 0
    generation: int = 0
    saturated: bool = False

    @property
    def z_total(self) -> int:
        return int(self.contaminated.sum(dtype=np.int64)) if self.contaminated.size else 0

    @property
    def t_star(self) -> int:
        return int(self.contaminated.size)

    @property
    def total_cells(self) -> int:
        return self.t_star + self.clean_cells

    def histogram(self, hist_cap: int = HIST_CAP) -> Tuple[int, ...]:
        """(T_{n,0}, ..., T_{n,hist_cap}, number of cells above hist_cap)."""
        counts = np.bincount(np.minimum(self.contaminated, hist_cap + 1), minlength=hist_cap + 2)
        counts[0] = self.clean_cells
        return tuple(int(c) for c in counts)


def init(initial_parasites: Sequence[int], clean_cells: int = 0) -> GenerationState:
    """
    Generation-0 state.

    Args:
        initial_parasites: Nombre de parasites de chaque cellule contaminée initiale
        clean_cells: Cellules saines initiales (décalage du compteur, sans effet sur les parasites)
    """
    values = list(initial_parasites)
    if not values:
        raise ValueError("init needs at least one contaminated cell")
    if any(int(v) != v or v < 1 for v in values):
        raise ValueError(f"init: parasite counts must be positive integers, got {values}")
    if clean_cells < 0:
        raise ValueError("init: clean_cells must be non-negative")
    return GenerationState(np.array(values, dtype=np.int64), int(clean_cells), 0)


def _clean_offspring(compiled: CompiledModel, clean: int, rng: np.random.Generator) -> int:
    """Sum of `clean` iid copies of N via one multinomial split over the support of N."""
    if clean == 0:
        return 0
    counts = rng.multinomial(clean, compiled.offspring_probs)
    return int(sum(int(k) * int(c) for k, c in zip(compiled.offspring_values, counts)))


def step(state: GenerationState, spec: Union[ModelSpec, CompiledModel], rng: np.random.Generator) -> GenerationState:
    """
    Advances one generation (recursion of the parasite counts per daughter cell).

    Raises:
        ParasiteOverflowError: si un compteur de parasites peut dépasser 2^63 - 1
    """
    compiled = compile_model(spec)
    z = state.contaminated
    if state.z_total * max(compiled.max_total, 1) > INT64_MAX:
        raise ParasiteOverflowError(
            f"generation {state.generation + 1} could exceed 2^63-1 parasites", "simulate"
        )

    parts: List[np.ndarray] = []
    new_clean = 0
    if z.size:
        daughters = compiled.offspring_table.draw(rng, z.size)
        for k in compiled.ks:
            mask = daughters == k
            if not mask.any():
                continue
            z_k = z[mask]
            # multiset of atoms picked by the z parasites of each cell, then summed
            counts = rng.multinomial(z_k, compiled.probs[k])
            shares = (counts @ compiled.vectors[k]).ravel()
            positive = shares[shares > 0]
            new_clean += shares.size - positive.size
            parts.append(positive)

    saturated = state.saturated
    if saturated:
        clean = CLEAN_SATURATION
    else:
        clean = _clean_offspring(compiled, state.clean_cells, rng) + new_clean
        if clean > CLEAN_SATURATION:
            logger.trace(f"clean-cell counter saturated at generation {state.generation + 1}")
            clean, saturated = CLEAN_SATURATION, True

    contaminated = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return GenerationState(contaminated.astype(np.int64, copy=False), clean, state.generation + 1, saturated)


def advance(state: GenerationState, spec: Union[ModelSpec, CompiledModel], n: int, rng: np.random.Generator) -> GenerationState:
    """`n` steps with no stopping rule (extinct states keep feeding the clean counter)."""
    compiled = compile_model(spec)
    for _ in range(n):
        state = step(state, compiled, rng)
    return state


class OutcomeKind(str, enum.Enum):
    EXTINCT = "Extinct"
    ALIVE_AT_HORIZON = "AliveAtHorizon"
    EXPLOSION_CAP_HIT = "ExplosionCapHit"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    generation: Optional[int] = None

    def __str__(self) -> str:
        if self.generation is None:
            return self.kind.value
        return f"{self.kind.value}({self.generation})"


@dataclass(frozen=True)
class GenerationRow:
    n: int
    z: int
    t_star: int
    t_total: int
    saturated: bool
    hist: Tuple[int, ...]


@dataclass
class RunRecord:
    """Per-generation statistics of one trajectory plus its outcome label."""

    rows: List[GenerationRow]
    outcome: Outcome
    seed: int = 0
    replicate_index: int = 0

    @property
    def z_series(self) -> List[int]:
        return [r.z for r in self.rows]

    @property
    def tstar_series(self) -> List[int]:
        return [r.t_star for r in self.rows]

    @property
    def extinct(self) -> bool:
        return self.outcome.kind is OutcomeKind.EXTINCT


def _row(state: GenerationState, hist_cap: int) -> GenerationRow:
    return GenerationRow(
        state.generation, state.z_total, state.t_star, state.total_cells, state.saturated, state.histogram(hist_cap)
    )


def run(
    spec: Union[ModelSpec, CompiledModel],
    initial: GenerationState,
    horizon: int,
    z_cap: int,
    rng: np.random.Generator,
    seed: int = 0,
    replicate_index: int = 0,
    hist_cap: int = HIST_CAP,
) -> RunRecord:
    """
    Steps until extinction, Z_n >= z_cap or n = horizon.

    Args:
        spec: Modèle (ou modèle compilé)
        initial: État de la génération 0
        horizon: Nombre maximal de générations
        z_cap: Seuil d'explosion sur Z_n
        rng: Flux aléatoire du réplicat

    Returns:
        RunRecord rempli
    """
    if horizon < 1 or z_cap < 1:
        raise ValueError("run needs horizon >= 1 and z_cap >= 1")
    compiled = compile_model(spec)
    state = initial
    rows = [_row(state, hist_cap)]
    while True:
        z = rows[-1].z
        if z == 0:
            outcome = Outcome(OutcomeKind.EXTINCT, state.generation)
            break
        if z >= z_cap:
            outcome = Outcome(OutcomeKind.EXPLOSION_CAP_HIT, state.generation)
            break
        if state.generation >= horizon:
            outcome = Outcome(OutcomeKind.ALIVE_AT_HORIZON)
            break
        try:
            state = step(state, compiled, rng)
        except ParasiteOverflowError as e:
            logger.debug(f"{e}; counted as explosion")
            outcome = Outcome(OutcomeKind.EXPLOSION_CAP_HIT, state.generation)
            break
        rows.append(_row(state, hist_cap))
    return RunRecord(rows, outcome, seed, replicate_index)


def _run_chunk(args) -> List[RunRecord]:
    spec, initial_parasites, clean_cells, horizon, z_cap, seed, indices, hist_cap = args
    compiled = CompiledModel(spec)
    start = init(initial_parasites, clean_cells)
    return [
        run(compiled, start, horizon, z_cap, replicate_rng(seed, r), seed, r, hist_cap) for r in indices
    ]


def run_replicates(
    spec: ModelSpec,
    initial_parasites: Sequence[int],
    horizon: int,
    z_cap: int,
    reps: int,
    seed: int,
    workers: int = 1,
    clean_cells: int = 0,
    hist_cap: int = HIST_CAP,
) -> List[RunRecord]:
    """
    Runs `reps` independent trajectories; replicate r always uses stream (seed, r).

    Records come back in replicate order whatever the number of workers.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    workers = max(1, int(workers))
    indices = list(range(reps))
    if workers == 1:
        records = _run_chunk((spec, list(initial_parasites), clean_cells, horizon, z_cap, seed, indices, hist_cap))
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        jobs = [
            (spec, list(initial_parasites), clean_cells, horizon, z_cap, seed, chunk, hist_cap)
            for chunk in chunks
            if chunk
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
        records = sorted((rec for chunk in results for rec in chunk), key=lambda rec: rec.replicate_index)
    counts = summarize_outcomes(records)
    logger.debug(f"🎲 {reps} réplicats (workers={workers}): {counts}")
    return records


def summarize_outcomes(records: Sequence[RunRecord]) -> Dict[str, int]:
    counts = {kind.value: 0 for kind in OutcomeKind}
    for rec in records:
        counts[rec.outcome.kind.value] += 1
    return counts


def records_to_frame(records: Sequence[RunRecord], include_hist: bool = False) -> pd.DataFrame:
    """One row per generation per replicate (CSV handoff)."""
    rows = []
    for rec in records:
        for row in rec.rows:
            item = {
                "replicate": rec.replicate_index,
                "n": row.n,
                "Z_n": row.z,
                "T_star": row.t_star,
                "T_n": row.t_total,
                "clean_saturated": int(row.saturated),
            }
            if include_hist:
                item.update({f"T_{c}": v for c, v in enumerate(row.hist[:-1])})
                item["T_gt"] = row.hist[-1]
            rows.append(item)
    return pd.DataFrame(rows)


@dataclass
class ExpectedCounts:
    """E_z T_{m,c} for m = 0..n and c = 0..cap, with E T_m^*, E Z_m and the escaped fraction."""

    n: int
    cap: int
    z0: int
    nu: float
    table: np.ndarray
    escaped: np.ndarray = field(default=None)

    @property
    def tstar(self) -> np.ndarray:
        return self.table[:, 1:].sum(axis=1)

    @property
    def zbar(self) -> np.ndarray:
        return self.table @ np.arange(self.cap + 1)

    def get(self, m: int, c: int) -> float:
        return float(self.table[m, c]) if c <= self.cap else 0.0

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for m in range(self.n + 1):
            for c in range(self.cap + 1):
                if self.table[m, c] != 0.0:
                    rows.append({"n": m, "k": c, "E_T": float(self.table[m, c])})
        return pd.DataFrame(rows)


def convolution_powers(law_vec: np.ndarray, cap: int) -> np.ndarray:
    """Row z = law of the sum of z iid draws from law_vec, cut at cap (z = 0..cap)."""
    powers = np.zeros((cap + 1, cap + 1))
    powers[0, 0] = 1.0
    for z in range(1, cap + 1):
        powers[z] = np.convolve(powers[z - 1], law_vec)[: cap + 1]
    return powers


def mean_kernel(spec: ModelSpec, cap: int) -> np.ndarray:
    """
    Mean matrix of the cell-type process: K[z, x] = expected number of daughters
    with x parasites of a cell with z parasites (types cut at cap).
    """
    K = np.zeros((cap + 1, cap + 1))
    K[0, 0] = spec.nu
    for k in spec.ks:
        pk = spec.offspring.prob(k)
        law = spec.sharing[k]
        for j in range(1, k + 1):
            vec, _ = law.marginal(j).pmf(cap)
            K[1:] += pk * convolution_powers(vec, cap)[1:]
    return K


def exact_expected_counts(spec: ModelSpec, n: int, z_cap: int, z0: int = 1) -> ExpectedCounts:
    """
    E_z T_{n,c} by the backward recursion E^{(m+1)} = K E^{(m)}, E^{(0)} = I.

    Mass whose parasite count leaves 0..z_cap is dropped; its share of the
    exact total nu^m is reported per generation as `escaped`.

    Raises:
        EscapedMassError: si la part perdue dépasse 0.1
    """
    if not 0 <= n <= EXACT_MAX_HORIZON:
        raise ValueError(f"exact_expected_counts supports 0 <= n <= {EXACT_MAX_HORIZON}, got {n}")
    if not 1 <= z0 <= z_cap:
        raise ValueError(f"start z0={z0} must lie in 1..z_cap={z_cap}")
    K = mean_kernel(spec, z_cap)
    nu = spec.nu
    table = np.zeros((n + 1, z_cap + 1))
    escaped = np.zeros(n + 1)
    E = np.eye(z_cap + 1)
    table[0] = E[z0]
    for m in range(1, n + 1):
        E = K @ E
        table[m] = E[z0]
        total = nu**m
        escaped[m] = max(0.0, (total - table[m].sum()) / total) if total > 0 else 0.0
        if escaped[m] > EXACT_MAX_ESCAPED:
            raise EscapedMassError(
                f"cap z_cap={z_cap} loses {escaped[m]:.3g} of the expected cells at generation {m}",
                "simulate",
                escaped[m],
            )
    logger.debug(f"🧮 exact_expected_counts: n={n} cap={z_cap} E T*_n={table[n, 1:].sum():.6g}")
    return ExpectedCounts(n, z_cap, z0, nu, table, escaped)

