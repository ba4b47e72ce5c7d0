#!/usr/bin/env python3
"""
Model layer of the branching-within-branching process (BwBP).

Cells split according to an offspring law (p_k); given that a cell has k
daughters, each hosted parasite independently draws a sharing vector
X^(•,k) telling how many of its offspring go to daughters 1..k.

This module holds the finite-support laws, the ModelSpec, the exact first
moments (nu, gamma, mu_{j,k}), assumption checks (A1)-(A3), the alpha(M)
truncation and the constructors of the usual model families.
"""

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import stats

from bwbp.utils.errors import CapacityError, ModelStructureError
from bwbp.utils.utils import compensated_sum, get_setting

TOLERANCE = float(get_setting("TOLERANCE", 1e-12))
ENUMERATION_BUDGET = int(get_setting("ENUMERATION_BUDGET", 1_000_000))


def _normalize_atoms(atoms: Iterable, what: str, key=lambda v: v) -> tuple:
    """Checks a list of (value, prob) atoms and returns it sorted, zero-mass atoms dropped."""
    seen = {}
    for item in atoms:
        try:
            value, prob = item
        except (TypeError, ValueError):
            raise ModelStructureError(f"{what}: atom {item!r} is not a (value, prob) pair", "model")
        value = key(value)
        prob = float(prob)
        if not (-TOLERANCE <= prob <= 1.0 + TOLERANCE) or math.isnan(prob):
            raise ModelStructureError(f"{what}: probability {prob} outside [0, 1]", "model")
        # sums of rebuilt marginals may overshoot 1 by rounding
        prob = min(max(prob, 0.0), 1.0)
        if value in seen:
            raise ModelStructureError(f"{what}: duplicate atom {value!r}", "model")
        seen[value] = prob
    if not seen:
        raise ModelStructureError(f"{what}: empty law", "model")
    total = compensated_sum(seen.values())
    if abs(total - 1.0) > TOLERANCE:
        raise ModelStructureError(f"{what}: probabilities sum to {total!r}, not 1", "model")
    return tuple(sorted((v, p) for v, p in seen.items() if p > 0.0))


def _as_count(value) -> int:
    try:
        valid = not isinstance(value, bool) and int(value) == value and int(value) >= 0
    except (TypeError, ValueError):
        valid = False
    if not valid:
        raise ModelStructureError(f"count {value!r} is not a non-negative integer", "model")
    return int(value)


@dataclass(frozen=True)
class FiniteLaw:
    """Finitely supported law on N_0, stored as sorted (value, prob) atoms."""

    atoms: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "atoms", _normalize_atoms(self.atoms, type(self).__name__, _as_count))

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "FiniteLaw":
        return cls(tuple(tuple(p) for p in pairs))

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, float]) -> "FiniteLaw":
        return cls(tuple(mapping.items()))

    @classmethod
    def point(cls, value: int) -> "FiniteLaw":
        return cls(((value, 1.0),))

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms], dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float)

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(v for v, _ in self.atoms)

    @property
    def max_value(self) -> int:
        return self.atoms[-1][0]

    @property
    def mean(self) -> float:
        return compensated_sum(v * p for v, p in self.atoms)

    def prob(self, value: int) -> float:
        for v, p in self.atoms:
            if v == value:
                return p
        return 0.0

    def pmf(self, cap: int) -> Tuple[np.ndarray, float]:
        """Probability vector over 0..cap plus the mass sitting above cap."""
        vec = np.zeros(cap + 1)
        escaped = []
        for v, p in self.atoms:
            if v <= cap:
                vec[v] += p
            else:
                escaped.append(p)
        return vec, compensated_sum(escaped)

    def to_pairs(self) -> List[list]:
        return [[v, p] for v, p in self.atoms]


class OffspringLaw(FiniteLaw):
    """Cell offspring law (p_k); its mean is nu."""

    @property
    def nu(self) -> float:
        return self.mean

    @property
    def ks(self) -> Tuple[int, ...]:
        return self.support


def _as_vector(k: int):
    def convert(vector) -> Tuple[int, ...]:
        vector = tuple(_as_count(x) for x in vector)
        if len(vector) != k:
            raise ModelStructureError(f"sharing vector {vector} has length {len(vector)}, expected {k}", "model")
        return vector

    return convert


@dataclass(frozen=True)
class SharingLaw:
    """Joint law of X^(•,k): one parasite's offspring sent to each of the k daughters."""

    k: int
    atoms: Tuple[Tuple[Tuple[int, ...], float], ...]

    def __post_init__(self):
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
            raise ModelStructureError(f"SharingLaw needs k >= 1, got {self.k!r}", "model")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(
            self, "atoms", _normalize_atoms(self.atoms, f"SharingLaw(k={self.k})", _as_vector(self.k))
        )

    @property
    def vectors(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms], dtype=np.int64).reshape(len(self.atoms), self.k)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float)

    def marginal(self, j: int) -> FiniteLaw:
        """Law of X^(j,k), j in 1..k."""
        if not 1 <= j <= self.k:
            raise ValueError(f"coordinate j={j} outside 1..{self.k}")
        buckets: Dict[int, list] = defaultdict(list)
        for vector, prob in self.atoms:
            buckets[vector[j - 1]].append(prob)
        return FiniteLaw(tuple((x, compensated_sum(ps)) for x, ps in buckets.items()))

    def marginal_means(self) -> Tuple[float, ...]:
        return tuple(
            compensated_sum(vector[j] * prob for vector, prob in self.atoms) for j in range(self.k)
        )

    def total_law(self) -> FiniteLaw:
        """Law of sum_j X^(j,k), the parasite's total offspring."""
        buckets: Dict[int, list] = defaultdict(list)
        for vector, prob in self.atoms:
            buckets[sum(vector)].append(prob)
        return FiniteLaw(tuple((x, compensated_sum(ps)) for x, ps in buckets.items()))

    def positive_coordinates(self) -> Tuple[int, ...]:
        """1-based coordinates j with P(X^(j,k) > 0) > 0."""
        return tuple(j + 1 for j in range(self.k) if any(v[j] > 0 for v, _ in self.atoms))

    def to_pairs(self) -> List[list]:
        return [[list(v), p] for v, p in self.atoms]


@dataclass(frozen=True)
class ModelSpec:
    """Full BwBP parameterization: offspring law plus one SharingLaw per supported k >= 1."""

    offspring: OffspringLaw
    sharing: Dict[int, SharingLaw] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if not isinstance(self.offspring, FiniteLaw):
            raise ModelStructureError("offspring must be an OffspringLaw", "model")
        if not isinstance(self.offspring, OffspringLaw):
            object.__setattr__(self, "offspring", OffspringLaw(self.offspring.atoms))
        object.__setattr__(self, "sharing", dict(sorted((int(k), s) for k, s in self.sharing.items())))
        check_structure(self)

    @property
    def nu(self) -> float:
        return self.offspring.nu

    @property
    def ks(self) -> Tuple[int, ...]:
        """Supported daughter counts k >= 1."""
        return tuple(k for k in self.offspring.ks if k >= 1)


@dataclass(frozen=True)
class AssumptionReport:
    a1_holds: bool
    a2_holds: bool
    a3_holds: bool
    p1_less_than_1: bool
    z1_nondegenerate: bool
    degenerate_sharing: bool
    violations: Tuple[str, ...] = ()

    @property
    def all_hold(self) -> bool:
        return self.a1_holds and self.a2_holds and self.a3_holds

    def to_dict(self) -> dict:
        return {
            "a1_holds": self.a1_holds,
            "a2_holds": self.a2_holds,
            "a3_holds": self.a3_holds,
            "p1_less_than_1": self.p1_less_than_1,
            "z1_nondegenerate": self.z1_nondegenerate,
            "degenerate_sharing": self.degenerate_sharing,
            "violations": list(self.violations),
        }


@dataclass(frozen=True)
class Moments:
    nu: float
    gamma: float
    mu: Dict[Tuple[int, int], float]

    def __iter__(self):
        return iter((self.nu, self.gamma, self.mu))


def check_structure(spec: ModelSpec) -> None:
    """Raises ModelStructureError unless every supported k >= 1 has exactly its SharingLaw."""
    for k in spec.ks:
        if k not in spec.sharing:
            raise ModelStructureError(f"missing SharingLaw for supported k={k}", "model")
    for k, law in spec.sharing.items():
        if not isinstance(law, SharingLaw):
            raise ModelStructureError(f"sharing[{k}] is not a SharingLaw", "model")
        if law.k != k:
            raise ModelStructureError(f"sharing[{k}] has k={law.k}", "model")
        if k not in spec.ks:
            raise ModelStructureError(f"SharingLaw given for k={k} but p_{k} = 0", "model")


def moments(spec: ModelSpec) -> Moments:
    """
    Exact first moments.

    Returns:
        Moments(nu, gamma, mu) with mu[(j, k)] = E X^(j,k)
    """
    check_structure(spec)
    mu = {}
    for k, law in spec.sharing.items():
        for j, m in enumerate(law.marginal_means(), start=1):
            mu[(j, k)] = m
    gamma = compensated_sum(spec.offspring.prob(k) * mu[(j, k)] for (j, k) in mu)
    return Moments(nu=spec.nu, gamma=gamma, mu=mu)


def first_generation_law(spec: ModelSpec) -> FiniteLaw:
    """Exact law of Z_1 under P_1 (mixture over k of the total sharing law)."""
    buckets: Dict[int, list] = defaultdict(list)
    for k, pk in spec.offspring.atoms:
        if k == 0:
            buckets[0].append(pk)
            continue
        for x, px in spec.sharing[k].total_law().atoms:
            buckets[x].append(pk * px)
    return FiniteLaw(tuple((x, compensated_sum(ps)) for x, ps in buckets.items()))


def is_degenerate_sharing(spec: ModelSpec) -> bool:
    return all(len(spec.sharing[k].positive_coordinates()) <= 1 for k in spec.ks)


def validate(spec: ModelSpec) -> AssumptionReport:
    """
    Evaluates (A1)-(A3) exactly from the finite-support laws.

    Structural defects raise ModelStructureError; assumption failures are
    only listed in the returned report.
    """
    check_structure(spec)
    nu, gamma, _ = moments(spec)
    violations = []

    a1 = 0.0 < gamma < math.inf
    if not a1:
        violations.append(f"(A1) gamma={gamma!r} is not in (0, inf)")

    p1 = spec.offspring.prob(1)
    p1_less = p1 < 1.0 - TOLERANCE
    if not p1_less:
        violations.append("(A2) P(N=1)=1: the cell tree is a single line")
    pz1 = first_generation_law(spec).prob(1)
    z1_nondeg = pz1 < 1.0 - TOLERANCE
    if not z1_nondeg:
        violations.append("(A2) P(Z_1=1)=1: the parasite count never changes")

    a3 = any(
        spec.offspring.prob(k) > 0 and any(v[j] >= 2 for v, _ in spec.sharing[k].atoms)
        for k in spec.ks
        for j in range(k)
    )
    if not a3:
        violations.append("(A3) no (j,k) with p_k P(X^(j,k) >= 2) > 0")

    report = AssumptionReport(
        a1_holds=a1,
        a2_holds=p1_less and z1_nondeg,
        a3_holds=a3,
        p1_less_than_1=p1_less,
        z1_nondegenerate=z1_nondeg,
        degenerate_sharing=is_degenerate_sharing(spec),
        violations=tuple(violations),
    )
    logger.debug(f"🔎 validate({spec.label or 'model'}): nu={nu} gamma={gamma} violations={list(violations)}")
    return report


TRUNCATION_RULES = ("mean", "clipped_mean")


def truncate(spec: ModelSpec, M: int, rule: str = "mean") -> ModelSpec:
    """
    alpha(M)-truncation.

    Values above M are replaced by 0, and coordinate j of SharingLaw(k) is
    zeroed everywhere when its mean is below 1/M. Identical vectors are
    merged and the cell offspring law is untouched.

    With rule="mean" the kill test uses mu_{j,k} itself, which gives the
    alpha^{(j,k)}(M) marginals. This rule is not idempotent: BS with M=1
    keeps (0,0)@1/2, (1,1)@1/2, and a second pass kills both coordinates.
    With rule="clipped_mean" the test uses E X^(j,k) 1{X^(j,k) <= M}, and
    truncate(truncate(s, M), M) == truncate(s, M).
    """
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise ValueError(f"truncate needs a positive integer M, got {M!r}")
    if rule not in TRUNCATION_RULES:
        raise ValueError(f"unknown truncation rule {rule!r}, expected one of {TRUNCATION_RULES}")
    M = int(M)
    new_sharing = {}
    for k, law in spec.sharing.items():
        if rule == "mean":
            means = law.marginal_means()
        else:
            means = [compensated_sum(v[j] * p for v, p in law.atoms if v[j] <= M) for j in range(k)]
        kill = [m < 1.0 / M for m in means]
        buckets: Dict[Tuple[int, ...], list] = defaultdict(list)
        for vector, prob in law.atoms:
            clipped = tuple(0 if (kill[j] or x > M) else x for j, x in enumerate(vector))
            buckets[clipped].append(prob)
        new_sharing[k] = SharingLaw(k, tuple((v, compensated_sum(ps)) for v, ps in buckets.items()))
    label = f"{spec.label}|alpha({M})" if spec.label else f"alpha({M})"
    return ModelSpec(spec.offspring, new_sharing, label)


def _check_budget(count: int, x, k: int) -> None:
    if count > ENUMERATION_BUDGET:
        raise CapacityError(
            f"enumeration of {count:,} atoms for (x={x}, k={k}) exceeds the budget of {ENUMERATION_BUDGET:,}",
            "model",
        )


def _compositions(x: int, k: int) -> np.ndarray:
    """All vectors of k non-negative integers summing to x (stars and bars)."""
    rows = []
    for bars in itertools.combinations(range(x + k - 1), k - 1):
        edges = (-1,) + bars + (x + k - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    return np.array(rows, dtype=np.int64).reshape(len(rows), k)


def _merge(atoms: Iterable[Tuple[Tuple[int, ...], float]]) -> tuple:
    buckets: Dict[Tuple[int, ...], list] = defaultdict(list)
    for vector, prob in atoms:
        if prob > 0.0:
            buckets[vector].append(prob)
    return tuple((v, compensated_sum(ps)) for v, ps in buckets.items())


def make_multinomial(
    offspring: OffspringLaw,
    parasite_law: FiniteLaw,
    q: Mapping[int, Sequence[float]],
    label: str = "multinomial",
) -> ModelSpec:
    """
    Multinomial repartition: a parasite has x ~ parasite_law offspring, shared
    multinomially with weights q(k) among the k daughters.

    Args:
        offspring: Loi du nombre de cellules filles
        parasite_law: Loi du nombre total de descendants d'un parasite
        q: Pour chaque k supporté, vecteur (q_1(k), ..., q_k(k))

    Returns:
        ModelSpec avec les SharingLaw énumérées
    """
    offspring = OffspringLaw(offspring.atoms)
    sharing = {}
    for k in (k for k in offspring.ks if k >= 1):
        weights = q.get(k, q.get(str(k))) if isinstance(q, Mapping) else None
        if weights is None:
            raise ModelStructureError(f"multinomial family: missing q for k={k}", "model")
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (k,) or np.any(weights < 0) or abs(compensated_sum(weights) - 1.0) > TOLERANCE:
            raise ModelStructureError(f"multinomial family: q({k}) must be a probability vector of length {k}", "model")
        total = 0
        atoms = []
        for x, px in parasite_law.atoms:
            total += math.comb(x + k - 1, k - 1)
            _check_budget(total, x, k)
            comps = _compositions(x, k)
            if k == 1:
                pmf = np.ones(len(comps))
            else:
                pmf = stats.multinomial.pmf(comps, n=x, p=weights)
            atoms.extend((tuple(int(c) for c in row), px * float(p)) for row, p in zip(comps, pmf))
        sharing[k] = SharingLaw(k, _renormalized(_merge(atoms)))
    logger.debug(f"🧮 make_multinomial: {sum(len(s.atoms) for s in sharing.values())} atomes")
    return ModelSpec(offspring, sharing, label)


def _renormalized(atoms: tuple) -> tuple:
    # scipy's pmf is accurate to a few ulps; absorb that drift so the sum is 1 to ~1e-16.
    total = compensated_sum(p for _, p in atoms)
    if abs(total - 1.0) > TOLERANCE:
        return atoms
    return tuple((v, p / total) for v, p in atoms)


def make_iid_per_daughter(offspring: OffspringLaw, per_cell_law: FiniteLaw, label: str = "iid_per_daughter") -> ModelSpec:
    """Every coordinate X^(j,k) iid with law per_cell_law (product law, enumerated)."""
    offspring = OffspringLaw(offspring.atoms)
    sharing = {}
    for k in (k for k in offspring.ks if k >= 1):
        _check_budget(len(per_cell_law.atoms) ** k, per_cell_law.max_value, k)
        atoms = (
            (tuple(v for v, _ in combo), math.prod(p for _, p in combo))
            for combo in itertools.product(per_cell_law.atoms, repeat=k)
        )
        sharing[k] = SharingLaw(k, _merge(atoms))
    return ModelSpec(offspring, sharing, label)


def make_leftmost(
    offspring: OffspringLaw, leftmost_laws: Mapping[int, FiniteLaw], label: str = "leftmost"
) -> ModelSpec:
    """Parasites only ever go to daughter 1: X^(1,k) ~ leftmost_laws[k], X^(j,k) = 0 for j >= 2."""
    offspring = OffspringLaw(offspring.atoms)
    sharing = {}
    for k in (k for k in offspring.ks if k >= 1):
        law = leftmost_laws.get(k, leftmost_laws.get(str(k))) if isinstance(leftmost_laws, Mapping) else None
        if law is None:
            raise ModelStructureError(f"leftmost family: missing law for k={k}", "model")
        sharing[k] = SharingLaw(k, tuple(((x,) + (0,) * (k - 1), p) for x, p in law.atoms))
    return ModelSpec(offspring, sharing, label)


def describe(spec: ModelSpec, name: Optional[str] = None) -> None:
    """Résumé lisible du modèle dans les logs."""
    nu, gamma, mu = moments(spec)
    logger.info(
        f"\n🧫 MODÈLE {name or spec.label or '(sans nom)'}\n"
        f"  • k supportés : {list(spec.ks)}\n"
        f"  • nu          : {nu:.6g}\n"
        f"  • gamma       : {gamma:.6g}\n"
        f"  • atomes      : {sum(len(s.atoms) for s in spec.sharing.values())}\n"
    )
    logger.trace(f"mu = { {f'{j},{k}': v for (j, k), v in mu.items()} }")
