"""Outils communs aux tests (modèles de la galerie, modèles aléatoires)."""

from pathlib import Path

from bwbp.model import FiniteLaw, ModelSpec, OffspringLaw, SharingLaw
from bwbp.modelfile import load_model

MODELS_DIR = Path(__file__).resolve().parent.parent / "models"
GALLERY = [
    "bs",
    "ld",
    "sa_0.2_0.2",
    "w",
    "nu1_bs",
    "nu1_sa",
    "bs_multinomial",
    "ld_leftmost",
    "iid_02",
]


def gallery_model(name: str) -> ModelSpec:
    return load_model(MODELS_DIR / f"{name}.json")


def law(pairs) -> FiniteLaw:
    return FiniteLaw.from_pairs(pairs)


def random_model(rng, max_k: int = 4, max_support: int = 5) -> ModelSpec:
    """Random model: offspring support in 0..max_k (at least one k >= 1), random sharing atoms."""
    ks = sorted(set(int(k) for k in rng.integers(0, max_k + 1, size=int(rng.integers(1, max_support + 1)))))
    if all(k == 0 for k in ks):
        ks.append(int(rng.integers(1, max_k + 1)))
    weights = rng.random(len(ks)) + 0.05
    offspring = OffspringLaw(tuple(zip(ks, weights / weights.sum())))
    sharing = {}
    for k in (k for k in ks if k >= 1):
        n_atoms = int(rng.integers(1, max_support + 1))
        vectors = sorted({tuple(int(x) for x in rng.integers(0, 4, size=k)) for _ in range(n_atoms)})
        probs = rng.random(len(vectors)) + 0.05
        sharing[k] = SharingLaw(k, tuple(zip(vectors, probs / probs.sum())))
    return ModelSpec(offspring, sharing, "random")
