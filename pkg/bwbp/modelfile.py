"""
Model file format (JSON, UTF-8).

    {
      "label": "BS",
      "description": "optional free text",
      "offspring": [[k, prob], ...],
      "sharing": {"k": [[[x_1, ..., x_k], prob], ...], ...}
    }

or, instead of "sharing", a family with its parameters:

    "family": "multinomial",      "parasite_law": [[x, prob], ...], "q": {"k": [q_1, ..., q_k]}
    "family": "iid_per_daughter", "per_cell_law": [[x, prob], ...]
    "family": "leftmost",         "leftmost_laws": {"k": [[x, prob], ...]}

Unknown keys are rejected.
"""

import json
from pathlib import Path
from typing import Union

from loguru import logger

from bwbp.model import (
    FiniteLaw,
    ModelSpec,
    OffspringLaw,
    SharingLaw,
    make_iid_per_daughter,
    make_leftmost,
    make_multinomial,
)
from bwbp.utils.errors import BwbpError, ModelStructureError

FAMILY_PARAMETERS = {
    "multinomial": {"parasite_law", "q"},
    "iid_per_daughter": {"per_cell_law"},
    "leftmost": {"leftmost_laws"},
}
BASE_KEYS = {"label", "description", "offspring", "sharing", "family"}
KNOWN_KEYS = BASE_KEYS.union(*FAMILY_PARAMETERS.values())


def _law(obj, what: str) -> FiniteLaw:
    if not isinstance(obj, list):
        raise ModelStructureError(f"{what} must be a list of [value, prob] pairs", "modelfile")
    return FiniteLaw.from_pairs(obj)


def _keyed(obj, what: str) -> dict:
    if not isinstance(obj, dict):
        raise ModelStructureError(f"{what} must be an object keyed by k", "modelfile")
    try:
        return {int(k): v for k, v in obj.items()}
    except ValueError:
        raise ModelStructureError(f"{what}: keys must be integers k", "modelfile")


def parse_model(obj: dict) -> ModelSpec:
    """
    Builds a ModelSpec from a decoded model file.

    Args:
        obj: Contenu JSON décodé

    Returns:
        ModelSpec validé structurellement
    """
    try:
        return _build(obj)
    except BwbpError:
        raise
    except (TypeError, ValueError, AttributeError) as e:
        raise ModelStructureError(f"malformed model file: {e}", "modelfile") from e


def _build(obj: dict) -> ModelSpec:
    if not isinstance(obj, dict):
        raise ModelStructureError("model file must hold a JSON object", "modelfile")
    unknown = sorted(set(obj) - KNOWN_KEYS)
    if unknown:
        raise ModelStructureError(f"unknown keys {unknown}", "modelfile")
    if "offspring" not in obj:
        raise ModelStructureError("missing 'offspring'", "modelfile")
    label = str(obj.get("label", ""))
    offspring = OffspringLaw.from_pairs(obj["offspring"])

    family = obj.get("family")
    if ("sharing" in obj) == (family is not None):
        raise ModelStructureError("give exactly one of 'sharing' or 'family'", "modelfile")

    if family is None:
        sharing = {
            k: SharingLaw(k, tuple((tuple(vec), p) for vec, p in atoms))
            for k, atoms in _keyed(obj["sharing"], "sharing").items()
        }
        return ModelSpec(offspring, sharing, label)

    if family not in FAMILY_PARAMETERS:
        raise ModelStructureError(f"unknown family {family!r}", "modelfile")
    present = set(obj) - BASE_KEYS
    expected = FAMILY_PARAMETERS[family]
    if present != expected:
        raise ModelStructureError(
            f"family {family!r} takes parameters {sorted(expected)}, got {sorted(present)}", "modelfile"
        )
    if family == "multinomial":
        q = _keyed(obj["q"], "q")
        return make_multinomial(offspring, _law(obj["parasite_law"], "parasite_law"), q, label)
    if family == "iid_per_daughter":
        return make_iid_per_daughter(offspring, _law(obj["per_cell_law"], "per_cell_law"), label)
    laws = {k: _law(v, f"leftmost_laws[{k}]") for k, v in _keyed(obj["leftmost_laws"], "leftmost_laws").items()}
    return make_leftmost(offspring, laws, label)


def load_model(path: Union[str, Path]) -> ModelSpec:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelStructureError(f"{path.name}: invalid JSON ({e})", "modelfile")
    spec = parse_model(obj)
    if not spec.label:
        spec = ModelSpec(spec.offspring, spec.sharing, path.stem)
    logger.debug(f"📁 Modèle chargé: {path.name} → {spec.label}")
    return spec


def dump_model(spec: ModelSpec) -> dict:
    """Explicit-'sharing' form of a model, ready for json.dump."""
    return {
        "label": spec.label,
        "offspring": spec.offspring.to_pairs(),
        "sharing": {str(k): law.to_pairs() for k, law in spec.sharing.items()},
    }
