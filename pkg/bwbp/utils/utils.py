#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
BWBP UTILITIES - FONCTIONS PARTAGÉES
====================================

Helpers shared by every module: centralized configuration (config.json),
loguru setup, compensated sums, hashing and the JSON / CSV writers used for
reports.
"""

import enum
import functools
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from loguru import logger

CONFIG_PATH = Path(__file__).resolve().parent.parent / "config.json"


@functools.lru_cache(maxsize=1)
def load_config() -> dict:
    """
    Charge la configuration centralisée (config.json du package).

    Returns:
        Dictionnaire des paramètres par défaut
    """
    with open(CONFIG_PATH, "r", encoding="utf-8") as f:
        return json.load(f)


def get_setting(key: str, default: Any = None) -> Any:
    return load_config().get(key, default)


def setup_logging(level: Optional[str] = None) -> str:
    """
    Configure loguru (un seul sink stderr).

    Priority: explicit level > BWBP_LOG_LEVEL (environment or .env) >
    LOG_LEVEL from config.json.

    Args:
        level: Niveau de log explicite (ex: "DEBUG")

    Returns:
        Le niveau effectivement utilisé
    """
    load_dotenv()
    resolved = (level or os.getenv("BWBP_LOG_LEVEL") or get_setting("LOG_LEVEL", "INFO")).upper()
    logger.remove()
    logger.add(sys.stderr, level=resolved)
    return resolved


def ensure_directory_exists(path: Path) -> None:
    """
    S'assure qu'un répertoire existe, le crée sinon.

    Args:
        path: Chemin vers le répertoire
    """
    Path(path).mkdir(parents=True, exist_ok=True)


def compensated_sum(values: Iterable[float]) -> float:
    """Exactly rounded float sum (Shewchuk / fsum), used for every moment sum."""
    return math.fsum(values)


def file_sha256(path: Path) -> str:
    """Hash SHA-256 du contenu brut d'un fichier (embarqué dans chaque rapport)."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def encode_extended(value: float) -> Any:
    """Extended reals go to JSON as the strings "inf" / "-inf"."""
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return value


def to_jsonable(obj: Any) -> Any:
    """Convertit récursivement dataclasses, enums, numpy et infinis en objets JSON."""
    if isinstance(obj, enum.Enum):
        return obj.value
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return encode_extended(float(obj))
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float):
        return encode_extended(obj)
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(report: dict, path: Path) -> Path:
    """
    Écrit un rapport JSON déterministe (clés triées, infinis encodés).

    Args:
        report: Contenu du rapport
        path: Fichier de sortie

    Returns:
        Le chemin écrit
    """
    path = Path(path)
    ensure_directory_exists(path.parent)
    path.write_text(dumps_report(report), encoding="utf-8")
    logger.debug(f"💾 Rapport JSON écrit: {path}")
    return path


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    ensure_directory_exists(path.parent)
    df.to_csv(path, index=False, lineterminator="\n")
    logger.debug(f"💾 CSV écrit: {path} ({len(df):,} lignes)")
    return path


def log_dataframe_summary(df: pd.DataFrame, name: str) -> None:
    """
    Affiche un résumé d'un DataFrame de résultats dans les logs.

    Args:
        df: DataFrame à résumer
        name: Nom du DataFrame pour les logs
    """
    if df.empty:
        logger.warning(f"📊 {name}: DataFrame vide")
        return

    logger.info(f"📊 {name}: {len(df):,} lignes × {len(df.columns)} colonnes")

    if "n" in df.columns:
        logger.info(f"   🧬 Générations: {int(df['n'].min())}-{int(df['n'].max())}")
    if "replicate" in df.columns:
        logger.info(f"   🎲 Réplicats: {df['replicate'].nunique()}")
