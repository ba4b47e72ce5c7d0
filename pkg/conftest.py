# Rend le package bwbp importable depuis la racine du dépôt (pas d'installation).
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
