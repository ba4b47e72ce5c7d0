import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from bwbp.criteria import classify  # noqa: E402
from bwbp.model import validate  # noqa: E402
from bwbp.modelfile import load_model  # noqa: E402
from bwbp.utils.errors import BwbpError  # noqa: E402

print('--- DIAGNOSTIC GALERIE DE MODÈLES ---')
for path in sorted((Path(__file__).resolve().parent.parent / 'models').glob('*.json')):
    try:
        spec = load_model(path)
        if not validate(spec).all_hold:
            print(f'{path.stem:20s}  hypothèses non vérifiées')
            continue
        report = classify(spec)
        print(f'{path.stem:20s}  {report.summary()}  [{report.abpre_class.value}]')
    except BwbpError as e:
        print(f'{path.stem:20s}  erreur: {e}')
