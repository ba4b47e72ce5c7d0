# Ce dossier contient les utilitaires partagés (config, logging, erreurs, échantillonnage).
