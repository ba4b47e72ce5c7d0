"""
bwbp : processus de branchement dans le branchement (cellules hôtes, parasites).

Modules : model, modelfile, simulate, spine, criteria, estimate, cli.
"""

__version__ = "1.0.0"
