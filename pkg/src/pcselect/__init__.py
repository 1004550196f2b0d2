"""Preconditioner auto-selection for sparse SPD systems.

Pipeline: parse matrices (matio) -> scalar features (features) and RGB
sparsity images (imgcodec) -> timing-based optimal-preconditioner labels
(krylov + labelgen) -> multi-label classifiers (mlkit) -> accuracy/slowdown
evaluation and CLI (evaluation, cli).
"""

__version__ = "0.1.0"
