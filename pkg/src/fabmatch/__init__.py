"""fabmatch: cross-modal metric learning for fabric look-and-feel matching.

Library layout mirrors the pipeline: ``dataplane`` builds synthetic fabric
worlds, ``ingest`` turns image files into features, ``numcore`` and
``assocnet`` provide the trainable models, ``trainer`` runs optimization,
``evalsuite`` scores retrieval, and ``cli`` binds it all into subcommands.
The numeric hot loops live in ``kernels`` with a compiled core and a numpy
fallback.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
