"""Toolkit for fast, frequent, fine-grained event detection in frame streams.

Submodules:

* :mod:`f3kit.taxonomy` - event taxonomies and the binary event codec
* :mod:`f3kit.rulebook` - combination and sequence-logic constraints
* :mod:`f3kit.dataset_io` - clip manifests, frame/feature files, splits, windows
* :mod:`f3kit.simulator` - rule-consistent synthetic rally datasets
* :mod:`f3kit.neural` - numpy tensor ops with hand-derived gradients
* :mod:`f3kit.f3ed` - the localize / classify / refine detection model
* :mod:`f3kit.metrics` - edit score and tolerance-matched F1 evaluation
* :mod:`f3kit.annotation` - annotation backend (cuts, majority vote, HTTP API)
"""

__version__ = "0.1.0"

from .taxonomy import Granularity, Taxonomy, load_taxonomy
from .rulebook import RallyContext, Rulebook, load_rules

__all__ = [
    "Granularity",
    "RallyContext",
    "Rulebook",
    "Taxonomy",
    "load_rules",
    "load_taxonomy",
    "__version__",
]
