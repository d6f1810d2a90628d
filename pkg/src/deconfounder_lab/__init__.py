"""Causal-inference laboratory for multiple causes with shared confounding.

Submodules: ``scm`` (models and sampling), ``oracle`` (ground-truth
interventions), ``proxy`` (identification via null functions),
``deconfounder`` (estimation), ``nullfn`` (null-function checks) and
``harness`` (experiment runner and CLI).
"""

from .errors import LabError
from .oracle import InterventionQuery
from .scm import Dataset, DiscreteDist, GaussianDist, Node, NodeRole, ScmSpec

__all__ = [
    "Dataset",
    "DiscreteDist",
    "GaussianDist",
    "InterventionQuery",
    "LabError",
    "Node",
    "NodeRole",
    "ScmSpec",
]
__version__ = "0.1.0"
