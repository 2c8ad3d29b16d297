"""Concept-bottleneck classification of functional-connectivity graphs.

Connectivity concepts (pairs of ROI sets, optionally signed) are parsed from
text, ranked on a cohort, and used as an interpretable bottleneck on top of a
graph encoder written against a small float64 autodiff core.
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
