"""Symbolic regularization of singular perturbation series via hidden scale
symmetries: bare series construction, painting, finite-transformation systems,
and uniformly valid solutions, with independent numeric oracles."""

__version__ = "0.1.0"

from .exprcore import Expr, Poly, OutOfClassError  # noqa: F401
