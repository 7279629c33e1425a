"""Numerical laboratory for vector-valued Littlewood-Paley-Stein square functions."""
from importlib.metadata import PackageNotFoundError, version

from .estimators import (
    CotypeEstimator,
    DyadicSquareFunction,
    GFunctionTransformer,
    LacunaryTransformer,
    LusinAreaTransformer,
    LusinConstantEstimator,
    MaximalTransformer,
    WalshGFunction,
)
from .numgrid import Field, GridSpec, LogTimeGrid, VectorTarget

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "CotypeEstimator",
    "DyadicSquareFunction",
    "Field",
    "GFunctionTransformer",
    "GridSpec",
    "LacunaryTransformer",
    "LogTimeGrid",
    "LusinAreaTransformer",
    "LusinConstantEstimator",
    "MaximalTransformer",
    "VectorTarget",
    "WalshGFunction",
]
