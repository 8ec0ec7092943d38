"""Numerical laboratory for competitive singularly perturbed elliptic systems."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # source tree without installation
    __version__ = "0.0.0"
