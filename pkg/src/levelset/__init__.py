"""Density level sets from samples: kernel estimates, bootstrap confidence
sets, pointwise level tests, and cluster-graph visualizations."""

__version__ = "0.1.0"

from .kde import KDE, GridSpec, SampleSet, silverman_bandwidth  # noqa: E402
from .inference import BootstrapConfig, ConfidenceSet  # noqa: E402

__all__ = ["KDE", "GridSpec", "SampleSet", "silverman_bandwidth", "BootstrapConfig", "ConfidenceSet", "__version__"]
