"""hfwave: high-frequency waves on Lorentzian backgrounds, defect measures,
and massless transport checks, at desk scale."""

__version__ = "0.1.0"

from .grid import SpacetimeGrid
from .geometry import (MetricField, OscillatingMetricFamily, SignatureError,
                       box_apply, cauchy_frame, mass_shell, metric_from_fn,
                       minkowski, oscillating_family, burnett_rate_check)
from .families import EpsilonFamily
