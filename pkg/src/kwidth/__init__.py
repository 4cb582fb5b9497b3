"""Robust signal detection under convex constraints via approximate Kolmogorov widths."""

__version__ = "0.1.0"

from .geometry import ConstraintSet, gauge_eval, contains, quad_max_oracle  # noqa: E402,F401
from .widths import width_profile, solve_width_sdp, WidthProfile  # noqa: E402,F401
from .detect import DetectConfig, robust_test, theoretical_test  # noqa: E402,F401
