"""Paired-sensor impulsive noise pipeline.

Detects impulsive noise events on a source and a receiver sensor and
decides, per window, whether receiver-side events originated at the known
source: thresholded detection on each device plus a lag-bounded
cross-correlation fallback between the two prediction series.
"""

__version__ = "0.1.0"
