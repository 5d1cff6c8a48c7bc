"""Vehicle tracking and counting engine.

Consumes per-frame object detections, maintains identities with a two-stage
association tracker (optionally fused with appearance features), counts
vehicles with finish-line and motion-vector rules under user-drawn masks,
caches tracker output for fast deterministic replay, and evaluates itself
with standard multi-object-tracking metrics.
"""

__version__ = "0.1.0"
