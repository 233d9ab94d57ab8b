"""Plane-sweep multi-view stereo with self-adaptive view aggregation and pyramid depth refinement."""

__version__ = "0.1.0"
