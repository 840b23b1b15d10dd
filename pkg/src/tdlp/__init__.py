"""Track-detection link prediction toolkit.

Per-frame association for multi-object tracking, learned end to end: a
transformer-based link scorer (TDLP) and a contrastive baseline (CTDP), a
gated Hungarian tracker, MOT metrics, and synthetic data generators for
controlled benchmarks.
"""

__version__ = "0.1.0"
