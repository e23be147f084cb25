"""Hierarchical long-document classification at desk scale.

Overlapped token segmentation, a miniature transformer segment encoder
producing pooled vectors (H) and class posteriors (P), and document-level
aggregators: a recurrent model, a segment-level transformer, and voting
baselines.
"""

__version__ = "0.1.0"
