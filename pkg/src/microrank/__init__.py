"""Ranking micro-influencer accounts against brands from pooled multimodal embeddings.

Subpackages: ``numcore`` (dense layers, Adam, gradient checking),
``dataset`` (ingestion, pooling, folds, synthetic data), ``sampler``
(training pools), ``models`` (diagonal and multi-task bilinear scorers),
``train`` (training loop), ``evaluate`` (metrics and baselines),
``interpret`` (importance heatmaps) and ``cli``.
"""

__version__ = "0.1.0"
