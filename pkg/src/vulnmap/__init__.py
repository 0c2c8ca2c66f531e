"""Health vulnerability index for census radios.

Combines walking time to the nearest public health facility with an
autoencoder-derived socioeconomic score, fused by rank-based PCA and a
log-spline CDF into a [0, 1] index.
"""

__version__ = "0.1.0"
