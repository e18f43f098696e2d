"""Shape and value tokens, class-specific priors and a prior-enhanced transformer
for multivariate time-series classification."""

__version__ = "0.1.0"
