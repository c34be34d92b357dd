"""Dynamic-skewness stochastic volatility models with scale mixtures of
skew-normal errors, penalized-complexity priors and a NUTS sampler."""

__version__ = "0.1.0"
