"""Structure-preserving ABC for time series: MCMC kernels, ABC particle filters and PMMH."""

__version__ = "0.1.0"
