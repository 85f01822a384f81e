"""Bayesian Gaussian copula graphical models for mixed-type data.

Structure learning with G-Wishart priors, an exchange-type edge sampler,
rank-likelihood latent variables and posterior network summaries.
"""
__version__ = "0.1.0"

from .errors import GCGMError
from .gwishart import Graph, GWishartParams, sample_gwishart
from .mcmc import McmcConfig, convergence_report, run_chain, sample_chain
from .schema_io import Dataset, VariableSpec, VarType, load_dataset
from .summary import PosteriorAccumulator, partial_correlations, summarize, threshold_network

__all__ = [
    "GCGMError",
    "Graph",
    "GWishartParams",
    "sample_gwishart",
    "McmcConfig",
    "convergence_report",
    "run_chain",
    "sample_chain",
    "Dataset",
    "VariableSpec",
    "VarType",
    "load_dataset",
    "PosteriorAccumulator",
    "partial_correlations",
    "summarize",
    "threshold_network",
]
