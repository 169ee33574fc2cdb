"""Hierarchical Bayesian total-survey-error model for US state election polls."""
from .allocation import AllocationMode
from .data import PollRecord, PreparedDataset, RaceResult, parse_polls, parse_results, prepare_dataset
from .model import ParameterSet, Posterior, PriorScales
from .nuts import PosteriorDraws, SamplerConfig, sample

__version__ = "0.1.0"

__all__ = [
    "AllocationMode", "ParameterSet", "PollRecord", "Posterior", "PosteriorDraws",
    "PreparedDataset", "PriorScales", "RaceResult", "SamplerConfig", "parse_polls",
    "parse_results", "prepare_dataset", "sample",
]
