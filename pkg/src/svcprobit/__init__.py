"""Spatially varying coefficient probit regression for binary lattice data."""

from .dataset import Dataset, Profile
from .diagnostics import autocorrelation, gelman_rubin
from .errors import ConfigError, DataError, NumericalError, SinkError, SvcProbitError
from .firth import firth_fit, firth_map
from .inference import PosteriorSummary, Welford, probability_map, recover_alpha, standardized_map
from .io import load_dataset, read_raster, write_cohort, write_raster
from .kernels import BACKEND
from .lattice import Lattice, build_lattice, color_partition, connected_components
from .model import DesignMatrix, SubjectRecord, build_design, lesion_probability, linear_predictor
from .predict import LikelihoodSink, classify_all, loo_posterior, nbc_classify_loo
from .sampler import McmcConfig, ModelState, Problem, gibbs_run
from .simgen import SimDesign, generate_cohort

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "DataError", "Dataset", "DesignMatrix", "Lattice", "LikelihoodSink",
    "McmcConfig", "ModelState", "NumericalError", "PosteriorSummary", "Problem", "Profile",
    "SimDesign", "SinkError", "SubjectRecord", "SvcProbitError", "Welford", "autocorrelation",
    "build_design", "build_lattice", "classify_all", "color_partition", "connected_components",
    "firth_fit", "firth_map", "gelman_rubin", "generate_cohort", "gibbs_run", "lesion_probability",
    "linear_predictor", "load_dataset", "loo_posterior", "nbc_classify_loo", "probability_map",
    "read_raster", "recover_alpha", "standardized_map", "write_cohort", "write_raster",
]
