"""Interventional effect estimation for graph-structured cohorts with a from-scratch GCN."""

from ._kernels import backend
from .backdoor import AdjustmentBasis, fit_all_bases, fit_basis, project, reconstruct
from .gcn_model import NumericalError, TrainConfig, TrainedModel, load_checkpoint, save_checkpoint, train
from .graph_data import (
    CohortDataset,
    CohortError,
    FoldSplit,
    GraphError,
    load_cohort,
    normalize_adjacency,
    standardize,
    stratified_kfold,
    threshold_and_rescale,
)
from .inference import PipelineConfig, PipelineError, RunReport, auc, bootstrap_effects, run_pipeline, write_report
from .intervention import InterventionError, InterventionLevels, compute_levels, delta, do_forward, sever_node
from .synth_scm import GroundTruth, ScmSpec, generate_cohort, oracle_delta, preset

__version__ = "0.1.0"
