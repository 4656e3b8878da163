"""Contextual stochastic optimization for prosumer networks.

Library layers: prosumer physics (:mod:`.model`), scenario data and the
synthetic generator (:mod:`.scenarios`), kNN/consensus-kNN sample
weights (:mod:`.weights`), the embedded QP/MIQP solver (:mod:`.qp`,
:mod:`.lp_format`), weighted two-stage solving (:mod:`.twostage`),
bilevel hyperparameter training and the KKT/big-M verification path
(:mod:`.bilevel`), the consensus-ADMM runtime (:mod:`.admm`), baselines
and metrics (:mod:`.evaluate`), and seeded experiment orchestration
(:mod:`.experiments`, :mod:`.cli`).
"""

from .model import DecisionVector, ProsumerParams
from .scenarios import Dataset, GeneratorConfig, Outcome, Sample, generate_community, generate_synthetic
from .weights import WeightConfig, WeightVector, cknn_weights, knn_neighbors, knn_weights
from .qp import MipProblem, QpProblem, Solution, solve_miqp, solve_qp
from .twostage import solve_wsaa
from .bilevel import TrainedPolicy, prescribe, train
from .admm import Agent, Topology
from .evaluate import MethodResult, evaluate_expost, peak_metrics, solve_po, solve_saa
from .experiments import ExperimentConfig, run_experiment

__version__ = "0.1.0"
