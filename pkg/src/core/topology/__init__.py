"""Blind topology learning: coarse regression, incidence pruning and fine refinement."""
from .buffer import SampleBuffer
from .coarse import CoarseEstimate, coarse_identify, prune_incidence
from .errors import (
    DisconnectedTopologyError,
    FineIdentificationDivergence,
    SingularGramError,
    TopologyLearningError,
)
from .fine import FineConfig, calibrate_end_shunts, fine_identify
from .learner import CoarseConfig, LearnerConfig, learn_region, learn_topology
from .model import InferredBranch, LearnedModel, load_learned_model, save_learned_model
