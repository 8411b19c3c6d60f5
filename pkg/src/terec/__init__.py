"""Content-based recommendation of new text items with jointly trained text embeddings."""

from .checkpoint import Checkpoint
from .corpus import InteractionSet, TripletSampler, Vocabulary, build_vocab, split_items, tokenize
from .encoder import CnnParams, MovParams
from .model import JointModel, JointParams
from .numkit import SeededRng
from .pvec import PretrainedMatrix, PvConfig, pretrain
from .trainkit import EvalReport, TrainConfig, build_candidate_sets, evaluate, fit_and_evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "CnnParams", "EvalReport", "InteractionSet", "JointModel", "JointParams",
    "MovParams", "PretrainedMatrix", "PvConfig", "SeededRng", "TrainConfig", "TripletSampler",
    "Vocabulary", "build_candidate_sets", "build_vocab", "evaluate", "fit_and_evaluate",
    "pretrain", "split_items", "tokenize", "train",
]
