"""Image-retrieval re-ranking as message passing on a sparse k-NN graph."""

__version__ = "0.1.0"

from .baselines import (
    KReciprocalConfig,
    alpha_qe,
    aqe,
    cosine_rank,
    k_reciprocal_rerank,
)
from .evaluation import EvalReport, average_precision, evaluate
from .feature_io import FeatureSet, SynthSpec, load_feature_set, synth_dataset, write_feature_set
from .gnn import GnnConfig, gnn_rerank, suggest_k1
from .ranking import RankingResult

__all__ = [
    "EvalReport", "FeatureSet", "GnnConfig", "KReciprocalConfig", "RankingResult", "SynthSpec",
    "alpha_qe", "aqe", "average_precision", "cosine_rank", "evaluate", "gnn_rerank",
    "k_reciprocal_rerank", "load_feature_set", "suggest_k1", "synth_dataset", "write_feature_set",
]
