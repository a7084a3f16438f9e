"""Cross-lingual example retrieval for few-shot in-context classification.

Mines nearest-neighbour candidates in an English pool, labels them by
whether a 1-shot prompt answers correctly, fine-tunes a retrieval head on
the resulting pairs, and evaluates retrieval-backed prompting and KNN
across languages.
"""

from .corpus import CandidateSet, Dataset, DatasetError, Example, load_dataset, save_dataset
from .dataconstruct import (
    ConstructionConfig,
    PairConstructionError,
    TrainingPair,
    construct_pairs,
    load_candidates,
    load_pairs,
    mine_candidates,
    save_candidates,
    save_pairs,
)
from .embedding import (
    EmbeddingError,
    EmbeddingFormatError,
    EmbeddingStore,
    HiddenStates,
    Provenance,
    cosine_similarity,
    load_embeddings,
    mean_pool,
    position_weighted_mean_pool,
    save_embeddings,
    top_k,
)
from .evalharness import (
    EvalError,
    EvalRecord,
    SweepResult,
    evaluate,
    macro_average,
    sweep_k,
    sweep_layers,
    sweep_shots,
)
from .reporting import ReportTable, ablation_gaps, emit_report, load_fixture
from .retrieval import (
    RetrievalError,
    RetrievalSetting,
    ShotList,
    icl_predict,
    knn_predict,
    retrieve,
)
from .scorer import (
    DEFAULT_TEMPLATE,
    HttpScorer,
    MockScorer,
    Prediction,
    PromptError,
    PromptSpec,
    ProtocolError,
    RetryPolicy,
    ScoreRequest,
    TransportError,
    mock_scorer,
    render_prompt,
    score_labels,
)
from .trainer import (
    AdamWConfig,
    OptimizerState,
    RetrievalHead,
    TrainerConfig,
    TrainingError,
    TrainingLog,
    adamw_step,
    contrastive_loss,
    encode,
    load_head,
    save_head,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamWConfig",
    "CandidateSet",
    "ConstructionConfig",
    "Dataset",
    "DatasetError",
    "DEFAULT_TEMPLATE",
    "EmbeddingError",
    "EmbeddingFormatError",
    "EmbeddingStore",
    "EvalError",
    "EvalRecord",
    "Example",
    "HiddenStates",
    "HttpScorer",
    "MockScorer",
    "OptimizerState",
    "PairConstructionError",
    "Prediction",
    "PromptError",
    "PromptSpec",
    "ProtocolError",
    "Provenance",
    "ReportTable",
    "RetrievalError",
    "RetrievalHead",
    "RetrievalSetting",
    "RetryPolicy",
    "ScoreRequest",
    "ShotList",
    "SweepResult",
    "TrainerConfig",
    "TrainingError",
    "TrainingLog",
    "TrainingPair",
    "TransportError",
    "ablation_gaps",
    "adamw_step",
    "construct_pairs",
    "contrastive_loss",
    "cosine_similarity",
    "emit_report",
    "encode",
    "evaluate",
    "icl_predict",
    "knn_predict",
    "load_candidates",
    "load_dataset",
    "load_embeddings",
    "load_fixture",
    "load_head",
    "load_pairs",
    "macro_average",
    "mean_pool",
    "mine_candidates",
    "mock_scorer",
    "position_weighted_mean_pool",
    "render_prompt",
    "retrieve",
    "save_candidates",
    "save_dataset",
    "save_embeddings",
    "save_head",
    "save_pairs",
    "score_labels",
    "sweep_k",
    "sweep_layers",
    "sweep_shots",
    "top_k",
    "train",
]
