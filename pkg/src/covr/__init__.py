"""Composed video retrieval: query/description/modification fusion, a
hard-negative contrastive objective, exact cosine search, and Recall@K
evaluation, on a small numpy autodiff core."""

from .autograd import Tensor, grad_check, no_grad, scaled_dot_attention, softmax_rows
from .data import CorpusStats, Triplet, dataset_stats, hallucination_gate, read_triplets, write_triplets
from .embeddings import (
    EmbeddingStore,
    TokenSequence,
    load_embedding_store,
    middle_frame_select,
    tokenize,
    toy_embed_text,
    write_embedding_store,
)
from .errors import (
    ConfigError,
    CovrError,
    DataError,
    EvaluationError,
    FormatError,
    InputError,
    ShapeError,
    TrainingError,
)
from .evaluation import ComparisonReport, EvalReport, compare_fusion, evaluate_dataset, recall_at_k, subset_recall
from .fusion import (
    FusionConfig,
    FusionParams,
    combine_query_description,
    ground_modification,
    init_params,
    load_checkpoint,
    pairwise_fuse,
    project_description,
    save_checkpoint,
    unified_fuse,
)
from .objective import SimilarityMatrix, hard_negative_weights, hn_nce_loss, similarity_matrix
from .retrieval import Index, RetrievalResult, brute_force_rank, build_index, search_topk
from .sources import EmbeddingSources, StoreDescriptions, TextDescriptions
from .training import TrainConfig, make_optimizer, train

__version__ = "0.1.0"

__all__ = [
    "ComparisonReport",
    "ConfigError",
    "CorpusStats",
    "CovrError",
    "DataError",
    "EmbeddingSources",
    "EmbeddingStore",
    "EvalReport",
    "EvaluationError",
    "FormatError",
    "FusionConfig",
    "FusionParams",
    "Index",
    "InputError",
    "RetrievalResult",
    "ShapeError",
    "SimilarityMatrix",
    "StoreDescriptions",
    "Tensor",
    "TextDescriptions",
    "TokenSequence",
    "TrainConfig",
    "TrainingError",
    "Triplet",
    "brute_force_rank",
    "build_index",
    "combine_query_description",
    "compare_fusion",
    "dataset_stats",
    "evaluate_dataset",
    "grad_check",
    "ground_modification",
    "hallucination_gate",
    "hard_negative_weights",
    "hn_nce_loss",
    "init_params",
    "load_checkpoint",
    "load_embedding_store",
    "make_optimizer",
    "middle_frame_select",
    "no_grad",
    "pairwise_fuse",
    "project_description",
    "read_triplets",
    "recall_at_k",
    "save_checkpoint",
    "scaled_dot_attention",
    "search_topk",
    "similarity_matrix",
    "softmax_rows",
    "subset_recall",
    "tokenize",
    "toy_embed_text",
    "train",
    "unified_fuse",
    "write_embedding_store",
    "write_triplets",
]
