"""Cross-encoder sentence similarity with gated lexical-knowledge attention
bias and inference-time keyword overrides."""

__version__ = "0.1.0"

from .lexicon import (
    KeywordDictionary,
    SimilarityProvider,
    WordSimScore,
    load_keyword_dictionary,
    load_similarity_lexicon,
    lookup_override,
    word_similarity,
)
from .matrices import (
    BiasMatrices,
    TokenizedPair,
    Tokenizer,
    build_pair_matrices,
    build_word_matrix,
    derive_dissimilarity,
    expand_to_tokens,
    segment,
)
from .model import (
    ModelConfig,
    ModelParams,
    compute_loss,
    encoder_forward,
    gated_attention,
    multi_head,
    pool_and_score,
)
from .numerics import GradTape, finite_diff_gradient, matmul, softmax_masked
from .training import (
    Metrics,
    TrainConfig,
    classify_by_threshold,
    evaluate,
    flexibility_probe,
    gradcheck_harness,
    train,
)

__all__ = [
    "BiasMatrices",
    "GradTape",
    "KeywordDictionary",
    "Metrics",
    "ModelConfig",
    "ModelParams",
    "SimilarityProvider",
    "TokenizedPair",
    "Tokenizer",
    "TrainConfig",
    "WordSimScore",
    "build_pair_matrices",
    "build_word_matrix",
    "classify_by_threshold",
    "compute_loss",
    "derive_dissimilarity",
    "encoder_forward",
    "evaluate",
    "expand_to_tokens",
    "finite_diff_gradient",
    "flexibility_probe",
    "gated_attention",
    "gradcheck_harness",
    "load_keyword_dictionary",
    "load_similarity_lexicon",
    "lookup_override",
    "matmul",
    "multi_head",
    "pool_and_score",
    "segment",
    "softmax_masked",
    "train",
    "word_similarity",
]
