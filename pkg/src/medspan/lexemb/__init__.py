"""Static embeddings, lexicon bootstrapping, and cloze pretraining."""
from medspan.lexemb.cloze import (
    ContextEncoder,
    DimensionMismatchError,
    PretrainConfig,
    pretrain_cloze,
    save_loss_curve,
)
from medspan.lexemb.embeddings import (
    EmbeddingTable,
    VocabularyError,
    cosine,
    expand_lexicon,
    train_static_embeddings,
)

__all__ = [
    "ContextEncoder",
    "DimensionMismatchError",
    "EmbeddingTable",
    "PretrainConfig",
    "VocabularyError",
    "cosine",
    "expand_lexicon",
    "pretrain_cloze",
    "save_loss_curve",
    "train_static_embeddings",
]
