"""Hashed-feature window-CNN tagger with BILOU decoding."""
from medspan.tagger.bilou import BilouError, TagScheme, spans_to_tags, tags_to_spans
from medspan.tagger.features import FeatureHasher, word_shape
from medspan.tagger.model import (
    TaggerConfigError,
    TaggerModel,
    TrainConfig,
    dev_lenient_f1,
    fine_tune,
    predict,
    train,
)

__all__ = [
    "BilouError",
    "FeatureHasher",
    "TagScheme",
    "TaggerConfigError",
    "TaggerModel",
    "TrainConfig",
    "dev_lenient_f1",
    "fine_tune",
    "predict",
    "spans_to_tags",
    "tags_to_spans",
    "train",
    "word_shape",
]
