"""Dense text-patch alignment: training, zero-shot segmentation and data formats."""

from ._dalign import (
    DalignError,
    Model,
    caption_statistics,
    canonicalize,
    concept_loss,
    degrade_captions,
    global_contrastive_loss,
    miou,
    noun_phrases,
    pool_text_concept,
    pool_visual_concept,
    read_captions,
    read_feature_store,
    run_cli,
    version,
    write_captions,
    write_feature_store,
)

__version__ = version()

__all__ = [
    "DalignError",
    "Model",
    "caption_statistics",
    "canonicalize",
    "concept_loss",
    "degrade_captions",
    "global_contrastive_loss",
    "miou",
    "noun_phrases",
    "pool_text_concept",
    "pool_visual_concept",
    "read_captions",
    "read_feature_store",
    "run_cli",
    "version",
    "write_captions",
    "write_feature_store",
]
