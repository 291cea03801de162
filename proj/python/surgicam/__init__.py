from ._core import (
    ContainerError,
    FormatError,
    IoError,
    Model,
    ModelConfig,
    TextFeatures,
    analyze,
    cosine_scores,
    feature_surgery,
    forward_dual,
    load_model,
    load_text_features,
    mean_average_precision,
    mfsr,
    miou_binary,
    miou_multiclass,
    preprocess,
    random_model,
    random_texts,
    read_image,
    score_contrast,
    segment_argmax,
    similarity_map,
    text_to_points,
)

__version__ = "0.1.0"
