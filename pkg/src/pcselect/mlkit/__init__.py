from .preprocess import (  # noqa: F401
    FeaturePipeline,
    PcaBasis,
    StandardizeStats,
    pca_apply,
    pca_fit,
    pca_inverse,
    standardize_apply,
    standardize_fit,
)
from .classifiers import (  # noqa: F401
    MODEL_KINDS,
    TrainedModel,
    cnn_train,
    fit,
    predict,
    predict_scores,
)
from .modelio import load_model, save_model  # noqa: F401
from .neural import cnn_forward  # noqa: F401
