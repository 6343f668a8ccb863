from cine_selftrain.student.features import (
    FEATURE_NAMES,
    NUM_FEATURES,
    IntensityNormalization,
    extract_features,
)
from cine_selftrain.student.loss import LossWeights, combined_loss, softmax
from cine_selftrain.student.model import (
    StudentModel,
    StudentSegmenter,
    TrainConfig,
    load_model,
    predict,
    save_model,
    train,
)
