"""Three-class discourse classification toolkit: corpus management,
double-coded annotation with agreement checks, a compact pretrained
encoder with baselines, retweet-network communities, and discontinuity
analytics around a cutoff event.
"""

__version__ = "0.1.0"

from .categories import CATEGORIES, CATEGORY_INDEX, COVERT, NON_RACIST, OVERT
from .corpus import Corpus, Post, ingest_posts
from .annotation import (
    KappaResult,
    cohen_kappa,
    draw_training_sample,
    harmonize,
    label_distribution,
)
from .classify import (
    BiLSTMClassifier,
    CNNClassifier,
    EncoderClassifier,
    FinetuneConfig,
    Prediction,
    TfidfLinearClassifier,
    finetune,
    load_model,
    predict_texts,
    save_model,
)
from .evaluation import (
    ClassMetrics,
    ConfusionMatrix,
    confusion_matrix,
    metrics_from_confusion,
    repeated_kfold,
)
from .network import (
    CommunityResult,
    build_retweet_graph,
    modularity,
    walktrap_communities,
)
from .analytics import (
    fit_multinomial_logit,
    latency_rdd,
    loess_fit,
    rdd_estimate,
    weekly_prevalence,
)

__all__ = [
    "__version__",
    "CATEGORIES",
    "CATEGORY_INDEX",
    "NON_RACIST",
    "COVERT",
    "OVERT",
    "Corpus",
    "Post",
    "ingest_posts",
    "KappaResult",
    "cohen_kappa",
    "draw_training_sample",
    "harmonize",
    "label_distribution",
    "BiLSTMClassifier",
    "CNNClassifier",
    "EncoderClassifier",
    "FinetuneConfig",
    "Prediction",
    "TfidfLinearClassifier",
    "finetune",
    "load_model",
    "predict_texts",
    "save_model",
    "ClassMetrics",
    "ConfusionMatrix",
    "confusion_matrix",
    "metrics_from_confusion",
    "repeated_kfold",
    "CommunityResult",
    "build_retweet_graph",
    "modularity",
    "walktrap_communities",
    "fit_multinomial_logit",
    "latency_rdd",
    "loess_fit",
    "rdd_estimate",
    "weekly_prevalence",
]
