"""Design-optimal document selection for sentiment annotation.

Pipeline: tokenize documents into a sparse count corpus, factorize it
into topics, rank documents for labeling by greedy D-optimal design in
the factor space, fit a penalized multinomial inverse regression on the
collected labels, and map its sufficient-reduction scores to sentiment
through a proportional-odds forward model.  An HTTP service runs the
live annotate/refit loop.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .corpus import (
    Corpus,
    RawDocument,
    TokenizerConfig,
    Vocabulary,
    build_corpus,
    build_vocabulary,
    read_jsonl,
    tokenize,
)
from .design import (
    DesignState,
    FactorScores,
    RankStep,
    greedy_rank,
    pca_scores,
    seed_design,
    topic_scores,
)
from .forward import (
    Classified,
    ForwardModel,
    TPriorConfig,
    classify,
    fit_forward,
    predict_probs,
)
from .harness import (
    ExperimentPlan,
    LearningCurve,
    LearningPoint,
    learning_metrics,
    run_design_experiment,
)
from .mnir import (
    CollapsedCounts,
    MnirModel,
    PenaltyConfig,
    SentimentScale,
    SRScores,
    collapse_counts,
    fit_mnir,
    sr_scores,
)
from .topics import (
    KSelection,
    MarginalResult,
    TopicModel,
    TopicPrior,
    WeightPosterior,
    fit_topics,
    log_marginal,
    sample_weights,
    sample_weights_all,
    select_k,
    topic_lift,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "__version__",
    # corpus
    "Corpus",
    "RawDocument",
    "TokenizerConfig",
    "Vocabulary",
    "build_corpus",
    "build_vocabulary",
    "read_jsonl",
    "tokenize",
    # topics
    "KSelection",
    "MarginalResult",
    "TopicModel",
    "TopicPrior",
    "WeightPosterior",
    "fit_topics",
    "log_marginal",
    "sample_weights",
    "sample_weights_all",
    "select_k",
    "topic_lift",
    # design
    "DesignState",
    "FactorScores",
    "RankStep",
    "greedy_rank",
    "pca_scores",
    "seed_design",
    "topic_scores",
    # mnir
    "CollapsedCounts",
    "MnirModel",
    "PenaltyConfig",
    "SentimentScale",
    "SRScores",
    "collapse_counts",
    "fit_mnir",
    "sr_scores",
    # forward
    "Classified",
    "ForwardModel",
    "TPriorConfig",
    "classify",
    "fit_forward",
    "predict_probs",
    # harness
    "ExperimentPlan",
    "LearningCurve",
    "LearningPoint",
    "learning_metrics",
    "run_design_experiment",
]
