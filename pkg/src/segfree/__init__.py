"""Segmentation-free streaming machine translation at desk scale.

The package translates an unsegmented source word stream with a wait-k
policy, lets the decoder close target segments with a SEP token, and picks
the source span each closed segment covered with a log-linear model.  An
experiment harness generates synthetic parallel data and measures BLEU and
Average Lagging against a fixed-ratio baseline and segmented baselines.
"""

from .exceptions import (
    BoundaryDomainError,
    ConfigurationError,
    DecoderStateError,
    DegenerateDesignError,
    InsufficientDataError,
    SegFreeError,
    SessionError,
    TraceMismatchError,
    TrainingError,
)
from .stream import (
    SEP,
    ActiveChunk,
    SegmentPair,
    SessionTrace,
    StreamingHistory,
    Token,
    TokenStream,
    commit_to_history,
    truncate_history,
)
from .features import (
    BoundaryModel,
    BoundaryTrainingSample,
    LinRegFeature,
    LinRegParams,
    ReverseMTFeature,
    ReverseTranslationModel,
    fit_linreg,
    gaussian_score,
    position_posterior,
    reverse_mt_score,
    select_boundary,
    train_reverse_model,
    train_weights,
)
from .toy import ToyDecoder, ToyLexicon, speculative_beam_search, toy_next_distribution
from .corpus import (
    Document,
    TrainingSample,
    build_history_samples,
    generate_synthetic_corpus,
    normalize_source,
    prefix_augment,
    strip_source_sep,
)
from .policy import (
    FixedLengthSegmenter,
    LogLinearMechanism,
    NaiveMechanism,
    OracleMechanism,
    OracleSegmenter,
    WaitKPolicy,
    naive_boundary,
    oracle_segmenter,
    run_segfree_session,
    run_segmented_session,
)
from .evaluation import (
    AlignedHypothesis,
    average_lagging,
    bleu,
    bootstrap_significance,
    emit_curve,
    realign,
)

__version__ = "0.1.0"
