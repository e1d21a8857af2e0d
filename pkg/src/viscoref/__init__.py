"""Visual-aware pronoun coreference resolution for image-grounded dialogues.

The toolkit covers the full pipeline: corpus construction (candidate
noun-phrase and pronoun extraction), crowdsourced-annotation
adjudication, the fused contextual/visual scoring model, training with
validation-based snapshot selection, chain-based inference, and the
three-category evaluation report.
"""

__version__ = "0.1.0"

from .corpus import (
    Dialogue,
    Mention,
    MentionPool,
    MentionRef,
    ObjectLabelSet,
    PronounInstance,
    Span,
    extract_noun_phrases,
    extract_pronouns,
    global_mention_order,
    load_dataset,
    save_dataset,
    validate_dialogue,
)
from .adjudication import (
    AnnotationRecord,
    PronounResponse,
    WorkerClusterSet,
    adjudicate_dialogue,
    adjudicate_links,
    compute_iaa,
    corpus_statistics,
    derive_antecedents,
    filter_workers,
    muc_score,
    split_dialogues,
    vote_anaphoricity,
    worker_clusters,
)
from .encoder import ModelConfig, ModelParameters, build_parameters
from .estimator import VisCorefResolver
from .evaluator import EvalReport, evaluate, lambda_sweep, prf_report, resolve_dialogue
from .trainer import (
    TrainState,
    build_candidate_set,
    gradient_check,
    load_checkpoint,
    pronoun_likelihood,
    save_checkpoint,
    train,
    training_loss,
)

__all__ = [
    "__version__",
    "Dialogue",
    "Mention",
    "MentionPool",
    "MentionRef",
    "ObjectLabelSet",
    "PronounInstance",
    "Span",
    "extract_noun_phrases",
    "extract_pronouns",
    "global_mention_order",
    "load_dataset",
    "save_dataset",
    "validate_dialogue",
    "AnnotationRecord",
    "PronounResponse",
    "WorkerClusterSet",
    "adjudicate_dialogue",
    "adjudicate_links",
    "compute_iaa",
    "corpus_statistics",
    "derive_antecedents",
    "filter_workers",
    "muc_score",
    "split_dialogues",
    "vote_anaphoricity",
    "worker_clusters",
    "ModelConfig",
    "ModelParameters",
    "build_parameters",
    "VisCorefResolver",
    "EvalReport",
    "evaluate",
    "lambda_sweep",
    "prf_report",
    "resolve_dialogue",
    "TrainState",
    "build_candidate_set",
    "gradient_check",
    "load_checkpoint",
    "pronoun_likelihood",
    "save_checkpoint",
    "train",
    "training_loss",
]
