"""Scikit-learn style front door for the resolver.

``VisCorefResolver`` wraps dataset validation, training, inference and
scoring behind the usual fit/predict/score surface, so the model drops
into pipelines and parameter searches. ``X`` is a list of dialogues; the
supervision lives inside them, so ``y`` is accepted only for interface
compatibility and must stay None.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from . import evaluator, trainer
from .corpus import Dialogue, validate_dialogue
from .embeddings import load_contextual_vectors, load_embedding_file
from .encoder import ModelConfig

_CONFIG_FIELDS = tuple(ModelConfig.__dataclass_fields__)


def _check_dialogues(X) -> list[Dialogue]:
    if not isinstance(X, (list, tuple)):
        raise TypeError(f"expected a list of dialogues, got {type(X).__name__}")
    for d in X:
        if not isinstance(d, Dialogue):
            raise TypeError(f"expected Dialogue elements, got {type(d).__name__}")
        validate_dialogue(d)
    return list(X)


class VisCorefResolver(BaseEstimator):
    """Visual-aware pronoun coreference resolver.

    Parameters mirror :class:`~viscoref.encoder.ModelConfig`; defaults
    follow the full-scale setup, so small experiments should shrink the
    dimensions and the step budget. ``embeddings_path`` points at a
    static word-vector text file, ``contextual_vectors_path`` at a
    precomputed per-token vector sidecar.
    """

    def __init__(
        self,
        static_embedding_dim=300,
        contextual_embedding_dim=0,
        hidden_size=200,
        projection_dim=512,
        contextual_scorer_hidden=(150, 150),
        visual_scorer_hidden=(100,),
        length_buckets=(1, 2, 3, 4, 5, 8, 16, 32),
        length_feature_dim=20,
        lambda_vis=0.4,
        seed=0,
        learning_rate=1e-3,
        lr_decay=0.999,
        lr_decay_interval=100,
        max_steps=50_000,
        validation_interval=500,
        freeze_embeddings=False,
        embeddings_path=None,
        contextual_vectors_path=None,
    ):
        self.static_embedding_dim = static_embedding_dim
        self.contextual_embedding_dim = contextual_embedding_dim
        self.hidden_size = hidden_size
        self.projection_dim = projection_dim
        self.contextual_scorer_hidden = contextual_scorer_hidden
        self.visual_scorer_hidden = visual_scorer_hidden
        self.length_buckets = length_buckets
        self.length_feature_dim = length_feature_dim
        self.lambda_vis = lambda_vis
        self.seed = seed
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_decay_interval = lr_decay_interval
        self.max_steps = max_steps
        self.validation_interval = validation_interval
        self.freeze_embeddings = freeze_embeddings
        self.embeddings_path = embeddings_path
        self.contextual_vectors_path = contextual_vectors_path

    def build_config(self) -> ModelConfig:
        values = {
            name: getattr(self, name)
            for name in _CONFIG_FIELDS
        }
        for key in ("contextual_scorer_hidden", "visual_scorer_hidden", "length_buckets"):
            values[key] = tuple(values[key])
        return ModelConfig(**values)

    def _contextual_store(self):
        if self.contextual_vectors_path is None:
            return None
        return load_contextual_vectors(self.contextual_vectors_path)

    def fit(self, X, y=None, validation=None):
        """Train on a list of dialogues; returns self.

        ``validation`` optionally holds held-out dialogues used to pick
        the best snapshot.
        """
        if y is not None:
            raise ValueError("y must be None; supervision lives inside the dialogues")
        dialogues = _check_dialogues(X)
        if validation is not None:
            validation = _check_dialogues(validation)
        config = self.build_config()
        static_vectors = (
            load_embedding_file(self.embeddings_path) if self.embeddings_path else None
        )
        state = trainer.train(
            dialogues,
            config,
            validation=validation,
            static_vectors=static_vectors,
            contextual_store=self._contextual_store(),
        )
        self.config_ = config
        self.params_ = state.params
        self.train_state_ = state
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("this VisCorefResolver instance is not fitted yet")

    def predict(self, X):
        """Resolve each dialogue into chains and per-pronoun antecedents."""
        self._require_fitted()
        dialogues = _check_dialogues(X)
        store = self._contextual_store()
        return [
            evaluator.resolve_dialogue(d, self.params_, self.config_, store)
            for d in dialogues
        ]

    def evaluate(self, X):
        """Full three-category precision/recall/F1 report."""
        self._require_fitted()
        return evaluator.evaluate(
            _check_dialogues(X), self.params_, self.config_, self._contextual_store()
        )

    def score(self, X, y=None):
        """Overall antecedent F1, for scorer-based model selection."""
        return self.evaluate(X).overall.f1
