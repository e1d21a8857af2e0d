"""Mention and object-label encoding.

Token sequences are embedded (static table plus optional precomputed
contextual vectors), run through a bidirectional LSTM, and summarized per
span as the concatenation of the boundary encoder states, an
attention-weighted sum of the initial token embeddings, and a bucketed
span-width embedding. Object labels go through the same pipeline over
their full token sequence; the "refers to no detected object" class has
its own trainable vector so it can drift away from the lexical word.

All tensors are float64 and all functions are deterministic given the
parameters, so two runs under the same seed compare bit-for-bit equal.
Parameters are read-only during inference and may be shared across
threads; training owns them single-writer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .corpus import (
    SEGMENT_DIALOGUE,
    Dialogue,
    MentionRef,
    ObjectLabelSet,
    global_mention_order,
    resolve_ref,
)
from .embeddings import (
    SEGMENT_LABEL,
    SEGMENT_POOL_ENTRY,
    SEGMENT_TURN,
    ContextualVectorStore,
    StaticEmbeddings,
)

DTYPE = torch.float64


class EncoderError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimization settings.

    Defaults follow the full-scale setup (200 LSTM units, 512-d label
    projection, two 150-d hidden layers for the contextual scorer, one
    100-d hidden layer for the visual scorer); tests shrink them.
    ``length_buckets`` lists the lower bound of each span-width bucket.
    """

    static_embedding_dim: int = 300
    contextual_embedding_dim: int = 0
    hidden_size: int = 200
    projection_dim: int = 512
    contextual_scorer_hidden: tuple[int, ...] = (150, 150)
    visual_scorer_hidden: tuple[int, ...] = (100,)
    length_buckets: tuple[int, ...] = (1, 2, 3, 4, 5, 8, 16, 32)
    length_feature_dim: int = 20
    lambda_vis: float = 0.4
    seed: int = 0
    learning_rate: float = 1e-3
    lr_decay: float = 0.999
    lr_decay_interval: int = 100
    max_steps: int = 50_000
    validation_interval: int = 500
    freeze_embeddings: bool = False

    def __post_init__(self):
        for name in (
            "static_embedding_dim",
            "hidden_size",
            "projection_dim",
            "length_feature_dim",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.contextual_embedding_dim < 0:
            raise ValueError("contextual_embedding_dim must be >= 0")
        if not 0.0 <= self.lambda_vis <= 1.0:
            raise ValueError(f"lambda_vis must lie in [0, 1], got {self.lambda_vis}")
        if not self.length_buckets or self.length_buckets[0] != 1:
            raise ValueError("length_buckets must start at width 1")
        if list(self.length_buckets) != sorted(set(self.length_buckets)):
            raise ValueError("length_buckets must be strictly increasing")

    @property
    def embedding_dim(self) -> int:
        return self.static_embedding_dim + self.contextual_embedding_dim

    @property
    def span_dim(self) -> int:
        # [state(start), state(last), attention-weighted embedding, width feature]
        return 2 * (2 * self.hidden_size) + self.embedding_dim + self.length_feature_dim

    def with_lambda(self, lambda_vis: float) -> "ModelConfig":
        return replace(self, lambda_vis=lambda_vis)


def bucket_index(width: int, boundaries: tuple[int, ...]) -> int:
    if width < 1:
        raise ValueError(f"span width must be >= 1, got {width}")
    idx = 0
    for i, lower in enumerate(boundaries):
        if width >= lower:
            idx = i
    return idx


def _feed_forward(in_dim: int, hidden: tuple[int, ...], out_dim: int = 1) -> nn.Sequential:
    layers: list[nn.Module] = []
    d = in_dim
    for h in hidden:
        layers.append(nn.Linear(d, h))
        layers.append(nn.ReLU())
        d = h
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


class ModelParameters(nn.Module):
    """All trainable tensors of the resolver.

    Holds the word embedding table, the bidirectional sequence encoder,
    the inner-span attention scorer, the contextual pair scorer, the
    label-space projection, the mention-label alignment scorer, the
    visual pair scorer, the null-label vector and the span-width
    embeddings.
    """

    def __init__(self, config: ModelConfig, vocabulary: list[str]):
        super().__init__()
        self.config = config
        self.vocabulary = list(vocabulary)
        self.vocab_index = {tok: i for i, tok in enumerate(self.vocabulary)}
        if len(self.vocab_index) != len(self.vocabulary):
            raise EncoderError("vocabulary contains duplicate tokens")

        d_span = config.span_dim
        self.static_embeddings = nn.Embedding(
            max(len(self.vocabulary), 1), config.static_embedding_dim
        )
        self.sequence_encoder = nn.LSTM(
            config.embedding_dim, config.hidden_size, bidirectional=True
        )
        self.attention_scorer = nn.Linear(2 * config.hidden_size, 1)
        self.contextual_scorer = _feed_forward(3 * d_span, config.contextual_scorer_hidden)
        self.label_projection = nn.Linear(d_span, config.projection_dim)
        self.alignment_scorer = _feed_forward(config.projection_dim, (config.projection_dim,))
        self.visual_scorer = _feed_forward(4, config.visual_scorer_hidden)
        self.null_label = nn.Parameter(torch.empty(d_span))
        nn.init.normal_(self.null_label, std=0.1)
        self.length_embeddings = nn.Embedding(
            len(config.length_buckets), config.length_feature_dim
        )
        if config.freeze_embeddings:
            self.static_embeddings.weight.requires_grad_(False)


def build_parameters(
    config: ModelConfig,
    vocabulary: list[str],
    static_vectors: StaticEmbeddings | None = None,
) -> ModelParameters:
    """Randomly initialize parameters under the configured seed.

    When a static vector table is given, rows for in-vocabulary tokens are
    copied in; tokens without a pretrained row start at zero.
    """
    torch.manual_seed(config.seed)
    params = ModelParameters(config, vocabulary).to(DTYPE)
    if static_vectors is not None:
        if static_vectors.dim != config.static_embedding_dim:
            raise EncoderError(
                f"embedding file has dimension {static_vectors.dim}, "
                f"config expects {config.static_embedding_dim}"
            )
        lookup = {tok: i for i, tok in enumerate(static_vectors.tokens)}
        with torch.no_grad():
            params.static_embeddings.weight.zero_()
            for i, tok in enumerate(params.vocabulary):
                row = lookup.get(tok)
                if row is not None:
                    params.static_embeddings.weight[i] = torch.from_numpy(
                        static_vectors.vectors[row]
                    )
    return params


@dataclass
class EncodedSequence:
    """Per-token initial embeddings paired with their encoder states."""

    embeddings: torch.Tensor  # (T, embedding_dim)
    states: torch.Tensor  # (T, 2 * hidden_size)

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def embed_tokens(
    tokens: list[str] | tuple[str, ...],
    params: ModelParameters,
    contextual: np.ndarray | torch.Tensor | None = None,
) -> torch.Tensor:
    """Initial per-token vectors: static table lookup, concatenated with
    the supplied contextual vectors when those are enabled.

    Out-of-vocabulary tokens map to the zero vector.
    """
    if len(tokens) == 0:
        raise EncoderError("cannot embed an empty token sequence")
    cfg = params.config
    idx = torch.tensor([params.vocab_index.get(t, -1) for t in tokens], dtype=torch.long)
    static = params.static_embeddings(idx.clamp(min=0))
    static = static * (idx >= 0).to(DTYPE).unsqueeze(1)
    if cfg.contextual_embedding_dim == 0:
        if contextual is not None:
            raise EncoderError("contextual vectors supplied but disabled by the config")
        return static
    if contextual is None:
        raise EncoderError("contextual vectors enabled but missing for this sequence")
    ctx = torch.as_tensor(contextual, dtype=DTYPE)
    if ctx.shape != (len(tokens), cfg.contextual_embedding_dim):
        raise EncoderError(
            f"contextual vectors have shape {tuple(ctx.shape)}, expected "
            f"({len(tokens)}, {cfg.contextual_embedding_dim})"
        )
    return torch.cat([static, ctx], dim=1)


def encode_sequence(embeddings: torch.Tensor, params: ModelParameters) -> EncodedSequence:
    """Run the bidirectional recurrent encoder over one sequence."""
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise EncoderError(f"expected a non-empty (T, dim) tensor, got {tuple(embeddings.shape)}")
    states, _ = params.sequence_encoder(embeddings.unsqueeze(1))
    return EncodedSequence(embeddings=embeddings, states=states.squeeze(1))


def encode_token_sequence(
    tokens: list[str] | tuple[str, ...],
    params: ModelParameters,
    contextual: np.ndarray | None = None,
) -> EncodedSequence:
    return encode_sequence(embed_tokens(tokens, params, contextual), params)


def inner_span_attention(
    enc: EncodedSequence, start: int, end: int, params: ModelParameters
) -> torch.Tensor:
    """Softmax attention over the span's tokens, scored from the encoder
    states; weights are non-negative and sum to one."""
    if not 0 <= start < end <= len(enc):
        raise EncoderError(f"invalid span [{start}, {end}) for sequence of length {len(enc)}")
    logits = params.attention_scorer(enc.states[start:end]).squeeze(-1)
    return torch.softmax(logits, dim=0)


def span_representation(
    enc: EncodedSequence, start: int, end: int, params: ModelParameters
) -> torch.Tensor:
    """Fixed-width span vector: boundary encoder states, the
    attention-weighted sum of the span's initial embeddings, and the
    bucketed width embedding."""
    attention = inner_span_attention(enc, start, end, params)
    weighted = attention @ enc.embeddings[start:end]
    width_bucket = bucket_index(end - start, params.config.length_buckets)
    phi = params.length_embeddings(torch.tensor(width_bucket))
    return torch.cat([enc.states[start], enc.states[end - 1], weighted, phi])


def encode_object_labels(
    label_set: ObjectLabelSet,
    params: ModelParameters,
    contextual: list[np.ndarray] | None = None,
) -> torch.Tensor:
    """Representations for the detected labels plus the trailing
    no-detected-object row, shape (K + 1, span_dim)."""
    rows: list[torch.Tensor] = []
    for i, label_tokens in enumerate(label_set.labels):
        ctx = contextual[i] if contextual is not None else None
        enc = encode_token_sequence(label_tokens, params, ctx)
        rows.append(span_representation(enc, 0, len(label_tokens), params))
    rows.append(params.null_label)
    return torch.stack(rows)


@dataclass
class DialogueEncoding:
    """Cached per-dialogue tensors: one span vector per mention in global
    order plus the object-label matrix."""

    dialogue: Dialogue
    order: list[MentionRef]
    positions: dict[MentionRef, int] = field(repr=False)
    mention_reps: torch.Tensor  # (M, span_dim)
    label_reps: torch.Tensor  # (K + 1, span_dim)

    def rep(self, ref: MentionRef) -> torch.Tensor:
        return self.mention_reps[self.positions[ref]]


def encode_dialogue(
    d: Dialogue,
    params: ModelParameters,
    contextual_store: ContextualVectorStore | None = None,
) -> DialogueEncoding:
    """Encode every mention and object label of a dialogue.

    Each dialogue turn is encoded as one sequence; pool entries and object
    labels are encoded standalone, so identical entries yield identical
    representations.
    """
    cfg = params.config
    if cfg.contextual_embedding_dim > 0 and contextual_store is None:
        raise EncoderError("contextual vectors enabled but no sidecar store supplied")

    def ctx(segment: str, index: int, length: int) -> np.ndarray | None:
        if contextual_store is None:
            return None
        return contextual_store.get(d.dialogue_id, segment, index, length)

    turn_encodings = [
        encode_token_sequence(turn, params, ctx(SEGMENT_TURN, i, len(turn)))
        for i, turn in enumerate(d.turns)
    ]
    pool_encodings = [
        encode_token_sequence(m.tokens, params, ctx(SEGMENT_POOL_ENTRY, i, len(m.tokens)))
        for i, m in enumerate(d.pool.entries)
    ]
    label_ctx = (
        [
            ctx(SEGMENT_LABEL, i, len(label))
            for i, label in enumerate(d.label_set.labels)
        ]
        if contextual_store is not None
        else None
    )

    order = global_mention_order(d)
    reps: list[torch.Tensor] = []
    for ref in order:
        mention = resolve_ref(d, ref)
        span = mention.span
        if span.segment == SEGMENT_DIALOGUE:
            enc = turn_encodings[span.turn]
        else:
            enc = pool_encodings[ref.index]
        reps.append(span_representation(enc, span.start, span.end, params))
    mention_reps = (
        torch.stack(reps) if reps else torch.zeros((0, cfg.span_dim), dtype=DTYPE)
    )
    label_reps = encode_object_labels(d.label_set, params, label_ctx)
    return DialogueEncoding(
        dialogue=d,
        order=order,
        positions={ref: i for i, ref in enumerate(order)},
        mention_reps=mention_reps,
        label_reps=label_reps,
    )
