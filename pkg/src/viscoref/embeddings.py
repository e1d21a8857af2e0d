"""Loaders for the word-vector file formats the encoder consumes.

Static vectors come from whitespace-separated text lines ("token v1..vd").
Optional contextual vectors come from a line-delimited sidecar of
precomputed per-token vectors, keyed by dialogue id, segment
("dialogue" for a turn, "pool" for a pool entry, "label" for an object
label) and the index of that sequence within its segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Dialogue


class EmbeddingError(Exception):
    pass


@dataclass
class StaticEmbeddings:
    tokens: list[str]
    vectors: np.ndarray  # (V, dim), float64

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def load_embedding_file(path) -> StaticEmbeddings:
    """Parse a "token v1 .. vd" text embedding file.

    All lines must agree on the dimension; duplicate tokens keep the first
    occurrence, matching the usual behaviour of pretrained vector dumps.
    """
    tokens: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingError(f"{path}: line {line_no}: no vector components")
            elif len(values) != dim:
                raise EmbeddingError(
                    f"{path}: line {line_no}: expected {dim} components, got {len(values)}"
                )
            if token in seen:
                continue
            seen.add(token)
            try:
                rows.append(np.array([float(v) for v in values], dtype=np.float64))
            except ValueError as exc:
                raise EmbeddingError(f"{path}: line {line_no}: {exc}") from exc
            tokens.append(token)
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    return StaticEmbeddings(tokens=tokens, vectors=np.vstack(rows))


def build_vocabulary(dialogues: list[Dialogue]) -> list[str]:
    """Sorted vocabulary over every token sequence the model encodes:
    dialogue turns, pool entries and object labels."""
    vocab: set[str] = set()
    for d in dialogues:
        for turn in d.turns:
            vocab.update(turn)
        for entry in d.pool.entries:
            vocab.update(entry.tokens)
        for label in d.label_set.labels:
            vocab.update(label)
    return sorted(vocab)


SEGMENT_TURN = "dialogue"
SEGMENT_POOL_ENTRY = "pool"
SEGMENT_LABEL = "label"


class ContextualVectorStore:
    """Precomputed per-token vectors for every sequence the encoder sees."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise EmbeddingError("contextual vector dimension must be positive")
        self.dim = dim
        self._vectors: dict[tuple[str, str, int], np.ndarray] = {}

    def put(self, dialogue_id: str, segment: str, index: int, vectors: np.ndarray) -> None:
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise EmbeddingError(
                f"contextual vectors for ({dialogue_id!r}, {segment!r}, {index}) "
                f"must have shape (T, {self.dim}), got {arr.shape}"
            )
        self._vectors[(dialogue_id, segment, index)] = arr

    def get(self, dialogue_id: str, segment: str, index: int, expected_len: int) -> np.ndarray:
        key = (dialogue_id, segment, index)
        if key not in self._vectors:
            raise EmbeddingError(f"no contextual vectors stored for {key!r}")
        arr = self._vectors[key]
        if arr.shape[0] != expected_len:
            raise EmbeddingError(
                f"contextual vectors for {key!r} cover {arr.shape[0]} tokens, expected {expected_len}"
            )
        return arr


def load_contextual_vectors(path) -> ContextualVectorStore:
    """Load a line-delimited contextual-vector sidecar.

    Each line holds {"dialogue_id", "segment", "index", "vectors"} where
    vectors is a (T, dim) list of lists.
    """
    store: ContextualVectorStore | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                vectors = np.asarray(obj["vectors"], dtype=np.float64)
                if store is None:
                    store = ContextualVectorStore(int(vectors.shape[1]))
                store.put(obj["dialogue_id"], obj["segment"], int(obj["index"]), vectors)
            except (json.JSONDecodeError, KeyError, TypeError, IndexError) as exc:
                raise EmbeddingError(f"{path}: line {line_no}: malformed sidecar record: {exc!r}") from exc
    if store is None:
        raise EmbeddingError(f"{path}: empty contextual-vector sidecar")
    return store
