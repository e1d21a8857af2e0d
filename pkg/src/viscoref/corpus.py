"""Data model and extraction procedures for image-grounded dialogue corpora.

A dialogue record bundles the tokenized caption and turns, candidate noun
phrases, target pronouns with their gold antecedents, an external mention
pool, and the object labels detected in the shared image. All spans are
token-indexed and end-exclusive. Values are immutable after load and safe
to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

SEGMENT_DIALOGUE = "dialogue"
SEGMENT_POOL = "caption-pool"

KIND_NOUN_PHRASE = "noun-phrase"
KIND_PRONOUN = "pronoun"

ANAPHORIC = "anaphoric"
NO_ANTECEDENT = "no-antecedent"
NON_REFERENTIAL = "non-referential"
ANAPHORICITY_VALUES = (ANAPHORIC, NO_ANTECEDENT, NON_REFERENTIAL)

SOURCE_CAPTION = "caption"
SOURCE_NEGATIVE = "negative-sample"

# Third-person personal and possessive pronoun forms targeted for
# annotation; "her" covers both readings, so no POS disambiguation.
PRONOUN_FORMS = frozenset(
    ["it", "he", "she", "they", "him", "her", "them", "its", "his", "their"]
)


class CorpusError(Exception):
    """Base error for corpus loading and validation."""


class ParseError(CorpusError):
    """Raised for malformed bracketed trees or malformed dataset records."""


class ValidationError(CorpusError):
    """Raised when a dialogue violates a data-model invariant."""

    def __init__(self, message: str, dialogue_id: str | None = None, field_name: str | None = None):
        self.dialogue_id = dialogue_id
        self.field_name = field_name
        prefix = ""
        if dialogue_id is not None:
            prefix += f"dialogue {dialogue_id!r}"
        if field_name is not None:
            prefix += f" field {field_name!r}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass(frozen=True, order=True)
class Span:
    """Token-indexed, end-exclusive span addressing either the dialogue or
    a standalone pool-entry token sequence.

    ``turn`` is meaningful only when ``segment`` is ``"dialogue"``.
    """

    segment: str
    turn: int
    start: int
    end: int

    def width(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Mention:
    span: Span
    tokens: tuple[str, ...]
    kind: str

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True, order=True)
class MentionRef:
    """Reference to a mention of a dialogue.

    ``kind`` is one of ``"pool"`` (index into the mention pool),
    ``"dialogue"`` (index into the candidate list) or ``"pronoun"``
    (index into the pronoun list).
    """

    kind: str
    index: int


@dataclass(frozen=True)
class PronounInstance:
    mention: Mention
    anaphoricity: str
    gold_antecedents: tuple[MentionRef, ...] = ()


@dataclass(frozen=True)
class MentionPool:
    """Candidate noun phrases external to the dialogue: caption-derived
    entries first, then negative samples, so the global order stays
    deterministic."""

    entries: tuple[Mention, ...] = ()
    sources: tuple[str, ...] = ()


@dataclass(frozen=True)
class ObjectLabelSet:
    """Detected object class names for the image.

    ``labels`` holds the real classes at indices ``0..K-1``; the implicit
    "refers to no detected object" class is always addressable as index
    ``K`` but never stored.
    """

    labels: tuple[tuple[str, ...], ...] = ()

    @property
    def null_index(self) -> int:
        return len(self.labels)

    def texts(self) -> list[str]:
        return [" ".join(toks) for toks in self.labels]


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    caption: tuple[str, ...]
    turns: tuple[tuple[str, ...], ...]
    candidates: tuple[Mention, ...] = ()
    pronouns: tuple[PronounInstance, ...] = ()
    pool: MentionPool = field(default_factory=MentionPool)
    label_set: ObjectLabelSet = field(default_factory=ObjectLabelSet)
    split: str | None = None

    def segment_tokens(self, span: Span) -> tuple[str, ...]:
        if span.segment == SEGMENT_DIALOGUE:
            return self.turns[span.turn]
        raise ValueError(f"span does not address the dialogue: {span}")


def pool_mention(tokens: list[str] | tuple[str, ...]) -> Mention:
    """Wrap a standalone pool token sequence as a noun-phrase mention."""
    toks = tuple(tokens)
    return Mention(Span(SEGMENT_POOL, 0, 0, len(toks)), toks, KIND_NOUN_PHRASE)


# ---------------------------------------------------------------------------
# Bracketed constituency trees


@dataclass(frozen=True)
class TreeNode:
    label: str
    children: tuple["TreeNode", ...]
    token: str | None = None  # set only on leaves

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    def height(self) -> int:
        """Longest node-to-token path in edges; a preterminal has height 1
        since it dominates its token."""
        if self.is_leaf:
            return 1
        return 1 + max(c.height() for c in self.children)

    def leaves(self) -> list[str]:
        if self.is_leaf:
            return [self.token]
        out: list[str] = []
        for c in self.children:
            out.extend(c.leaves())
        return out


def parse_bracketed_tree(text: str) -> TreeNode:
    """Parse a Penn-style bracketed tree such as ``(NP (DT A) (NN man))``."""
    tokens: list[str] = []
    buf = ""
    for ch in text:
        if ch in "()":
            if buf:
                tokens.append(buf)
                buf = ""
            tokens.append(ch)
        elif ch.isspace():
            if buf:
                tokens.append(buf)
                buf = ""
        else:
            buf += ch
    if buf:
        tokens.append(buf)

    pos = 0

    def parse_node() -> TreeNode:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != "(":
            raise ParseError(f"expected '(' at token {pos} of tree")
        pos += 1
        if pos >= len(tokens) or tokens[pos] in "()":
            raise ParseError(f"missing node label at token {pos} of tree")
        label = tokens[pos]
        pos += 1
        children: list[TreeNode] = []
        leaf_token: str | None = None
        while pos < len(tokens) and tokens[pos] != ")":
            if tokens[pos] == "(":
                children.append(parse_node())
            else:
                leaf_token = tokens[pos]
                pos += 1
        if pos >= len(tokens):
            raise ParseError("unbalanced brackets: missing ')'")
        pos += 1  # consume ')'
        if leaf_token is not None and children:
            raise ParseError(f"node {label!r} mixes a leaf token with subtrees")
        if leaf_token is not None:
            return TreeNode(label, (), token=leaf_token)
        if not children:
            raise ParseError(f"node {label!r} has no children")
        return TreeNode(label, tuple(children))

    node = parse_node()
    if pos != len(tokens):
        raise ParseError("unbalanced brackets: trailing input after tree")
    return node


def extract_noun_phrases(
    parse: str | TreeNode, segment: str = SEGMENT_DIALOGUE, turn: int = 0
) -> list[Mention]:
    """Extract candidate noun phrases from a constituency parse.

    A node qualifies when it is labeled ``NP`` and its longest node-to-leaf
    path is exactly two edges, i.e. it directly dominates preterminals only.
    This keeps candidates minimal and pairwise non-overlapping: a taller NP
    covering two such phrases is skipped in favor of the inner ones.
    Mentions are returned left to right with token-index spans.
    """
    tree = parse_bracketed_tree(parse) if isinstance(parse, str) else parse
    mentions: list[Mention] = []

    def walk(node: TreeNode, offset: int) -> int:
        if node.is_leaf:
            return offset + 1
        start = offset
        for child in node.children:
            offset = walk(child, offset)
        if node.label == "NP" and node.height() == 2:
            toks = tuple(node.leaves())
            mentions.append(
                Mention(Span(segment, turn, start, start + len(toks)), toks, KIND_NOUN_PHRASE)
            )
        return offset

    walk(tree, 0)
    mentions.sort(key=lambda m: (m.span.start, m.span.end))
    return mentions


def extract_pronouns(
    tokens: list[str] | tuple[str, ...], segment: str = SEGMENT_DIALOGUE, turn: int = 0
) -> list[Mention]:
    """Return single-token mentions for every targeted pronoun form.

    Matching is case-insensitive against the third-person personal and
    possessive forms; the original casing is preserved in the mention.
    """
    out: list[Mention] = []
    for i, tok in enumerate(tokens):
        if tok.lower() in PRONOUN_FORMS:
            out.append(Mention(Span(segment, turn, i, i + 1), (tok,), KIND_PRONOUN))
    return out


# ---------------------------------------------------------------------------
# Global mention order

_KIND_RANK = {KIND_NOUN_PHRASE: 0, KIND_PRONOUN: 1}


def global_mention_order(d: Dialogue) -> list[MentionRef]:
    """Strict total order over all mentions of a dialogue.

    Pool entries come first in stored order (the caption precedes the
    dialogue), then in-dialogue candidates and pronouns sorted by
    (turn, start, end); on an exact span tie a noun phrase precedes a
    pronoun.
    """
    order = [MentionRef("pool", i) for i in range(len(d.pool.entries))]
    in_dialogue: list[tuple[tuple[int, int, int, int, int], MentionRef]] = []
    for i, m in enumerate(d.candidates):
        key = (m.span.turn, m.span.start, m.span.end, _KIND_RANK[m.kind], i)
        in_dialogue.append((key, MentionRef("dialogue", i)))
    for i, p in enumerate(d.pronouns):
        s = p.mention.span
        key = (s.turn, s.start, s.end, _KIND_RANK[KIND_PRONOUN], i)
        in_dialogue.append((key, MentionRef("pronoun", i)))
    in_dialogue.sort(key=lambda pair: pair[0])
    order.extend(ref for _, ref in in_dialogue)
    return order


def mention_positions(d: Dialogue) -> dict[MentionRef, int]:
    return {ref: i for i, ref in enumerate(global_mention_order(d))}


def resolve_ref(d: Dialogue, ref: MentionRef) -> Mention:
    if ref.kind == "pool":
        return d.pool.entries[ref.index]
    if ref.kind == "dialogue":
        return d.candidates[ref.index]
    if ref.kind == "pronoun":
        return d.pronouns[ref.index].mention
    raise ValueError(f"unknown mention reference kind {ref.kind!r}")


# ---------------------------------------------------------------------------
# Validation


def _validate_span(d: Dialogue, span: Span, field_name: str) -> None:
    if not (0 <= span.start < span.end):
        raise ValidationError(
            f"span start/end out of order: {span}", d.dialogue_id, field_name
        )
    if span.segment == SEGMENT_DIALOGUE:
        if not (0 <= span.turn < len(d.turns)):
            raise ValidationError(
                f"turn {span.turn} out of range for {len(d.turns)} turns",
                d.dialogue_id,
                field_name,
            )
        if span.end > len(d.turns[span.turn]):
            raise ValidationError(
                f"span end {span.end} exceeds turn length {len(d.turns[span.turn])}",
                d.dialogue_id,
                field_name,
            )
    elif span.segment != SEGMENT_POOL:
        raise ValidationError(f"unknown segment {span.segment!r}", d.dialogue_id, field_name)


def _validate_mention(d: Dialogue, m: Mention, field_name: str) -> None:
    _validate_span(d, m.span, field_name)
    if m.kind not in _KIND_RANK:
        raise ValidationError(f"unknown mention kind {m.kind!r}", d.dialogue_id, field_name)
    if m.kind == KIND_PRONOUN and len(m.tokens) != 1:
        raise ValidationError("pronoun mention must span exactly one token", d.dialogue_id, field_name)
    if m.span.segment == SEGMENT_DIALOGUE:
        slice_ = d.turns[m.span.turn][m.span.start : m.span.end]
        if tuple(slice_) != m.tokens:
            raise ValidationError(
                f"mention tokens {m.tokens!r} do not match addressed slice {tuple(slice_)!r}",
                d.dialogue_id,
                field_name,
            )
    else:
        if m.span.start != 0 or m.span.end != len(m.tokens):
            raise ValidationError(
                "pool mention span must cover its full token sequence", d.dialogue_id, field_name
            )


def validate_dialogue(d: Dialogue) -> None:
    """Check every data-model invariant; raise ValidationError on the first
    violation, naming the dialogue and the offending field."""
    for i, m in enumerate(d.pool.entries):
        if m.span.segment != SEGMENT_POOL:
            raise ValidationError("pool entry must use the pool segment", d.dialogue_id, f"pool[{i}]")
        _validate_mention(d, m, f"pool[{i}]")
    if len(d.pool.sources) != len(d.pool.entries):
        raise ValidationError("pool sources and entries differ in length", d.dialogue_id, "pool")
    for i, src in enumerate(d.pool.sources):
        if src not in (SOURCE_CAPTION, SOURCE_NEGATIVE):
            raise ValidationError(f"unknown pool source {src!r}", d.dialogue_id, f"pool[{i}]")

    seen_labels: set[tuple[str, ...]] = set()
    for i, label in enumerate(d.label_set.labels):
        if not label:
            raise ValidationError("empty object label", d.dialogue_id, f"labels[{i}]")
        if label in seen_labels:
            raise ValidationError(f"duplicate object label {label!r}", d.dialogue_id, f"labels[{i}]")
        seen_labels.add(label)

    for i, m in enumerate(d.candidates):
        if m.span.segment != SEGMENT_DIALOGUE:
            raise ValidationError("candidate must be in-dialogue", d.dialogue_id, f"candidates[{i}]")
        if m.kind != KIND_NOUN_PHRASE:
            raise ValidationError("candidate must be a noun phrase", d.dialogue_id, f"candidates[{i}]")
        _validate_mention(d, m, f"candidates[{i}]")
    for a in range(len(d.candidates)):
        for b in range(a + 1, len(d.candidates)):
            sa, sb = d.candidates[a].span, d.candidates[b].span
            if sa.turn == sb.turn and sa.start < sb.end and sb.start < sa.end:
                raise ValidationError(
                    f"candidate spans overlap: {sa} and {sb}", d.dialogue_id, f"candidates[{b}]"
                )

    seen_pronoun_spans: set[Span] = set()
    for i, p in enumerate(d.pronouns):
        if p.mention.kind != KIND_PRONOUN:
            raise ValidationError("pronoun mention has wrong kind", d.dialogue_id, f"pronouns[{i}]")
        if p.mention.span.segment != SEGMENT_DIALOGUE:
            raise ValidationError("pronoun must be in-dialogue", d.dialogue_id, f"pronouns[{i}]")
        _validate_mention(d, p.mention, f"pronouns[{i}]")
        if p.mention.span in seen_pronoun_spans:
            raise ValidationError("duplicate pronoun span", d.dialogue_id, f"pronouns[{i}]")
        seen_pronoun_spans.add(p.mention.span)
        if p.anaphoricity not in ANAPHORICITY_VALUES:
            raise ValidationError(
                f"unknown anaphoricity {p.anaphoricity!r}", d.dialogue_id, f"pronouns[{i}]"
            )
        if (p.anaphoricity == ANAPHORIC) != bool(p.gold_antecedents):
            raise ValidationError(
                "gold antecedents must be non-empty exactly for anaphoric pronouns",
                d.dialogue_id,
                f"pronouns[{i}]",
            )

    positions = mention_positions(d)
    for i, p in enumerate(d.pronouns):
        p_pos = positions[MentionRef("pronoun", i)]
        for ref in p.gold_antecedents:
            if ref.kind not in ("pool", "dialogue"):
                raise ValidationError(
                    f"antecedent reference kind must be pool or dialogue, got {ref.kind!r}",
                    d.dialogue_id,
                    f"pronouns[{i}]",
                )
            limit = len(d.pool.entries) if ref.kind == "pool" else len(d.candidates)
            if not (0 <= ref.index < limit):
                raise ValidationError(
                    f"antecedent index {ref.index} out of range", d.dialogue_id, f"pronouns[{i}]"
                )
            if positions[ref] >= p_pos:
                raise ValidationError(
                    f"antecedent {ref} does not precede the pronoun", d.dialogue_id, f"pronouns[{i}]"
                )

    def in_dialogue_key(m: Mention) -> tuple[int, int, int, int]:
        return (m.span.turn, m.span.start, m.span.end, _KIND_RANK[m.kind])

    cand_keys = [in_dialogue_key(m) for m in d.candidates]
    if cand_keys != sorted(cand_keys):
        raise ValidationError("candidates not sorted by global mention order", d.dialogue_id, "candidates")
    pron_keys = [in_dialogue_key(p.mention) for p in d.pronouns]
    if pron_keys != sorted(pron_keys):
        raise ValidationError("pronouns not sorted by global mention order", d.dialogue_id, "pronouns")


# ---------------------------------------------------------------------------
# Line-delimited dataset files


def _span_to_json(span: Span) -> dict:
    return {"turn": span.turn, "start": span.start, "end": span.end}


def _ref_to_json(ref: MentionRef) -> dict:
    return {"kind": ref.kind, "index": ref.index}


def dialogue_to_record(d: Dialogue) -> dict:
    record = {
        "dialogue_id": d.dialogue_id,
        "caption": list(d.caption),
        "turns": [list(t) for t in d.turns],
        "candidates": [_span_to_json(m.span) for m in d.candidates],
        "pronouns": [
            {
                **_span_to_json(p.mention.span),
                "anaphoricity": p.anaphoricity,
                "antecedents": [_ref_to_json(r) for r in p.gold_antecedents],
            }
            for p in d.pronouns
        ],
        "pool": [
            {"tokens": list(m.tokens), "source": src}
            for m, src in zip(d.pool.entries, d.pool.sources)
        ],
        "labels": [" ".join(toks) for toks in d.label_set.labels],
    }
    if d.split is not None:
        record["split"] = d.split
    return record


def dialogue_from_record(record: dict) -> Dialogue:
    try:
        dialogue_id = record["dialogue_id"]
        turns = tuple(tuple(t) for t in record["turns"])
        candidates = tuple(
            Mention(
                Span(SEGMENT_DIALOGUE, c["turn"], c["start"], c["end"]),
                tuple(turns[c["turn"]][c["start"] : c["end"]]) if c["turn"] < len(turns) else (),
                KIND_NOUN_PHRASE,
            )
            for c in record["candidates"]
        )
        pronouns = tuple(
            PronounInstance(
                Mention(
                    Span(SEGMENT_DIALOGUE, p["turn"], p["start"], p["end"]),
                    tuple(turns[p["turn"]][p["start"] : p["end"]]) if p["turn"] < len(turns) else (),
                    KIND_PRONOUN,
                ),
                p["anaphoricity"],
                tuple(MentionRef(a["kind"], a["index"]) for a in p.get("antecedents", [])),
            )
            for p in record["pronouns"]
        )
        pool = MentionPool(
            entries=tuple(pool_mention(e["tokens"]) for e in record["pool"]),
            sources=tuple(e["source"] for e in record["pool"]),
        )
        labels = ObjectLabelSet(tuple(tuple(s.split()) for s in record["labels"]))
        return Dialogue(
            dialogue_id=dialogue_id,
            caption=tuple(record["caption"]),
            turns=turns,
            candidates=candidates,
            pronouns=pronouns,
            pool=pool,
            label_set=labels,
            split=record.get("split"),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ParseError(f"malformed dialogue record: {exc!r}") from exc


def load_dataset(path, expected_split: str | None = None) -> list[Dialogue]:
    """Load and validate a line-delimited dialogue dataset.

    When ``expected_split`` is given, records carrying a ``split`` field
    must match it. Malformed lines raise ParseError naming the line number;
    invariant violations raise ValidationError naming the dialogue.
    """
    dialogues: list[Dialogue] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {line_no}: invalid JSON: {exc}") from exc
            try:
                d = dialogue_from_record(record)
            except ParseError as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from exc
            validate_dialogue(d)
            if expected_split is not None and d.split is not None and d.split != expected_split:
                raise ValidationError(
                    f"record belongs to split {d.split!r}, expected {expected_split!r}",
                    d.dialogue_id,
                    "split",
                )
            dialogues.append(d)
    return dialogues


def save_dataset(dialogues: list[Dialogue], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_record(d), sort_keys=True))
            fh.write("\n")
