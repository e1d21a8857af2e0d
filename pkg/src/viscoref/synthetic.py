"""Deterministic toy-dialogue generators.

These build small, fully-annotated datasets with known structure for
experiments that need no pretrained resources:

* an overfit suite with consistent gold antecedents (one entity per
  dialogue, mentioned by exactly one noun phrase, with anaphoric and
  non-referential pronouns),
* a visual suite where only the detected object label disambiguates:
  every dialogue shows the same text and a pool of contextually
  symmetric entries, and the pronouns link to the entry the label names,
  or to nothing when the label matches no entry, and
* a contextual suite with no detected objects, where the pronoun's own
  phrasing decides between linking to the single candidate and being
  non-referential.

Two generation choices keep the experiments well-posed. First, half of
the visual dialogues have no matching entry and gold "no antecedent",
which anchors the score scale: every candidate there must score below
the fixed-zero null antecedent, so scores cannot drift upward into
regions the supervision never visits. Second, the matching pool entry is
stored after the distractors. Entries are encoded standalone, so pool
position is invisible to every score; but at inference each mention also
scores all earlier mentions, and with the grounded entry last no
ungrounded entry ever ranks a grounded earlier one, a pairing the
pronoun-anchored training objective cannot shape.

All generation is seed-driven; identical content always carries
identical gold, so the suites are consistent and memorizable.
"""

from __future__ import annotations

import random

from .corpus import (
    ANAPHORIC,
    KIND_NOUN_PHRASE,
    KIND_PRONOUN,
    NO_ANTECEDENT,
    NON_REFERENTIAL,
    SEGMENT_DIALOGUE,
    SOURCE_CAPTION,
    Dialogue,
    Mention,
    MentionPool,
    MentionRef,
    ObjectLabelSet,
    PronounInstance,
    Span,
    pool_mention,
    validate_dialogue,
)

OBJECT_WORDS = ["cat", "dog", "car", "bus", "tree", "bird", "boat", "kite"]

_SEE_TURN = ("do", "you", "see", "it", "?", "i", "like", "it")


def _dialogue_mention(turns, turn: int, start: int, end: int) -> Mention:
    return Mention(
        Span(SEGMENT_DIALOGUE, turn, start, end),
        tuple(turns[turn][start:end]),
        KIND_NOUN_PHRASE,
    )


def _pronoun(turns, turn: int, index: int, anaphoricity: str, golds=()) -> PronounInstance:
    mention = Mention(
        Span(SEGMENT_DIALOGUE, turn, index, index + 1),
        (turns[turn][index],),
        KIND_PRONOUN,
    )
    return PronounInstance(mention, anaphoricity, tuple(golds))


def make_overfit_suite(num_dialogues: int = 20, seed: int = 0) -> list[Dialogue]:
    """Consistent, memorizable dialogues about a single entity.

    The entity's one noun phrase sits either in the mention pool or in
    the first turn; two pronouns refer to it and some dialogues add a
    weather pronoun that refers to nothing. Vocabulary stays under 50
    tokens and every dialogue carries two to four object labels.
    """
    rng = random.Random(seed)
    dialogues = []
    for idx in range(num_dialogues):
        word = rng.choice(OBJECT_WORDS)
        in_dialogue = rng.random() < 0.5
        turns = [
            ("look", ",", "the", word, "is", "here")
            if in_dialogue
            else ("hello", ",", "look", "there"),
            (word, "?", "yes", ",", "i", "see", "it"),
            ("we", "like", "them"),
        ]
        with_weather = rng.random() < 0.4
        if with_weather:
            turns.append(("it", "rains", "now"))
        turns = tuple(turns)

        if in_dialogue:
            pool = MentionPool()
            candidates = (_dialogue_mention(turns, 0, 2, 4),)
            entity_ref = MentionRef("dialogue", 0)
        else:
            pool = MentionPool(
                entries=(pool_mention(["the", word]),), sources=(SOURCE_CAPTION,)
            )
            candidates = ()
            entity_ref = MentionRef("pool", 0)

        pronouns = [
            _pronoun(turns, 1, 6, ANAPHORIC, [entity_ref]),
            _pronoun(turns, 2, 2, ANAPHORIC, [entity_ref]),
        ]
        if with_weather:
            pronouns.append(_pronoun(turns, 3, 0, NON_REFERENTIAL))

        label_words = [word]
        for extra in rng.sample([w for w in OBJECT_WORDS if w != word], 3):
            if len(label_words) < 4 and rng.random() < 0.6:
                label_words.append(extra)
        if len(label_words) < 2:
            label_words.append(next(w for w in OBJECT_WORDS if w != word))
        d = Dialogue(
            dialogue_id=f"overfit-{idx:03d}",
            caption=("a", word),
            turns=turns,
            candidates=candidates,
            pronouns=tuple(pronouns),
            pool=pool,
            label_set=ObjectLabelSet(tuple((w,) for w in label_words)),
        )
        validate_dialogue(d)
        dialogues.append(d)
    return dialogues


def make_visual_suite(
    dialogues_per_object: int = 2, seed: int = 0, objects: list[str] | None = None
) -> list[Dialogue]:
    """Dialogues where only the object label disambiguates.

    The text is identical everywhere ("do you see it ? i like it") and
    the pool holds three bare-noun entries. In half the dialogues the
    detected label names one entry, which is the gold antecedent of both
    pronouns; in the other half the label names an absent object and the
    pronouns have no antecedent. Each object serves as the answer
    equally often, so a text-only model can beat neither the which-entry
    choice nor the link-versus-null choice.
    """
    rng = random.Random(seed)
    objects = list(objects if objects is not None else OBJECT_WORDS[:6])
    if len(objects) < 4:
        raise ValueError("the visual suite needs at least four distinct objects")
    turns = (_SEE_TURN,)
    dialogues = []
    idx = 0

    def add(pronouns, entries, label):
        nonlocal idx
        d = Dialogue(
            dialogue_id=f"vis-{idx:03d}",
            caption=("a", label),
            turns=turns,
            candidates=(),
            pronouns=tuple(pronouns),
            pool=MentionPool(
                entries=tuple(pool_mention([w]) for w in entries),
                sources=(SOURCE_CAPTION,) * len(entries),
            ),
            label_set=ObjectLabelSet(((label,),)),
        )
        validate_dialogue(d)
        dialogues.append(d)
        idx += 1

    for _ in range(dialogues_per_object):
        for gold_word in objects:
            for _ in range(2):
                distractors = rng.sample([w for w in objects if w != gold_word], 2)
                entries = distractors + [gold_word]
                gold = [MentionRef("pool", 2)]
                add(
                    [
                        _pronoun(turns, 0, 3, ANAPHORIC, gold),
                        _pronoun(turns, 0, 7, ANAPHORIC, gold),
                    ],
                    entries,
                    gold_word,
                )
            for _ in range(2):
                entries = rng.sample(objects, 3)
                absent = rng.choice([w for w in objects if w not in entries])
                add(
                    [
                        _pronoun(turns, 0, 3, NO_ANTECEDENT),
                        _pronoun(turns, 0, 7, NO_ANTECEDENT),
                    ],
                    entries,
                    absent,
                )
    return dialogues


def make_contextual_suite(
    dialogues_per_object: int = 2, seed: int = 0, objects: list[str] | None = None
) -> list[Dialogue]:
    """Dialogues where only the text disambiguates.

    Each dialogue shows one candidate noun phrase and no detected
    objects; the pronoun's own phrasing decides whether it refers to the
    candidate or to nothing, so grounding features carry no signal at
    all.
    """
    objects = list(objects if objects is not None else OBJECT_WORDS[:6])
    dialogues = []
    idx = 0
    for _ in range(dialogues_per_object):
        for word in objects:
            for referential in (True, False):
                if referential:
                    turn = ("the", word, "is", "here", ",", "i", "like", "it")
                    pronoun_index = 7
                    anaphoricity = ANAPHORIC
                    golds = [MentionRef("dialogue", 0)]
                else:
                    turn = ("the", word, "is", "here", ",", "it", "rains", "now")
                    pronoun_index = 5
                    anaphoricity = NON_REFERENTIAL
                    golds = []
                turns = (turn,)
                d = Dialogue(
                    dialogue_id=f"ctx-{idx:03d}",
                    caption=("a", word),
                    turns=turns,
                    candidates=(_dialogue_mention(turns, 0, 0, 2),),
                    pronouns=(
                        _pronoun(turns, 0, pronoun_index, anaphoricity, golds),
                    ),
                    pool=MentionPool(),
                    label_set=ObjectLabelSet(()),
                )
                validate_dialogue(d)
                dialogues.append(d)
                idx += 1
    return dialogues


def make_mixed_suite(
    dialogues_per_object: int = 1, seed: int = 0, objects: list[str] | None = None
) -> list[Dialogue]:
    """Interleaved visual-only and contextual-only dialogues, so models
    that lean entirely on one information source leave points behind."""
    visual = make_visual_suite(dialogues_per_object, seed, objects)
    contextual = make_contextual_suite(2 * dialogues_per_object, seed + 1, objects)
    mixed = []
    for i in range(max(len(visual), len(contextual))):
        if i < len(visual):
            mixed.append(visual[i])
        if i < len(contextual):
            mixed.append(contextual[i])
    return mixed
