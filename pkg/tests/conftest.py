import pytest

from viscoref.corpus import (
    ANAPHORIC,
    NO_ANTECEDENT,
    NON_REFERENTIAL,
    KIND_NOUN_PHRASE,
    KIND_PRONOUN,
    SEGMENT_DIALOGUE,
    SOURCE_CAPTION,
    SOURCE_NEGATIVE,
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
from viscoref.encoder import ModelConfig


def dialogue_np(turns, turn, start, end):
    return Mention(
        Span(SEGMENT_DIALOGUE, turn, start, end),
        tuple(turns[turn][start:end]),
        KIND_NOUN_PHRASE,
    )


def dialogue_pronoun(turns, turn, index, anaphoricity=ANAPHORIC, golds=()):
    # out-of-range indices get a placeholder token so invalid spans reach
    # validate_dialogue instead of failing here
    token = turns[turn][index] if index < len(turns[turn]) else "it"
    mention = Mention(
        Span(SEGMENT_DIALOGUE, turn, index, index + 1),
        (token,),
        KIND_PRONOUN,
    )
    return PronounInstance(mention, anaphoricity, tuple(golds))


def build_dialogue(
    dialogue_id="d0",
    turns=(("the", "cat", "is", "here"), ("i", "like", "it")),
    candidates=((0, 0, 2),),
    pronouns=(((1, 2), ANAPHORIC, (("dialogue", 0),)),),
    pool=(),
    pool_sources=None,
    labels=("cat",),
    caption=("a", "cat"),
    validate=True,
):
    """Compact dialogue builder for tests.

    ``candidates`` holds (turn, start, end) triples; ``pronouns`` holds
    ((turn, index), anaphoricity, antecedent (kind, index) pairs).
    """
    turns = tuple(tuple(t) for t in turns)
    cands = tuple(dialogue_np(turns, *c) for c in candidates)
    prons = tuple(
        dialogue_pronoun(
            turns, t, i, anaphoricity, [MentionRef(k, j) for k, j in golds]
        )
        for (t, i), anaphoricity, golds in pronouns
    )
    entries = tuple(pool_mention(list(tokens)) for tokens in pool)
    sources = tuple(
        pool_sources if pool_sources is not None else (SOURCE_CAPTION,) * len(entries)
    )
    d = Dialogue(
        dialogue_id=dialogue_id,
        caption=tuple(caption),
        turns=turns,
        candidates=cands,
        pronouns=prons,
        pool=MentionPool(entries=entries, sources=sources),
        label_set=ObjectLabelSet(tuple(tuple(s.split()) for s in labels)),
    )
    if validate:
        validate_dialogue(d)
    return d


@pytest.fixture
def tiny_config():
    """Small 64-bit config; fast enough for per-test model building."""
    return ModelConfig(
        static_embedding_dim=8,
        contextual_embedding_dim=0,
        hidden_size=5,
        projection_dim=7,
        contextual_scorer_hidden=(9,),
        visual_scorer_hidden=(6,),
        length_feature_dim=3,
        lambda_vis=0.4,
        seed=0,
    )


@pytest.fixture
def train_config():
    """Config sized for short synthetic training runs."""
    return ModelConfig(
        static_embedding_dim=16,
        hidden_size=16,
        projection_dim=24,
        contextual_scorer_hidden=(24,),
        visual_scorer_hidden=(12,),
        length_feature_dim=4,
        lambda_vis=0.4,
        seed=0,
        learning_rate=3e-3,
    )
