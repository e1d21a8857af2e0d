"""Inference-time linking, chain clustering, and the evaluation report.

Every mention of a dialogue, pool entries included, selects the
highest-scoring candidate among the null antecedent and all previous
mentions; non-null selections are merged into coreference chains with
union-find. A pronoun's predicted antecedents are the noun phrases of
its chain that precede it. Scores micro-average over antecedent links
and are reported for three categories: pronouns whose gold antecedents
appear in the dialogue ("discussed"), pronouns grounded only through the
mention pool ("not discussed"), and overall.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import torch

from .corpus import Dialogue, MentionRef
from .embeddings import ContextualVectorStore
from .encoder import ModelConfig, ModelParameters
from .scorer import fused_candidate_scores, prepare_scoring


class EvaluatorError(Exception):
    pass


@dataclass
class ResolvedDialogue:
    """Linking result for one dialogue: the per-mention selection, the
    chain partition (singletons included), and per-pronoun predicted
    antecedents."""

    dialogue_id: str
    order: list[MentionRef]
    selected: list[MentionRef | None]
    chains: list[frozenset[MentionRef]]
    antecedents: dict[int, list[MentionRef]]

    def to_json(self) -> dict:
        positions = {ref: i for i, ref in enumerate(self.order)}

        def ref_json(ref: MentionRef) -> dict:
            return {"kind": ref.kind, "index": ref.index}

        chains = sorted(
            (sorted(chain, key=lambda r: positions[r]) for chain in self.chains),
            key=lambda chain: positions[chain[0]],
        )
        return {
            "dialogue_id": self.dialogue_id,
            "selected": [None if s is None else ref_json(s) for s in self.selected],
            "chains": [[ref_json(r) for r in chain] for chain in chains],
            "antecedents": {
                str(i): [ref_json(r) for r in refs]
                for i, refs in sorted(self.antecedents.items())
            },
        }


def _first_argmax(values: list[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def resolve_dialogue(
    d: Dialogue,
    params: ModelParameters,
    config: ModelConfig | None = None,
    contextual_store: ContextualVectorStore | None = None,
) -> ResolvedDialogue:
    """Greedy antecedent selection and transitive chain construction.

    Mentions are visited in global order; each picks the argmax of the
    fused score over the null antecedent (fixed zero) and all previous
    mentions, ties breaking toward null and then the earliest mention.
    """
    cfg = config if config is not None else params.config
    ctx = prepare_scoring(d, params, contextual_store)
    order = ctx.order
    n = len(order)
    selected: list[MentionRef | None] = []
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    with torch.no_grad():
        for pos in range(n):
            candidates = list(range(pos))
            scores = fused_candidate_scores(ctx, pos, candidates, params, cfg.lambda_vis)
            values = [0.0] + [float(v) for v in scores]
            choice = _first_argmax(values)
            if choice == 0:
                selected.append(None)
            else:
                chosen = candidates[choice - 1]
                selected.append(order[chosen])
                ra, rb = find(pos), find(chosen)
                if ra != rb:
                    parent[rb] = ra

    components: dict[int, set[MentionRef]] = {}
    for pos, ref in enumerate(order):
        components.setdefault(find(pos), set()).add(ref)
    chains = [frozenset(c) for c in components.values()]

    positions = ctx.positions
    by_member: dict[MentionRef, frozenset[MentionRef]] = {}
    for chain in chains:
        for ref in chain:
            by_member[ref] = chain
    antecedents: dict[int, list[MentionRef]] = {}
    for i in range(len(d.pronouns)):
        p_ref = MentionRef("pronoun", i)
        p_pos = positions[p_ref]
        chain = by_member[p_ref]
        prior = [
            ref
            for ref in chain
            if ref.kind in ("pool", "dialogue") and positions[ref] < p_pos
        ]
        prior.sort(key=lambda r: positions[r])
        antecedents[i] = prior
    return ResolvedDialogue(
        dialogue_id=d.dialogue_id,
        order=order,
        selected=selected,
        chains=sorted(chains, key=lambda c: min(positions[r] for r in c)),
        antecedents=antecedents,
    )


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class CategoryMetrics:
    precision: float
    recall: float
    f1: float
    pronoun_count: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EvalReport:
    discussed: CategoryMetrics
    not_discussed: CategoryMetrics
    overall: CategoryMetrics

    def to_json(self) -> dict:
        return {
            "discussed": self.discussed.to_json(),
            "not_discussed": self.not_discussed.to_json(),
            "overall": self.overall.to_json(),
        }


PronounKey = tuple[str, int]


def _micro(keys: Iterable[PronounKey], predicted, gold) -> CategoryMetrics:
    keys = list(keys)
    tp = sum(len(set(predicted[k]) & set(gold[k])) for k in keys)
    pred_total = sum(len(set(predicted[k])) for k in keys)
    gold_total = sum(len(set(gold[k])) for k in keys)
    precision = tp / pred_total if pred_total else 0.0
    recall = tp / gold_total if gold_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return CategoryMetrics(precision=precision, recall=recall, f1=f1, pronoun_count=len(keys))


def prf_report(
    predicted: Mapping[PronounKey, Iterable[MentionRef]],
    gold: Mapping[PronounKey, Iterable[MentionRef]],
) -> EvalReport:
    """Micro-averaged precision/recall/F1 over antecedent links.

    A pronoun counts as discussed when at least one gold antecedent is an
    in-dialogue mention, as not-discussed when its gold antecedents are
    non-empty and all live in the pool. Pronouns without gold antecedents
    enter only the overall precision denominator through their predicted
    links.
    """
    if set(predicted.keys()) != set(gold.keys()):
        raise EvaluatorError("predictions and golds cover different pronouns")
    discussed = [
        k for k in gold if any(r.kind == "dialogue" for r in gold[k])
    ]
    not_discussed = [
        k
        for k in gold
        if len(list(gold[k])) > 0 and all(r.kind == "pool" for r in gold[k])
    ]
    return EvalReport(
        discussed=_micro(discussed, predicted, gold),
        not_discussed=_micro(not_discussed, predicted, gold),
        overall=_micro(gold.keys(), predicted, gold),
    )


def gold_antecedent_map(dialogues: list[Dialogue]) -> dict[PronounKey, frozenset[MentionRef]]:
    return {
        (d.dialogue_id, i): frozenset(p.gold_antecedents)
        for d in dialogues
        for i, p in enumerate(d.pronouns)
    }


def evaluate(
    dialogues: list[Dialogue],
    params: ModelParameters,
    config: ModelConfig | None = None,
    contextual_store: ContextualVectorStore | None = None,
) -> EvalReport:
    """Resolve every dialogue and score predictions against gold."""
    predicted: dict[PronounKey, frozenset[MentionRef]] = {}
    for d in dialogues:
        resolved = resolve_dialogue(d, params, config, contextual_store)
        for i, refs in resolved.antecedents.items():
            predicted[(d.dialogue_id, i)] = frozenset(refs)
    return prf_report(predicted, gold_antecedent_map(dialogues))


@dataclass
class SweepPoint:
    lambda_vis: float
    report: EvalReport

    def to_json(self) -> dict:
        return {"lambda_vis": self.lambda_vis, "report": self.report.to_json()}


def lambda_sweep(
    train_dialogues: list[Dialogue],
    eval_dialogues: list[Dialogue],
    base_config: ModelConfig,
    grid: Iterable[float],
    max_steps: int | None = None,
    **train_kwargs,
) -> list[SweepPoint]:
    """Retrain from scratch at each fusion weight (same seed) and
    evaluate, yielding the F1-versus-weight table."""
    from . import trainer  # trainer imports this module for validation

    points = []
    for lam in grid:
        config = base_config.with_lambda(lam)
        state = trainer.train(
            train_dialogues, config, max_steps=max_steps, **train_kwargs
        )
        report = evaluate(
            eval_dialogues,
            state.params,
            config,
            train_kwargs.get("contextual_store"),
        )
        points.append(SweepPoint(lambda_vis=lam, report=report))
    return points
