"""Post-processing of crowdsourced pronoun annotations.

Turns raw per-worker survey responses into adjudicated gold data:
checkpoint filtering, per-worker coreference cluster construction,
link-level majority voting, anaphoricity voting, antecedent derivation,
link-based coreference scoring for inter-annotator agreement, corpus
statistics, and the seeded train/val/test split.
"""

from __future__ import annotations

import json
import random
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, replace

from .corpus import (
    ANAPHORIC,
    NO_ANTECEDENT,
    NON_REFERENTIAL,
    Dialogue,
    MentionRef,
    ParseError,
    PronounInstance,
    global_mention_order,
)

TYPE_NOUN_PHRASES = "noun-phrases"
TYPE_CONCEPT_NOT_PRESENT = "concept-not-present"
TYPE_NON_REFERENTIAL = "non-referential"
RESPONSE_TYPES = (TYPE_NOUN_PHRASES, TYPE_CONCEPT_NOT_PRESENT, TYPE_NON_REFERENTIAL)

_TYPE_TO_ANAPHORICITY = {
    TYPE_NOUN_PHRASES: ANAPHORIC,
    TYPE_CONCEPT_NOT_PRESENT: NO_ANTECEDENT,
    TYPE_NON_REFERENTIAL: NON_REFERENTIAL,
}
# Tie-break priority for anaphoricity votes, most preferred first.
_ANAPHORICITY_PRIORITY = (ANAPHORIC, NO_ANTECEDENT, NON_REFERENTIAL)


class AdjudicationError(Exception):
    pass


@dataclass(frozen=True)
class PronounResponse:
    pronoun_index: int
    type: str
    selected: tuple[MentionRef, ...] = ()


@dataclass(frozen=True)
class AnnotationRecord:
    dialogue_id: str
    worker_id: str
    checkpoint_passed: bool
    responses: tuple[PronounResponse, ...] = ()


@dataclass(frozen=True)
class WorkerClusterSet:
    """Pairwise-disjoint coreference clusters one worker implied for one
    dialogue; clusters may mix pronouns and noun phrases."""

    clusters: tuple[frozenset[MentionRef], ...] = ()


@dataclass
class AdjudicatedDialogue:
    clusters: list[frozenset[MentionRef]]
    pronoun_types: list[str]
    pronoun_antecedents: list[list[MentionRef]]


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def groups(self) -> list[set]:
        out: dict = defaultdict(set)
        for x in self.parent:
            out[self.find(x)].add(x)
        return list(out.values())


def filter_workers(records: list[AnnotationRecord]) -> tuple[list[AnnotationRecord], float]:
    """Drop records of workers who failed the checkpoint question.

    Returns the retained records and the retained fraction of the input.
    """
    kept = [r for r in records if r.checkpoint_passed]
    fraction = len(kept) / len(records) if records else 0.0
    return kept, fraction


def worker_clusters(responses: list[PronounResponse] | tuple[PronounResponse, ...]) -> WorkerClusterSet:
    """Build one worker's coreference clusters for a dialogue.

    Each noun-phrase-typed response seeds a set of the pronoun plus its
    selected mentions; sets sharing any mention are merged transitively,
    so an entity referred to by several pronouns ends up in one cluster.
    """
    uf = _UnionFind()
    for resp in responses:
        if resp.type != TYPE_NOUN_PHRASES:
            continue
        p_ref = MentionRef("pronoun", resp.pronoun_index)
        uf.find(p_ref)
        for sel in resp.selected:
            uf.union(p_ref, sel)
    clusters = tuple(frozenset(g) for g in uf.groups())
    return WorkerClusterSet(clusters=tuple(sorted(clusters, key=sorted)))


def adjudicate_links(worker_sets: list[WorkerClusterSet]) -> list[frozenset[MentionRef]]:
    """Majority-vote adjudication at pronoun-mention link granularity.

    A link between a pronoun and any other mention is accepted when
    strictly more than half of the workers cluster the two together; ties
    reject. Adjudicated clusters are the connected components of the
    accepted links, so the result is invariant to worker order.
    """
    if not worker_sets:
        raise AdjudicationError("adjudication requires at least one worker cluster set")
    n = len(worker_sets)
    pair_counts: Counter[frozenset[MentionRef]] = Counter()
    for ws in worker_sets:
        for cluster in ws.clusters:
            members = sorted(cluster)
            for p in members:
                if p.kind != "pronoun":
                    continue
                for m in members:
                    if m != p:
                        pair_counts[frozenset((p, m))] += 1
    uf = _UnionFind()
    for pair, count in pair_counts.items():
        if 2 * count > n:
            a, b = sorted(pair)
            uf.union(a, b)
    clusters = [frozenset(g) for g in uf.groups() if len(g) >= 2]
    return sorted(clusters, key=sorted)


def vote_anaphoricity(records: list[AnnotationRecord], pronoun_index: int) -> str:
    """Plurality vote over the response types for one pronoun.

    Ties break by the priority anaphoric > no-antecedent > non-referential.
    """
    votes = [
        _TYPE_TO_ANAPHORICITY[resp.type]
        for rec in records
        for resp in rec.responses
        if resp.pronoun_index == pronoun_index
    ]
    if not votes:
        raise AdjudicationError(f"no annotation covers pronoun {pronoun_index}")
    counts = Counter(votes)
    return max(
        counts,
        key=lambda t: (counts[t], -_ANAPHORICITY_PRIORITY.index(t)),
    )


def derive_antecedents(
    clusters: list[frozenset[MentionRef]],
    pronoun_types: list[str],
    order: list[MentionRef],
) -> AdjudicatedDialogue:
    """Read per-pronoun antecedents off the adjudicated clusters.

    An anaphoric pronoun's antecedents are the noun phrases of its cluster
    that precede it in the global mention order. An anaphoric pronoun with
    no cluster, or none whose noun phrases precede it, is downgraded to
    no-antecedent with a warning.
    """
    positions = {ref: i for i, ref in enumerate(order)}
    by_member: dict[MentionRef, frozenset[MentionRef]] = {}
    for cluster in clusters:
        for m in cluster:
            by_member[m] = cluster

    types = list(pronoun_types)
    antecedents: list[list[MentionRef]] = []
    for i, ptype in enumerate(types):
        if ptype != ANAPHORIC:
            antecedents.append([])
            continue
        p_ref = MentionRef("pronoun", i)
        cluster = by_member.get(p_ref)
        if cluster is None:
            warnings.warn(
                f"anaphoric pronoun {i} belongs to no adjudicated cluster; "
                "downgrading to no-antecedent"
            )
            types[i] = NO_ANTECEDENT
            antecedents.append([])
            continue
        p_pos = positions[p_ref]
        prior = [
            m
            for m in cluster
            if m.kind in ("pool", "dialogue") and positions[m] < p_pos
        ]
        prior.sort(key=lambda m: positions[m])
        if not prior:
            warnings.warn(
                f"anaphoric pronoun {i} has no preceding noun phrase in its "
                "cluster; downgrading to no-antecedent"
            )
            types[i] = NO_ANTECEDENT
        antecedents.append(prior)
    return AdjudicatedDialogue(
        clusters=list(clusters), pronoun_types=types, pronoun_antecedents=antecedents
    )


# ---------------------------------------------------------------------------
# Link-based coreference score


@dataclass(frozen=True)
class ClusterScore:
    precision: float
    recall: float
    f1: float


def _muc_recall(key: list[frozenset], response: list[frozenset]) -> float:
    # For each key cluster, count the pieces it breaks into under the
    # response partition; mentions missing from the response are singletons.
    assignment: dict = {}
    for j, cluster in enumerate(response):
        for m in cluster:
            assignment[m] = j
    numerator = 0
    denominator = 0
    for cluster in key:
        if len(cluster) < 2:
            continue
        pieces = set()
        missing = 0
        for m in cluster:
            if m in assignment:
                pieces.add(assignment[m])
            else:
                missing += 1
        numerator += len(cluster) - (len(pieces) + missing)
        denominator += len(cluster) - 1
    return numerator / denominator if denominator else 0.0


def muc_score(key: list[frozenset], response: list[frozenset]) -> ClusterScore:
    """Link-based coreference score between two cluster partitions.

    Recall counts, per key cluster, the links preserved by the response
    partition; precision swaps the roles; 0/0 is defined as 0.
    """
    recall = _muc_recall(list(key), list(response))
    precision = _muc_recall(list(response), list(key))
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return ClusterScore(precision=precision, recall=recall, f1=f1)


def compute_iaa(
    records: list[AnnotationRecord],
    adjudicated: dict[str, AdjudicatedDialogue],
) -> float:
    """Mean link-based F1 between each worker and the adjudication result,
    on a 0-100 scale.

    Records must already be checkpoint-filtered. Each worker is scored over
    the dialogues they annotated, with mention references namespaced by
    dialogue id so clusters from different dialogues never interact.
    """
    by_worker: dict[str, list[AnnotationRecord]] = defaultdict(list)
    for rec in records:
        by_worker[rec.worker_id].append(rec)
    scores = []
    for worker_id in sorted(by_worker):
        worker_key: list[frozenset] = []
        worker_response: list[frozenset] = []
        for rec in by_worker[worker_id]:
            ws = worker_clusters(rec.responses)
            worker_response.extend(
                frozenset((rec.dialogue_id, m) for m in cluster) for cluster in ws.clusters
            )
            adj = adjudicated.get(rec.dialogue_id)
            if adj is None:
                raise AdjudicationError(f"no adjudication for dialogue {rec.dialogue_id!r}")
            worker_key.extend(
                frozenset((rec.dialogue_id, m) for m in cluster) for cluster in adj.clusters
            )
        scores.append(muc_score(worker_key, worker_response).f1)
    if not scores:
        return 0.0
    return 100.0 * sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# Whole-dialogue adjudication pipeline


def adjudicate_dialogue(
    records: list[AnnotationRecord], dialogue: Dialogue
) -> AdjudicatedDialogue:
    """Run cluster voting, anaphoricity voting and antecedent derivation
    for one dialogue from its checkpoint-filtered annotation records."""
    if not records:
        raise AdjudicationError(
            f"no valid annotations for dialogue {dialogue.dialogue_id!r}"
        )
    worker_sets = [worker_clusters(rec.responses) for rec in records]
    clusters = adjudicate_links(worker_sets)
    types = [vote_anaphoricity(records, i) for i in range(len(dialogue.pronouns))]
    return derive_antecedents(clusters, types, global_mention_order(dialogue))


def apply_adjudication(dialogue: Dialogue, adj: AdjudicatedDialogue) -> Dialogue:
    """Write adjudicated anaphoricity and antecedents back into a dialogue."""
    if len(adj.pronoun_types) != len(dialogue.pronouns):
        raise AdjudicationError(
            f"adjudication covers {len(adj.pronoun_types)} pronouns, "
            f"dialogue {dialogue.dialogue_id!r} has {len(dialogue.pronouns)}"
        )
    pronouns = tuple(
        PronounInstance(
            mention=p.mention,
            anaphoricity=adj.pronoun_types[i],
            gold_antecedents=tuple(adj.pronoun_antecedents[i]),
        )
        for i, p in enumerate(dialogue.pronouns)
    )
    return replace(dialogue, pronouns=pronouns)


# ---------------------------------------------------------------------------
# Corpus statistics


@dataclass
class CorpusStatistics:
    dialogue_count: int
    pronoun_count: int
    pronouns_per_dialogue: float
    form_histogram: dict[str, int]
    anaphoric_percent: float
    no_antecedent_percent: float
    non_referential_percent: float
    mean_antecedent_count: float
    caption_only_percent: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def corpus_statistics(dialogues: list[Dialogue]) -> CorpusStatistics:
    """Summary statistics over a dataset: pronoun counts, per-form
    histogram, anaphoricity shares, antecedent multiplicity, and the share
    of anaphoric pronouns whose antecedents all live outside the dialogue."""
    histogram: Counter[str] = Counter()
    type_counts: Counter[str] = Counter()
    antecedent_total = 0
    anaphoric_count = 0
    caption_only = 0
    pronoun_count = 0
    for d in dialogues:
        for p in d.pronouns:
            pronoun_count += 1
            histogram[p.mention.tokens[0].lower()] += 1
            type_counts[p.anaphoricity] += 1
            if p.anaphoricity == ANAPHORIC:
                anaphoric_count += 1
                antecedent_total += len(p.gold_antecedents)
                if all(ref.kind == "pool" for ref in p.gold_antecedents):
                    caption_only += 1

    def pct(n: int, total: int) -> float:
        return 100.0 * n / total if total else 0.0

    return CorpusStatistics(
        dialogue_count=len(dialogues),
        pronoun_count=pronoun_count,
        pronouns_per_dialogue=pronoun_count / len(dialogues) if dialogues else 0.0,
        form_histogram=dict(sorted(histogram.items())),
        anaphoric_percent=pct(type_counts[ANAPHORIC], pronoun_count),
        no_antecedent_percent=pct(type_counts[NO_ANTECEDENT], pronoun_count),
        non_referential_percent=pct(type_counts[NON_REFERENTIAL], pronoun_count),
        mean_antecedent_count=antecedent_total / anaphoric_count if anaphoric_count else 0.0,
        caption_only_percent=pct(caption_only, anaphoric_count),
    )


# ---------------------------------------------------------------------------
# Seeded split


def split_dialogues(
    dialogues: list[Dialogue], ratios: tuple[float, float, float], seed: int
) -> dict[str, list[Dialogue]]:
    """Randomly split dialogues into train/val/test by the given ratios.

    Membership is fully determined by the seed; each returned dialogue is
    stamped with its split name.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios!r}")
    total = sum(ratios)
    n = len(dialogues)
    n_val = round(n * ratios[1] / total)
    n_test = round(n * ratios[2] / total)
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ValueError(f"ratios {ratios!r} leave no room for a training split")
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    parts = {
        "train": indices[:n_train],
        "val": indices[n_train : n_train + n_val],
        "test": indices[n_train + n_val :],
    }
    return {
        name: [replace(dialogues[i], split=name) for i in sorted(idxs)]
        for name, idxs in parts.items()
    }


# ---------------------------------------------------------------------------
# Annotation files


def _response_from_json(obj: dict) -> PronounResponse:
    return PronounResponse(
        pronoun_index=obj["pronoun_index"],
        type=obj["type"],
        selected=tuple(MentionRef(s["kind"], s["index"]) for s in obj.get("selected", [])),
    )


def load_annotations(path) -> list[AnnotationRecord]:
    """Load line-delimited annotation records."""
    records: list[AnnotationRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = AnnotationRecord(
                    dialogue_id=obj["dialogue_id"],
                    worker_id=obj["worker_id"],
                    checkpoint_passed=bool(obj["checkpoint_passed"]),
                    responses=tuple(_response_from_json(r) for r in obj["responses"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: line {line_no}: malformed annotation record: {exc!r}") from exc
            for resp in record.responses:
                if resp.type not in RESPONSE_TYPES:
                    raise ParseError(
                        f"{path}: line {line_no}: unknown response type {resp.type!r}"
                    )
                if (resp.type == TYPE_NOUN_PHRASES) != bool(resp.selected):
                    raise ParseError(
                        f"{path}: line {line_no}: selected mentions must be non-empty "
                        f"exactly for noun-phrase responses (pronoun {resp.pronoun_index})"
                    )
            records.append(record)
    return records


def save_annotations(records: list[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "dialogue_id": rec.dialogue_id,
                "worker_id": rec.worker_id,
                "checkpoint_passed": rec.checkpoint_passed,
                "responses": [
                    {
                        "pronoun_index": r.pronoun_index,
                        "type": r.type,
                        "selected": [{"kind": s.kind, "index": s.index} for s in r.selected],
                    }
                    for r in rec.responses
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True))
            fh.write("\n")
