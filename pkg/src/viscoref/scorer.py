"""Pair scoring: contextual, visual, and their weighted fusion.

The contextual score feeds the two span vectors and their element-wise
product through a feed-forward scorer. The visual score goes through the
detected object labels: every mention gets a softmax alignment
distribution over the labels plus the no-detected-object class, the
per-mention grounding probability is the best non-null alignment, the
joint grounding of a pair is the best product of their alignments over a
shared label, and a small feed-forward net scores the four grounding
features. The fused score interpolates the two with a fixed weight; the
null antecedent always scores exactly zero.

Everything here is a pure function of (parameters, inputs) and safe to
run in parallel across pronouns and dialogues.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import Dialogue, MentionRef, resolve_ref
from .embeddings import ContextualVectorStore
from .encoder import (
    DTYPE,
    DialogueEncoding,
    ModelParameters,
    encode_dialogue,
)


class ScorerError(Exception):
    pass


@dataclass
class AlignmentResult:
    """Mention-to-label alignment: raw logits, the row-softmax
    distribution over K real labels plus the trailing null column, and
    the per-mention grounding probability (best non-null alignment)."""

    logits: torch.Tensor  # (M, K + 1)
    distribution: torch.Tensor  # (M, K + 1), rows on the simplex
    grounding: torch.Tensor  # (M,)


@dataclass(frozen=True)
class ScorePair:
    contextual: float
    visual: float
    fused: float


def contextual_scores(
    anchor_rep: torch.Tensor, candidate_reps: torch.Tensor, params: ModelParameters
) -> torch.Tensor:
    """Contextual pair scores of one anchor against a batch of candidates."""
    if candidate_reps.ndim != 2:
        raise ScorerError("candidate representations must be a (N, dim) tensor")
    if anchor_rep.shape[-1] != candidate_reps.shape[-1]:
        raise ScorerError(
            f"representation dimensions differ: {anchor_rep.shape[-1]} vs {candidate_reps.shape[-1]}"
        )
    n = candidate_reps.shape[0]
    if n == 0:
        return torch.zeros(0, dtype=DTYPE)
    anchor = anchor_rep.unsqueeze(0).expand(n, -1)
    features = torch.cat([anchor, candidate_reps, anchor * candidate_reps], dim=1)
    return params.contextual_scorer(features).squeeze(-1)


def contextual_score(
    anchor_rep: torch.Tensor, candidate_rep: torch.Tensor, params: ModelParameters
) -> torch.Tensor:
    return contextual_scores(anchor_rep, candidate_rep.unsqueeze(0), params)[0]


def alignment_distribution(
    mention_reps: torch.Tensor, label_reps: torch.Tensor, params: ModelParameters
) -> AlignmentResult:
    """Align every mention with every label (null included).

    Logits come from a scorer over the element-wise product of the
    projected mention and label vectors; each row is softmaxed over all
    K + 1 columns. The grounding probability excludes the null column.
    """
    if label_reps.shape[0] < 1:
        raise ScorerError("label representations must include the null row")
    m = mention_reps.shape[0]
    k_plus_1 = label_reps.shape[0]
    if m == 0:
        empty = torch.zeros((0, k_plus_1), dtype=DTYPE)
        return AlignmentResult(empty, empty, torch.zeros(0, dtype=DTYPE))
    proj_mentions = params.label_projection(mention_reps)
    proj_labels = params.label_projection(label_reps)
    product = proj_mentions.unsqueeze(1) * proj_labels.unsqueeze(0)
    logits = params.alignment_scorer(product).squeeze(-1)
    distribution = torch.softmax(logits, dim=-1)
    grounding = grounding_probabilities(distribution)
    return AlignmentResult(logits=logits, distribution=distribution, grounding=grounding)


def grounding_probabilities(distribution: torch.Tensor) -> torch.Tensor:
    """Row-wise best non-null alignment; zero when there are no real labels."""
    if distribution.shape[-1] <= 1:
        return torch.zeros(distribution.shape[:-1], dtype=distribution.dtype)
    return distribution[..., :-1].max(dim=-1).values


def grounding_probability(row: torch.Tensor) -> torch.Tensor:
    return grounding_probabilities(row)


def joint_grounding_probability(row_i: torch.Tensor, row_j: torch.Tensor) -> torch.Tensor:
    """Best product of two mentions' alignments over a shared real label."""
    if row_i.shape != row_j.shape:
        raise ScorerError(
            f"alignment rows cover different label sets: {tuple(row_i.shape)} vs {tuple(row_j.shape)}"
        )
    if row_i.shape[-1] <= 1:
        return torch.zeros((), dtype=row_i.dtype)
    return (row_i[:-1] * row_j[:-1]).max()


def visual_scores(
    m_anchor: torch.Tensor, m_candidates: torch.Tensor, m_joint: torch.Tensor,
    params: ModelParameters,
) -> torch.Tensor:
    """Visual pair scores from the grounding features
    [anchor grounding, candidate grounding, their product, joint grounding]."""
    n = m_candidates.shape[0]
    if n == 0:
        return torch.zeros(0, dtype=DTYPE)
    anchor = m_anchor.expand(n)
    features = torch.stack([anchor, m_candidates, anchor * m_candidates, m_joint], dim=1)
    return params.visual_scorer(features).squeeze(-1)


def visual_score(
    m_anchor: torch.Tensor, m_candidate: torch.Tensor, m_joint: torch.Tensor,
    params: ModelParameters,
) -> torch.Tensor:
    return visual_scores(
        torch.as_tensor(m_anchor, dtype=DTYPE).reshape(()),
        torch.as_tensor(m_candidate, dtype=DTYPE).reshape(1),
        torch.as_tensor(m_joint, dtype=DTYPE).reshape(1),
        params,
    )[0]


def combined_score(contextual, visual, lambda_vis: float):
    """Weighted fusion of the contextual and visual scores."""
    if not 0.0 <= lambda_vis <= 1.0:
        raise ScorerError(f"lambda_vis must lie in [0, 1], got {lambda_vis}")
    return (1.0 - lambda_vis) * contextual + lambda_vis * visual


@dataclass
class ScoringContext:
    """A dialogue's encoded mentions plus their label alignment, reused
    across all pair scores of that dialogue."""

    encoding: DialogueEncoding
    alignment: AlignmentResult

    @property
    def dialogue(self) -> Dialogue:
        return self.encoding.dialogue

    @property
    def order(self) -> list[MentionRef]:
        return self.encoding.order

    @property
    def positions(self) -> dict[MentionRef, int]:
        return self.encoding.positions


def prepare_scoring(
    d: Dialogue,
    params: ModelParameters,
    contextual_store: ContextualVectorStore | None = None,
) -> ScoringContext:
    encoding = encode_dialogue(d, params, contextual_store)
    alignment = alignment_distribution(encoding.mention_reps, encoding.label_reps, params)
    return ScoringContext(encoding=encoding, alignment=alignment)


def _joint_grounding_rows(
    ctx: ScoringContext, anchor_pos: int, candidate_positions: list[int]
) -> torch.Tensor:
    b = ctx.alignment.distribution
    if b.shape[-1] <= 1:
        return torch.zeros(len(candidate_positions), dtype=DTYPE)
    anchor_row = b[anchor_pos, :-1]
    cand_rows = b[candidate_positions][:, :-1]
    return (cand_rows * anchor_row.unsqueeze(0)).max(dim=-1).values


def fused_candidate_scores(
    ctx: ScoringContext,
    anchor_pos: int,
    candidate_positions: list[int],
    params: ModelParameters,
    lambda_vis: float,
) -> torch.Tensor:
    """Fused scores of the anchor mention against earlier candidates,
    excluding the null antecedent (whose score is fixed at zero)."""
    if not candidate_positions:
        return torch.zeros(0, dtype=DTYPE)
    anchor_rep = ctx.encoding.mention_reps[anchor_pos]
    cand_reps = ctx.encoding.mention_reps[candidate_positions]
    f_context = contextual_scores(anchor_rep, cand_reps, params)
    m = ctx.alignment.grounding
    f_visual = visual_scores(
        m[anchor_pos],
        m[candidate_positions],
        _joint_grounding_rows(ctx, anchor_pos, candidate_positions),
        params,
    )
    return combined_score(f_context, f_visual, lambda_vis)


def score_pair(
    ctx: ScoringContext,
    candidate: MentionRef,
    anchor: MentionRef,
    params: ModelParameters,
    lambda_vis: float,
) -> ScorePair:
    """Diagnostic single-pair scoring with the parts kept separate."""
    a_pos = ctx.positions[anchor]
    c_pos = ctx.positions[candidate]
    f_c = contextual_score(
        ctx.encoding.mention_reps[a_pos], ctx.encoding.mention_reps[c_pos], params
    )
    m = ctx.alignment.grounding
    m_joint = joint_grounding_probability(
        ctx.alignment.distribution[a_pos], ctx.alignment.distribution[c_pos]
    )
    f_v = visual_score(m[a_pos], m[c_pos], m_joint, params)
    fused = combined_score(f_c, f_v, lambda_vis)
    return ScorePair(
        contextual=f_c.detach().item(),
        visual=f_v.detach().item(),
        fused=fused.detach().item(),
    )


def alignment_heatmap(ctx: ScoringContext) -> dict:
    """Mention-by-label matrix of alignment probabilities for dumps."""
    d = ctx.dialogue
    return {
        "dialogue_id": d.dialogue_id,
        "mentions": [resolve_ref(d, ref).text() for ref in ctx.order],
        "labels": d.label_set.texts() + ["null"],
        "matrix": [
            [float(v) for v in row] for row in ctx.alignment.distribution.detach().tolist()
        ],
    }
