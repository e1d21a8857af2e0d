"""Candidate sets, the training objective, optimization, and checkpoints.

Each pronoun is scored against a candidate set holding the null
antecedent (fixed score zero), every mention-pool entry, and every
in-dialogue candidate noun phrase preceding it. The per-pronoun
likelihood is the softmax mass of the gold candidates; the loss is the
mean negative log likelihood. Optimization is adaptive-moment gradient
descent over one dialogue per step with stepwise learning-rate decay,
keeping the parameter snapshot with the best validation overall F1.

Only pronoun-anchored pairs enter the loss, so no gradient ever flows
from noun-phrase-to-noun-phrase pairs. The loop is single-writer over
the parameters; given a seed, results are bitwise reproducible.
"""

from __future__ import annotations

import copy
import math
import random
from dataclasses import dataclass

import torch

from .corpus import ANAPHORIC, Dialogue, MentionRef, global_mention_order
from .embeddings import ContextualVectorStore, StaticEmbeddings, build_vocabulary
from .encoder import DTYPE, ModelConfig, ModelParameters, build_parameters
from .scorer import ScoringContext, fused_candidate_scores, prepare_scoring


class TrainerError(Exception):
    pass


class TrainingDivergedError(TrainerError):
    pass


@dataclass
class CandidateSet:
    """Ordered antecedent candidates for one pronoun.

    ``refs[0]`` is always None, the null antecedent; the rest are pool
    entries followed by preceding in-dialogue noun phrases, in global
    mention order. ``gold`` marks the correct candidates: the annotated
    antecedents for an anaphoric pronoun, the null antecedent otherwise.
    """

    pronoun_index: int
    refs: list[MentionRef | None]
    gold: list[bool]

    def gold_refs(self) -> list[MentionRef | None]:
        return [r for r, g in zip(self.refs, self.gold) if g]


def build_candidate_set(d: Dialogue, pronoun_index: int) -> CandidateSet:
    order = global_mention_order(d)
    positions = {ref: i for i, ref in enumerate(order)}
    p_ref = MentionRef("pronoun", pronoun_index)
    p_pos = positions[p_ref]
    refs: list[MentionRef | None] = [None]
    refs.extend(
        ref
        for ref in order[:p_pos]
        if ref.kind in ("pool", "dialogue")
    )
    pronoun = d.pronouns[pronoun_index]
    if pronoun.anaphoricity == ANAPHORIC:
        gold_set = set(pronoun.gold_antecedents)
        gold = [ref is not None and ref in gold_set for ref in refs]
        missing = gold_set - {r for r in refs if r is not None}
        if missing:
            raise TrainerError(
                f"gold antecedents {sorted(missing)} of pronoun {pronoun_index} "
                f"in dialogue {d.dialogue_id!r} are not among its candidates"
            )
    else:
        gold = [ref is None for ref in refs]
    return CandidateSet(pronoun_index=pronoun_index, refs=refs, gold=gold)


def pronoun_likelihood(scores: torch.Tensor, gold: list[bool] | torch.Tensor) -> torch.Tensor:
    """Softmax mass of the gold candidates, computed with max-shifted
    exponentials; always in (0, 1]."""
    mask = torch.as_tensor(gold, dtype=torch.bool)
    if mask.shape != scores.shape:
        raise TrainerError(f"gold mask shape {tuple(mask.shape)} != scores shape {tuple(scores.shape)}")
    if not bool(mask.any()):
        raise TrainerError("gold mask marks no candidate")
    return torch.exp(
        torch.logsumexp(scores[mask], dim=0) - torch.logsumexp(scores, dim=0)
    )


def training_loss(batch: list[tuple[torch.Tensor, list[bool] | torch.Tensor]]) -> torch.Tensor:
    """Mean negative log likelihood over a batch of pronouns."""
    if not batch:
        raise TrainerError("training loss requires at least one pronoun")
    losses = []
    for scores, gold in batch:
        mask = torch.as_tensor(gold, dtype=torch.bool)
        if not bool(mask.any()):
            raise TrainerError("gold mask marks no candidate")
        losses.append(torch.logsumexp(scores, dim=0) - torch.logsumexp(scores[mask], dim=0))
    return torch.stack(losses).mean()


def pronoun_candidate_scores(
    ctx: ScoringContext,
    candidate_set: CandidateSet,
    params: ModelParameters,
    lambda_vis: float,
) -> torch.Tensor:
    """Fused scores aligned with the candidate set, null fixed at zero."""
    positions = [ctx.positions[r] for r in candidate_set.refs if r is not None]
    anchor_pos = ctx.positions[MentionRef("pronoun", candidate_set.pronoun_index)]
    scored = fused_candidate_scores(ctx, anchor_pos, positions, params, lambda_vis)
    null = torch.zeros(1, dtype=DTYPE)
    return torch.cat([null, scored])


def dialogue_loss(
    ctx: ScoringContext, params: ModelParameters, lambda_vis: float
) -> torch.Tensor:
    d = ctx.dialogue
    if not d.pronouns:
        raise TrainerError(f"dialogue {d.dialogue_id!r} has no pronouns to train on")
    batch = []
    for i in range(len(d.pronouns)):
        cs = build_candidate_set(d, i)
        batch.append((pronoun_candidate_scores(ctx, cs, params, lambda_vis), cs.gold))
    return training_loss(batch)


@dataclass
class TrainState:
    """Final parameters plus optimizer state and the best-validation
    snapshot; when validation ran, ``params`` already holds the best
    snapshot."""

    params: ModelParameters
    optimizer: torch.optim.Optimizer
    step: int
    last_loss: float | None = None
    best_validation_f1: float | None = None
    best_step: int | None = None


def train(
    train_dialogues: list[Dialogue],
    config: ModelConfig,
    validation: list[Dialogue] | None = None,
    vocabulary: list[str] | None = None,
    static_vectors: StaticEmbeddings | None = None,
    contextual_store: ContextualVectorStore | None = None,
    max_steps: int | None = None,
    log_every: int | None = None,
) -> TrainState:
    """Train a model from random initialization.

    Runs one dialogue per optimizer step in a seeded shuffle, decays the
    learning rate on a fixed step cadence, aborts on a non-finite loss,
    and (when a validation set is given) evaluates every
    ``validation_interval`` steps, restoring the snapshot with the best
    validation overall F1 at the end.
    """
    from . import evaluator  # import here: evaluator's sweep trains models

    steps = config.max_steps if max_steps is None else max_steps
    if steps < 0:
        raise TrainerError(f"step count must be >= 0, got {steps}")
    if vocabulary is None:
        vocabulary = build_vocabulary(train_dialogues)
    params = build_parameters(config, vocabulary, static_vectors)
    trainable = [p for p in params.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=config.lr_decay_interval, gamma=config.lr_decay
    )
    state = TrainState(params=params, optimizer=optimizer, step=0)

    with_pronouns = [d for d in train_dialogues if d.pronouns]
    if steps > 0 and not with_pronouns:
        raise TrainerError("no training dialogue contains a pronoun")

    best_state_dict: dict | None = None
    rng = random.Random(config.seed)
    schedule: list[Dialogue] = []

    def validate(step: int) -> None:
        nonlocal best_state_dict
        report = evaluator.evaluate(validation, params, config, contextual_store)
        f1 = report.overall.f1
        if state.best_validation_f1 is None or f1 > state.best_validation_f1:
            state.best_validation_f1 = f1
            state.best_step = step
            best_state_dict = copy.deepcopy(params.state_dict())

    for step in range(1, steps + 1):
        if not schedule:
            schedule = list(with_pronouns)
            rng.shuffle(schedule)
        d = schedule.pop()
        ctx = prepare_scoring(d, params, contextual_store)
        loss = dialogue_loss(ctx, params, config.lambda_vis)
        loss_value = loss.detach().item()
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(
                f"non-finite loss {loss_value} at step {step} on dialogue {d.dialogue_id!r}"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        state.step = step
        state.last_loss = loss_value
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {loss_value:.4f}")
        if validation is not None and step % config.validation_interval == 0:
            validate(step)

    if validation is not None and steps > 0 and steps % config.validation_interval != 0:
        validate(steps)
    if best_state_dict is not None:
        params.load_state_dict(best_state_dict)
    return state


def gradient_check(
    d: Dialogue,
    params: ModelParameters,
    lambda_vis: float,
    epsilon: float = 1e-6,
    samples_per_tensor: int = 3,
    seed: int = 0,
    contextual_store: ContextualVectorStore | None = None,
) -> float:
    """Compare the analytic gradient of the dialogue loss against central
    finite differences on a random parameter subsample; returns the worst
    relative error. Requires 64-bit parameters.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    def compute_loss() -> torch.Tensor:
        ctx = prepare_scoring(d, params, contextual_store)
        return dialogue_loss(ctx, params, lambda_vis)

    def loss_value() -> float:
        with torch.no_grad():
            return compute_loss().item()

    loss = compute_loss()
    named = [(n, p) for n, p in params.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    rng = random.Random(seed)
    worst = 0.0
    for (name, tensor), grad in zip(named, grads):
        n = tensor.numel()
        for flat_index in rng.sample(range(n), min(samples_per_tensor, n)):
            with torch.no_grad():
                original = tensor.view(-1)[flat_index].item()
                tensor.view(-1)[flat_index] = original + epsilon
            plus = loss_value()
            with torch.no_grad():
                tensor.view(-1)[flat_index] = original - epsilon
            minus = loss_value()
            with torch.no_grad():
                tensor.view(-1)[flat_index] = original
            numeric = (plus - minus) / (2 * epsilon)
            analytic = 0.0 if grad is None else float(grad.view(-1)[flat_index])
            scale = max(abs(analytic), abs(numeric))
            if scale < 1e-8:
                continue  # both sides vanish; nothing to compare
            worst = max(worst, abs(analytic - numeric) / scale)
    return worst


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParameters, step: int, validation_f1: float | None) -> None:
    """Write a versioned checkpoint: config, vocabulary, tensors, step,
    and the validation score of the stored snapshot."""
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "config": params.config.__dict__.copy(),
            "vocabulary": list(params.vocabulary),
            "state_dict": params.state_dict(),
            "step": step,
            "validation_f1": validation_f1,
        },
        path,
    )


def load_checkpoint(path) -> tuple[ModelParameters, dict]:
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise TrainerError(f"unsupported checkpoint version {version!r}")
    raw = dict(payload["config"])
    for key in ("contextual_scorer_hidden", "visual_scorer_hidden", "length_buckets"):
        raw[key] = tuple(raw[key])
    config = ModelConfig(**raw)
    params = ModelParameters(config, payload["vocabulary"]).to(DTYPE)
    params.load_state_dict(payload["state_dict"])
    meta = {"step": payload["step"], "validation_f1": payload["validation_f1"]}
    return params, meta
