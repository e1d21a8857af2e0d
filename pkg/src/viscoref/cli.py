"""Command-line pipelines: ingest, adjudicate, train, eval, sweep, predict.

Every command writes a run manifest next to its main output (command
name, config snapshot, sha256 of each input, seed, tool version and
timestamps), so runs are reproducible and outputs are byte-identical
across reruns up to the manifest timestamps.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
import sys
from datetime import datetime, timezone

import click

from . import __version__
from .adjudication import (
    AdjudicationError,
    adjudicate_dialogue,
    apply_adjudication,
    compute_iaa,
    corpus_statistics,
    filter_workers,
    load_annotations,
    split_dialogues,
)
from .corpus import (
    NO_ANTECEDENT,
    ObjectLabelSet,
    Dialogue,
    MentionPool,
    ParseError,
    PronounInstance,
    SOURCE_CAPTION,
    SOURCE_NEGATIVE,
    extract_noun_phrases,
    extract_pronouns,
    load_dataset,
    parse_bracketed_tree,
    pool_mention,
    save_dataset,
    validate_dialogue,
    PRONOUN_FORMS,
)
from .embeddings import load_contextual_vectors, load_embedding_file
from .encoder import ModelConfig
from .evaluator import evaluate, lambda_sweep, resolve_dialogue
from .scorer import alignment_heatmap, prepare_scoring
from .trainer import load_checkpoint, save_checkpoint, train


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class Manifest:
    def __init__(self, command: str, seed: int | None, config: dict | None):
        self.payload = {
            "command": command,
            "tool_version": __version__,
            "seed": seed,
            "config": config,
            "inputs": {},
            "started_at": _utcnow(),
        }

    def add_input(self, path) -> None:
        if path is not None:
            self.payload["inputs"][str(path)] = _sha256(path)

    def write(self, out_path) -> None:
        self.payload["finished_at"] = _utcnow()
        with open(f"{out_path}.manifest.json", "w", encoding="utf-8") as fh:
            json.dump(self.payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_config(config_path, **overrides) -> ModelConfig:
    """Config file first, explicit flags on top of it."""
    values: dict = {}
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            values.update(json.load(fh))
    values.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("contextual_scorer_hidden", "visual_scorer_hidden", "length_buckets"):
        if key in values:
            values[key] = tuple(values[key])
    unknown = set(values) - set(ModelConfig.__dataclass_fields__)
    if unknown:
        raise click.ClickException(f"unknown config fields: {sorted(unknown)}")
    return ModelConfig(**values)


def parse_grid(spec: str) -> list[float]:
    """Parse "start:end:step" into an inclusive grid; a bare number is a
    single-point grid. Endpoints are included within 1e-9."""
    parts = spec.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise click.ClickException(f"grid must be 'start:end:step', got {spec!r}")
    start, end, step = (float(p) for p in parts)
    if step <= 0:
        raise click.ClickException("grid step must be positive")
    values = []
    k = 0
    while True:
        v = start + k * step
        if v > end + 1e-9:
            break
        values.append(min(v, end))
        k += 1
    return values


def _apply_labels_file(dialogues: list[Dialogue], path) -> list[Dialogue]:
    overrides: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                overrides[obj["dialogue_id"]] = list(obj["labels"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise click.ClickException(f"{path}: line {line_no}: malformed labels record: {exc!r}")
    known = {d.dialogue_id for d in dialogues}
    unknown = set(overrides) - known
    if unknown:
        raise click.ClickException(f"labels file names unknown dialogues: {sorted(unknown)}")
    out = []
    for d in dialogues:
        if d.dialogue_id in overrides:
            labels = ObjectLabelSet(tuple(tuple(s.split()) for s in overrides[d.dialogue_id]))
            d = dataclasses.replace(d, label_set=labels)
            validate_dialogue(d)
        out.append(d)
    return out


@click.group()
@click.version_option(version=__version__)
def main():
    """Visual-aware pronoun coreference resolution toolkit."""


@main.command()
@click.option("--raw", "raw_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--pool-size", default=30, show_default=True)
@click.option("--seed", default=0, show_default=True)
def ingest(raw_path, out_path, pool_size, seed):
    """Build a dataset from parsed raw dialogues.

    Input is line-delimited JSON with dialogue_id, caption_parse,
    turn_parses (bracketed constituency trees) and optional detected
    labels. Candidate noun phrases and target pronouns are extracted per
    turn; the mention pool takes the caption's noun phrases plus negative
    samples drawn from other captions. Pronoun annotations start empty
    (no-antecedent) pending adjudication.
    """
    records = []
    with open(raw_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    (obj["dialogue_id"], obj["caption_parse"], obj["turn_parses"], obj.get("labels", []))
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise click.ClickException(f"{raw_path}: line {line_no}: {exc!r}")

    caption_nps: dict[str, list[tuple[str, ...]]] = {}
    caption_tokens: dict[str, tuple[str, ...]] = {}
    for dialogue_id, caption_parse, _, _ in records:
        try:
            tree = parse_bracketed_tree(caption_parse)
        except ParseError as exc:
            raise click.ClickException(f"dialogue {dialogue_id!r}: caption parse: {exc}")
        caption_tokens[dialogue_id] = tuple(tree.leaves())
        caption_nps[dialogue_id] = [tuple(m.tokens) for m in extract_noun_phrases(tree)]

    rng = random.Random(seed)
    dialogues = []
    for dialogue_id, _, turn_parses, labels in records:
        turns = []
        candidates = []
        pronoun_mentions = []
        for turn_index, parse in enumerate(turn_parses):
            if not parse:
                raise click.ClickException(
                    f"dialogue {dialogue_id!r}: missing parse for turn {turn_index}"
                )
            try:
                tree = parse_bracketed_tree(parse)
            except ParseError as exc:
                raise click.ClickException(
                    f"dialogue {dialogue_id!r}: turn {turn_index}: {exc}"
                )
            tokens = tuple(tree.leaves())
            turns.append(tokens)
            for m in extract_noun_phrases(tree, turn=turn_index):
                # single-token noun phrases over a target pronoun form are
                # handled as pronouns, not candidates
                if len(m.tokens) == 1 and m.tokens[0].lower() in PRONOUN_FORMS:
                    continue
                candidates.append(m)
            pronoun_mentions.extend(extract_pronouns(tokens, turn=turn_index))

        own = caption_nps[dialogue_id]
        entries = [pool_mention(toks) for toks in own]
        sources = [SOURCE_CAPTION] * len(entries)
        negatives_needed = max(0, pool_size - len(entries))
        seen = set(own)
        negative_candidates = sorted(
            {
                toks
                for other_id, nps in caption_nps.items()
                if other_id != dialogue_id
                for toks in nps
                if toks not in seen
            }
        )
        if negatives_needed > len(negative_candidates):
            click.echo(
                f"warning: dialogue {dialogue_id!r}: only "
                f"{len(negative_candidates)} negative samples available for a pool of {pool_size}",
                err=True,
            )
            negatives_needed = len(negative_candidates)
        for toks in rng.sample(negative_candidates, negatives_needed):
            entries.append(pool_mention(toks))
            sources.append(SOURCE_NEGATIVE)

        if not pronoun_mentions:
            click.echo(f"warning: dialogue {dialogue_id!r} has no target pronouns", err=True)
        d = Dialogue(
            dialogue_id=dialogue_id,
            caption=caption_tokens[dialogue_id],
            turns=tuple(turns),
            candidates=tuple(candidates),
            pronouns=tuple(
                PronounInstance(m, NO_ANTECEDENT) for m in pronoun_mentions
            ),
            pool=MentionPool(entries=tuple(entries), sources=tuple(sources)),
            label_set=ObjectLabelSet(tuple(tuple(s.split()) for s in labels)),
        )
        validate_dialogue(d)
        dialogues.append(d)

    manifest = Manifest("ingest", seed, {"pool_size": pool_size})
    manifest.add_input(raw_path)
    save_dataset(dialogues, out_path)
    manifest.write(out_path)
    click.echo(f"wrote {len(dialogues)} dialogues to {out_path}")


@main.command()
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--split", "split_spec", default=None, help="train/val/test ratios, e.g. 8/1/1")
@click.option("--seed", default=0, show_default=True)
def adjudicate(annotations_path, dataset_path, out_path, report_path, split_spec, seed):
    """Adjudicate crowdsourced annotations into gold data.

    Filters checkpoint failures, majority-votes coreference links and
    anaphoricity, derives antecedents, computes agreement and corpus
    statistics, and optionally splits the result with a seed.
    """
    dialogues = load_dataset(dataset_path)
    by_id = {d.dialogue_id: d for d in dialogues}
    records = load_annotations(annotations_path)
    unknown = {r.dialogue_id for r in records} - set(by_id)
    if unknown:
        raise click.ClickException(f"annotations name unknown dialogues: {sorted(unknown)}")
    kept, retained = filter_workers(records)
    if not kept:
        raise click.ClickException("no valid annotations: every worker failed the checkpoint")

    grouped: dict[str, list] = {}
    for rec in kept:
        grouped.setdefault(rec.dialogue_id, []).append(rec)
    adjudicated = {}
    out_dialogues = []
    try:
        for d in dialogues:
            recs = grouped.get(d.dialogue_id, [])
            if not recs:
                raise AdjudicationError(
                    f"no valid annotations for dialogue {d.dialogue_id!r}"
                )
            adj = adjudicate_dialogue(recs, d)
            adjudicated[d.dialogue_id] = adj
            out_dialogues.append(apply_adjudication(d, adj))
    except AdjudicationError as exc:
        raise click.ClickException(str(exc))

    iaa = compute_iaa(kept, adjudicated)
    stats = corpus_statistics(out_dialogues)

    manifest = Manifest("adjudicate", seed, {"split": split_spec})
    manifest.add_input(annotations_path)
    manifest.add_input(dataset_path)

    if split_spec is not None:
        try:
            ratios = tuple(float(x) for x in split_spec.split("/"))
        except ValueError:
            raise click.ClickException(f"bad split spec {split_spec!r}; expected e.g. 8/1/1")
        if len(ratios) != 3:
            raise click.ClickException(f"bad split spec {split_spec!r}; expected three ratios")
        splits = split_dialogues(out_dialogues, ratios, seed)
        out_dialogues = splits["train"] + splits["val"] + splits["test"]
    save_dataset(out_dialogues, out_path)
    manifest.write(out_path)

    report = {
        "retained_fraction": retained,
        "iaa": iaa,
        "statistics": stats.to_json(),
    }
    if report_path is not None:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    click.echo(json.dumps(report, sort_keys=True))


_config_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None),
    click.option("--seed", type=int, default=None),
    click.option("--lambda", "lambda_vis", type=float, default=None),
    click.option("--embeddings", "embeddings_path", type=click.Path(exists=True), default=None),
    click.option(
        "--contextual-vectors", "contextual_path", type=click.Path(exists=True), default=None
    ),
]


def _with_options(options):
    def wrap(f):
        for opt in reversed(options):
            f = opt(f)
        return f

    return wrap


@main.command(name="train")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--validation", "validation_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--steps", type=int, default=None, help="override the configured step cap")
@_with_options(_config_options)
def train_command(dataset_path, validation_path, out_path, steps, config_path, seed, lambda_vis, embeddings_path, contextual_path):
    """Train a model and write a checkpoint."""
    config = load_config(config_path, seed=seed, lambda_vis=lambda_vis)
    dialogues = load_dataset(dataset_path)
    validation = load_dataset(validation_path) if validation_path else None
    static_vectors = load_embedding_file(embeddings_path) if embeddings_path else None
    store = load_contextual_vectors(contextual_path) if contextual_path else None
    state = train(
        dialogues,
        config,
        validation=validation,
        static_vectors=static_vectors,
        contextual_store=store,
        max_steps=steps,
    )
    save_checkpoint(out_path, state.params, state.step, state.best_validation_f1)
    manifest = Manifest("train", config.seed, dataclasses.asdict(config))
    for p in (dataset_path, validation_path, embeddings_path, contextual_path):
        manifest.add_input(p)
    manifest.write(out_path)
    click.echo(
        f"trained {state.step} steps"
        + (
            f", best validation F1 {state.best_validation_f1:.4f} at step {state.best_step}"
            if state.best_validation_f1 is not None
            else ""
        )
    )


@main.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--split", "expected_split", default=None, help="expected split stamp of the dataset")
@click.option("--labels-file", "labels_path", type=click.Path(exists=True), default=None)
@click.option("--contextual-vectors", "contextual_path", type=click.Path(exists=True), default=None)
def eval_command(checkpoint_path, dataset_path, out_path, expected_split, labels_path, contextual_path):
    """Evaluate a checkpoint: the nine-cell report plus pronoun counts."""
    params, meta = load_checkpoint(checkpoint_path)
    dialogues = load_dataset(dataset_path, expected_split=expected_split)
    if labels_path:
        dialogues = _apply_labels_file(dialogues, labels_path)
    store = load_contextual_vectors(contextual_path) if contextual_path else None
    report = evaluate(dialogues, params, params.config, store)
    manifest = Manifest("eval", params.config.seed, dataclasses.asdict(params.config))
    for p in (checkpoint_path, dataset_path, labels_path, contextual_path):
        manifest.add_input(p)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump({"checkpoint": meta, "report": report.to_json()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.write(out_path)
    click.echo(json.dumps(report.to_json(), sort_keys=True))


@main.command(name="sweep")
@click.option("--train-dataset", "train_path", required=True, type=click.Path(exists=True))
@click.option("--eval-dataset", "eval_path", required=True, type=click.Path(exists=True))
@click.option("--grid", "grid_spec", required=True, help="fusion weights, e.g. 0:1:0.1")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--steps", type=int, default=None)
@_with_options(_config_options)
def sweep_command(train_path, eval_path, grid_spec, out_path, steps, config_path, seed, lambda_vis, embeddings_path, contextual_path):
    """Retrain and evaluate across a grid of fusion weights."""
    if lambda_vis is not None:
        raise click.ClickException("--lambda conflicts with --grid; the grid sets the weights")
    config = load_config(config_path, seed=seed)
    grid = parse_grid(grid_spec)
    train_dialogues = load_dataset(train_path)
    eval_dialogues = load_dataset(eval_path)
    static_vectors = load_embedding_file(embeddings_path) if embeddings_path else None
    store = load_contextual_vectors(contextual_path) if contextual_path else None
    points = lambda_sweep(
        train_dialogues,
        eval_dialogues,
        config,
        grid,
        max_steps=steps,
        static_vectors=static_vectors,
        contextual_store=store,
    )
    manifest = Manifest("sweep", config.seed, dataclasses.asdict(config))
    for p in (train_path, eval_path, embeddings_path, contextual_path):
        manifest.add_input(p)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump([p.to_json() for p in points], fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.write(out_path)
    for point in points:
        click.echo(f"lambda={point.lambda_vis:g} overall_f1={point.report.overall.f1:.4f}")


@main.command(name="predict")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--heatmap/--no-heatmap", default=False, help="include alignment heatmaps")
@click.option("--labels-file", "labels_path", type=click.Path(exists=True), default=None)
@click.option("--contextual-vectors", "contextual_path", type=click.Path(exists=True), default=None)
def predict_command(checkpoint_path, dataset_path, out_path, heatmap, labels_path, contextual_path):
    """Dump chains and predicted antecedents, one dialogue per line."""
    params, _ = load_checkpoint(checkpoint_path)
    dialogues = load_dataset(dataset_path)
    if labels_path:
        dialogues = _apply_labels_file(dialogues, labels_path)
    store = load_contextual_vectors(contextual_path) if contextual_path else None
    with open(out_path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            resolved = resolve_dialogue(d, params, params.config, store)
            payload = resolved.to_json()
            if heatmap:
                payload["heatmap"] = alignment_heatmap(prepare_scoring(d, params, store))
            fh.write(json.dumps(payload, sort_keys=True))
            fh.write("\n")
    manifest = Manifest("predict", params.config.seed, dataclasses.asdict(params.config))
    for p in (checkpoint_path, dataset_path, labels_path, contextual_path):
        manifest.add_input(p)
    manifest.write(out_path)
    click.echo(f"wrote predictions for {len(dialogues)} dialogues to {out_path}")


if __name__ == "__main__":
    sys.exit(main())
