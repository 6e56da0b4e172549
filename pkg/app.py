"""
EgoLeak - Egocentric Privacy Leakage Toolkit

Command-line front end wiring ingest -> train -> attack -> report.

Features:
- Synthetic benchmark generation and dataset ingestion
- Cross-view contrastive training of projection heads
- Classifier training per attribute and view
- Retrieval evaluation (HR@k, attribute consistency, chance rows)
- Classification, retrieval-augmented and identity-level attacks
- Progressive-masking explanations and merged plot-ready reports

Every subcommand writes ``<out>.run.json`` next to its output. Module
errors exit 1 with one ``error code=... message=...`` line on stderr;
usage errors exit 2.

Author: EgoLeak Team
Version: 1.0.0
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

# Local imports
from config import Config
from services.attack_service import (
    CapabilityModels,
    ClassifierConfig,
    HeadPredictor,
    ProbabilityTable,
    SweepConfig,
    ZeroShotPrototypeClassifier,
    attack_sweep,
    load_classifier,
    predict,
    save_classifier,
    train_classifier,
    write_attack_csv,
)
from services.dataset_service import ingest, load_dataset, save_dataset
from services.embedding_trainer import TrainConfig, load_heads, save_heads, train_embedding
from services.explain_service import MaskConfig, progressive_mask, write_snapshots, write_trace
from services.metrics_service import (
    MetricReport,
    accuracy,
    attribute_consistency_at_k,
    chance_attribute_consistency,
    prior_accuracy,
)
from services.report_service import ReportDocument, write_merged_csv
from services.retrieval_service import (
    RAW_EMBEDDINGS,
    evaluate_retrieval,
    gallery_view,
    run_retrieval_task,
    write_rankings,
)
from services.synth_service import SynthConfig, generate
from utils.constants import (
    Aggregator,
    Architecture,
    Attribute,
    Capability,
    DenominatorMode,
    Pooling,
    PositiveMode,
    RetrievalTask,
    Split,
    View,
    WeightScheme,
)
from utils.error_handling import (
    ConfigurationError,
    MissingDataError,
    TrainingError,
    ValidationError,
    configure_logging,
    safe_execute,
)
from utils.run_utils import inputs_digest, run_lock, write_run_manifest

logger = logging.getLogger(__name__)

# Arguments naming files or directories; they are echoed in run manifests
# but enter report configs only through their content digests
PATH_ARGUMENTS = {
    "config", "out", "data", "manifest", "ego", "exo", "heads", "pool", "ego_clf", "exo_clf",
    "clf", "zero_shot_probs", "dump_rankings", "snapshots", "inputs",
}
RUNTIME_ARGUMENTS = {"handler", "log_level", "workers"}

# =============================================================================
# Helpers
# =============================================================================

def _read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"malformed config {path}: {e}")
    if not isinstance(payload, dict):
        raise ConfigurationError(f"config {path} must be a JSON object")
    return payload


def _frames(args: argparse.Namespace) -> int:
    return args.frames or Config.DEFAULT_FRAMES


def _view(value: str) -> View:
    return View(value.capitalize())


def _split(value: str) -> Optional[Split]:
    return None if value == "all" else Split(value.capitalize())


def _arguments(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: value for key, value in sorted(vars(args).items()) if key != "handler"}


def _config_echo(args: argparse.Namespace, inputs: Mapping[str, Any]) -> Dict[str, Any]:
    echo = {key: value for key, value in sorted(vars(args).items())
            if key not in PATH_ARGUMENTS and key not in RUNTIME_ARGUMENTS}
    echo["inputs"] = inputs_digest(inputs)
    return echo


def _inputs(args: argparse.Namespace, *names: str) -> Dict[str, str]:
    return {name: getattr(args, name) for name in names if getattr(args, name, None)}


def _overrides(values: Dict[str, Any], **overrides: Any) -> Dict[str, Any]:
    merged = dict(values)
    merged.update({key: value for key, value in overrides.items() if value is not None})
    return merged


def _lock_dir(out: str) -> Path:
    return Path(out).resolve().parent


# =============================================================================
# Subcommands
# =============================================================================

def cmd_synth(args: argparse.Namespace) -> None:
    config = SynthConfig.from_dict(_overrides(_read_json(args.config), seed=args.seed))
    with run_lock(args.out):
        dataset = generate(config)
        save_dataset(dataset, args.out)
    write_run_manifest(args.out, "synth", _arguments(args), _inputs(args, "config"), config.seed)
    print(f"synth: wrote {len(dataset.clips)} clips to {args.out}")


def cmd_ingest(args: argparse.Namespace) -> None:
    with run_lock(args.out):
        dataset = ingest(args.manifest, args.ego, args.exo, {"source": "ingest"})
        save_dataset(dataset, args.out)
    write_run_manifest(args.out, "ingest", _arguments(args), _inputs(args, "manifest", "ego", "exo"))
    print(f"ingest: validated {len(dataset.clips)} clips into {args.out}")


def cmd_train_embed(args: argparse.Namespace) -> None:
    values = _read_json(args.config) if args.config else {}
    config = TrainConfig.from_dict(_overrides(
        values, seed=args.seed, steps=args.steps, positive_mode=args.mode, denominator_mode=args.denominator,
        temperature=args.temperature, learning_rate=args.lr, batch_size=args.batch_size,
        cache_capacity=args.cache, architecture=args.architecture, hidden_dim=args.hidden_dim,
        output_dim=args.output_dim, pooling=args.pooling, frames=args.frames,
    ))
    dataset = load_dataset(args.data)
    with run_lock(_lock_dir(args.out)):
        result = train_embedding(dataset, config)
        save_heads(args.out, result.ego_head, result.exo_head, config)
        loss_path = Path(args.out).with_suffix(".loss.csv")
        result.loss_curve.to_csv(loss_path, index=False)
    write_run_manifest(args.out, "train-embed", _arguments(args), _inputs(args, "data", "config"), config.seed)
    if len(result.loss_curve):
        curve = result.loss_curve["loss"]
        print(f"train-embed: loss {curve.iloc[0]:.4f} -> {curve.iloc[-1]:.4f} over {len(curve)} steps")
    print(f"train-embed: heads written to {args.out}, loss curve to {loss_path}")


def cmd_train_clf(args: argparse.Namespace) -> None:
    values = _read_json(args.config) if args.config else {}
    config = ClassifierConfig.from_dict(_overrides(
        values, seed=args.seed, steps=args.steps, learning_rate=args.lr, batch_size=args.batch_size,
        pooling=args.pooling, frames=args.frames,
    ))
    dataset = load_dataset(args.data)
    attribute, view = Attribute(args.attribute), _view(args.view)
    with run_lock(_lock_dir(args.out)):
        head = train_classifier(dataset, attribute, view, config)
        save_classifier(args.out, head, config, view)
    write_run_manifest(args.out, "train-clf", _arguments(args), _inputs(args, "data", "config"), config.seed)

    train_clips = dataset.clips_in(view, Split.TRAIN)
    labels = dataset.labels(attribute, train_clips)
    predictions = {c: predict(head, dataset, c, config.frames).label for c in labels}
    print(f"train-clf: {attribute.value}/{view.value} train accuracy "
          f"{accuracy(predictions, labels).value:.4f}; head written to {args.out}")


def cmd_retrieve(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.data)
    task = RetrievalTask(args.task)
    embedder = load_heads(args.heads) if args.heads else None
    split = _split(args.split)
    scene_gallery = _view(args.scene_gallery)
    frames = _frames(args)

    rankings = run_retrieval_task(dataset, task, embedder, split, frames, scene_gallery, workers=args.workers)
    reports: List[MetricReport] = evaluate_retrieval(dataset, task, rankings, args.k, split, scene_gallery)
    gallery_clips = dataset.clips_in(gallery_view(task, scene_gallery), split)
    for name in args.consistency or ():
        attribute = Attribute(name)
        attribute_of = dataset.labels(attribute)
        for k in args.k:
            report = attribute_consistency_at_k(rankings, attribute_of, k, name=f"{task.value}/{attribute.value}")
            reports.append(MetricReport(report.metric_name, report.value, report.n_evaluated,
                                        report.n_excluded, {"k": k, "attribute": attribute.value}))
        gallery_labels = dataset.labels(attribute, gallery_clips)
        if gallery_labels:
            reports.append(MetricReport(f"{task.value}/{attribute.value}_chance",
                                        chance_attribute_consistency(gallery_labels), len(gallery_labels),
                                        parameters={"attribute": attribute.value}))

    document = ReportDocument("retrieve", _config_echo(args, _inputs(args, "data", "heads")))
    document.add_metrics(reports)
    with run_lock(_lock_dir(args.out)):
        document.write(args.out)
        if args.dump_rankings:
            write_rankings(rankings, args.dump_rankings)
    write_run_manifest(args.out, "retrieve", _arguments(args), _inputs(args, "data", "heads"))
    for report in reports:
        print(f"{report.metric_name} = {report.value:.4f} (n={report.n_evaluated})")


def _capability_models(args: argparse.Namespace, dataset, attribute: Attribute) -> CapabilityModels:
    capability = Capability(args.capability)
    frames = _frames(args)
    if capability == Capability.ZERO_SHOT:
        if args.ego_clf or args.exo_clf or args.heads:
            raise ValidationError("capability 1 takes no trained heads")
        if args.zero_shot_probs:
            predictor = ProbabilityTable.from_json(args.zero_shot_probs, attribute)
        else:
            predictor = ZeroShotPrototypeClassifier.fit(dataset, attribute, frames=frames)
        return CapabilityModels(capability, predictor, predictor, RAW_EMBEDDINGS)

    if not args.ego_clf:
        raise TrainingError("missing prerequisite head: capability 2 needs --ego-clf")
    ego_head = load_classifier(args.ego_clf)
    exo_head = ego_head if args.shared_classifier else (load_classifier(args.exo_clf) if args.exo_clf else None)
    for head in (ego_head, exo_head):
        if head is not None and head.attribute != attribute:
            raise ValidationError(f"classifier predicts {head.attribute.value}, attack targets {attribute.value}")
    retriever = load_heads(args.heads) if args.heads else RAW_EMBEDDINGS
    exo_predictor = HeadPredictor(exo_head, frames) if exo_head is not None else None
    return CapabilityModels(capability, HeadPredictor(ego_head, frames), exo_predictor, retriever)


def cmd_attack(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.data)
    attribute = Attribute(args.attribute)
    models = _capability_models(args, dataset, attribute)
    sweep = SweepConfig(
        m_values=tuple(args.m) if args.raa else (),
        aggregators=tuple(Aggregator(a) for a in args.agg),
        weight_schemes=tuple(WeightScheme(w) for w in args.weights),
        ego_weight=args.ego_weight,
        per_identity=args.per_identity,
        identity_aggregator=Aggregator(args.identity_agg),
        include_exo_view=args.exo_view,
        exo_pool=load_dataset(args.pool) if args.pool else None,
        frames=_frames(args),
        workers=args.workers,
    )
    rows = attack_sweep(dataset, attribute, [models], sweep)

    train_labels = list(dataset.labels(attribute, dataset.clips_in(View.EGO, Split.TRAIN)).values())
    test_labels = list(dataset.labels(attribute, dataset.clips_in(View.EGO, Split.TEST)).values())
    prior = prior_accuracy(train_labels, test_labels)
    prior = MetricReport(prior.metric_name, prior.value, prior.n_evaluated, prior.n_excluded,
                         {**prior.parameters, "attribute": attribute.value})

    inputs = _inputs(args, "data", "ego_clf", "exo_clf", "heads", "pool", "zero_shot_probs")
    document = ReportDocument("attack", _config_echo(args, inputs))
    document.add_metrics([prior])
    document.add_attack_rows(rows)
    with run_lock(_lock_dir(args.out)):
        document.write(args.out)
        write_attack_csv(rows, Path(args.out).with_suffix(".csv"))
    write_run_manifest(args.out, "attack", _arguments(args), inputs)
    print(f"prior = {prior.value:.4f} (n={prior.n_evaluated})")
    for row in rows:
        print(f"{row.attribute} capability={row.capability} view={row.view} M={row.m} "
              f"{row.aggregator}/{row.weight_scheme}: accuracy={row.accuracy:.4f} delta={row.delta:+.4f} n={row.n}")


def cmd_explain(args: argparse.Namespace) -> None:
    head = load_classifier(args.clf)
    dataset = load_dataset(args.data)
    units = dataset.frames(args.clip, _frames(args))
    label = args.label or dataset.clip(args.clip).label(head.attribute)
    if label is None:
        raise MissingDataError(f"clip {args.clip} has no {head.attribute.value} label; pass --label")
    threshold = args.threshold if args.threshold is not None else math.log(len(head.classes))
    rounds = args.rounds if args.rounds is not None else units.shape[0]
    trace = progressive_mask(head, units, label, rounds, args.units_per_round, threshold,
                             MaskConfig(args.step_size, args.steps_per_round))
    with run_lock(_lock_dir(args.out)):
        write_trace(trace, args.out)
        if args.snapshots:
            write_snapshots(trace, args.snapshots)
    write_run_manifest(args.out, "explain", _arguments(args), _inputs(args, "clf", "data"))
    print(f"explain: masked units {trace.units} stop_round={trace.stop_round} reached={trace.reached}")


def cmd_report(args: argparse.Namespace) -> None:
    with run_lock(_lock_dir(args.out)):
        frame = write_merged_csv(args.inputs, args.out)
    write_run_manifest(args.out, "report", _arguments(args), {f"in{i}": p for i, p in enumerate(args.inputs)})
    print(f"report: merged {len(args.inputs)} reports into {len(frame)} rows at {args.out}")


# =============================================================================
# Parser
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--frames", type=int, default=None, help="frames kept per clip (default: EGOLEAK_FRAMES)")
    common.add_argument("--workers", type=int, default=Config.WORKERS, help="threads for query evaluation")
    common.add_argument("--log-level", default=None, help="override EGOLEAK_LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="egoleak", description=Config.APP_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"%(prog)s {Config.APP_VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    synth.add_argument("--config", required=True)
    synth.add_argument("--seed", type=int, default=None, help="override the config seed")
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=cmd_synth)

    ingest_cmd = commands.add_parser("ingest", parents=[common], help="validate and bundle a dataset")
    ingest_cmd.add_argument("--manifest", required=True)
    ingest_cmd.add_argument("--ego", required=True)
    ingest_cmd.add_argument("--exo", required=True)
    ingest_cmd.add_argument("--out", required=True)
    ingest_cmd.set_defaults(handler=cmd_ingest)

    train_embed = commands.add_parser("train-embed", parents=[common], help="train ego/exo projection heads")
    train_embed.add_argument("--data", required=True)
    train_embed.add_argument("--config", default=None)
    train_embed.add_argument("--mode", choices=[m.value for m in PositiveMode], default=None)
    train_embed.add_argument("--denominator", choices=[m.value for m in DenominatorMode], default=None)
    train_embed.add_argument("--steps", type=int, default=None)
    train_embed.add_argument("--seed", type=int, default=None)
    train_embed.add_argument("--temperature", type=float, default=None)
    train_embed.add_argument("--lr", type=float, default=None)
    train_embed.add_argument("--batch-size", type=int, default=None)
    train_embed.add_argument("--cache", type=int, default=None, help="negative cache capacity")
    train_embed.add_argument("--architecture", choices=[a.value for a in Architecture], default=None)
    train_embed.add_argument("--hidden-dim", type=int, default=None)
    train_embed.add_argument("--output-dim", type=int, default=None)
    train_embed.add_argument("--pooling", choices=[p.value for p in Pooling], default=None)
    train_embed.add_argument("--out", required=True)
    train_embed.set_defaults(handler=cmd_train_embed)

    train_clf = commands.add_parser("train-clf", parents=[common], help="train an attribute classifier")
    train_clf.add_argument("--data", required=True)
    train_clf.add_argument("--attribute", choices=[a.value for a in Attribute], required=True)
    train_clf.add_argument("--view", choices=["ego", "exo"], required=True)
    train_clf.add_argument("--config", default=None)
    train_clf.add_argument("--seed", type=int, default=None)
    train_clf.add_argument("--steps", type=int, default=None)
    train_clf.add_argument("--lr", type=float, default=None)
    train_clf.add_argument("--batch-size", type=int, default=None)
    train_clf.add_argument("--pooling", choices=[p.value for p in Pooling], default=None)
    train_clf.add_argument("--out", required=True)
    train_clf.set_defaults(handler=cmd_train_clf)

    retrieve = commands.add_parser("retrieve", parents=[common], help="evaluate a retrieval task")
    retrieve.add_argument("--data", required=True)
    retrieve.add_argument("--task", choices=[t.value for t in RetrievalTask], required=True)
    retrieve.add_argument("--heads", default=None, help="projection-head checkpoint (omit for raw embeddings)")
    retrieve.add_argument("--k", type=int, nargs="+", default=list(Config.DEFAULT_HIT_RATE_KS))
    retrieve.add_argument("--split", choices=["train", "test", "all"], default="test")
    retrieve.add_argument("--scene-gallery", choices=["ego", "exo"], default="ego")
    retrieve.add_argument("--consistency", nargs="+", choices=[a.value for a in Attribute], default=None,
                          help="also report attribute consistency@k for these attributes")
    retrieve.add_argument("--dump-rankings", default=None)
    retrieve.add_argument("--out", required=True)
    retrieve.set_defaults(handler=cmd_retrieve)

    attack = commands.add_parser("attack", parents=[common], help="run demographic attacks")
    attack.add_argument("--data", required=True)
    attack.add_argument("--attribute", choices=[a.value for a in Attribute], required=True)
    attack.add_argument("--capability", choices=[Capability.ZERO_SHOT.value, Capability.FINE_TUNED.value],
                        required=True)
    attack.add_argument("--ego-clf", default=None)
    attack.add_argument("--exo-clf", default=None)
    attack.add_argument("--shared-classifier", action="store_true", help="use the ego classifier for exo clips")
    attack.add_argument("--zero-shot-probs", default=None, help="JSON of precomputed probabilities per clip")
    attack.add_argument("--heads", default=None, help="retriever projection heads for RAA")
    attack.add_argument("--raa", action="store_true")
    attack.add_argument("--pool", default=None, help="dataset bundle used as the exo pool")
    attack.add_argument("--m", type=int, nargs="+", default=[Config.RAA_TOP_M])
    attack.add_argument("--agg", nargs="+", choices=[a.value for a in Aggregator], default=[Config.RAA_AGGREGATOR])
    attack.add_argument("--weights", nargs="+", choices=[w.value for w in WeightScheme],
                        default=[Config.RAA_WEIGHT_SCHEME])
    attack.add_argument("--ego-weight", type=float, default=None)
    attack.add_argument("--per-identity", action="store_true")
    attack.add_argument("--identity-agg", choices=[a.value for a in Aggregator], default=Aggregator.HARD_VOTE.value)
    attack.add_argument("--exo-view", action="store_true", help="add exo-view classification rows")
    attack.add_argument("--out", required=True)
    attack.set_defaults(handler=cmd_attack)

    explain = commands.add_parser("explain", parents=[common], help="progressive-masking attribution")
    explain.add_argument("--clf", required=True)
    explain.add_argument("--data", required=True)
    explain.add_argument("--clip", required=True)
    explain.add_argument("--label", default=None, help="class to explain (default: the clip's label)")
    explain.add_argument("--rounds", type=int, default=None)
    explain.add_argument("--units-per-round", type=int, default=1)
    explain.add_argument("--threshold", type=float, default=None, help="default: log(number of classes)")
    explain.add_argument("--step-size", type=float, default=Config.MASK_STEP_SIZE)
    explain.add_argument("--steps-per-round", type=int, default=Config.MASK_STEPS_PER_ROUND)
    explain.add_argument("--snapshots", default=None)
    explain.add_argument("--out", required=True)
    explain.set_defaults(handler=cmd_explain)

    report = commands.add_parser("report", parents=[common], help="merge reports into one CSV")
    report.add_argument("--in", dest="inputs", nargs="+", required=True)
    report.add_argument("--out", required=True)
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        int: 0 on success, 1 on a module error, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return 0 if exit_request.code in (0, None) else 2
    configure_logging(args.log_level)
    _, error_line = safe_execute(args.handler, args)
    if error_line:
        print(error_line, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
