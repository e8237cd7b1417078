"""
Command-line interface for corpus generation, training, evaluation, timing and ablation sweeps

Every command resolves one ExperimentConfig (file plus flags), writes its
outputs under --out and finishes with a manifest.json describing the run.
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from sentence_localizer.autodiff import ShapeError, UsageError
from sentence_localizer.baseline import ScanBaseline, oracle_scorer, train_scan_baseline
from sentence_localizer.benchmark import benchmark
from sentence_localizer.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from sentence_localizer.config_loader import (
    VARIANTS, ConfigurationError, ExperimentConfig, apply_overrides, load_config, override_data, parse_config,
    read_config_data
)
from sentence_localizer.corpus import Corpus, CorpusValidationError, load_corpus, save_corpus
from sentence_localizer.logging_setup import configure_logging
from sentence_localizer.manifest_generator import ManifestGenerator, write_manifest
from sentence_localizer.metrics import evaluate
from sentence_localizer.synthetic import generate_corpus
from sentence_localizer.trainer import (
    EPOCH_LOG, Localizer, TrainingDivergenceError, inspect_sample, model_dims, train
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = 'checkpoint.bin'
EVAL_LOG = 'eval.jsonl'
TIMING_LOG = 'timing.jsonl'
ABLATION_LOG = 'ablation.jsonl'
ABLATION_TABLE = 'ablation.txt'
INSPECT_LOG = 'inspect.jsonl'
ABLATION_COLUMNS = ['R@1,IoU@0.1', 'R@1,IoU@0.3', 'R@1,IoU@0.5', 'mIoU']

DOMAIN_ERRORS = (
    ConfigurationError, CorpusValidationError, CheckpointError, TrainingDivergenceError,
    ShapeError, UsageError, FileNotFoundError
)


@dataclass
class CommandOutcome:
    """What a command produced: artifacts for the manifest and a metric summary"""
    artifacts: Dict[str, Path] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)


def write_records(path: Path, records: Sequence[Dict[str, Any]]) -> Path:
    """Write line-delimited JSON records, replacing the file"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record) + '\n')
    return path


def _require_compatible(localizer: Localizer, corpus: Corpus) -> None:
    """
    Raises:
        ShapeError: If the corpus dimensions differ from those the checkpoint was trained on
    """
    expected = localizer.model.dims
    actual = model_dims(corpus)
    if actual != expected:
        raise ShapeError('corpus', str(expected), str(actual))


def _evaluation_samples(corpus: Corpus, split: str):
    samples = corpus.split(split)
    if not samples:
        raise UsageError(f"Split '{split}' is empty, nothing to evaluate")
    return samples


# ===================================================================
# COMMANDS
# ===================================================================

def cmd_generate(args: argparse.Namespace, config: ExperimentConfig) -> CommandOutcome:
    """Write a planted-interval corpus under --out"""
    corpus = generate_corpus(config.synth)
    paths = save_corpus(corpus, args.out)
    counts = {name: len(samples) for name, samples in corpus.splits.items()}
    print(f"Corpus written to {args.out}")
    for name, count in counts.items():
        print(f"  {name}: {count} samples")
    return CommandOutcome(artifacts={'output_corpus': Path(args.out)},
                          metrics={'counts': counts, 'files': sorted(str(p.name) for p in paths.values())})


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> CommandOutcome:
    """Train one variant; writes the checkpoint and the epoch log"""
    corpus = load_corpus(args.corpus)
    result = train(corpus, config.train, out_dir=args.out, progress=not args.quiet,
                   sigmas=config.eval.sigmas)
    checkpoint_path = save_checkpoint(result.checkpoint, Path(args.out) / CHECKPOINT_FILE)

    print(f"Trained {config.train.variant.value} for {config.train.epochs} epochs, kept epoch {result.best_epoch}")
    if result.best_miou is not None:
        print(f"Validation mIoU: {result.best_miou:.4f}")
    print(f"Checkpoint: {checkpoint_path}")

    metrics = {'variant': config.train.variant.value, 'alpha': config.train.alpha, 'beta': config.train.beta,
               'best_epoch': result.best_epoch, 'best_val_miou': result.best_miou,
               'final': {k: v for k, v in result.history[-1].items() if k != 'seconds'}}
    return CommandOutcome(artifacts={'input_corpus': Path(args.corpus), 'output_checkpoint': checkpoint_path,
                                     'output_epochs': Path(args.out) / EPOCH_LOG},
                          metrics=metrics)


def cmd_evaluate(args: argparse.Namespace, config: ExperimentConfig) -> CommandOutcome:
    """Score a checkpoint, or the ground truth itself with --oracle, on one split"""
    corpus = load_corpus(args.corpus)
    split = args.split or config.eval.split
    samples = _evaluation_samples(corpus, split)
    artifacts: Dict[str, Path] = {'input_corpus': Path(args.corpus)}

    if args.oracle:
        gts = [s.gt_norm for s in samples]
        report = evaluate(gts, gts, config.eval.sigmas, video_ids=[s.video_id for s in samples],
                          curve_sigmas=config.eval.curve_sigmas)
    else:
        if args.checkpoint is None:
            raise UsageError("evaluate needs --checkpoint unless --oracle is given")
        localizer = Localizer.from_checkpoint(load_checkpoint(args.checkpoint))
        _require_compatible(localizer, corpus)
        artifacts['input_checkpoint'] = Path(args.checkpoint)
        report = localizer.evaluate(samples, config.eval.sigmas, curve_sigmas=config.eval.curve_sigmas)

    artifacts['output_eval'] = write_records(Path(args.out) / EVAL_LOG, report.to_records())
    print(report.format_table())
    return CommandOutcome(artifacts=artifacts, metrics={'split': split, **report.summary()})


def cmd_benchmark(args: argparse.Namespace, config: ExperimentConfig) -> CommandOutcome:
    """Per-sentence inference time of the model against the sliding-window baseline"""
    corpus = load_corpus(args.corpus)
    checkpoint = load_checkpoint(args.checkpoint)
    localizer = Localizer.from_checkpoint(checkpoint)
    _require_compatible(localizer, corpus)

    baseline = ScanBaseline.initialize(checkpoint.config, checkpoint.dims, config.scan,
                                       encoder=checkpoint.parameters)
    if args.oracle_scorer:
        embeddings = corpus.concept_embeddings()
        if embeddings is None:
            raise UsageError("--oracle-scorer needs a generated corpus with concept embeddings")
        baseline.scorer = oracle_scorer(embeddings)
    elif config.scan.train_epochs > 0:
        train_scan_baseline(corpus, baseline, progress=not args.quiet)

    report = benchmark(localizer, baseline, corpus.split(config.benchmark.split), config.benchmark)
    path = write_records(Path(args.out) / TIMING_LOG, [report.to_record()])
    print(report.format_table())
    return CommandOutcome(
        artifacts={'input_corpus': Path(args.corpus), 'input_checkpoint': Path(args.checkpoint), 'output_timing': path},
        metrics={'speedup': report.speedup, 'window_count': report.window_count,
                 **{f"{name}_mean_seconds": t.mean_seconds for name, t in report.methods.items()}}
    )


def _run_ablation_cell(cell: Dict[str, Any]) -> Dict[str, Any]:
    """Train and evaluate one (variant, seed) cell; runs in a worker process when --workers > 1"""
    config = parse_config(cell['config'], f"ablation cell {cell['variant']}/{cell['seed']}")
    corpus = load_corpus(Path(cell['corpus']))
    result = train(corpus, config.train, out_dir=Path(cell['out_dir']), progress=False, sigmas=config.eval.sigmas)
    save_checkpoint(result.checkpoint, Path(cell['out_dir']) / CHECKPOINT_FILE)
    samples = _evaluation_samples(corpus, config.eval.split)
    report = Localizer.from_checkpoint(result.checkpoint).evaluate(samples, config.eval.sigmas, curve_sigmas=())
    return {'record': 'cell', 'variant': cell['variant'], 'seed': cell['seed'],
            'best_epoch': result.best_epoch, **report.summary()}


def ablation_table(records: Sequence[Dict[str, Any]], variants: Sequence[str]) -> pd.DataFrame:
    """Rows are variants, columns the recall thresholds and mIoU, cells 'mean ± std' over seeds"""
    frame = pd.DataFrame(records)
    grouped = frame.groupby('variant')[ABLATION_COLUMNS]
    means = grouped.mean()
    stds = grouped.std(ddof=0)
    table = pd.DataFrame(index=[v for v in variants if v in means.index], columns=ABLATION_COLUMNS)
    for variant in table.index:
        for column in ABLATION_COLUMNS:
            table.loc[variant, column] = f"{means.loc[variant, column]:.4f} ± {stds.loc[variant, column]:.4f}"
    table.index.name = 'variant'
    return table


def cmd_ablate(args: argparse.Namespace, config: ExperimentConfig) -> CommandOutcome:
    """Train every requested variant over every seed and tabulate the held-out metrics"""
    variants = args.variants or VARIANTS
    seeds = args.seeds or [config.train.seed]
    out = Path(args.out)
    # From the file as written: validation already applied the base variant's weight rules
    base = override_data(read_config_data(args.config), epochs=args.epochs)
    cells = []
    for variant in variants:
        for seed in seeds:
            cell_config = parse_config(override_data(base, variant=variant, seed=seed),
                                       f"ablation cell {variant}/{seed}")
            cells.append({'variant': variant, 'seed': seed, 'corpus': str(args.corpus),
                          'config': cell_config.model_dump(mode='json'),
                          'out_dir': str(out / f"{variant}_seed{seed}")})
    logger.info(f"Ablation over {len(variants)} variants x {len(seeds)} seeds with {args.workers} worker(s)")

    if args.workers > 1:
        with Pool(processes=args.workers) as pool:
            records = pool.map(_run_ablation_cell, cells)
    else:
        records = [_run_ablation_cell(cell) for cell in cells]

    table = ablation_table(records, variants)
    rendered = table.to_string()
    write_records(out / ABLATION_LOG, records)
    (out / ABLATION_TABLE).write_text(rendered + '\n', encoding='utf-8')
    print(rendered)

    means = pd.DataFrame(records).groupby('variant')['mIoU'].mean()
    return CommandOutcome(artifacts={'input_corpus': Path(args.corpus), 'output_ablation': out / ABLATION_LOG},
                          metrics={'variants': list(variants), 'seeds': list(seeds),
                                   'mean_miou': {v: float(means[v]) for v in means.index}})


def cmd_inspect(args: argparse.Namespace, config: ExperimentConfig) -> CommandOutcome:
    """Attention profile and most attended words for selected samples"""
    corpus = load_corpus(args.corpus)
    localizer = Localizer.from_checkpoint(load_checkpoint(args.checkpoint))
    _require_compatible(localizer, corpus)
    samples = corpus.split(args.split or config.eval.split)

    if args.video_id:
        selected = [s for s in samples if s.video_id in set(args.video_id)]
        missing = set(args.video_id) - {s.video_id for s in selected}
        if missing:
            raise UsageError(f"Unknown video ids: {sorted(missing)}")
    else:
        selected = samples[:args.limit]

    records = [inspect_sample(localizer, sample, corpus.vocabulary, args.top_k) for sample in selected]
    path = write_records(Path(args.out) / INSPECT_LOG, records)
    for record in records:
        words = ', '.join(f"{w['word']} ({w['weight']:.2f})" for w in record['top_words'])
        print(f"{record['video_id']}: \"{record['sentence']}\" pred={np.round(record['pred'], 3).tolist()} "
              f"gt={np.round(record['gt'], 3).tolist()} top words: {words or '-'}")
    return CommandOutcome(artifacts={'input_corpus': Path(args.corpus), 'input_checkpoint': Path(args.checkpoint),
                                     'output_inspect': path},
                          metrics={'inspected': len(records)})


COMMANDS: Dict[str, Callable[[argparse.Namespace, ExperimentConfig], CommandOutcome]] = {
    'generate': cmd_generate,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'benchmark': cmd_benchmark,
    'ablate': cmd_ablate,
    'inspect': cmd_inspect,
}


# ===================================================================
# COMMAND LINE INTERFACE
# ===================================================================

def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='Path to TOML or YAML experiment configuration')
    common.add_argument('--seed', type=int, help='Seed for generation, initialisation and shuffling')
    common.add_argument('--out', type=Path, default=Path('runs/latest'), help='Output directory')
    common.add_argument('--threads', choices=['1', 'auto'], default='auto',
                        help='BLAS threads: 1 pins numerical libraries to a single thread')
    common.add_argument('--quiet', action='store_true', help='Warnings only, no progress bars')
    common.add_argument('--verbose', action='store_true', help='Enable debug logging')
    common.add_argument('--log-format', choices=['text', 'json'], default='text', help='Log record format')
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='sentence-localizer',
        description="Temporal sentence localization with co-attention and location regression",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate the desk-scale planted-interval corpus
  python -m sentence_localizer generate --config config/desk.toml --out runs/corpus

  # Train attention-weight regression
  python -m sentence_localizer train --corpus runs/corpus --variant full-aw --out runs/full-aw

  # Evaluate on the test split
  python -m sentence_localizer evaluate --corpus runs/corpus --checkpoint runs/full-aw/checkpoint.bin --out runs/full-aw

  # Time against the sliding-window baseline, single-threaded
  python -m sentence_localizer benchmark --corpus runs/corpus --checkpoint runs/full-aw/checkpoint.bin --threads 1

  # Ablation table over three seeds
  python -m sentence_localizer ablate --corpus runs/corpus --seeds 0 1 2 --workers 3 --out runs/ablation
        """
    )
    common = _common_arguments()
    subparsers = parser.add_subparsers(dest='command', required=True)

    subparsers.add_parser('generate', parents=[common], help='Write a synthetic corpus')

    train_parser = subparsers.add_parser('train', parents=[common], help='Train one variant')
    train_parser.add_argument('--corpus', type=Path, required=True, help='Corpus directory')
    train_parser.add_argument('--variant', choices=VARIANTS, help='Model variant')
    train_parser.add_argument('--epochs', type=int, help='Override train.epochs')
    train_parser.add_argument('--precision', choices=['float32', 'float64'], help='Override train.precision')

    evaluate_parser = subparsers.add_parser('evaluate', parents=[common], help='Score a checkpoint')
    evaluate_parser.add_argument('--corpus', type=Path, required=True, help='Corpus directory')
    evaluate_parser.add_argument('--checkpoint', type=Path, help='Checkpoint file')
    evaluate_parser.add_argument('--split', help='Split to score (default: eval.split)')
    evaluate_parser.add_argument('--oracle', action='store_true',
                                 help='Score the ground truth against itself (harness self-test)')

    benchmark_parser = subparsers.add_parser('benchmark', parents=[common], help='Time model against scan baseline')
    benchmark_parser.add_argument('--corpus', type=Path, required=True, help='Corpus directory')
    benchmark_parser.add_argument('--checkpoint', type=Path, required=True, help='Checkpoint file')
    benchmark_parser.add_argument('--oracle-scorer', action='store_true',
                                  help='Score windows by the planted concept instead of learned projections')

    ablate_parser = subparsers.add_parser('ablate', parents=[common], help='Variant x seed comparison table')
    ablate_parser.add_argument('--corpus', type=Path, required=True, help='Corpus directory')
    ablate_parser.add_argument('--variants', nargs='+', choices=VARIANTS, help='Variants (default: all)')
    ablate_parser.add_argument('--seeds', nargs='+', type=int, help='Seeds (default: train.seed)')
    ablate_parser.add_argument('--workers', type=int, default=1, help='Parallel training processes')
    ablate_parser.add_argument('--epochs', type=int, help='Override train.epochs')

    inspect_parser = subparsers.add_parser('inspect', parents=[common], help='Attention profiles of samples')
    inspect_parser.add_argument('--corpus', type=Path, required=True, help='Corpus directory')
    inspect_parser.add_argument('--checkpoint', type=Path, required=True, help='Checkpoint file')
    inspect_parser.add_argument('--split', help='Split to draw samples from (default: eval.split)')
    inspect_parser.add_argument('--video-id', nargs='+', help='Video ids to inspect')
    inspect_parser.add_argument('--limit', type=int, default=5, help='Samples to inspect without --video-id')
    inspect_parser.add_argument('--top-k', type=int, default=3, help='Most attended words to report')
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuration file with command-line values applied on top"""
    config = load_config(args.config)
    return apply_overrides(
        config,
        seed=args.seed,
        variant=getattr(args, 'variant', None),
        epochs=getattr(args, 'epochs', None),
        precision=getattr(args, 'precision', None)
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function; returns 0 when the command's outputs were written"""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = 'DEBUG' if args.verbose else 'WARNING' if args.quiet else 'INFO'
    configure_logging(level, args.log_format)

    started = datetime.now(timezone.utc)
    try:
        config = resolve_config(args)
        if args.command == 'ablate' and args.workers < 1:
            raise UsageError(f"--workers must be >= 1, got {args.workers}")
        outcome = COMMANDS[args.command](args, config)
    except DOMAIN_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 1

    manifest = ManifestGenerator().generate_manifest(
        command=args.command,
        argv=sys.argv if argv is None else ['sentence-localizer', *argv],
        config=config.model_dump(mode='json'),
        seed=args.seed if args.seed is not None else config.train.seed,
        artifacts=outcome.artifacts,
        start_time=started,
        end_time=datetime.now(timezone.utc),
        metrics=outcome.metrics
    )
    path = write_manifest(manifest, args.out)
    logger.info(f"Manifest written to {path}")
    return 0
