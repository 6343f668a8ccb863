#!/usr/bin/env python
"""The ``cst`` command: the whole self-training pipeline from the shell.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file format
error, 3 training or self-training failure.
"""
import dataclasses
import itertools
import logging
import os
import shutil
import sys
import time
from argparse import ArgumentParser
from datetime import datetime, timezone
from threading import Thread, current_thread
from typing import Any, Callable, List, Optional, Sequence

from colorama import Fore, Style

import cine_selftrain
from cine_selftrain.benchmark import Variant, cross_validate
from cine_selftrain.config import (
    ToolkitConfig,
    config_sections,
    config_to_ini,
    load_config,
)
from cine_selftrain.errors import (
    CineSelftrainError,
    ConfigError,
    DataError,
    InsufficientData,
    InvalidOperation,
    OutputDirectoryNotEmpty,
    OutputFileExists,
    PipelineError,
)
from cine_selftrain.foundation import (
    FoundationSimulator,
    PrecomputedSegmenter,
    SegmenterModel,
    simulate_foundation,
)
from cine_selftrain.grid import LabelVolume
from cine_selftrain.io import container, reports
from cine_selftrain.metrics import evaluate_studies, summarize
from cine_selftrain.phantom import generate_phantom, subject_ids
from cine_selftrain.qc import flag_studies, flagged_fraction
from cine_selftrain.selftrain import (
    IterationReport,
    SelfTrainMode,
    apply_model,
    run_self_training,
)
from cine_selftrain.student import (
    StudentSegmenter,
    load_model,
    save_model,
)
from cine_selftrain.temporal import cohort_temporal_summary, temporal_report
from cine_selftrain.utils.lock import DirectoryLock
from cine_selftrain.utils.multi_processing import ordered_map

logger = logging.getLogger('cst')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PIPELINE = 3


class _ArgumentParser(ArgumentParser):
    """Reports bad arguments with the usage exit code."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _error(msg: str) -> None:
    print(Fore.RED + msg + Style.RESET_ALL, file=sys.stderr)


def _info(msg: Any) -> None:
    print(Fore.GREEN + str(msg) + Style.RESET_ALL)


def _start_spinner(message: str) -> None:
    spinner = itertools.cycle(['-', '/', '|', '\\'])
    print(message, end=' ')
    t = current_thread()
    while getattr(t, "spin", True):
        sys.stdout.write(next(spinner))
        sys.stdout.flush()
        sys.stdout.write('\b')
        time.sleep(0.25)
    print(' ')


def _run_with_spinner(
    fn: Callable[[], Any], spinner_message: str, verbose: bool = False
) -> Any:
    if verbose or not sys.stdout.isatty():
        return fn()
    spinner_thread = Thread(target=_start_spinner, args=(spinner_message,))
    spinner_thread.spin = True
    spinner_thread.start()
    try:
        return fn()
    finally:
        spinner_thread.spin = False
        spinner_thread.join()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _prepare_out_dir(path: str, force: bool) -> None:
    if os.path.isdir(path) and os.listdir(path):
        if not force:
            raise OutputDirectoryNotEmpty(path)
        shutil.rmtree(path)
    elif os.path.exists(path) and not os.path.isdir(path):
        if not force:
            raise OutputDirectoryNotEmpty(path)
        os.remove(path)
    os.makedirs(path, exist_ok=True)


def _prepare_out_file(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise OutputFileExists(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _require_dir(path: str, what: str) -> None:
    if not os.path.isdir(path):
        raise InvalidOperation(f"The {what} directory '{path}' does not exist")


def _studies_dir(path: str) -> str:
    """`path`/studies for a phantom output directory, else `path` itself."""
    _require_dir(path, 'data')
    studies = os.path.join(path, 'studies')
    return studies if os.path.isdir(studies) else path


def _truth_dir(path: str) -> Optional[str]:
    truth = os.path.join(path, 'truth')
    return truth if os.path.isdir(truth) else None


def _read_studies(path: str) -> List[cine_selftrain.CineStudy]:
    studies = container.read_dataset(path)
    if not studies:
        raise InsufficientData(f"No study containers found in '{path}'")
    return studies


def _load_config(args) -> ToolkitConfig:
    return load_config(getattr(args, 'config', None))


# phantom


def phantom_generate(args) -> None:
    cfg = _load_config(args)
    phantom_cfg = cfg.phantom
    if args.seed is not None:
        phantom_cfg = dataclasses.replace(phantom_cfg, seed=args.seed)
    _prepare_out_dir(args.out, args.force)

    def _generate() -> int:
        with DirectoryLock(args.out):
            for subject_id, is_manual in subject_ids(phantom_cfg):
                study = generate_phantom(
                    phantom_cfg, subject_id, is_manual, args.threads
                )
                container.write_study(
                    study, os.path.join(args.out, 'truth', subject_id)
                )
                if not is_manual:
                    empty = LabelVolume.empty(study.shape, study.spacing)
                    study = study.with_labels([empty] * study.num_frames)
                container.write_study(
                    study, os.path.join(args.out, 'studies', subject_id)
                )
        return len(subject_ids(phantom_cfg))

    count = _run_with_spinner(_generate, "Generating phantoms", args.verbose)
    _info(f"Wrote {count} studies to {args.out}")


# foundation


def foundation_simulate(args) -> None:
    cfg = _load_config(args)
    corruption = cfg.corruption
    if args.seed is not None:
        corruption = dataclasses.replace(corruption, seed=args.seed)
    _require_dir(args.data, 'data')
    truth = _read_studies(_truth_dir(args.data) or _studies_dir(args.data))
    _prepare_out_dir(args.out, args.force)

    def _simulate() -> None:
        with DirectoryLock(args.out):
            for study in truth:
                if not study.is_manual:
                    study = simulate_foundation(study, corruption, args.threads)
                container.write_study(
                    study, os.path.join(args.out, study.subject_id)
                )

    _run_with_spinner(_simulate, "Simulating foundation labels", args.verbose)
    _info(f"Wrote {len(truth)} pseudo-labelled studies to {args.out}")


# selftrain


def _initial_segmenter(
    args, cfg: ToolkitConfig, studies, truth
) -> SegmenterModel:
    if args.init_model is not None:
        return StudentSegmenter(load_model(args.init_model), cfg.training)
    if truth is not None:
        return FoundationSimulator(
            {s.subject_id: s for s in truth}, cfg.corruption
        )
    logger.info(
        "No ground truth found, using the stored labels as foundation labels"
    )
    return PrecomputedSegmenter({s.subject_id: s for s in studies})


def selftrain_run(args) -> None:
    cfg = _load_config(args)
    selftrain_cfg = cfg.selftrain
    overrides = {}
    if args.mode is not None:
        overrides['mode'] = SelfTrainMode(args.mode)
    if args.rounds is not None:
        overrides['rounds'] = args.rounds
    if overrides:
        selftrain_cfg = dataclasses.replace(selftrain_cfg, **overrides)

    studies = _read_studies(_studies_dir(args.data))
    truth_path = _truth_dir(args.data)
    truth = _read_studies(truth_path) if truth_path is not None else None
    foundation = _initial_segmenter(args, cfg, studies, truth)
    _prepare_out_dir(args.out, args.force)

    sections = config_sections(cfg)
    sections['selftrain'].update(
        {k: str(getattr(v, 'value', v)) for k, v in overrides.items()}
    )
    manifest = reports.RunManifest(
        toolkit_version=cine_selftrain.__version__,
        command=['cst'] + list(args.argv),
        config=sections,
        seeds=cfg.seeds(),
        started_at=_now(),
    )
    collected: List[IterationReport] = []
    clock = [time.monotonic()]

    def _on_report(report: IterationReport) -> None:
        now = time.monotonic()
        collected.append(report)
        reports.write_iteration_report(
            os.path.join(args.out, f'iteration_{report.iteration:02d}'), report
        )
        manifest.record_iteration(report, now - clock[0])
        manifest.write(args.out)
        clock[0] = now
        if report.flagged_fractions:
            _info(
                f"Iteration {report.iteration}: flagged "
                + ', '.join(
                    f'{s.label} {f:.2f}'
                    for s, f in report.flagged_fractions.items()
                )
            )

    def _finish(status: str, error: Optional[str] = None) -> None:
        if any(r.flagged_fractions for r in collected):
            reports.write_flagged_fractions_csv(
                os.path.join(args.out, 'flagged_fractions.csv'), collected
            )
            reports.write_flagged_fractions_svg(
                os.path.join(args.out, 'flagged_fractions.svg'), collected
            )
        manifest.status = status
        manifest.error = error
        manifest.finished_at = _now()
        manifest.write(args.out)

    with DirectoryLock(args.out):
        manifest.write(args.out)
        try:
            result = run_self_training(
                studies,
                foundation,
                selftrain_cfg,
                truth={s.subject_id: s for s in truth} if truth else None,
                threads=args.threads,
                on_report=_on_report,
            )
        except CineSelftrainError as e:
            _finish('failed', str(e))
            raise
        if result.model is not None:
            save_model(result.model, os.path.join(args.out, 'model.json'))
        if args.save_labels:
            container.write_dataset(
                result.studies, os.path.join(args.out, 'labels')
            )
        _finish('completed')
    _info(f"Wrote {len(collected)} iteration reports to {args.out}")


def selftrain_apply(args) -> None:
    cfg = _load_config(args)
    train_cfg = cfg.training
    if args.largest_component:
        train_cfg = dataclasses.replace(
            train_cfg, postprocess_largest_component=True
        )
    model = load_model(args.model)
    studies = _read_studies(_studies_dir(args.data))
    _prepare_out_dir(args.out, args.force)
    with DirectoryLock(args.out):
        predicted = _run_with_spinner(
            lambda: apply_model(model, studies, train_cfg, args.threads),
            "Predicting",
            args.verbose,
        )
        container.write_dataset(predicted, os.path.join(args.out, 'studies'))
        flags = flag_studies(
            [s for s in predicted if not s.is_manual], threads=args.threads
        )
        if flags:
            reports.write_flags_csv(os.path.join(args.out, 'flags.csv'), flags)
    _info(f"Wrote {len(predicted)} studies to {args.out}")


# metrics


def _reference_dir(path: str) -> str:
    _require_dir(path, 'truth')
    return _truth_dir(path) or _studies_dir(path)


def metrics_eval(args) -> None:
    _require_dir(args.pred, 'prediction')
    truth_path = _reference_dir(args.truth)
    _prepare_out_file(args.out, args.force)
    preds = _read_studies(_studies_dir(args.pred))
    truth = {s.subject_id: s for s in _read_studies(truth_path)}
    rows = _run_with_spinner(
        lambda: evaluate_studies(preds, truth, args.threads),
        "Evaluating",
        args.verbose,
    )
    summary = summarize(rows)
    reports.write_metrics_csv(args.out, rows, summary)
    for s, entry in summary.items():
        if entry.dice is not None:
            _info(f"{s.label}: Dice {entry.dice.format()}")


def metrics_benchmark(args) -> None:
    cfg = _load_config(args)
    _require_dir(args.data, 'data')
    truth_path = _truth_dir(args.data)
    if truth_path is None:
        raise InvalidOperation(
            f"The benchmark needs reference labels in '{args.data}/truth'"
        )
    _prepare_out_file(args.out, args.force)
    studies = _read_studies(_studies_dir(args.data))
    truth = {s.subject_id: s for s in _read_studies(truth_path)}
    result = _run_with_spinner(
        lambda: cross_validate(
            studies,
            truth,
            FoundationSimulator(truth, cfg.corruption),
            cfg.training,
            folds=args.folds,
            variants=[Variant(v) for v in args.variants],
            manual_fraction=cfg.selftrain.manual_fraction,
            seed=cfg.selftrain.seed,
            threads=args.threads,
        ),
        "Benchmarking",
        args.verbose,
    )
    reports.write_benchmark_csv(args.out, result)
    _info(f"Wrote the benchmark table to {args.out}")


# qc and temporal


def qc_flag(args) -> None:
    _prepare_out_file(args.out, args.force)
    studies = _read_studies(_studies_dir(args.data))
    flags = flag_studies(studies, args.largest_component, args.threads)
    reports.write_flags_csv(args.out, flags)
    fractions = flagged_fraction([f.results for f in flags])
    for s, fraction in fractions.items():
        _info(f"{s.label}: {fraction:.3f} of frames flagged")


def temporal_report_cmd(args) -> None:
    studies = _read_studies(_studies_dir(args.data))
    _prepare_out_dir(args.out, args.force)
    with DirectoryLock(args.out):
        temporal = ordered_map(temporal_report, studies, args.threads)
        reports.write_temporal_csv(
            os.path.join(args.out, 'temporal.csv'), temporal
        )
        reports.write_temporal_json(
            os.path.join(args.out, 'temporal.json'), temporal
        )
        reports.write_temporal_summary_csv(
            os.path.join(args.out, 'temporal_summary.csv'),
            cohort_temporal_summary(temporal),
        )
        curves = os.path.join(args.out, 'curves')
        os.makedirs(curves, exist_ok=True)
        for report in temporal:
            reports.write_volume_curves_svg(
                os.path.join(curves, f'{report.subject_id}.svg'), report
            )
    _info(f"Wrote temporal reports for {len(temporal)} studies to {args.out}")


# config


def config_show(args) -> None:
    print(config_to_ini(_load_config(args)), end='')


def _common_parser() -> ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument(
        '--threads',
        type=int,
        default=None,
        help='number of worker threads (default: all cores); results do not '
        'depend on it',
    )
    common.add_argument(
        '--force',
        action='store_true',
        help='overwrite a non-empty output directory or an existing file',
    )
    common.add_argument(
        '--verbose', action='store_true', help='log progress messages'
    )
    common.add_argument(
        '--config', type=str, default=None, help='INI configuration file'
    )
    return common


def build_parser() -> ArgumentParser:
    parser = _ArgumentParser(prog='cst')
    parser.add_argument(
        '-v',
        '--version',
        action='version',
        version=f'cine_selftrain: {cine_selftrain.__version__}',
        help='Show the installed cine_selftrain version',
    )
    subparsers = parser.add_subparsers(
        title='These are the cst commands', metavar='commands'
    )
    common = _common_parser()

    # phantom
    phantom_parser = subparsers.add_parser(
        'phantom', help='Synthetic beating-heart phantoms'
    )
    phantom_sub = phantom_parser.add_subparsers(
        title='The available subcommands', metavar='commands'
    )
    generate_parser = phantom_sub.add_parser(
        'generate',
        parents=[common],
        help='Write phantom studies and their ground truth',
    )
    generate_parser.add_argument(
        '--out', type=str, required=True, help='output directory'
    )
    generate_parser.add_argument(
        '--seed', type=int, default=None, help='override phantom.seed'
    )
    generate_parser.set_defaults(handle=phantom_generate)

    # foundation
    foundation_parser = subparsers.add_parser(
        'foundation', help='Simulated foundation segmenter'
    )
    foundation_sub = foundation_parser.add_subparsers(
        title='The available subcommands', metavar='commands'
    )
    simulate_parser = foundation_sub.add_parser(
        'simulate',
        parents=[common],
        help='Write per-frame foundation labels of a ground-truth dataset',
    )
    simulate_parser.add_argument(
        '--data',
        type=str,
        required=True,
        help='dataset directory (its truth/ subdirectory is used if present)',
    )
    simulate_parser.add_argument(
        '--out', type=str, required=True, help='output dataset directory'
    )
    simulate_parser.add_argument(
        '--seed', type=int, default=None, help='override corruption.seed'
    )
    simulate_parser.set_defaults(handle=foundation_simulate)

    # selftrain
    selftrain_parser = subparsers.add_parser(
        'selftrain', help='Pseudo-label self-training'
    )
    selftrain_sub = selftrain_parser.add_subparsers(
        title='The available subcommands', metavar='commands'
    )
    run_parser = selftrain_sub.add_parser(
        'run', parents=[common], help='Run the self-training loop'
    )
    run_parser.add_argument(
        '--data',
        type=str,
        required=True,
        help='dataset directory; studies/ and truth/ are used if present',
    )
    run_parser.add_argument(
        '--mode',
        choices=[m.value for m in SelfTrainMode],
        default=None,
        help='override selftrain.mode',
    )
    run_parser.add_argument(
        '--rounds', type=int, default=None, help='override selftrain.rounds'
    )
    run_parser.add_argument(
        '--out', type=str, required=True, help='run directory'
    )
    run_parser.add_argument(
        '--init-model',
        dest='init_model',
        type=str,
        default=None,
        help='student model JSON used as the initial segmenter',
    )
    run_parser.add_argument(
        '--save-labels',
        dest='save_labels',
        action='store_true',
        help='also write the final pseudo-labelled studies',
    )
    run_parser.set_defaults(handle=selftrain_run)

    apply_parser = selftrain_sub.add_parser(
        'apply',
        parents=[common],
        help='Label unseen studies with a trained student',
    )
    apply_parser.add_argument(
        '--model', type=str, required=True, help='student model JSON'
    )
    apply_parser.add_argument(
        '--data', type=str, required=True, help='dataset directory'
    )
    apply_parser.add_argument(
        '--out', type=str, required=True, help='output directory'
    )
    apply_parser.add_argument(
        '--largest-component',
        dest='largest_component',
        action='store_true',
        help='keep only the largest component of non-vessel structures',
    )
    apply_parser.set_defaults(handle=selftrain_apply)

    # metrics
    metrics_parser = subparsers.add_parser(
        'metrics', help='Accuracy against reference labels'
    )
    metrics_sub = metrics_parser.add_subparsers(
        title='The available subcommands', metavar='commands'
    )
    eval_parser = metrics_sub.add_parser(
        'eval', parents=[common], help='Per-frame Dice, HD95 and ASSD'
    )
    eval_parser.add_argument(
        '--pred', type=str, required=True, help='predicted dataset directory'
    )
    eval_parser.add_argument(
        '--truth', type=str, required=True, help='reference dataset directory'
    )
    eval_parser.add_argument(
        '--out', type=str, required=True, help='output CSV file'
    )
    eval_parser.set_defaults(handle=metrics_eval)

    benchmark_parser = metrics_sub.add_parser(
        'benchmark',
        parents=[common],
        help='Cross-validated comparison of training-label variants',
    )
    benchmark_parser.add_argument(
        '--data',
        type=str,
        required=True,
        help='dataset directory with studies/ and truth/',
    )
    benchmark_parser.add_argument(
        '--folds', type=int, default=5, help='number of folds'
    )
    benchmark_parser.add_argument(
        '--variants',
        nargs='+',
        choices=[v.value for v in Variant],
        default=[v.value for v in Variant],
        help='variants to compare',
    )
    benchmark_parser.add_argument(
        '--out', type=str, required=True, help='output CSV file'
    )
    benchmark_parser.set_defaults(handle=metrics_benchmark)

    # qc
    qc_parser = subparsers.add_parser('qc', help='Plausibility checks')
    qc_sub = qc_parser.add_subparsers(
        title='The available subcommands', metavar='commands'
    )
    flag_parser = qc_sub.add_parser(
        'flag', parents=[common], help='Flag implausible segmentations'
    )
    flag_parser.add_argument(
        '--data', type=str, required=True, help='dataset directory'
    )
    flag_parser.add_argument(
        '--out', type=str, required=True, help='output CSV file'
    )
    flag_parser.add_argument(
        '--largest-component',
        dest='largest_component',
        action='store_true',
        help='keep only the largest component of non-vessel structures '
        'before flagging',
    )
    flag_parser.set_defaults(handle=qc_flag)

    # temporal
    temporal_parser = subparsers.add_parser(
        'temporal', help='Temporal consistency'
    )
    temporal_sub = temporal_parser.add_subparsers(
        title='The available subcommands', metavar='commands'
    )
    report_parser = temporal_sub.add_parser(
        'report',
        parents=[common],
        help='Volume curves, Dice std and extreme points per study',
    )
    report_parser.add_argument(
        '--data', type=str, required=True, help='dataset directory'
    )
    report_parser.add_argument(
        '--out', type=str, required=True, help='output directory'
    )
    report_parser.set_defaults(handle=temporal_report_cmd)

    # config
    config_parser = subparsers.add_parser('config', help='Configuration')
    config_sub = config_parser.add_subparsers(
        title='The available subcommands', metavar='commands'
    )
    show_parser = config_sub.add_parser(
        'show',
        parents=[common],
        help='Print the effective configuration in INI format',
    )
    show_parser.set_defaults(handle=config_show)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if not hasattr(args, 'handle'):
        parser.print_help()
        return EXIT_USAGE if argv else EXIT_OK
    args.argv = argv

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s',
    )
    try:
        args.handle(args)
    except ConfigError as e:
        _error(f"Error ({type(e).__name__}): {e}")
        return EXIT_USAGE
    except DataError as e:
        _error(f"Error ({type(e).__name__}): {e}")
        return EXIT_DATA
    except PipelineError as e:
        _error(f"Error ({type(e).__name__}): {e}")
        return EXIT_PIPELINE
    except OSError as e:
        _error(f"Error ({type(e).__name__}): {e}")
        return EXIT_DATA
    return EXIT_OK


def cli() -> None:
    sys.exit(main())


if __name__ == '__main__':
    cli()
