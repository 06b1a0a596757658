#!/usr/bin/env python3
"""
Command-line entry point for the SRB prediction toolkit.

Usage:
    python -m src.cli generate --size 500 --count 3 --out populations
    python -m src.cli run --config config/srs.json --threads 4
    python -m src.cli verify --max-n 8
    python -m src.cli report --out results/srs
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from config import Config
from src.design import calibrate_poisson, cv_pi, save_inclusion_probabilities
from src.oracle import run_verification_suite, write_reports
from src.population import PopulationSpec, generate_population, save_population
from src.simlab import (ConfigError, ExperimentConfig, format_tables, run_experiment, summarize,
                        write_outputs)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def resolve_threads(flag, config: ExperimentConfig = None) -> int:
    """--threads, then SRB_THREADS, then the config file, then Config.THREADS."""
    if flag:
        return flag
    env = os.getenv('SRB_THREADS')
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f'SRB_THREADS: {e}') from e
    if config is not None and config.threads:
        return config.threads
    return Config.THREADS


def parse_mixture(text: str) -> tuple:
    """'M1=0.5,M2=0.5' -> (('M1', 0.5), ('M2', 0.5))"""
    try:
        return tuple(
            (gen.strip(), float(prop))
            for gen, prop in (item.split('=') for item in text.split(','))
        )
    except ValueError as e:
        raise ConfigError(f'mixture: expected GEN=PROP[,GEN=PROP...], got {text!r}') from e


def banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def cmd_generate(args) -> int:
    if args.config:
        spec = ExperimentConfig.from_json(args.config).population
    else:
        try:
            spec = PopulationSpec(size=args.size, mixture=parse_mixture(args.mixture))
        except ValueError as e:
            raise ConfigError(f'population: {e}') from e

    out = Path(args.out or 'populations')
    seqs = np.random.SeedSequence(args.seed).spawn(args.count)
    banner(f"Generating {args.count} population(s) of N={spec.size}")
    for b, seq in enumerate(seqs):
        pop = generate_population(spec, seed=int(seq.generate_state(1)[0]))
        path = save_population(pop, out / f'population_{b:03d}.csv')
        line = f"  {path}: mean(y)={pop.y.mean():.3f}"
        if args.alpha is not None:
            pi = calibrate_poisson(pop.y, args.sample_size, args.alpha)
            save_inclusion_probabilities(pi, out / f'pi_{b:03d}.csv')
            line += f", cv_pi={100 * cv_pi(pi):.1f}%"
        print(line)
    return EXIT_OK


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError('--config: required for run')
    config = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out:
        config = replace(config, output_dir=args.out)
    threads = resolve_threads(args.threads, config)

    banner(f"Experiment {Path(args.config).name}: B={config.replicates}, seed={config.seed}")
    result = run_experiment(config, threads=threads)
    write_outputs(result, config.output_dir)

    print()
    print(format_tables(result.summary))
    print()
    print("=" * 60)
    print(f"{len(result.records)} replicate(s) kept, {len(result.failures)} excluded")
    print(f"Output: {config.output_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = Config.DEFAULT_SEED if args.seed is None else args.seed
    banner(f"Verification suite (max N={args.max_n})")
    reports = run_verification_suite(max_n=args.max_n, seed=seed)
    for report in reports:
        print(report.line())

    if args.out:
        write_reports(reports, Path(args.out) / Config.VERIFY_FILE)

    failed = [r for r in reports if not r.passed]
    print("=" * 60)
    if failed:
        print(f"{len(failed)} of {len(reports)} identities FAILED")
        return EXIT_FAILURE
    print(f"All {len(reports)} identities passed")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out or 'results')
    path = out / Config.REPLICATES_FILE
    if not path.exists():
        raise ConfigError(f'--out: no {Config.REPLICATES_FILE} in {out}')
    replicates = pd.read_csv(path)
    summary = summarize(replicates)
    summary.to_csv(out / Config.SUMMARY_FILE, index=False, float_format=Config.FLOAT_FORMAT)

    banner(f"Summary of {len(replicates)} replicate(s) in {out}")
    print(format_tables(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='python -m src.cli',
        description="Design-based SRB prediction: experiments, verification and reports",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Exact small-instance checks
  python -m src.cli verify --max-n 8

  # Scaled simulation under SRS, 4 workers
  python -m src.cli run --config config/srs.json --threads 4

  # Rebuild the summary tables from replicates.csv
  python -m src.cli report --out results/srs
        """
    )
    seed = argparse.ArgumentParser(add_help=False)
    seed.add_argument('--seed', type=int, help='Master seed (overrides the config file)')
    config = argparse.ArgumentParser(add_help=False)
    config.add_argument('--config', help='JSON experiment file')
    out = argparse.ArgumentParser(add_help=False)
    out.add_argument('--out', help='Output directory')
    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument('--threads', type=int, help='Worker count (overrides SRB_THREADS)')

    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', parents=[seed, config, out], help='Generate and save populations')
    gen.add_argument('--size', type=int, default=Config.DEFAULT_N, help=f'N (default: {Config.DEFAULT_N})')
    gen.add_argument('--mixture', default='M1=0.5,M2=0.5', help='Generator mixture (default: M1=0.5,M2=0.5)')
    gen.add_argument('--count', type=int, default=1, help='Number of populations (default: 1)')
    gen.add_argument('--alpha', type=float, help='Also write calibrated Poisson inclusion probabilities')
    gen.add_argument('--sample-size', type=int, default=Config.DEFAULT_SAMPLE_SIZE,
                     help=f'Expected sample size for --alpha (default: {Config.DEFAULT_SAMPLE_SIZE})')
    gen.set_defaults(handler=cmd_generate)

    run = sub.add_parser('run', parents=[seed, config, out, threads], help='Run a simulation experiment')
    run.set_defaults(handler=cmd_run)

    verify = sub.add_parser('verify', parents=[seed, out], help='Run the exact enumeration checks')
    verify.add_argument('--max-n', type=int, default=8, help='Largest enumerated population (default: 8)')
    verify.set_defaults(handler=cmd_verify)

    report = sub.add_parser('report', parents=[out], help='Summarize replicates.csv')
    report.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=Config.LOG_LEVEL, format=Config.LOG_FORMAT)

    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
