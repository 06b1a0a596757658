#!/usr/bin/env python3
"""
Smoke client for the SRB prediction toolkit

Drives the command-line entry point end to end and checks its outputs.
"""

import sys
import json
import argparse
import subprocess
from pathlib import Path

import pandas as pd

QUICK_CONFIG = json.loads((Path(__file__).resolve().parent / 'config' / 'quick.json').read_text())


def cli(*args):
    return subprocess.run(
        [sys.executable, '-m', 'src.cli', *args],
        capture_output=True, text=True,
    )


def test_verify(out_dir, max_n):
    """Test verify subcommand."""
    print(f"Testing verify (max N={max_n})...")
    result = cli('verify', '--max-n', str(max_n), '--out', str(out_dir))
    passes = [line for line in result.stdout.splitlines() if line.startswith('PASS')]
    if result.returncode == 0:
        print(f"  ✓ {len(passes)} identities passed")
        return True
    print(f"  ✗ Verification failed (exit {result.returncode})")
    for line in result.stdout.splitlines():
        if line.startswith('FAIL'):
            print(f"    {line}")
    print(f"    {result.stderr.strip()}")
    return False


def test_generate(out_dir):
    """Test generate subcommand."""
    print("Testing generate...")
    pop_dir = out_dir / 'populations'
    result = cli('generate', '--size', '200', '--count', '2', '--alpha', '-1.0',
                 '--sample-size', '40', '--out', str(pop_dir))
    if result.returncode != 0:
        print(f"  ✗ Generate failed (exit {result.returncode})")
        print(f"    {result.stderr.strip()}")
        return False
    files = sorted(pop_dir.glob('population_*.csv'))
    if len(files) != 2:
        print(f"  ✗ Expected 2 population files, found {len(files)}")
        return False
    frame = pd.read_csv(files[0])
    print(f"  ✓ Generated {len(files)} populations, N={len(frame)}")
    return True


def test_run(out_dir, threads):
    """Test run subcommand on a quick config."""
    print(f"Testing run ({threads} thread(s))...")
    config_path = out_dir / 'quick.json'
    with open(config_path, 'w') as f:
        json.dump({**QUICK_CONFIG, "output_dir": str(out_dir / 'run')}, f, indent=2)

    result = cli('run', '--config', str(config_path), '--threads', str(threads))
    if result.returncode != 0:
        print(f"  ✗ Run failed (exit {result.returncode})")
        print(f"    {result.stderr.strip()}")
        return False
    replicates = pd.read_csv(out_dir / 'run' / 'replicates.csv')
    summary = pd.read_csv(out_dir / 'run' / 'summary.csv')
    print(f"  ✓ Run completed:")
    print(f"    Replicates: {len(replicates)}")
    print(f"    Summary rows: {len(summary)}")
    print(f"    Mean true MSEP (optimal): {replicates['optimal_true'].mean():.3f}")
    print(f"    Mean design estimate (optimal): {replicates['optimal_design'].mean():.3f}")
    return True


def test_report(out_dir):
    """Test report subcommand."""
    print("Testing report...")
    result = cli('report', '--out', str(out_dir / 'run'))
    if result.returncode == 0 and 'Design actual' in result.stdout:
        print(f"  ✓ Report rebuilt from replicates.csv")
        return True
    print(f"  ✗ Report failed (exit {result.returncode})")
    print(f"    {result.stderr.strip()}")
    return False


def test_bad_config(out_dir):
    """Test error handling with malformed configs."""
    print("Testing error handling...")

    cases = {
        'sample larger than population': {**QUICK_CONFIG, "sampling": {"kind": "SRS_WOR", "sample_size": 500}},
        'unknown learner': {**QUICK_CONFIG, "learners": [{"kind": "SVM"}]},
        'zero replicates': {**QUICK_CONFIG, "replicates": 0},
    }
    ok = True
    for label, data in cases.items():
        print(f"  Testing {label}...")
        path = out_dir / 'bad.json'
        with open(path, 'w') as f:
            json.dump(data, f)
        result = cli('run', '--config', str(path))
        if result.returncode == 2:
            print(f"    ✓ Correctly rejected with exit 2: {result.stderr.strip()}")
        else:
            print(f"    ✗ Expected exit 2, got {result.returncode}")
            ok = False
    return ok


def main():
    parser = argparse.ArgumentParser(
        description="Smoke client for the SRB prediction toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Run full smoke sequence
  python smoke_client.py --full-test

  # Test one subcommand
  python smoke_client.py --test verify --max-n 6
  python smoke_client.py --test run --threads 2
        """
    )
    parser.add_argument(
        '--out',
        default='smoke_output',
        help='Scratch directory (default: smoke_output)'
    )
    parser.add_argument(
        '--threads',
        type=int,
        default=1,
        help='Worker count for run (default: 1)'
    )
    parser.add_argument(
        '--max-n',
        type=int,
        default=8,
        help='Largest enumerated population for verify (default: 8)'
    )
    parser.add_argument(
        '--test',
        choices=['verify', 'generate', 'run', 'report'],
        help='Run a specific test only'
    )
    parser.add_argument(
        '--full-test',
        action='store_true',
        help='Run full test sequence (verify, generate, run, report)'
    )
    parser.add_argument(
        '--test-errors',
        action='store_true',
        help='Run error handling tests'
    )

    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    print("=" * 60)
    print("SRB Prediction Toolkit Smoke Client")
    print("=" * 60)
    print(f"Scratch directory: {out_dir}")
    print()

    # Run specific test if requested
    if args.test:
        if args.test == 'verify':
            success = test_verify(out_dir, args.max_n)
        elif args.test == 'generate':
            success = test_generate(out_dir)
        elif args.test == 'run':
            success = test_run(out_dir, args.threads)
        elif args.test == 'report':
            success = test_run(out_dir, args.threads) and test_report(out_dir)

        print()
        print("=" * 60)
        if success:
            print(f"Test '{args.test}' passed!")
        else:
            print(f"Test '{args.test}' failed.")
            sys.exit(1)
        return

    # Run full test sequence if requested
    if args.full_test:
        steps = [
            ("Verifying identities", lambda: test_verify(out_dir, args.max_n)),
            ("Generating populations", lambda: test_generate(out_dir)),
            ("Running quick experiment", lambda: test_run(out_dir, args.threads)),
            ("Rebuilding report", lambda: test_report(out_dir)),
        ]
        failed = 0
        for k, (title, step) in enumerate(steps, start=1):
            print(f"[{k}/{len(steps)}] {title}...")
            if not step():
                failed += 1
            print()

        if args.test_errors:
            print("[Extra] Testing error handling...")
            test_bad_config(out_dir)
            print()

        print("=" * 60)
        if failed:
            print(f"✗ {failed} step(s) failed")
            sys.exit(1)
        print("✓ Full test sequence completed!")
        print("=" * 60)
        return

    # Default: verify and a quick run
    success = test_verify(out_dir, min(args.max_n, 6)) and test_run(out_dir, args.threads)

    if args.test_errors:
        print()
        test_bad_config(out_dir)

    print()
    print("=" * 60)
    if success:
        print("Tests completed successfully!")
    else:
        print("Some tests failed.")
        sys.exit(1)


if __name__ == '__main__':
    main()
