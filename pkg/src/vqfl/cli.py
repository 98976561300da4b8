"""Command-line front door.

    vqfl run CONFIG.json [--output DIR] [--workers N]
    vqfl qkd-demo --n 1000 --eve intercept --flip 0.0 --seed 7
    vqfl dp-demo --epsilon 0.5 --sensitivity 1 --mechanism laplace
    vqfl gen-data --out data.csv

Exit codes: 0 success, 2 invalid configuration or flags, 3 runtime abort.
Artifacts go to ``--output``, else the config's ``output``, else
``$VQFL_OUTPUT_DIR``, else ``./vqfl_runs``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, data, qkd
from .config import ConfigError, ExperimentConfig, build_federation, load_config
from .orchestrator import RoundAbort, write_metrics
from .privacy import DpConfig, PrivacyConfigError, noise_scale, sample_noise
from .rng import stream

OUTPUT_ENV = "VQFL_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3

log = logging.getLogger("vqfl")


def _output_dir(flag: str | None, configured: str | None = None) -> Path:
    return Path(flag or configured or os.environ.get(OUTPUT_ENV) or "vqfl_runs")


def artifact_names(cfg: ExperimentConfig, k: int) -> tuple[str, str]:
    if isinstance(cfg.devices, list):
        return f"metrics_devices{k}.csv", f"manifest_devices{k}.json"
    return "metrics.csv", "manifest.json"


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _output_dir(args.output, cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    for k in cfg.device_values():
        single = cfg.with_devices(k)
        metrics_name, manifest_name = artifact_names(cfg, k)
        try:
            fed = build_federation(single, workers=args.workers)
            history = fed.run()
        except ConfigError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except RoundAbort as exc:
            print(f"run aborted (devices={k}): {exc}", file=sys.stderr)
            return EXIT_ABORT
        write_metrics(out / metrics_name, history)
        manifest = {"artifact": "vqfl", "version": __version__, "security": fed.settings.security.label,
                    "config": single.to_dict()}
        (out / manifest_name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"devices={k} rounds={len(history)} -> {out / metrics_name}")
    return EXIT_OK


def cmd_qkd_demo(args: argparse.Namespace) -> int:
    if args.n < 1:
        print("--n must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        channel = qkd.ChannelConfig(args.flip)
        eve = qkd.EveModel(args.eve)
        rng = stream(args.seed, "qkd-demo")
        session = qkd.bb84_exchange(args.n, eve, channel, rng)
        report = qkd.run_test(session, args.test_fraction, args.n_allowed, rng)
    except (ValueError, qkd.QkdError) as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"n {session.n}")
    print(f"sifted {session.sifted_indices.size}")
    print(f"sift_fraction {session.sift_fraction:.6f}")
    print(f"qber {session.sifted_error_rate():.6f}")
    print(f"test_bits {report.tested_indices.size}")
    print(f"test_errors {report.error_count}")
    print(f"test_qber {report.qber:.6f}")
    print(f"passed {'true' if report.passed else 'false'}")
    dump = Path(args.dump) if args.dump else _output_dir(None) / "qkd_session.csv"
    dump.parent.mkdir(parents=True, exist_ok=True)
    dump.write_text(qkd.session_dump(session), encoding="utf-8")
    print(f"dump {dump}")
    return EXIT_OK


def cmd_dp_demo(args: argparse.Namespace) -> int:
    try:
        cfg = DpConfig(args.mechanism, args.epsilon, args.delta, args.sensitivity, False, None)
    except PrivacyConfigError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.n_samples < 1:
        print("--n-samples must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    scale = noise_scale(cfg)
    draws = sample_noise(cfg, args.n_samples, stream(args.seed, "dp-demo"))
    expected = 2 * scale**2 if cfg.mechanism.value == "laplace" else scale**2
    print(f"mechanism {cfg.mechanism.value}")
    print(f"scale {scale:.6f}")
    print(f"mean {float(np.mean(draws)):.6f}")
    print(f"variance {float(np.var(draws)):.6f}")
    print(f"expected_variance {expected:.6f}")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    try:
        weights = [float(w) for w in args.weights.split(",")] if args.weights else None
        ds = data.generate_blobs(args.n_samples, args.n_features, args.n_classes, args.separation, weights,
                                 stream(args.seed, "gen-data"))
    except (ValueError, data.DataError) as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else _output_dir(None) / "blobs.csv"
    data.write_csv(ds, out)
    print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vqfl", description="Quantum federated learning simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output", help="output directory")
    r.add_argument("--workers", type=int, default=1, help="concurrent client tasks")
    r.set_defaults(func=cmd_run)

    q = sub.add_parser("qkd-demo", help="one BB84 exchange plus test")
    q.add_argument("--n", type=int, default=1000)
    q.add_argument("--eve", choices=[e.value for e in qkd.EveKind], default="none")
    q.add_argument("--flip", type=float, default=0.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--test-fraction", type=float, default=0.1)
    q.add_argument("--n-allowed", type=int, default=0)
    q.add_argument("--dump", help="session dump path")
    q.set_defaults(func=cmd_qkd_demo)

    d = sub.add_parser("dp-demo", help="noise scale and empirical moments")
    d.add_argument("--epsilon", type=float, required=True)
    d.add_argument("--sensitivity", type=float, default=1.0)
    d.add_argument("--mechanism", choices=["laplace", "gaussian"], default="laplace")
    d.add_argument("--delta", type=float)
    d.add_argument("--n-samples", type=int, default=100_000)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_dp_demo)

    g = sub.add_parser("gen-data", help="write synthetic class blobs as CSV")
    g.add_argument("--n-samples", type=int, default=400)
    g.add_argument("--n-features", type=int, default=2)
    g.add_argument("--n-classes", type=int, default=2)
    g.add_argument("--separation", type=float, default=6.0)
    g.add_argument("--weights", help="comma-separated class proportions")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
