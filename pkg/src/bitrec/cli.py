"""Command-line front end: recovery, benchmarking, diagnostics, imaging.

One binary with subcommands; every run that writes an output directory also
writes a metadata file echoing the configuration, seed, version, and thread
count so the invocation can be repeated bit-identically.  Exit codes: 0 on
success, 1 on usage/IO errors, 2 on numerical failures raised by the
library.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import serialize
from .amp import AmpConfig, recover_amp
from .baselines import BaselineConfig, sbl, split_bregman
from .bench import (ALGORITHMS, ExperimentSpec, brute_force_oracle,
                    build_describe, default_algorithm_configs,
                    estimate_rip_constants, run_sweep, write_metadata,
                    write_sweep_csv, write_sweep_svg)
from .convex import ConvexSolverConfig, recover_convex_em
from .errors import BitrecError, FormatError, IoFailure
from .meanfield import MeanFieldConfig, recover_mean_field
from .model import PriorConfig, measurement_set, support_of

log = logging.getLogger("bitrec")


def _configure_logging():
    level = os.environ.get("BITREC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(config, pairs):
    """--set key=value edits on a frozen config dataclass."""
    if not pairs:
        return config
    updates = {}
    fields = {f.name for f in dataclasses.fields(config)}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or key not in fields:
            raise FormatError(f"unknown config key {key!r} in --set")
        updates[key] = _parse_value(value)
    return dataclasses.replace(config, **updates)


def _load_measurements(path):
    if os.path.isdir(path):
        return serialize.read_csv_bundle(path)
    return serialize.read_brec(path)


def _first_channel(ms):
    ch = ms.channels[0]
    return measurement_set([ch.phi], [ch.y], [ch.beta])


def _recover(args):
    ms = _load_measurements(args.input)
    priors = PriorConfig()
    cfg = default_algorithm_configs(noiseless=args.epsilon == 0.0)
    config = _apply_overrides(cfg[args.algo], args.set)
    if args.algo == "convex" and args.epsilon is not None:
        config = dataclasses.replace(config, epsilon_override=args.epsilon)

    beta_hat = None
    trace = None
    if args.algo == "convex":
        res = recover_convex_em(ms, priors, config)
        x_hat, beta_hat = res.x_hat, list(res.beta_hat)
        iterations, converged = res.iterations, res.converged
    elif args.algo == "mf":
        res, _ = recover_mean_field(ms, priors, config)
        x_hat, beta_hat = res.x_hat, list(res.beta_hat)
        iterations, converged = res.iterations, res.converged
    elif args.algo == "amp":
        res = recover_amp(ms, priors, config)
        x_hat, beta_hat = res.x_hat, list(res.beta_hat)
        iterations, converged = res.iterations, res.converged
    elif args.algo == "split-bregman":
        res = split_bregman(_first_channel(ms), config)
        x_hat, iterations, converged = res.x, res.iterations, res.converged
        trace = list(res.objective_trace)
    elif args.algo == "sbl":
        res = sbl(_first_channel(ms), config)
        x_hat, iterations, converged = res.x, res.iterations, res.converged
        beta_hat = [res.beta_noise]
    else:  # pragma: no cover - argparse restricts choices
        raise FormatError(f"unknown algorithm {args.algo!r}")

    payload = {
        "algorithm": args.algo,
        "x_hat": [float(v) for v in x_hat],
        "support": [int(i) for i in support_of(x_hat)],
        "beta_hat": beta_hat,
        "iterations": int(iterations),
        "converged": bool(converged),
    }
    if trace is not None:
        payload["objective_trace_len"] = len(trace)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "recovery.json"), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _bench(args):
    with open(args.spec) as fh:
        spec = ExperimentSpec.from_dict(json.load(fh))
    if args.trials is not None:
        spec = dataclasses.replace(spec, trials=args.trials)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    result = run_sweep(spec, timing=args.timing, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    write_sweep_csv(result, os.path.join(args.out, "results.csv"))
    write_sweep_svg(result, os.path.join(args.out, "results.svg"))
    write_metadata(result, os.path.join(args.out, "metadata.json"),
                   threads=args.threads, timing=args.timing)
    log.info("bench outputs in %s", args.out)
    return 0


def _rip(args):
    phi = np.loadtxt(args.input, delimiter=",", ndmin=2)
    est = estimate_rip_constants(phi, args.sparsity, samples=args.samples,
                                 seed=args.seed if args.seed is not None
                                 else 0)
    payload = {
        "delta_s": est.delta_s,
        "exact": est.exact,
        "delta_s_b_lower": est.delta_s_b_lower,
        "c_bound": est.c_bound,
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "rip.json"), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _oracle(args):
    # input: augmented matrix [Phi | y], one measurement row per line
    aug = np.loadtxt(args.input, delimiter=",", ndmin=2)
    if aug.shape[1] < 2:
        raise FormatError("oracle input needs at least one matrix column "
                          "plus the trailing measurement column")
    phi, y = aug[:, :-1], aug[:, -1]
    ms = measurement_set([phi], [y])
    epsilon = args.epsilon if args.epsilon is not None else 0.0
    x_best, ties = brute_force_oracle(ms, epsilon, return_count=True)
    payload = {
        "epsilon": epsilon,
        "feasible": x_best is not None,
        "x": None if x_best is None else [int(v) for v in x_best],
        "ties": int(ties),
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "oracle.json"), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _image(args):
    from .eddy import imaging

    setup = imaging.load_pipe_config(args.spec)
    if args.seed is not None:
        setup = dataclasses.replace(setup, seed=args.seed)
    configs = None
    if args.set:
        base = default_algorithm_configs(setup.snr_db is None)
        configs = {setup.algorithm:
                   _apply_overrides(base[setup.algorithm], args.set)}
    image = imaging.run_setup(setup, configs=configs)
    os.makedirs(args.out, exist_ok=True)
    imaging.write_image_csv(image, os.path.join(args.out, "image.csv"))
    imaging.write_image_svg(image, os.path.join(args.out, "image.svg"))
    imaging.write_image_metadata(
        image, os.path.join(args.out, "metadata.json"),
        extra={
            "algorithm": setup.algorithm,
            "seed": setup.seed,
            "snr_db": setup.snr_db,
            "frequencies_hz": list(setup.frequencies),
            "probe_positions": list(setup.probe_positions),
            "threads": args.threads,
            "build": build_describe(),
        })
    log.info("image outputs in %s", args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bitrec",
        description="Sparse binary recovery and eddy-current pipe imaging.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("recover",
                       help="run one algorithm on a stored measurement set")
    p.add_argument("--algo", choices=ALGORITHMS, default="convex")
    p.add_argument("--input", required=True,
                   help=".brec file or CSV bundle directory")
    p.add_argument("--out", help="output directory (default: stdout)")
    p.add_argument("--epsilon", type=float,
                   help="override the feasibility-ball radius (convex)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a solver config field")
    p.set_defaults(func=_recover)

    p = sub.add_parser("bench", help="execute an experiment spec file")
    p.add_argument("--spec", required=True, help="experiment JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trials", type=int, help="override trials per point")
    p.add_argument("--seed", type=int, help="override the root seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock runtimes (breaks byte "
                        "reproducibility of the CSV)")
    p.set_defaults(func=_bench)

    p = sub.add_parser("rip", help="estimate restricted-isometry constants")
    p.add_argument("--input", required=True, help="matrix CSV file")
    p.add_argument("--sparsity", type=int, required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: stdout)")
    p.set_defaults(func=_rip)

    p = sub.add_parser("oracle",
                       help="exhaustive binary search on a small instance")
    p.add_argument("--input", required=True,
                   help="CSV of the augmented matrix [Phi | y]")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--out", help="output directory (default: stdout)")
    p.set_defaults(func=_oracle)

    p = sub.add_parser("image", help="scan and image a pipe configuration")
    p.add_argument("--spec", required=True, help="pipe config JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override the recovery config")
    p.set_defaults(func=_image)
    return parser


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except IoFailure as exc:
        # unreadable/missing inputs are usage problems, not numerics
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except BitrecError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(payload) + "\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
