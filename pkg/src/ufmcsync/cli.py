"""Command-line interface: filter design, single-shot estimation, sweeps.

Configuration is a JSON file mirroring the dataclass tree (see README for
the schema); every key has a default, unknown keys are rejected, and
``--set dotted.key=value`` overrides individual entries.  Exit codes:
0 success, 1 runtime estimation failure (single-shot only), 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys

import numpy as np

from .config import SystemConfig
from .estimation import (
    EstimationError,
    EstimatorParams,
    joint_estimate,
    timing_advance_decision,
)
from .harness import (
    ExperimentConfig,
    Scenario,
    run_ber_sweep,
    run_nmse_sweep,
    write_csv,
)
from .waveform import apply_channel_and_noise, ChannelRealization, receiver_front_end


class ConfigError(Exception):
    pass


_ESTIMATE_DEFAULTS = {
    "delta_t": None,       # list of per-user offsets; None draws U(-L, L)
    "h": None,             # list of [re, im] per user; None draws CN(0, 1)
    "snr_db": 60.0,
    "input_file": None,    # CSV of time samples (index,re,im); overrides synthesis
    "ta_threshold": 1.0,
}


def _defaults_tree() -> dict:
    tree = {}
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "system":
            tree["system"] = {
                sf.name: getattr(SystemConfig(), sf.name)
                for sf in dataclasses.fields(SystemConfig)
            }
        elif f.name == "estimator":
            default = ExperimentConfig().estimator
            tree["estimator"] = {
                ef.name: getattr(default, ef.name)
                for ef in dataclasses.fields(EstimatorParams)
            }
        else:
            tree[f.name] = getattr(ExperimentConfig(), f.name)
    tree["estimate"] = dict(_ESTIMATE_DEFAULTS)
    return tree


def _flatten(tree: dict, prefix: str = "") -> list:
    items = []
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            items.extend(_flatten(value, path + "."))
        else:
            items.append((path, value))
    return items


def _merge(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        here = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be an object")
            _merge(base[key], value, here + ".")
        else:
            base[key] = value


def _apply_set(tree: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    node = tree
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node or isinstance(node[leaf], dict):
        raise ConfigError(f"unknown config key: {dotted}")
    try:
        node[leaf] = json.loads(raw)
    except json.JSONDecodeError:
        node[leaf] = raw


def load_config(args) -> dict:
    tree = _defaults_tree()
    if args.config is not None:
        try:
            with open(args.config) as handle:
                data = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        _merge(tree, data)
    for assignment in args.set or []:
        _apply_set(tree, assignment)
    if args.seed is not None:
        tree["system"]["seed"] = args.seed
    return tree


def build_experiment(tree: dict) -> ExperimentConfig:
    try:
        system = SystemConfig(**tree["system"])
        estimator = EstimatorParams(**tree["estimator"])
        extra = {
            k: v
            for k, v in tree.items()
            if k not in ("system", "estimator", "estimate")
        }
        return ExperimentConfig(system=system, estimator=estimator, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_filter_design(args, tree) -> int:
    experiment = build_experiment(tree)
    system = experiment.system
    from .waveform import design_chebyshev_filter

    filt = design_chebyshev_filter(
        system.filter_length, system.filter_attenuation_db, args.subband, system
    )
    taps_path = f"{args.out}/filter_taps.csv"
    resp_path = f"{args.out}/filter_response.csv"
    _write_rows(
        taps_path,
        ["index", "re", "im"],
        [[i, repr(t.real), repr(t.imag)] for i, t in enumerate(filt.taps)],
    )
    magnitude = np.abs(filt.freq_response)
    mag_db = 20.0 * np.log10(np.maximum(magnitude, 1e-300))
    _write_rows(
        resp_path,
        ["bin", "db"],
        [[k, repr(float(v))] for k, v in enumerate(mag_db)],
    )
    print(f"wrote {taps_path} and {resp_path}")
    return 0


def _read_samples(path, expected: int) -> np.ndarray:
    try:
        with open(path) as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["index", "re", "im"]:
                raise ConfigError(f"{path}: expected header 'index,re,im'")
            values = []
            for row in reader:
                if not row:
                    continue
                if len(row) != 3:
                    raise ConfigError(f"{path}: malformed row {row!r}")
                values.append(complex(float(row[1]), float(row[2])))
    except OSError as exc:
        raise ConfigError(f"cannot read samples: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if len(values) != expected:
        raise ConfigError(f"{path}: expected {expected} samples, got {len(values)}")
    return np.asarray(values, dtype=np.complex128)


def cmd_estimate(args, tree) -> int:
    experiment = build_experiment(tree)
    scenario = Scenario(experiment)
    system = experiment.system
    section = tree["estimate"]
    snr_db = float(section["snr_db"])
    sigma2 = scenario.sigma2(snr_db)

    if section["input_file"] is not None:
        samples = _read_samples(section["input_file"], system.symbol_length)
        received = receiver_front_end(samples, system, noise_var=sigma2)
        channel = None
    else:
        rng = np.random.default_rng(np.random.SeedSequence([system.seed, 0xE5]))
        b = system.n_subbands
        if section["delta_t"] is not None:
            delta_t = np.asarray(section["delta_t"], dtype=float)
        else:
            delta_t = rng.uniform(-system.filter_length, system.filter_length, b)
        if section["h"] is not None:
            h = np.asarray([complex(re, im) for re, im in section["h"]])
        else:
            h = (rng.standard_normal(b) + 1j * rng.standard_normal(b)) / np.sqrt(2.0)
        if delta_t.shape != (b,) or h.shape != (b,):
            raise ConfigError("estimate.delta_t and estimate.h must list one entry per user")
        channel = ChannelRealization(h=h, delta_t=delta_t)
        received = scenario.received_pilot(channel, sigma2, rng)

    try:
        result = joint_estimate(
            received, scenario.pilot_spectrum, system,
            experiment.estimator, frame=scenario.frame,
        )
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 1

    flags = timing_advance_decision(result.delta_t_hats, float(section["ta_threshold"]))
    lines = []
    for i in range(system.n_subbands):
        h_i = result.h_hats[i]
        lines.append(f"user {i + 1}: delta_t_hat={result.delta_t_hats[i]:+.6f} samples  "
                     f"|h|={abs(h_i):.6f} phase={math.degrees(np.angle(h_i)):+.2f} deg  "
                     f"timing_advance={'yes' if flags[i] else 'no'}"
                     + ("  [outside prior range]" if result.out_of_range[i] else ""))
    lines.append(f"residual_norm={result.residual_norm:.6e}")
    lines.append(f"solver_iterations={result.solver_iterations} "
                 f"converged={result.solver_converged}")
    if channel is not None:
        truth = ", ".join(f"{d:+.4f}" for d in channel.delta_t)
        lines.append(f"true delta_t: [{truth}]")
    print("\n".join(lines))

    out_path = f"{args.out}/estimate.txt"
    with open(out_path, "w") as handle:
        for i in range(system.n_subbands):
            handle.write(f"delta_t_hat_{i + 1}={result.delta_t_hats[i]!r}\n")
            handle.write(f"h_hat_re_{i + 1}={result.h_hats[i].real!r}\n")
            handle.write(f"h_hat_im_{i + 1}={result.h_hats[i].imag!r}\n")
            handle.write(f"timing_advance_{i + 1}={bool(flags[i])}\n")
            handle.write(f"out_of_range_{i + 1}={bool(result.out_of_range[i])}\n")
        handle.write(f"residual_norm={result.residual_norm!r}\n")
        handle.write(f"solver_iterations={result.solver_iterations}\n")
        handle.write(f"converged={result.solver_converged}\n")
    return 0


def cmd_sweep(args, tree, metric: str) -> int:
    experiment = build_experiment(tree)
    runner = run_nmse_sweep if metric == "nmse" else run_ber_sweep
    records = runner(experiment, progress=True)
    path = f"{args.out}/{metric}_sweep.csv"
    write_csv(records, path)
    print(f"wrote {path}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override system.seed")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a config entry by dotted key (repeatable)",
    )
    parser.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {path} = {value!r}" for path, value in _flatten(_defaults_tree()))
    epilog = "config keys and defaults:\n" + keys
    parser = argparse.ArgumentParser(
        prog="ufmcsync",
        description=__doc__.splitlines()[0],
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("filter-design", "write sub-band filter taps and frequency response"),
        ("estimate", "run the joint estimator on one synthetic or file-loaded frame"),
        ("sweep-nmse", "timing-offset NMSE versus SNR"),
        ("sweep-ber", "bit error rate versus SNR"),
    ]
    for name, help_text in specs:
        p = sub.add_parser(
            name, help=help_text, epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        _add_common(p)
        if name == "filter-design":
            p.add_argument("--subband", type=int, default=1, help="sub-band index (1-based)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        tree = load_config(args)
        if args.command == "filter-design":
            return cmd_filter_design(args, tree)
        if args.command == "estimate":
            return cmd_estimate(args, tree)
        if args.command == "sweep-nmse":
            return cmd_sweep(args, tree, "nmse")
        if args.command == "sweep-ber":
            return cmd_sweep(args, tree, "ber")
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
