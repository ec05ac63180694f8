"""
Command-line entry point: ``fracsde <command> [--config FILE] [--set key=value] ...``.

Exit codes: 0 success, 1 runtime error, 2 a ``--check`` threshold failed,
64 usage error, 65 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .constants import c_h
from .fbm import TimeGrid, sample_fbm, write_fbm_dump
from .harness import (
    CONFIG_SCHEMA,
    ConfigError,
    ExperimentConfig,
    build_id,
    check_result,
    config_hash,
    persist,
    run_experiment,
)

EXIT_OK, EXIT_ERROR, EXIT_CHECK, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 64, 65

COMMANDS = {
    "sample-fbm": "sample_fbm",
    "rate-euler": "euler_rate",
    "rate-sum": "sum_rate",
    "cancellation": "cancellation",
    "skorohod-gap": "skorohod_gap",
    "riemann": "riemann",
    "dist-euler": "dist_euler",
    "dist-sum": "dist_sum",
}
MANIFEST_VERSION = "1"


def schema_help() -> str:
    """One line per config key: name, type, unit, default and meaning."""
    lines = ["config keys (JSON object; --set overrides apply after the file):"]
    for key, spec in CONFIG_SCHEMA.items():
        default = "required" if spec.required else json.dumps(spec.default)
        lines.append(f"  {key:<14} {spec.type:<10} [{spec.unit}] default={default}: {spec.help}")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n\n{schema_help()}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="fracsde",
        description="Monte Carlo experiments for fBm-driven sums and the Euler scheme.",
        epilog=schema_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    ch = sub.add_parser("compute-ch", help="limit-variance constant c_H as JSON")
    ch.add_argument("--h", type=float, required=True)
    ch.add_argument("--tol", type=float, default=1e-10)
    for name in COMMANDS:
        s = sub.add_parser(name, epilog=schema_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--config", type=Path, help="JSON config or a manifest from an earlier run")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        s.add_argument("--out-dir", type=Path, default=Path("."))
        s.add_argument("--check", action="store_true", help="exit 2 if an acceptance threshold fails")
    return p


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(path: Path | None, overrides: list[str]) -> dict:
    """Config file contents (or a manifest's embedded config) with overrides applied."""
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if "manifest_version" in data:
            data = dict(data["config"])
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        data[key] = _parse_value(raw)
    return data


def emit_manifest(out_dir: Path, command: str, config: dict, outputs: list, wall: float) -> Path:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config_hash": config_hash(config),
        "master_seed": config["master_seed"],
        "build_id": build_id(),
        "wall_time_s": wall,
        "outputs": [Path(p).name for p in outputs],
        "config": config,
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _sample(cfg: ExperimentConfig, out_dir: Path) -> list:
    grid = TimeGrid(cfg.T, cfg.n_list[-1], cfg.m_sub)
    path = sample_fbm(grid, cfg.h, cfg.master_seed, cfg.path_index)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "fbm.bin"
    write_fbm_dump(path, target)
    return [target]


def run_command(command: str, args) -> int:
    kind = COMMANDS[command]
    data = resolve_config(args.config, args.overrides)
    cfg = ExperimentConfig.from_dict(data, kind=kind)
    resolved = cfg.to_dict()
    t0 = time.perf_counter()
    if kind == "sample_fbm":
        outputs = _sample(cfg, args.out_dir)
        checks = []
    else:
        result = run_experiment(cfg)
        outputs = persist(result, args.out_dir)
        checks = check_result(result)
    wall = time.perf_counter() - t0
    emit_manifest(args.out_dir, command, resolved, outputs, wall)
    for p in outputs:
        print(p)
    failed = False
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed |= not ok
    return EXIT_CHECK if (args.check and failed) else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        if args.command == "compute-ch":
            if not 0 < args.h < 0.5:
                raise ConfigError(f"--h must satisfy 0 < h < 1/2, got {args.h}")
            if not args.tol > 0:
                raise ConfigError("--tol must be positive")
            res = c_h(args.h, args.tol)
            print(json.dumps({"h": res.h, "c_h": res.value, "k_max": res.k_max, "tail_bound": res.tail_bound}))
            return EXIT_OK
        return run_command(args.command, args)
    except ConfigError as exc:
        print(f"fracsde: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # reported, not re-raised: the exit code is the contract
        print(f"fracsde: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
