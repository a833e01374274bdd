"""Command-line front end: ``gridsurv run | sweep | validate``.

Exit codes: 0 success, 1 invariant violation (debug sweeps), 2 bad
configuration. Configuration is checked in full before anything is written.
"""

from __future__ import annotations

import argparse
import dataclasses
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import yaml

from gridsurv import __version__
from gridsurv.engine import check_scenario, run as run_scenario
from gridsurv.errors import ConfigError, InvariantViolation
from gridsurv.metrics import write_trace
from gridsurv.scenario import Scenario, dump_scenario, parse_scenario, scenario_from_text, scenario_to_dict

__all__ = ["OutputSpec", "apply_override", "execute", "load", "main"]

FORMATS = ("trace", "metrics-csv", "metrics-json")
FILE_NAMES = {"trace": "trace.txt", "metrics-csv": "metrics.csv", "metrics-json": "metrics.json"}

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


@dataclasses.dataclass(frozen=True)
class OutputSpec:
    out_dir: Path
    formats: tuple[str, ...] = FORMATS
    verbosity: int = 1

    def __post_init__(self):
        if not self.formats:
            raise ConfigError([("--format", None, "select at least one output format")])
        unknown = [f for f in self.formats if f not in FORMATS]
        if unknown:
            raise ConfigError(
                [("--format", None, f"unknown format {f!r}; choose from {', '.join(FORMATS)}") for f in unknown]
            )


def load(path: str, seed_override: int | None = None) -> Scenario:
    """Parse and fully check a scenario file; raises ConfigError."""
    scenario = parse_scenario(path)
    if seed_override is not None:
        scenario = dataclasses.replace(scenario, seed=seed_override)
    check_scenario(scenario)
    return scenario


def apply_override(scenario: Scenario, key: str, raw: str) -> Scenario:
    """Return ``scenario`` with the dotted ``key`` set to the YAML value ``raw``."""
    doc = scenario_to_dict(scenario)
    parts = key.split(".")
    target = doc
    for part in parts[:-1]:
        if not isinstance(target, dict) or not isinstance(target.get(part), dict):
            raise ConfigError([(key, None, "is not a settable scenario key")])
        target = target[part]
    if parts[-1] == "events":
        raise ConfigError([(key, None, "events cannot be swept")])
    try:
        target[parts[-1]] = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigError([(key, None, f"value {raw!r} is not valid YAML")]) from None
    out = scenario_from_text(yaml.safe_dump(doc, sort_keys=False))
    check_scenario(out)
    return out


def execute(scenario: Scenario, spec: OutputSpec, debug: bool | None = None) -> str:
    """Run one scenario and write the selected outputs; returns a summary line."""
    trace, report = run_scenario(scenario, debug=debug)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    written = [spec.out_dir / FILE_NAMES[f] for f in FORMATS if f in spec.formats]
    if "trace" in spec.formats:
        write_trace(spec.out_dir / FILE_NAMES["trace"], trace)
    if "metrics-csv" in spec.formats:
        (spec.out_dir / FILE_NAMES["metrics-csv"]).write_text(report.to_csv(__version__))
    if "metrics-json" in spec.formats:
        (spec.out_dir / FILE_NAMES["metrics-json"]).write_text(report.to_json())
    line = (
        f"{spec.out_dir}: admitted={report.flows_admitted} failed={report.flows_failed} "
        f"repaired={report.flows_repaired} ch_changes={report.ch_changes_total} "
        f"survival={report.reservation_survival_rate:.3f}"
    )
    if spec.verbosity >= 2:
        line += f" records={len(trace)}" + "".join(f"\n  wrote {path}" for path in written)
    return line


def _subdir_name(key: str, value: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", f"{key}={value}")


def _sweep_job(args: tuple[Scenario, OutputSpec, bool | None]) -> str:
    return execute(*args)


def _report(lines, quiet: bool) -> None:
    # one whole line per write so parallel progress never interleaves
    for line in lines:
        if not quiet:
            sys.stdout.write(line + "\n")
            sys.stdout.flush()


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridsurv", description="Grid-clustered MANET survivability simulator.")
    p.add_argument("--version", action="version", version=f"gridsurv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_output=True):
        sp.add_argument("--scenario", required=True, help="scenario YAML file")
        if with_output:
            sp.add_argument("--out", default="out", help="output directory (default: out)")
            sp.add_argument(
                "--format",
                default=",".join(FORMATS),
                help=f"comma-separated subset of {','.join(FORMATS)} (default: all)",
            )
            sp.add_argument("--debug", action="store_true", help="run invariant sweeps after every tick")
        sp.add_argument("-v", "--verbose", action="count", default=1, help="more console output")
        sp.add_argument("-q", "--quiet", action="store_true", help="no console output on success")

    r = sub.add_parser("run", help="run one scenario")
    common(r)
    r.add_argument("--seed-override", type=int, default=None, help="replace the scenario seed")

    s = sub.add_parser("sweep", help="run one scenario per parameter value")
    common(s)
    s.add_argument("--param", required=True, help="dotted scenario key, e.g. seed or nodes.radio_range")
    s.add_argument("--values", required=True, help="comma-separated values, each parsed as YAML")
    s.add_argument("--jobs", type=int, default=1, help="runs to execute in parallel (default: 1)")

    v = sub.add_parser("validate", help="parse and check a scenario without running it")
    common(v, with_output=False)
    return p


def _output_spec(args) -> OutputSpec:
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    verbosity = 0 if args.quiet else args.verbose
    return OutputSpec(Path(args.out), formats, verbosity)


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    quiet = args.quiet
    try:
        if args.command == "validate":
            scenario = load(args.scenario)
            if not quiet:
                print(f"ok: {args.scenario} ({scenario.nodes.count} nodes, {len(scenario.events)} events)")
                if args.verbose >= 2:
                    print(dump_scenario(scenario), end="")
            return EXIT_OK

        spec = _output_spec(args)
        debug = True if args.debug else None
        if args.command == "run":
            scenario = load(args.scenario, args.seed_override)
            line = execute(scenario, spec, debug)
            if not quiet:
                print(line)
            return EXIT_OK

        # sweep: build and check every variant before the first run
        base = load(args.scenario)
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError([("--values", None, "give at least one value")])
        if args.jobs < 1:
            raise ConfigError([("--jobs", None, "must be >= 1")])
        jobs = []
        for value in values:
            variant = apply_override(base, args.param, value)
            sub_spec = dataclasses.replace(spec, out_dir=spec.out_dir / _subdir_name(args.param, value))
            jobs.append((variant, sub_spec, debug))
        if args.jobs == 1:
            _report(map(_sweep_job, jobs), quiet)
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                _report(pool.map(_sweep_job, jobs), quiet)
        return EXIT_OK
    except ConfigError as exc:
        print(f"gridsurv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"gridsurv: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
