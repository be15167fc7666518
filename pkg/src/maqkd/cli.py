"""Command-line front end: ``maqkd sweep | crossover | presets | verify``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from maqkd import devices
from maqkd.devices import ConfigError, Scheme, SystemConfig
from maqkd.rates import (
    MULTIPLEXING_MODES,
    NoCrossingError,
    crossover_distance,
    no_memory_point,
    plob_bound,
    secret_key_rate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3

HEADER = [
    "L_km",
    "P_SBSM",
    "P_MBSM",
    "Y11",
    "eX",
    "eZ",
    "R_per_pulse",
    "R_per_second",
    "PLOB_per_pulse",
    "nomem_per_second",
]
EXTRA_COLUMNS = ["R_per_pulse_raw", "R_per_second_raw", "var", "var_value", "curve"]
VARIABLES = ("L", "dark_count", "p2", "eta_NLA", "coherence_time")


def apply_variable(cfg: SystemConfig, name: str, value: float) -> SystemConfig:
    """Set one sweep variable; ``L`` is handled by the caller."""
    if name == "dark_count":
        return cfg.with_side_dark_prob(value)
    if name == "p2":
        return dataclasses.replace(cfg, source=devices.SourceModel.with_p2(cfg.source.efficiency, value))
    if name == "eta_NLA":
        return dataclasses.replace(cfg, nla_reflectivity=value)
    if name == "coherence_time":
        return cfg.with_overrides(**{"memory.coherence_time": value})
    raise ConfigError(f"unknown sweep variable {name!r}; choose from {', '.join(VARIABLES)}", "var")


def apply_fixes(cfg: SystemConfig, fixes: dict) -> SystemConfig:
    dotted = {}
    for key, value in fixes.items():
        if key == "scheme":
            cfg = dataclasses.replace(cfg, scheme=Scheme(value))
        elif key in VARIABLES and key != "L":
            cfg = apply_variable(cfg, key, float(value))
        else:
            dotted[key] = value
    return cfg.with_overrides(**dotted) if dotted else cfg


def grid(start: float, stop: float, steps: int, log: bool) -> np.ndarray:
    if not start < stop:
        raise ConfigError(f"empty range: --from {start} must be below --to {stop}", "range")
    if steps < 1:
        raise ConfigError("--steps must be at least 1", "steps")
    if log:
        if start <= 0:
            raise ConfigError("a logarithmic grid needs --from > 0", "range")
        return np.geomspace(start, stop, steps + 1)
    return np.linspace(start, stop, steps + 1)


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, str):
        return x
    return format(float(x), ".10g")


@dataclasses.dataclass(frozen=True)
class Job:
    cfg: SystemConfig
    var: str
    value: float
    length: float
    per: str
    baselines: tuple
    nomem: SystemConfig | None
    multiplexing: str
    curve: str


def evaluate(job: Job) -> list[str]:
    cfg = job.cfg if job.var == "L" else apply_variable(job.cfg, job.var, job.value)
    length = job.value if job.var == "L" else job.length
    point = secret_key_rate(cfg, length, job.multiplexing)
    plob = plob_bound(length, cfg.channel.attenuation_length) if "plob" in job.baselines else None
    nomem = no_memory_point(job.nomem, length).R_per_second if "nomem" in job.baselines else None
    per_pulse = job.per in ("pulse", "both")
    per_second = job.per in ("second", "both")
    row = [
        length,
        point.P_SBSM,
        point.P_MBSM,
        point.Y11,
        point.e_X,
        point.e_Z,
        point.R_per_pulse if per_pulse else None,
        point.R_per_second if per_second else None,
        plob,
        nomem,
        point.raw_per_pulse if per_pulse else None,
        point.raw_per_second if per_second else None,
        job.var,
        job.value,
        job.curve,
    ]
    return [_fmt(x) for x in row]


def run_jobs(jobs: list[Job], threads: int) -> list[list[str]]:
    if threads <= 1 or len(jobs) <= 1:
        return [evaluate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(evaluate, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def write_csv(rows: list[list[str]], out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HEADER + EXTRA_COLUMNS)
    writer.writerows(rows)


def _load(args_preset: str | None, args_config: str | None) -> SystemConfig:
    if bool(args_preset) == bool(args_config):
        raise ConfigError("give exactly one of --preset or --config", "preset")
    if args_preset:
        return devices.load_preset(args_preset)
    return devices.load_config(args_config)


def _parse_fix(items) -> dict:
    fixes = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--fix expects name=value, got {item!r}", "fix")
        key, value = item.split("=", 1)
        fixes[key.strip()] = yaml.safe_load(value)
    return fixes


def _baselines(text: str | None) -> tuple:
    if not text:
        return ()
    names = tuple(sorted({b.strip().lower() for b in text.split(",") if b.strip()}))
    for b in names:
        if b not in ("plob", "nomem"):
            raise ConfigError(f"unknown baseline {b!r}; choose plob and/or nomem", "baselines")
    return names


def _jobs_for_curve(cfg, var, values, length, per, baselines, multiplexing, curve) -> list[Job]:
    nomem = devices.load_preset("no-memory-baseline") if "nomem" in baselines else None
    if nomem is not None:
        nomem = dataclasses.replace(nomem, channel=cfg.channel)
    return [Job(cfg, var, float(v), length, per, baselines, nomem, multiplexing, curve) for v in values]


def load_sweep_spec(path) -> tuple[list[Job], dict]:
    """Read a checked-in sweep spec (YAML) into jobs."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read sweep spec ({exc})", source=str(path)) from None
    allowed = {"description", "var", "from", "to", "steps", "log", "per", "baselines", "length", "multiplexing", "curves"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError("unknown key", sorted(unknown)[0], str(path))
    var = doc.get("var", "L")
    if var not in VARIABLES:
        raise ConfigError(f"unknown sweep variable {var!r}", "var", str(path))
    values = grid(float(doc["from"]), float(doc["to"]), int(doc["steps"]), bool(doc.get("log", False)))
    baselines = _baselines(",".join(doc.get("baselines", [])))
    jobs = []
    for k, curve in enumerate(doc.get("curves", [])):
        curve = dict(curve)
        label = str(curve.pop("label", f"curve{k}"))
        if "preset" in curve:
            cfg = devices.load_preset(curve.pop("preset"))
        elif "config" in curve:
            cfg = devices.load_config(path.parent / curve.pop("config"))
        else:
            raise ConfigError("each curve needs a preset or config", f"curves[{k}]", str(path))
        cfg = apply_fixes(cfg, curve.pop("fix", {}) | {k2: v for k2, v in curve.items() if k2 == "scheme"})
        curve.pop("scheme", None)
        if curve:
            raise ConfigError("unknown key", f"curves[{k}].{sorted(curve)[0]}", str(path))
        jobs += _jobs_for_curve(
            cfg, var, values, float(doc.get("length", 200.0)), doc.get("per", "both"),
            baselines, doc.get("multiplexing", "linear"), label,
        )
    return jobs, doc


def cmd_sweep(args) -> int:
    if args.spec:
        jobs, _ = load_sweep_spec(args.spec)
    else:
        cfg = _load(args.preset, args.config)
        fixes = _parse_fix(args.fix)
        if args.scheme:
            fixes["scheme"] = args.scheme
        cfg = apply_fixes(cfg, fixes)
        if args.var not in VARIABLES:
            raise ConfigError(f"unknown sweep variable {args.var!r}", "var")
        if args.start is None or args.stop is None:
            raise ConfigError("--from and --to are required", "range")
        values = grid(args.start, args.stop, args.steps, args.log)
        jobs = _jobs_for_curve(
            cfg, args.var, values, args.length, args.per, _baselines(args.baselines),
            args.multiplexing, cfg.name,
        )
    rows = run_jobs(jobs, args.threads)
    if args.out and args.out != "-":
        with open(args.out, "w", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    return EXIT_OK


def _rate_function(cfg: SystemConfig, per: str, multiplexing: str):
    if per == "pulse":
        return lambda L: secret_key_rate(cfg, L, multiplexing).R_per_pulse
    return lambda L: secret_key_rate(cfg, L, multiplexing).R_per_second


def cmd_crossover(args) -> int:
    cfg = _load(args.preset, args.config)
    fixes = _parse_fix(args.fix)
    if args.scheme:
        fixes["scheme"] = args.scheme
    cfg = apply_fixes(cfg, fixes)
    per = args.per
    against = args.against.lower()
    if against == "plob":
        per = "pulse"
        other = lambda L: plob_bound(L, cfg.channel.attenuation_length)  # noqa: E731
    elif against == "nomem":
        per = "second"
        nm = dataclasses.replace(devices.load_preset("no-memory-baseline"), channel=cfg.channel)
        other = lambda L: no_memory_point(nm, L).R_per_second  # noqa: E731
    else:
        other = _rate_function(devices.load_preset(args.against), per, args.multiplexing)
    mine = _rate_function(cfg, per, args.multiplexing)
    label = f"{cfg.name} ({cfg.scheme.value}) vs {args.against}, per {per}"
    try:
        km = crossover_distance(mine, other, (args.start, args.stop), steps=args.steps)
    except NoCrossingError:
        print(f"{label}: none in range [{args.start:g}, {args.stop:g}] km")
        return EXIT_OK
    print(f"{label}: crossover at {km:.1f} km (+-0.5 km)")
    return EXIT_OK


def cmd_presets(args) -> int:
    directory = Path(args.dir) if args.dir else None
    if args.validate:
        errors = devices.validate_presets(directory)
        for err in errors:
            print(f"FAIL {err}")
        if errors:
            return EXIT_CONFIG
        print("all presets valid")
        return EXIT_OK
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["name", "scheme", "eta_w*eta_r0", "T_r_s", "tau_int_s", "R_S_Hz", "N"])
    for name in devices.list_presets(directory):
        cfg = devices.load_preset(name, directory)
        mem = cfg.memory
        writer.writerow([
            name, cfg.scheme.value, _fmt(mem.efficiency), _fmt(mem.coherence_time),
            _fmt(mem.interaction_time), _fmt(cfg.repetition_rate), mem.spectral_modes,
        ])
    sys.stdout.write(out.getvalue())
    return EXIT_OK


def cmd_verify(args) -> int:
    from maqkd.verify import run_verification

    directory = Path(args.dir) if args.dir else None
    ok = run_verification(args.level, seed=args.seed, preset_dir=directory, out=sys.stdout)
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maqkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def source_flags(p):
        p.add_argument("--preset", help="shipped preset name (see `maqkd presets`)")
        p.add_argument("--config", help="path to a YAML config; may `extends:` a preset")
        p.add_argument("--scheme", choices=[s.value for s in Scheme], help="override the scheme")
        p.add_argument("--fix", action="append", metavar="NAME=VALUE",
                       help="fixed override, e.g. memory.coherence_time=1e-3 or dark_count=1e-6")
        p.add_argument("--multiplexing", choices=MULTIPLEXING_MODES, default="linear")

    sw = sub.add_parser("sweep", help="sweep distance or a parameter and write CSV")
    source_flags(sw)
    sw.add_argument("--spec", help="sweep spec file (overrides the other sweep flags)")
    sw.add_argument("--var", default="L", help=f"one of {', '.join(VARIABLES)}")
    sw.add_argument("--from", dest="start", type=float)
    sw.add_argument("--to", dest="stop", type=float)
    sw.add_argument("--steps", type=int, default=50)
    sw.add_argument("--log", action="store_true", help="logarithmic grid")
    sw.add_argument("--length", type=float, default=200.0, help="fixed L (km) when --var is not L")
    sw.add_argument("--out", default="-", help="output CSV path (default stdout)")
    sw.add_argument("--baselines", default="", help="comma list: plob,nomem")
    sw.add_argument("--per", choices=("pulse", "second", "both"), default="both")
    sw.add_argument("--seed", type=int, default=0, help="accepted for symmetry; the rate path is deterministic")
    sw.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sw.set_defaults(func=cmd_sweep)

    co = sub.add_parser("crossover", help="distance where a preset overtakes a baseline")
    source_flags(co)
    co.add_argument("--against", default="nomem", help="plob, nomem or another preset")
    co.add_argument("--from", dest="start", type=float, default=10.0)
    co.add_argument("--to", dest="stop", type=float, default=700.0)
    co.add_argument("--steps", type=int, default=69, help="coarse scan points before bisection")
    co.add_argument("--per", choices=("pulse", "second"), default="second")
    co.set_defaults(func=cmd_crossover)

    pr = sub.add_parser("presets", help="list or validate presets")
    pr.add_argument("--validate", action="store_true")
    pr.add_argument("--dir", help="preset directory (default: shipped presets)")
    pr.set_defaults(func=cmd_presets)

    ve = sub.add_parser("verify", help="run invariant and oracle checks")
    ve.add_argument("--level", choices=("quick", "full"), default="quick")
    ve.add_argument("--seed", type=int, default=2024)
    ve.add_argument("--dir", help="preset directory to validate (default: shipped presets)")
    ve.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
