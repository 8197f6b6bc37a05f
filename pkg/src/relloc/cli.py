"""Command-line entry point.

::

    relloc run CONFIG.toml
    relloc {optical,bec,scattering,oracle} [--flags] [--config FILE]
    relloc figure NAME [--flags] [--config FILE]
    relloc verify [--only 1,3,8]

Exit codes: 0 success, 1 failed acceptance criteria, 2 invalid
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from . import harness
from .errors import NumericalFailure, RellocError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# figure presets: scenario plus default values for that figure's data
FIGURES = {
    "fock-plr": ("oracle", {"task": "plr", "N": 20, "eps": 0.2}, {}),
    "hom": ("oracle", {"task": "hom"}, {}),
    "fock-addition": ("oracle", {"task": "addition", "N": 30, "W": 2}, {}),
    "noon": ("oracle", {"task": "noon", "N": 12, "D": 2}, {}),
    "optical-table": ("optical", {"task": "table"}, {}),
    "asym-visibility": (
        "optical",
        {"task": "curve", "state": "asym_poissonian", "n": 1.0, "m": 0.01, "restrict": True},
        {},
    ),
    "bec-visibility": ("bec", {"D": 50}, {"n_runs": 5000}),
    "scatter-mono": ("scattering", {"light": "mono", "k": 5.0, "d": 0.2, "F": 3, "S": 2}, {}),
    "scatter-thermal": (
        "scattering",
        {"light": "thermal", "k": 5.0, "d": 0.2, "nbar": 5.0, "F": 3, "S": 2},
        {},
    ),
    "rubber-cavity": ("scattering", {"model": "rubber", "k": 5.0, "l": 3, "r": 2}, {}),
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML file; its values override flags")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--runs", dest="n_runs", type=int, help="number of Monte Carlo runs")
    p.add_argument("--out", dest="dir", help="output directory")


def _add_scenario_flags(p: argparse.ArgumentParser, scenario: str) -> None:
    for key, spec in harness.SCHEMAS[scenario].items():
        kw = {"dest": f"param_{key}", "default": None, "help": spec.doc or None}
        if spec.kind is bool:
            kw["action"] = argparse.BooleanOptionalAction
        elif spec.choices:
            kw["choices"] = spec.choices
        else:
            kw["type"] = spec.kind
        p.add_argument(_flag(key), **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relloc", description="Batch runs, figure data and acceptance checks."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a TOML config")
    p_run.add_argument("config_file", type=Path)

    for scen in harness.SCENARIOS:
        p = sub.add_parser(scen, help=f"run the {scen} scenario")
        _add_common(p)
        _add_scenario_flags(p, scen)

    p_fig = sub.add_parser("figure", help="emit the data behind a standard figure")
    figs = p_fig.add_subparsers(dest="figure", required=True)
    for name, (scen, _, _) in FIGURES.items():
        p = figs.add_parser(name, help=f"{scen} scenario preset")
        _add_common(p)
        _add_scenario_flags(p, scen)

    p_ver = sub.add_parser("verify", help="run the acceptance checks")
    p_ver.add_argument("--only", help="comma-separated criterion numbers")
    return parser


def _flags_from(args, scenario: str, preset=None, top_preset=None) -> dict:
    flags = {"params": {}, "_names": {}}
    for key, value in (top_preset or {}).items():
        flags[key] = value
        flags["_names"][key] = f"figure {args.figure}"
    for key, value in (preset or {}).items():
        flags["params"][key] = value
        flags["_names"][key] = f"figure {args.figure}"
    for key, name in (("seed", "--seed"), ("n_runs", "--runs"), ("dir", "--out")):
        value = getattr(args, key)
        if value is not None:
            flags[key] = value
            flags["_names"][key] = name
    for key in harness.SCHEMAS[scenario]:
        value = getattr(args, f"param_{key}")
        if value is not None:
            flags["params"][key] = value
            flags["_names"][key] = _flag(key)
    if "dir" not in flags:
        flags["dir"] = str(Path("relloc-out") / (args.figure if preset is not None else scenario))
    return flags


def _failing_module(exc: BaseException) -> str:
    name = "relloc"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("relloc."):
            name = mod
    return name


def _verify(only) -> int:
    from . import acceptance

    numbers = [int(x) for x in only.split(",")] if only else None
    results = []
    for n in numbers or sorted(acceptance.CRITERIA):
        res = acceptance.run_criterion(n)
        print(res.line(), flush=True)
        results.append(res)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_VERIFY if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _verify(args.only)
        if args.command == "run":
            cfg = harness.load_config(args.config_file)
        else:
            if args.command == "figure":
                scen, preset, top = FIGURES[args.figure]
            else:
                scen, preset, top = args.command, None, None
            flags = _flags_from(args, scen, preset, top)
            if args.config is not None:
                cfg = harness.load_config(args.config, flags, scenario=scen)
            else:
                cfg = harness.build_config(flags, scenario=scen)
        manifest = harness.run(cfg)
    except harness.ConfigError as exc:
        print(f"relloc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"relloc: numerical failure in {_failing_module(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RellocError as exc:
        print(f"relloc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    for name in manifest.outputs + ["manifest.json"]:
        print(out / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
