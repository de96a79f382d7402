"""Command line entry point: ``ionsbm run | sweep | spectrum | presets``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from . import __version__
from .runner import default_out, env_threads, parse_values, run, spectrum_only, sweep
from .scenario import ScenarioError, from_dict, load_scenario, preset_dict, preset_names, with_overrides


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ionsbm", description="Spin coupled to a trapped-ion phonon reservoir.")
    p.add_argument("--version", action="version", version=f"ionsbm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario and write its artifacts")
    r.add_argument("scenario", help="scenario JSON file or preset name")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--threads", type=int, default=1)

    s = sub.add_parser("sweep", help="run a scenario once per parameter value")
    s.add_argument("scenario")
    s.add_argument("--param", required=True, help="K, Delta, delta, S or target_ion")
    s.add_argument("--values", required=True, help="range like 4:12 or a comma list")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("spectrum", help="write reservoir curves and the coupling table only")
    sp.add_argument("scenario")
    sp.add_argument("--out")

    sub.add_parser("presets", help="list shipped presets")
    return p


def _load(path, seed=None):
    sc = load_scenario(path)
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ScenarioError("seed must be an unsigned 64-bit integer", "/seed")
        sc = from_dict(with_overrides(sc.raw, seed=seed))
    return sc


def _threads(arg: int) -> int:
    if arg < 1:
        raise ValueError("--threads must be >= 1")
    return env_threads(arg)


def _error_object(exc: BaseException) -> dict:
    out = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ScenarioError):
        out["message"] = exc.detail
        out["path"] = exc.path
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "presets":
            for name in preset_names():
                print(f"{name}\t{preset_dict(name).get('description', '')}")
            return 0
        if args.command == "spectrum":
            sc = _load(args.scenario)
            out = default_out(sc, args.out)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                curve = spectrum_only(sc, out)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            print(json.dumps({"out": str(out), "validity_ratio": curve.validity_ratio}))
            return 0
        if args.command == "run":
            sc = _load(args.scenario, args.seed)
            out = default_out(sc, args.out)
            result = run(sc, out, threads=_threads(args.threads))
            rev = result.summary["absdiff"]
            print(json.dumps({"out": str(out), "t_r_ms": rev["t_r_ms"], "revival_height": rev["revival_height"]}))
            return 0
        if args.command == "sweep":
            sc = _load(args.scenario, args.seed)
            out = default_out(sc, args.out)
            rows = sweep(sc, args.param, parse_values(args.values), out, threads=_threads(args.threads))
            print(json.dumps({"out": str(out), "runs": len(rows)}))
            return 0
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # every module failure becomes a JSON error object
        print(json.dumps(_error_object(exc)), file=sys.stderr)
        return 2 if isinstance(exc, (ScenarioError, ValueError)) else 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
