"""Command-line front end.

Exit status is 0 on success, 2 for bad input (unreadable or malformed files,
invalid parameters or scenarios) and 1 for anything unexpected.  Data and
summaries go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib.resources import files
from pathlib import Path
from typing import Any, Sequence

from .bloom import SerializationError
from .params import ParamsError, derive_k, optimal_bits, params_from_dict, params_to_dict, validate
from .registry import RegistrySnapshot
from .simulator import Metrics, Scenario, ScenarioError, Simulation, scenario_from_dict

ATTACKS = {
    # kind: (fixture, mode change that switches the defence on)
    "rebroadcast": ("rebroadcast.json", {"encounter": "per-encounter"}),
    "fake-upload": ("fake_upload.json", {"validity_check": True}),
}


class InputError(Exception):
    """Bad user input; reported on stderr with exit status 2."""


def _read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot read: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _mode_overrides(args: argparse.Namespace) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if getattr(args, "mode", None):
        out["encounter"] = args.mode
    if getattr(args, "backend", None):
        out["upload"] = "bloom" if args.backend == "bloom" else "raw-tokens"
    if getattr(args, "freshness", False):
        out["freshness_check"] = True
    if getattr(args, "validity", False):
        out["validity_check"] = True
    if getattr(args, "trusted_query", False):
        out["query"] = "trusted-query"
    return out


def _apply(scenario: Scenario, modes: dict[str, Any], seed: int | None) -> Scenario:
    if modes:
        params = scenario.params.with_modes(**modes)
        try:
            validate(params)
        except ParamsError as exc:
            raise ScenarioError([(f"params.{name}", msg) for name, msg in exc.issues]) from exc
        scenario = scenario.with_params(params)
    if seed is not None:
        scenario = scenario.replace(master_seed=seed)
    return scenario


def _load_scenario(path: str | Path, args: argparse.Namespace) -> Scenario:
    scenario = scenario_from_dict(_read_json(path))
    return _apply(scenario, _mode_overrides(args), getattr(args, "seed", None))


def _report(metrics: Metrics, scenario: Scenario) -> Metrics:
    metrics.params = params_to_dict(scenario.params)
    return metrics


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _summary(metrics: Metrics, title: str = "") -> str:
    keys = ("true_alerts", "false_alerts", "missed_alerts", "attack_false_alerts", "rejected_reports",
            "rejected_entries", "stored_replays", "registry_bytes", "device_download_bytes",
            "trusted_query_bits", "max_alert_latency")
    rows = [title] if title else []
    rows += [f"{k:<24}{getattr(metrics, k)}" for k in keys]
    return "\n".join(rows) + "\n"


# -- commands ----------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.config, args)
    metrics = _report(Simulation(scenario).execute(), scenario)
    if args.out:
        _emit(metrics.to_json(), args.out)
        sys.stdout.write(_summary(metrics))
    else:
        sys.stdout.write(metrics.to_json())
    return 0


def cmd_params_check(args: argparse.Namespace) -> int:
    data = _read_json(args.config) if args.config else {}
    if isinstance(data, dict) and "params" in data and "n_agents" in data:
        data = data["params"]
    params = params_from_dict(data)
    overrides = _mode_overrides(args)
    if overrides:
        params = validate(params.with_modes(**overrides))
    resolved = params_to_dict(params)
    resolved["derived"] = {
        "k": params.k,
        "registry_backend": params.registry_backend,
        "max_p_new": min(1.0, params.growth_bound_g / params.contagious_window_i),
    }
    sys.stdout.write(json.dumps(resolved, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_bloom_size(args: argparse.Namespace) -> int:
    n = args.n
    if n < 0 or n != int(n):
        raise InputError("n must be a non-negative integer")
    if not 0.0 < args.p_fp < 1.0:
        raise InputError("p_fp must lie in (0, 1)")
    m = optimal_bits(int(n), args.p_fp)
    k = derive_k(args.p_fp)
    result = {"n": int(n), "p_fp": args.p_fp, "m_bits": m, "k": k, "bytes": m / 8, "megabytes": m / 8e6}
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


def cmd_registry_dump(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.config, args)
    sim = Simulation(scenario)
    sim.execute()
    data = sim.registry.snapshot(scenario.duration_ticks).to_bytes()
    Path(args.out).write_bytes(data)
    sys.stdout.write(f"wrote {len(data)} bytes to {args.out}\n")
    return 0


def cmd_registry_load(args: argparse.Namespace) -> int:
    try:
        data = Path(args.path).read_bytes()
    except OSError as exc:
        raise InputError(f"{args.path}: cannot read: {exc.strerror or exc}") from exc
    try:
        snap = RegistrySnapshot.from_bytes(data)
    except (SerializationError, ValueError, KeyError) as exc:
        raise InputError(f"{args.path}: not a registry snapshot: {exc}") from exc
    info: dict[str, Any] = {"kind": snap.kind, "snapshot_tick": snap.snapshot_tick, "bytes": len(data)}
    if snap.kind == "exact":
        info["encounter_mode"] = snap.encounter_mode
        info["entries"] = len(snap.entries)
    else:
        info["filters"] = [
            {"m_bits": f.m_bits, "k": f.k, "seed": f.seed, "n_inserted": f.n_inserted,
             "fill_ratio": round(f.fill_ratio(), 6), "epochs": list(e)}
            for f, e in zip(snap.chain.filters, snap.chain.epochs)
        ]
    sys.stdout.write(json.dumps(info, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_attack_demo(args: argparse.Namespace) -> int:
    fixture, defence = ATTACKS[args.kind]
    base = scenario_from_dict(json.loads((files("collocate") / "fixtures" / fixture).read_text(encoding="utf-8")))
    base = _apply(base, _mode_overrides(args), args.seed)
    off = {key: (False if isinstance(value, bool) else "raw") for key, value in defence.items()}
    halves = {}
    for label, change in (("undefended", off), ("defended", defence)):
        scenario = _apply(base, change, None)
        halves[label] = _report(Simulation(scenario).execute(), scenario).to_dict()
    report = {"kind": args.kind, "defence": defence, **halves}
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        _emit(text, args.out)
        for label in ("undefended", "defended"):
            sys.stdout.write(_summary(Metrics(**halves[label]), f"[{label}]"))
    else:
        sys.stdout.write(text)
    return 0


# -- parser --------------------------------------------------------------------


def _mode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("raw", "per-encounter"), help="encounter mode (overrides config)")
    p.add_argument("--backend", choices=("exact", "bloom"), help="registry backend (overrides config)")
    p.add_argument("--freshness", action="store_true", help="bind broadcasts to tick and location")
    p.add_argument("--validity", action="store_true", help="doctor verifies token preimages")
    p.add_argument("--trusted-query", action="store_true", help="devices query the registry directly")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collocate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write a metrics report")
    p.add_argument("--config", required=True, help="scenario JSON")
    p.add_argument("--seed", type=int, help="override the scenario master seed")
    p.add_argument("--out", help="report path (default: stdout)")
    _mode_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("params-check", help="validate parameters and print the resolved set")
    p.add_argument("--config", help="params JSON, or a scenario JSON")
    _mode_flags(p)
    p.set_defaults(func=cmd_params_check)

    p = sub.add_parser("bloom-size", help="filter size and hash count for n items at p_fp")
    p.add_argument("n", type=float)
    p.add_argument("p_fp", type=float)
    p.set_defaults(func=cmd_bloom_size)

    p = sub.add_parser("registry-dump", help="run a scenario and write the final registry snapshot")
    p.add_argument("--config", required=True, help="scenario JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="snapshot path")
    _mode_flags(p)
    p.set_defaults(func=cmd_registry_dump)

    p = sub.add_parser("registry-load", help="parse a snapshot file and describe it")
    p.add_argument("path")
    p.set_defaults(func=cmd_registry_load)

    p = sub.add_parser("attack-demo", help="run a built-in attack with the defence off and on")
    p.add_argument("kind", choices=sorted(ATTACKS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report path (default: stdout)")
    _mode_flags(p)
    p.set_defaults(func=cmd_attack_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ParamsError, ScenarioError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
