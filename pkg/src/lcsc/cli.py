"""Command-line front end: JSON-config driven runs over the library modules.

Exit codes: 0 success, 2 config error, 3 evaluator error, 4 I/O error.
Failures print a single ``error[kind]: message`` line to stderr; successful
commands print one JSON line to stdout that echoes the config and carries a
format-version field.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .containers import (
    ContainerError,
    LoraCheckpointSet,
    ManifestError,
    load_checkpoint,
    load_lora_set,
    load_manifest,
    load_set,
    save_checkpoint,
)
from .evaluators import EvaluatorError, EvaluatorHandle, ExternalEvaluator
from .landscape import GridSpec, sweep, write_csv
from .merging import (
    DEFAULT_EMA_RATES,
    CoefficientError,
    CoefficientVector,
    EmaConfig,
    EvaluationFailure,
    combine,
    combine_lora,
    ema_coefficients,
    ema_recurrence,
    ema_sweep,
)
from .search import SearchConfig, SearchError, run_search
from .sgd_sim import SimConfig, check_hull_exclusion, evaluate_bounds

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVALUATOR = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Bad or missing run configuration."""


class _Parser(argparse.ArgumentParser):
    # argparse's default error handling prints two lines; the contract is a
    # single machine-parseable line and exit code 2
    def error(self, message):
        print(f"error[config]: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _fail(kind: str, code: int, exc: BaseException) -> int:
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"error[{kind}]: {message}", file=sys.stderr)
    return code


def _load_json(path, what: str) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{what} {path} must hold a JSON object")
    return data


def _require(cfg: dict, key: str, what: str):
    if key not in cfg:
        raise ConfigError(f"{what} is missing required key {key!r}")
    return cfg[key]


def _print_report(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_checkpoints(manifest_path):
    kind, _ = load_manifest(manifest_path)
    if kind == "lora":
        return load_lora_set(manifest_path)
    return load_set(manifest_path)


def _merge_any(checkpoints, coefficients):
    if isinstance(checkpoints, LoraCheckpointSet):
        return combine_lora(checkpoints, coefficients)
    return combine(checkpoints, coefficients)


def _coefficients_from_file(path) -> CoefficientVector:
    raw = _load_json(path, "coefficients file")
    formulation = _require(raw, "formulation", "coefficients file")
    values = _require(raw, "values", "coefficients file")
    try:
        if formulation == "difference":
            return CoefficientVector.difference(values)
        if formulation == "direct":
            return CoefficientVector.direct(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad coefficient values in {path}: {exc}") from exc
    raise ConfigError(f"unknown formulation {formulation!r} in {path}")


def _parse_range(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"range must look like min:max:steps, got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise ConfigError(f"bad range {text!r}: {exc}") from exc


def _range_from_config(raw, axis: str) -> tuple[float, float, int]:
    if isinstance(raw, dict):
        try:
            return (float(raw["min"]), float(raw["max"]), int(raw["steps"]))
        except KeyError as exc:
            raise ConfigError(f"{axis}_range object needs min/max/steps, missing {exc}") from exc
    if isinstance(raw, (list, tuple)) and len(raw) == 3:
        return (float(raw[0]), float(raw[1]), int(raw[2]))
    raise ConfigError(f"{axis}_range must be [min, max, steps] or an object")


def _parse_rates(text: str | None) -> tuple[float, ...]:
    if text is None:
        return DEFAULT_EMA_RATES
    try:
        rates = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad rates list {text!r}: {exc}") from exc
    if not rates:
        raise ConfigError("rates list is empty")
    return rates


def _evaluator_from_config(cfg: dict):
    raw = _require(cfg, "evaluator", "config")
    try:
        handle = EvaluatorHandle.from_config(raw)
        return handle.build()
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad evaluator config: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_merge(args) -> int:
    coefficients = _coefficients_from_file(args.coefficients)
    checkpoints = _load_checkpoints(args.manifest)
    merged = _merge_any(checkpoints, coefficients)
    save_checkpoint(merged, args.out)
    config_echo = {
        "manifest": args.manifest,
        "coefficients": args.coefficients,
        "out": args.out,
    }
    _print_report(
        {
            "format_version": FORMAT_VERSION,
            "command": "merge",
            "config": config_echo,
            "formulation": coefficients.formulation,
            "full": coefficients.full(len(checkpoints)).tolist(),
            "out": args.out,
        }
    )
    return EXIT_OK


def cmd_ema(args) -> int:
    if not 0.0 < args.rate < 1.0:
        raise ConfigError(f"rate must lie strictly between 0 and 1, got {args.rate}")
    checkpoints = _load_checkpoints(args.manifest)
    cfg = EmaConfig(args.rate, args.form)
    if isinstance(checkpoints, LoraCheckpointSet):
        merged = combine_lora(checkpoints, ema_coefficients(len(checkpoints), cfg))
    else:
        merged = ema_recurrence(checkpoints, cfg)
    save_checkpoint(merged, args.out)
    config_echo = {
        "manifest": args.manifest,
        "rate": args.rate,
        "form": args.form,
        "out": args.out,
    }
    _print_report(
        {
            "format_version": FORMAT_VERSION,
            "command": "ema",
            "config": config_echo,
            "out": args.out,
        }
    )
    return EXIT_OK


def cmd_ema_grid(args) -> int:
    rates = _parse_rates(args.rates)
    checkpoints = _load_checkpoints(args.manifest)
    if isinstance(checkpoints, LoraCheckpointSet):
        raise ConfigError("ema-grid needs a dense manifest; adapter sets are not supported")
    evaluator = ExternalEvaluator(args.evaluator_cmd, args.workdir)
    results = ema_sweep(checkpoints, rates, evaluator, args.form)
    best_rate, best_fitness = min(results, key=lambda rf: (rf[1], rf[0]))
    config_echo = {
        "manifest": args.manifest,
        "rates": list(rates),
        "evaluator_cmd": args.evaluator_cmd,
        "workdir": args.workdir,
        "form": args.form,
    }
    payload = {
        "format_version": FORMAT_VERSION,
        "command": "ema-grid",
        "config": config_echo,
        "results": [{"rate": r, "fitness": f} for r, f in results],
        "best": {"rate": best_rate, "fitness": best_fitness},
    }
    if args.out:
        _write_json(args.out, payload)
    _print_report(payload)
    return EXIT_OK


def cmd_search(args) -> int:
    if not args.config:
        raise ConfigError("search needs --config pointing at a run config")
    cfg = _load_json(args.config, "config")
    manifest = _require(cfg, "manifest", "config")
    outputs = _require(cfg, "outputs", "config")
    for key in ("merged", "coefficients", "report"):
        _require(outputs, key, "config outputs")

    params = dict(cfg.get("search", {}))
    overrides = {}
    if args.seed is not None:
        params["seed"] = args.seed
        overrides["seed"] = args.seed
    if args.parallelism is not None:
        params["parallelism"] = args.parallelism
        overrides["parallelism"] = args.parallelism
    try:
        search_cfg = SearchConfig(**params)
    except TypeError as exc:
        raise ConfigError(f"bad search options: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    checkpoints = _load_checkpoints(manifest)
    evaluator = _evaluator_from_config(cfg)
    result = run_search(checkpoints, search_cfg, evaluator)

    merged = _merge_any(checkpoints, result.best.coefficients)
    save_checkpoint(merged, outputs["merged"])

    # parallelism and wall time stay out of this file so equal seeds give
    # byte-identical coefficients regardless of worker count
    coefficients_payload = {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "seed": search_cfg.seed,
        "formulation": result.best.coefficients.formulation,
        "values": result.best.coefficients.values.tolist(),
        "full": result.best.coefficients.full(len(checkpoints)).tolist(),
        "fitness": result.best.fitness,
    }
    _write_json(outputs["coefficients"], coefficients_payload)

    report_payload = {
        "format_version": FORMAT_VERSION,
        "command": "search",
        "config": cfg,
        "overrides": overrides,
        "initial_fitnesses": list(result.initial_fitnesses),
        "history": list(result.history),
        "best": {
            "fitness": result.best.fitness,
            "formulation": result.best.coefficients.formulation,
            "values": result.best.coefficients.values.tolist(),
            "full": result.best.coefficients.full(len(checkpoints)).tolist(),
        },
        "evaluations": result.evaluations,
        "cache_hits": result.cache_hits,
        "wall_time_secs": result.wall_time_secs,
        "population_size": result.population_size,
        "outputs": dict(outputs),
    }
    _write_json(outputs["report"], report_payload)

    _print_report(
        {
            "format_version": FORMAT_VERSION,
            "command": "search",
            "config": cfg,
            "best_fitness": result.best.fitness,
            "evaluations": result.evaluations,
            "outputs": dict(outputs),
        }
    )
    return EXIT_OK


def cmd_landscape(args) -> int:
    if args.config:
        cfg = _load_json(args.config, "config")
        paths = _require(cfg, "checkpoints", "config")
        if not isinstance(paths, list) or len(paths) != 3:
            raise ConfigError("config checkpoints must list exactly three paths")
        x_range = _range_from_config(_require(cfg, "x_range", "config"), "x")
        y_range = _range_from_config(_require(cfg, "y_range", "config"), "y")
        evaluator = _evaluator_from_config(cfg)
        out = _require(cfg, "out", "config")
        parallelism = int(cfg.get("parallelism", 1))
        config_echo = cfg
    else:
        if not args.checkpoint or len(args.checkpoint) != 3:
            raise ConfigError("landscape needs exactly three --checkpoint paths or --config")
        if not (args.x_range and args.y_range and args.evaluator_cmd and args.out):
            raise ConfigError(
                "landscape flags require --x-range, --y-range, --evaluator-cmd, --out"
            )
        paths = args.checkpoint
        x_range = _parse_range(args.x_range)
        y_range = _parse_range(args.y_range)
        evaluator = ExternalEvaluator(args.evaluator_cmd, args.workdir)
        out = args.out
        parallelism = 1
        config_echo = {
            "checkpoints": list(paths),
            "x_range": list(x_range),
            "y_range": list(y_range),
            "evaluator_cmd": args.evaluator_cmd,
            "workdir": args.workdir,
            "out": out,
        }
    if args.parallelism is not None:
        parallelism = args.parallelism

    try:
        grid = GridSpec(x_range, y_range)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    anchors = [load_checkpoint(p) for p in paths]
    rows = sweep(*anchors, grid, evaluator, parallelism=parallelism)
    write_csv(rows, out)
    _print_report(
        {
            "format_version": FORMAT_VERSION,
            "command": "landscape",
            "config": config_echo,
            "rows": len(rows),
            "out": str(out),
        }
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    if not args.config:
        raise ConfigError("simulate-theory needs --config pointing at a run config")
    cfg = _load_json(args.config, "config")
    sim_raw = _require(cfg, "sim", "config")
    try:
        sim_cfg = SimConfig(**sim_raw)
    except TypeError as exc:
        raise ConfigError(f"bad sim options: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        rates = tuple(float(rate) for rate in cfg.get("rates", (0.9, 0.99, 0.999)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad rates in config: {exc}") from exc
    base_seed = args.seed if args.seed is not None else int(cfg.get("base_seed", 0))

    try:
        stats = evaluate_bounds(sim_cfg, rates, base_seed=base_seed)
    except ValueError as exc:
        # inadmissible rate/iteration pairs surface here
        raise ConfigError(str(exc)) from exc
    payload = {
        "format_version": FORMAT_VERSION,
        "command": "simulate-theory",
        "config": cfg,
        "last_iterate": {
            "gap": stats.last_iter_gap,
            "bound": stats.bound_last,
            "holds": stats.last_iter_gap <= stats.bound_last,
        },
        "averaged": {
            repr(rate): {
                "gap": stats.ema_gaps[rate],
                "bound": stats.bound_ema[rate],
                "holds": stats.ema_gaps[rate] <= stats.bound_ema[rate],
            }
            for rate in rates
        },
    }
    if rates:
        # the qualitative ordering is reported, not assumed; see the run report
        closest = max(rates)
        payload["ema_vs_last_iterate"] = {
            "rate": closest,
            "ema_gap": stats.ema_gaps[closest],
            "last_iterate_gap": stats.last_iter_gap,
            "strictly_less": stats.ema_gaps[closest] < stats.last_iter_gap,
        }
    if "hull" in cfg:
        hull_raw = dict(cfg["hull"])
        try:
            min_distance = check_hull_exclusion(**hull_raw)
        except TypeError as exc:
            raise ConfigError(f"bad hull options: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        payload["hull_exclusion"] = {
            "params": hull_raw,
            "min_relative_distance": min_distance,
        }
    if cfg.get("out"):
        _write_json(cfg["out"], payload)
    _print_report(payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="lcsc", description="Checkpoint combination toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config path")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--parallelism", type=int, help="override config parallelism")

    merge = sub.add_parser("merge", parents=[common], help="combine a checkpoint set")
    merge.add_argument("--manifest", required=True)
    merge.add_argument("--coefficients", required=True, help="JSON with formulation + values")
    merge.add_argument("--out", required=True)
    merge.set_defaults(func=cmd_merge)

    ema = sub.add_parser("ema", parents=[common], help="write an EMA of a checkpoint set")
    ema.add_argument("--manifest", required=True)
    ema.add_argument("--rate", type=float, required=True)
    ema.add_argument("--form", choices=("practice", "theory"), default="practice")
    ema.add_argument("--out", required=True)
    ema.set_defaults(func=cmd_ema)

    grid = sub.add_parser("ema-grid", parents=[common], help="score an EMA rate grid")
    grid.add_argument("--manifest", required=True)
    grid.add_argument("--rates", help="comma-separated rates; defaults to the built-in grid")
    grid.add_argument("--evaluator-cmd", required=True, help="command with a {checkpoint} placeholder")
    grid.add_argument("--workdir", default=".", help="scratch directory for evaluation files")
    grid.add_argument("--form", choices=("practice", "theory"), default="practice")
    grid.add_argument("--out", help="optional report path")
    grid.set_defaults(func=cmd_ema_grid)

    search = sub.add_parser("search", parents=[common], help="evolutionary coefficient search")
    search.set_defaults(func=cmd_search)

    landscape = sub.add_parser("landscape", parents=[common], help="grid sweep over a checkpoint plane")
    landscape.add_argument("--checkpoint", action="append", help="anchor checkpoint (give three)")
    landscape.add_argument("--x-range", help="min:max:steps")
    landscape.add_argument("--y-range", help="min:max:steps")
    landscape.add_argument("--evaluator-cmd", help="command with a {checkpoint} placeholder")
    landscape.add_argument("--workdir", default=".", help="scratch directory for evaluation files")
    landscape.add_argument("--out", help="CSV output path")
    landscape.set_defaults(func=cmd_landscape)

    simulate = sub.add_parser(
        "simulate-theory", parents=[common], help="convergence simulation report"
    )
    simulate.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        return _fail("config", EXIT_CONFIG, ValueError("seed must be non-negative"))
    if getattr(args, "parallelism", None) is not None and args.parallelism < 1:
        return _fail("config", EXIT_CONFIG, ValueError("parallelism must be at least 1"))
    try:
        return args.func(args)
    except (ConfigError, CoefficientError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (EvaluatorError, EvaluationFailure, SearchError) as exc:
        return _fail("evaluator", EXIT_EVALUATOR, exc)
    except (ContainerError, ManifestError) as exc:
        return _fail("io", EXIT_IO, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
