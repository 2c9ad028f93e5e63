"""``abae`` command line: run a query, simulate experiments, validate bounds, generate data.

Exit codes: 0 success, 1 engine error, 2 configuration or input error,
3 failed bound validation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .bootstrap import BootstrapConfig
from .bounds import LEMMAS, validate_bounds
from .core import AbaeError, DatasetError, InvalidK, InvalidSpec, RngSeed
from .datafile import DuplicateId, ParseError, ingest, write_dataset
from .harness import ExperimentPlan, fit_rate, proportional_budgets, run_coverage, run_mse, InsufficientPoints
from .oracle import SubprocessOracle
from .sampler import run_abae
from .stratifier import stratify
from .synthgen import SyntheticSpec, default_suite, generate

log = logging.getLogger("abae")

EXIT_ENGINE, EXIT_CONFIG, EXIT_BOUNDS = 1, 2, 3
CONFIG_ERRORS = (InvalidK, InvalidSpec, ParseError, DuplicateId, DatasetError)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    k: int = 5
    n1: int = 100
    n2: int = 2000
    reuse: bool = False
    seed: int = 0
    stream_id: int = 0
    resamples: int = 1000
    alpha: float = 0.05
    oracle_mode: str = "inline"
    oracle_command: str | None = None
    output: str | None = None
    adjust: bool = False
    c_mu: float | None = None
    min_stratum_samples: int = 30

    def validate(self):
        if not self.input:
            raise ConfigError("an input file is required")
        for name in ("k", "n1", "n2", "resamples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.oracle_mode not in ("inline", "subprocess"):
            raise ConfigError("oracle_mode must be 'inline' or 'subprocess'")
        if self.oracle_mode == "subprocess" and not self.oracle_command:
            raise ConfigError("subprocess oracle mode needs oracle_command")
        if self.adjust and self.c_mu is None:
            raise ConfigError("adjust requires c_mu")


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _merge(cls, file_doc: dict, args: argparse.Namespace):
    names = {f.name for f in fields(cls)}
    unknown = set(file_doc) - names
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    values = dict(file_doc)
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_run(args) -> int:
    cfg = _merge(RunConfig, _load_json(args.config) if args.config else {}, args)
    if args.oracle_command and args.oracle_mode is None:
        cfg.oracle_mode = "subprocess"
    cfg.validate()
    dataset = ingest(cfg.input, require_predicate=cfg.oracle_mode == "inline")
    oracle = SubprocessOracle(cfg.oracle_command, dataset) if cfg.oracle_mode == "subprocess" else None
    boot = BootstrapConfig(cfg.resamples, cfg.alpha, cfg.min_stratum_samples, cfg.adjust)
    report = run_abae(
        dataset, cfg.k, cfg.n1, cfg.n2, reuse=cfg.reuse, rng=RngSeed(cfg.seed, cfg.stream_id),
        bootstrap=boot, oracle=oracle, c_mu=cfg.c_mu,
    )
    _emit(_dump(report.to_dict()), cfg.output)
    return 0


def _spec_from(args, doc: dict | None = None) -> SyntheticSpec:
    if doc is not None:
        return SyntheticSpec.from_dict(doc)
    spec = default_suite(records_per_stratum=args.records_per_stratum, seed=args.data_seed,
                         value_law=args.value_law)
    return spec


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _budgets(args, k: int) -> list[tuple[int, int]]:
    if args.budgets:
        out = []
        for item in args.budgets.split(","):
            try:
                n1, n2 = item.split(":")
                out.append((int(n1), int(n2)))
            except ValueError:
                raise ConfigError(f"budget {item!r} is not of the form n1:n2") from None
        return out
    return proportional_budgets(_csv_ints(args.totals), k, args.stage1_share)


def cmd_simulate(args) -> int:
    if args.config:
        doc = _load_json(args.config)
        try:
            plan = ExperimentPlan.from_dict(doc)
        except (TypeError, KeyError, ValueError) as e:
            raise ConfigError(f"invalid experiment plan: {e}") from None
    else:
        spec = _spec_from(args)
        plan = ExperimentPlan(
            spec=spec,
            budgets=_budgets(args, spec.k),
            trials=args.trials,
            estimators=tuple(args.estimators.split(",")),
            seed=RngSeed(args.seed),
        )
    if args.trials_override:
        plan.trials = args.trials_override
    out: dict = {"plan": {"spec": plan.spec.to_dict(), "budgets": plan.budgets, "trials": plan.trials,
                          "estimators": list(plan.estimators), "seed": plan.seed.to_dict()}}
    data = generate(plan.spec)
    if args.coverage:
        cfg = BootstrapConfig(args.resamples, args.alpha)
        cov_plan = ExperimentPlan(plan.spec, plan.budgets, plan.trials,
                                  [e for e in plan.estimators if e.startswith("abae")] or ["abae"], plan.seed)
        out["coverage"] = run_coverage(cov_plan, cfg, data=data)
    else:
        result = run_mse(plan, data=data)
        out.update(result.to_dict())
        fits = {}
        for est in plan.estimators:
            try:
                fits[est] = fit_rate(result, est).to_dict()
            except InsufficientPoints as e:
                fits[est] = {"error": str(e)}
        out["fits"] = fits
        if args.table:
            Path(args.table).write_text(result.to_csv(), encoding="utf-8")
    _emit(_dump(out), args.output)
    return 0


def cmd_validate_bounds(args) -> int:
    spec = _spec_from(args, _load_json(args.config) if args.config else None)
    lemmas = list(LEMMAS) if args.lemma == "all" else _csv_ints(args.lemma)
    bad = [l for l in lemmas if l not in LEMMAS]
    if bad:
        raise ConfigError(f"no validator for lemma(s) {bad}; choose from {list(LEMMAS)}")
    levels = _csv_floats(args.delta)
    if any(not 0 < x < 1 for x in levels):
        raise ConfigError("delta values must lie in (0, 1)")
    if args.trials < 1000:
        raise ConfigError("at least 1000 trials are required")
    dataset, pop = generate(spec)
    strata = stratify(dataset, spec.k)
    reports = validate_bounds(
        lemmas, levels, pop, args.n1, args.n2, args.trials, RngSeed(args.seed),
        dataset=dataset, strata=strata, delta=args.cutoff_delta,
    )
    for r in reports:
        log.info("lemma %d level %.3g: %d/%d violations, nominal %.3g -> %s",
                 r.lemma, r.level, r.violations, r.trials, r.nominal, "pass" if r.passed else "FAIL")
    _emit(_dump({"reports": [r.to_dict() for r in reports], "population": pop.to_dict()}), args.output)
    return 0 if all(r.passed for r in reports) else EXIT_BOUNDS


def cmd_generate(args) -> int:
    spec = _spec_from(args, _load_json(args.config) if args.config else None)
    dataset, pop = generate(spec)
    write_dataset(dataset, args.output, include_predicate=not args.no_predicate)
    if args.truth:
        Path(args.truth).write_text(_dump(pop.to_dict()), encoding="utf-8")
    return 0


def _add_suite_args(p):
    p.add_argument("--records-per-stratum", type=int, default=100_000)
    p.add_argument("--data-seed", type=int, default=0, help="seed for synthetic data generation")
    p.add_argument("--value-law", choices=("two-point", "truncated-normal"), default="two-point")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abae", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="estimate the mean of predicate-matching records")
    run.add_argument("--config")
    run.add_argument("--input")
    run.add_argument("--k", type=int)
    run.add_argument("--n1", type=int)
    run.add_argument("--n2", type=int)
    run.add_argument("--reuse", action="store_true", default=None)
    run.add_argument("--seed", type=int)
    run.add_argument("--stream-id", dest="stream_id", type=int)
    run.add_argument("--resamples", type=int)
    run.add_argument("--alpha", type=float)
    run.add_argument("--oracle-mode", dest="oracle_mode", choices=("inline", "subprocess"))
    run.add_argument("--oracle-command", dest="oracle_command")
    run.add_argument("--adjust", action="store_true", default=None)
    run.add_argument("--c-mu", dest="c_mu", type=float)
    run.add_argument("--min-stratum-samples", dest="min_stratum_samples", type=int)
    run.add_argument("--output")
    run.set_defaults(func=cmd_run)

    sim = sub.add_parser("simulate", help="Monte Carlo MSE / coverage experiments on synthetic data")
    sim.add_argument("--config", help="JSON experiment plan")
    _add_suite_args(sim)
    sim.add_argument("--totals", default="1000,2000,4000,8000,16000,32000")
    sim.add_argument("--stage1-share", type=float, default=0.5)
    sim.add_argument("--budgets", help="explicit n1:n2 pairs, comma-separated")
    sim.add_argument("--trials", type=int, default=1000)
    sim.add_argument("--trials-override", type=int, help="replace the plan's trial count")
    sim.add_argument("--estimators", default="abae,abae-reuse")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--coverage", action="store_true", help="bootstrap coverage instead of MSE")
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--resamples", type=int, default=1000)
    sim.add_argument("--table", help="write a CSV row per estimator and budget")
    sim.add_argument("--output")
    sim.set_defaults(func=cmd_simulate)

    vb = sub.add_parser("validate-bounds", help="empirical violation rates of the concentration bounds")
    vb.add_argument("--config", help="JSON synthetic spec (defaults to the standard suite)")
    _add_suite_args(vb)
    vb.add_argument("--lemma", default="all",
                    help="check ids: 1 rate upper, 2 rate lower, 3 weights, 4 pilot matches, 5 variance, 8 second-stage matches")
    vb.add_argument("--delta", default="0.2,0.05,0.01", help="failure level(s); gamma for the second-stage check")
    vb.add_argument("--cutoff-delta", type=float, default=0.05, help="delta used for the p_* cutoff")
    vb.add_argument("--n1", type=int, default=100)
    vb.add_argument("--n2", type=int, default=2000)
    vb.add_argument("--trials", type=int, default=10_000)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--output")
    vb.set_defaults(func=cmd_validate_bounds)

    gen = sub.add_parser("generate", help="write a synthetic dataset file")
    gen.add_argument("--config", help="JSON synthetic spec (defaults to the standard suite)")
    _add_suite_args(gen)
    gen.add_argument("--no-predicate", action="store_true")
    gen.add_argument("--truth", help="also write the ground truth as JSON")
    gen.add_argument("--output", required=True)
    gen.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, *CONFIG_ERRORS) as e:
        print(f"abae: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AbaeError as e:
        print(f"abae: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ENGINE
    except ValueError as e:
        print(f"abae: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
