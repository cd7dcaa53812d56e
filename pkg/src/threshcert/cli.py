"""Command-line front end: simulate, select, certify, ensemble, diagnose."""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from .bootstrap import (
    BootstrapConfig,
    BootstrapError,
    bootstrap_thresholds,
    with_g_boot,
    write_instability_map,
    write_replicates,
)
from .certificate import dumps_report
from .data_model import (
    Aggregator,
    Cohort,
    CohortError,
    CostSpec,
    Domain,
    ScoreSet,
    aggregate,
    ingest_cohort,
    write_cohort,
)
from .empirical import GridMode, empirical_risk_curve, make_grid, write_risk_curve
from .ensemble import QuantileMappedThreshold, ensemble_quantile, from_quantile, precision_weight, to_quantile
from .generalization import GammaSpec, design_effect
from .modulus import write_band
from .pipeline import PipelineConfig, certify, split_by_patient
from .selection import (
    Candidate,
    CandidateEvaluation,
    InfeasibleConstraintError,
    SelectionResult,
    SelectorKind,
    evaluate_candidate,
    penalized_select,
    rule,
    select_threshold,
    write_candidate_table,
)
from .shift import DomainStats, shift_at
from .synth import PRESETS, HierarchySpec, generate_cohort

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 2, 3
SEED_ENV = "THRESHCERT_SEED"


class InputError(ValueError):
    pass


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load(path: str, domain: Domain) -> Cohort:
    if not Path(path).is_file():
        raise InputError(f"cannot read cohort file {path!r}")
    return ingest_cohort(path, domain)


def _scores(cohort: Cohort, agg: Aggregator) -> ScoreSet:
    return ScoreSet.from_scores(aggregate(cohort, agg))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _sidecar(out: str, suffix: str) -> Path:
    p = Path(out)
    return p.with_name(f"{p.stem}_{suffix}.csv")


# subcommands


def cmd_simulate(args: argparse.Namespace) -> int:
    mix, hier, domain = PRESETS[args.preset]
    if args.prevalence is not None:
        mix = replace(mix, prevalence=args.prevalence)
    hier = HierarchySpec(
        args.n_patients or hier.n_patients,
        args.cells or hier.cells_per_patient,
        _resolve_seed(args),
    )
    cohort = generate_cohort(mix, hier, domain)
    if args.out:
        write_cohort(cohort, args.out)
    else:
        buf = io.StringIO()
        write_cohort(cohort, buf)
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _boot_cfg(args: argparse.Namespace, seed: int) -> BootstrapConfig:
    delta_boot = args.delta_boot if args.delta_boot is not None else args.delta
    return BootstrapConfig(args.B, delta_boot, seed, args.centered, args.n_jobs)


def cmd_select(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    costs = CostSpec.parse(args.costs)
    grid_mode = GridMode.parse(args.grid)
    selector = SelectorKind.parse(args.selector)
    cohort = _load(args.train, Domain.INTERNAL)
    aggs = [Aggregator.parse(a) for a in (args.agg or ["mean"])]
    boot = _boot_cfg(args, seed)
    cands = [(Candidate(args.method, a), _scores(cohort, a)) for a in aggs]
    if selector.kind == "penalized":
        best, table = penalized_select(cands, costs, grid_mode, boot, args.delta)
        chosen = best
    else:
        if len(cands) > 1:
            raise InputError("several aggregators need --selector penalized to rank them")
        cand, ss = cands[0]
        ev = evaluate_candidate(cand, ss, costs, grid_mode, boot, args.delta)
        t_hat = select_threshold(ev.curve, selector)
        if t_hat != ev.result.t_hat:
            # re-run the bootstrap with the requested rule so the table describes it
            summary = bootstrap_thresholds(ss, costs, ev.curve.grid, boot, rule(selector), t_hat=t_hat)
            summary = with_g_boot(summary, ev.band)
            res = SelectionResult(cand, t_hat, ev.result.min_val_risk, summary.g_boot, ev.result.min_val_risk + summary.g_boot)
            ev = CandidateEvaluation(res, ev.curve, summary, ev.band)
        table = [ev]
        chosen = ev.result
    if args.out:
        write_candidate_table(table, args.out)
    result = {
        "selector": str(selector),
        "method": chosen.candidate.method_id,
        "aggregator": str(chosen.candidate.aggregator),
        "t_hat": chosen.t_hat,
        "min_val_risk": chosen.min_val_risk,
        "g_boot": chosen.g_boot,
        "J": chosen.objective_j,
    }
    sys.stdout.write(dumps_report(result))
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    costs = CostSpec.parse(args.costs)
    agg = Aggregator.parse(args.agg)
    mode = args.mode.lower()
    if mode == "pq" and not args.external:
        raise InputError("--mode pq needs --external")
    train_c = _load(args.train, Domain.INTERNAL)
    provenance: dict[str, Any] = {
        "aggregator": str(agg),
        "train_file": Path(args.train).name,
        "train_sha256": _file_digest(args.train),
    }
    train = _scores(train_c, agg)
    if args.val:
        if Path(args.val).resolve() == Path(args.train).resolve():
            raise InputError("--train and --val must be distinct cohorts")
        val_c = _load(args.val, Domain.INTERNAL)
        overlap = set(train_c.ids) & set(val_c.ids)
        if overlap:
            raise InputError(f"--train and --val share patient ids, e.g. {sorted(overlap)[0]!r}")
        val = _scores(val_c, agg)
        provenance.update({"split": "given", "val_file": Path(args.val).name, "val_sha256": _file_digest(args.val)})
    else:
        tr, va = split_by_patient(train, seed)
        val = train.subset(va)
        train = train.subset(tr)
        provenance.update({"split": "seeded 50/50 by patient, stratified by label", "split_seed": seed, "val_ids": list(val.ids)})
    external = None
    if args.external:
        ext_c = _load(args.external, Domain.EXTERNAL)
        external = _scores(ext_c, agg)
        provenance.update({"external_file": Path(args.external).name, "external_sha256": _file_digest(args.external)})
    cfg = PipelineConfig(
        costs=costs,
        gamma=GammaSpec(args.delta, args.gamma_form),
        boot=_boot_cfg(args, seed),
        delta_band=args.delta,
        grid_mode=GridMode.parse(args.grid),
        selector=SelectorKind.parse(args.selector),
    )
    res = certify(train, val, cfg, external, provenance, frozen=(mode == "p-frozen"))
    report = res.report(design_effect=design_effect(train_c).as_dict())
    _emit(dumps_report(report), args.out)
    if args.out:
        write_risk_curve(res.val_curve, _sidecar(args.out, "risk_curve"))
        write_band(res.band, _sidecar(args.out, "band"))
        write_replicates(res.summary, _sidecar(args.out, "replicates"))
        if res.instability is not None:
            write_instability_map(res.instability, _sidecar(args.out, "instability"))
    return EXIT_OK


def _parse_source(text: str) -> tuple[str, float | None]:
    path, sep, thr = text.partition("@")
    if not sep:
        return path, None
    try:
        return path, float(thr)
    except ValueError:
        raise InputError(f"bad threshold in --source {text!r}") from None


def cmd_ensemble(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    costs = CostSpec.parse(args.costs)
    agg = Aggregator.parse(args.agg)
    selector = SelectorKind.parse(args.selector)
    grid_mode = GridMode.parse(args.grid)
    if not args.source:
        raise InputError("ensemble needs at least one --source")
    boot = BootstrapConfig(args.B, args.delta, seed, n_jobs=args.n_jobs)
    items = []
    for text in args.source:
        path, thr = _parse_source(text)
        ref = _scores(_load(path, Domain.INTERNAL), agg)
        grid = make_grid(ref, grid_mode)
        if thr is None:
            thr = select_threshold(empirical_risk_curve(ref, costs, grid), selector)
        weight = 1.0
        if args.weighting == "precision":
            summary = bootstrap_thresholds(ref, costs, grid, boot, rule(selector), t_hat=thr)
            weight = precision_weight([to_quantile(t, ref.scores) for t in summary.t_star])
        items.append(QuantileMappedThreshold.from_reference(Path(path).stem, thr, ref.scores, weight))
    target = _scores(_load(args.target, Domain.EXTERNAL), agg)
    u_bar = ensemble_quantile(items, args.weighting)
    t_ens = from_quantile(u_bar, target.scores)
    report = {
        "ensemble": {
            "weighting": args.weighting,
            "aggregator": str(agg),
            "items": [
                {"source_id": it.source_id, "threshold": it.threshold, "quantile_u": it.quantile_u, "weight": it.weight}
                for it in items
            ],
            "quantile_u": u_bar,
            "threshold": t_ens,
            "target_file": Path(args.target).name,
            "n_target": len(target),
            "n_positive_decisions": int(np.count_nonzero(target.scores >= t_ens)),
            "cross_source_correlation": "assumed zero" if args.weighting == "precision" else None,
        }
    }
    _emit(dumps_report(report), args.out)
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    costs = CostSpec.parse(args.costs)
    agg = Aggregator.parse(args.agg)
    p_c = _load(args.train, Domain.INTERNAL)
    q_c = _load(args.external, Domain.EXTERNAL)
    p, q = _scores(p_c, agg), _scores(q_c, agg)
    if args.threshold is not None:
        t = args.threshold
    else:
        t = select_threshold(empirical_risk_curve(p, costs, make_grid(p, GridMode.parse(args.grid))), SelectorKind.parse(args.selector))
    report = {
        "threshold": t,
        "aggregator": str(agg),
        "shift_report": shift_at(t, DomainStats.from_scores(p), DomainStats.from_scores(q), costs).as_dict(),
        "design_effect": {"P": design_effect(p_c).as_dict(), "Q": design_effect(q_c).as_dict()},
    }
    _emit(dumps_report(report), args.out)
    return EXIT_OK


# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (fallback: ${SEED_ENV}, then 0)")
    p.add_argument("--out", default=None, help="output path (stdout when omitted)")


def _stat_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--costs", default="1,1", help="c10,c01 (false-negative, false-positive costs)")
    p.add_argument("--delta", type=float, default=0.10)
    p.add_argument("--delta-boot", type=float, default=None, help="defaults to --delta")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--grid", default="midpoints", help="midpoints | uniform:N")
    p.add_argument("--selector", default="erm", help="erm | youden | sens:x | spec:x | penalized")
    p.add_argument("--n-jobs", type=int, default=1, help="bootstrap threads (0 = all cores)")
    p.add_argument("--centered", action="store_true", help="centered bootstrap quantile")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threshcert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic cohort CSV")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), default="fig1-P")
    p.add_argument("--n-patients", type=int, default=None)
    p.add_argument("--cells", type=int, default=None, help="instances per patient")
    p.add_argument("--prevalence", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select", help="select a threshold; write the candidate table")
    _common(p)
    _stat_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--agg", action="append", help="aggregator; repeat to add candidates")
    p.add_argument("--method", default="scorer", help="method id for the table")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("certify", help="selection-honest certificate JSON plus plot CSVs")
    _common(p)
    _stat_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--val", default=None, help="validation cohort (else a seeded 50/50 split of --train)")
    p.add_argument("--external", default=None)
    p.add_argument("--agg", default="mean")
    p.add_argument("--mode", default=None, type=str.lower, choices=["p-frozen", "pq"])
    p.add_argument("--gamma-form", default="explicit", choices=["explicit", "headline"])
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("ensemble", help="quantile-scale ensemble threshold JSON")
    _common(p)
    _stat_flags(p)
    p.add_argument("--source", action="append", help="cohort CSV, optionally PATH@THRESHOLD; repeatable")
    p.add_argument("--target", required=True)
    p.add_argument("--agg", default="mean")
    p.add_argument("--weighting", default="uniform", choices=["uniform", "precision"])
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("diagnose", help="operating-point shift and design-effect JSON")
    _common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--external", required=True)
    p.add_argument("--agg", default="mean")
    p.add_argument("--costs", default="1,1")
    p.add_argument("--threshold", type=float, default=None, help="default: selector applied to --train")
    p.add_argument("--grid", default="midpoints")
    p.add_argument("--selector", default="erm")
    p.set_defaults(func=cmd_diagnose)
    return parser


def _config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        data = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {known.config!r}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError("config file must hold a JSON object")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    target = subparsers.choices.get(known.command)
    if target is None:
        return
    dests = {a.dest for a in target._actions}
    values = {}
    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in dests or dest in ("config", "func"):
            raise InputError(f"unknown config key {key!r} for {known.command}")
        values[dest] = value
    target.set_defaults(**values)


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _config_defaults(parser, argv)
        args = parser.parse_args(argv)
        if args.command == "certify" and args.mode is None:
            args.mode = "pq" if args.external else "p-frozen"
        return args.func(args)
    except InfeasibleConstraintError as exc:
        print(f"threshcert: infeasible constraint: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, CohortError, ValueError, OSError, BootstrapError) as exc:
        print(f"threshcert: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
