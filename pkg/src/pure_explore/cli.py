"""Command-line front end.

Example config::

    {"instance": {"family": "gaussian", "means": [0.1, 0.2, 0.3, 0.4, 0.5], "variances": 1},
     "query": {"kind": "best_k", "k": 2},
     "rule": {"est": "TS", "det": "KKT", "sel": "IDS"},
     "mode": {"type": "fixed_confidence", "delta": 0.1, "threshold": "practical"},
     "replications": 1000, "seed": 1}
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocation import SolverError, certify, solve
from .chernoff import Query
from .divergences import DomainError, RewardFamily
from .harness import (
    UNIFORM,
    BanditInstance,
    Convergence,
    ExperimentConfig,
    FixedBudget,
    FixedConfidence,
    DEFAULT_STEP_CAP,
    run_one,
    run_replications,
    runs_csv,
    summary_json,
    trajectory_csv,
    validate_config,
)
from .rules import Detection, Estimation, RuleConfig, Selection, DEFAULT_TS_CAP
from .stopping import ThresholdKind

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class ParsedConfig:
    experiment: ExperimentConfig
    echo: dict


_FAMILIES = {
    "gaussian": "gaussian",
    "gaussian_known_variance": "gaussian",
    "bernoulli": "bernoulli",
    "gaussian_unknown_variance": "unknown",
}
_QUERY_PARAMS = {
    "best_arm": (),
    "best_k": ("k",),
    "threshold": ("threshold",),
    "closest_to_threshold": ("threshold",),
    "all_epsilon_good": ("epsilon",),
    "epsilon_best_arm": ("epsilon",),
    "signed": ("threshold",),
    "murphy": ("threshold",),
    "pairwise": ("classes",),
}
_TOP_FIELDS = {"instance", "query", "rule", "mode", "replications", "seed"}
_INSTANCE_FIELDS = {"family", "means", "variances", "rho", "true_variances"}
_RULE_FIELDS = {"est", "det", "sel", "beta", "ts_cap", "baseline"}
_MODE_FIELDS = {"type", "delta", "threshold", "step_cap", "budget", "checkpoints"}


def _unknown(obj, allowed, where, errs):
    for key in obj:
        if key not in allowed:
            errs.append(f"{where}: unknown field {key!r}")


def _section(data, name, errs):
    val = data.get(name)
    if not isinstance(val, dict):
        errs.append(f"{name}: missing or not an object")
        return None
    return val


def _parse_instance(d, errs):
    _unknown(d, _INSTANCE_FIELDS, "instance", errs)
    fam_name = _FAMILIES.get(str(d.get("family", "")).lower())
    means = d.get("means")
    if fam_name is None:
        errs.append(f"instance.family: unknown family {d.get('family')!r}")
    if not isinstance(means, list) or not all(isinstance(m, (int, float)) for m in means):
        errs.append("instance.means: must be a list of numbers")
        return None
    try:
        variances = d.get("variances")
        if fam_name == "gaussian":
            if variances is None:
                variances = [1.0]
            fam = RewardFamily.gaussian(variances)
        elif fam_name == "bernoulli":
            if variances is not None:
                errs.append("instance.variances: Bernoulli has no variance parameters")
            fam = RewardFamily.bernoulli()
        elif fam_name == "unknown":
            fam = RewardFamily.gaussian_unknown_variance()
        else:
            return None
        tv = d.get("true_variances")
        if tv is not None:
            tv = tuple(np.atleast_1d(tv).tolist())
        return BanditInstance(fam, tuple(means), d.get("rho"), tv)
    except (DomainError, TypeError, ValueError) as exc:
        errs.append(f"instance: {exc}")
        return None


def _parse_query(d, n_arms, errs):
    kind = str(d.get("kind", "")).lower()
    params = dict(d.get("params", {}) or {})
    params.update({k: v for k, v in d.items() if k not in ("kind", "params")})
    if kind not in _QUERY_PARAMS:
        errs.append(f"query.kind: unknown query {d.get('kind')!r}")
        return None
    _unknown(params, set(_QUERY_PARAMS[kind]), "query", errs)
    missing = [p for p in _QUERY_PARAMS[kind] if p not in params]
    if missing:
        errs.append(f"query: missing parameter(s) {missing}")
        return None
    try:
        if kind == "best_arm":
            return Query.best_arm()
        if kind == "best_k":
            return Query.best_k(params["k"])
        if kind == "threshold":
            return Query.thresholding(params["threshold"])
        if kind == "closest_to_threshold":
            return Query.closest_to_threshold(params["threshold"])
        if kind == "all_epsilon_good":
            return Query.all_epsilon_good(params["epsilon"])
        if kind == "epsilon_best_arm":
            return Query.epsilon_best_arm(params["epsilon"])
        if kind == "signed":
            return Query.signed(params["threshold"])
        if kind == "murphy":
            return Query.murphy(params["threshold"])
        return Query.pairwise(params["classes"], n_arms or 0)
    except (DomainError, TypeError, ValueError) as exc:
        errs.append(f"query: {exc}")
        return None


def _parse_rule(d, errs):
    if isinstance(d, str):
        if d.lower() == UNIFORM:
            return UNIFORM
        try:
            return RuleConfig.parse(d)
        except DomainError as exc:
            errs.append(f"rule: {exc}")
            return None
    if not isinstance(d, dict):
        errs.append("rule: must be an object or a rule name")
        return None
    _unknown(d, _RULE_FIELDS, "rule", errs)
    if str(d.get("baseline", "")).lower() == UNIFORM:
        return UNIFORM
    try:
        est = Estimation[str(d.get("est", "")).upper()]
        det = Detection[str(d.get("det", "")).upper()]
    except KeyError:
        errs.append(f"rule: unknown est/det {d.get('est')!r}/{d.get('det')!r}")
        return None
    sel = str(d.get("sel", "IDS")).upper()
    cap = d.get("ts_cap", DEFAULT_TS_CAP)
    try:
        if sel == "IDS":
            return RuleConfig(est, det, Selection.IDS, ts_detection_cap=int(cap))
        if sel in ("BETA", "FIXEDBETA", "FIXED_BETA"):
            return RuleConfig(est, det, Selection.FIXED_BETA, float(d.get("beta", 0.5)), int(cap))
        return RuleConfig(est, det, Selection.FIXED_BETA, float(sel), int(cap))
    except (DomainError, ValueError) as exc:
        errs.append(f"rule: {exc}")
        return None


def _parse_mode(d, errs):
    _unknown(d, _MODE_FIELDS, "mode", errs)
    kind = str(d.get("type", "")).lower()
    try:
        if kind == "fixed_confidence":
            thr = ThresholdKind[str(d.get("threshold", "practical")).upper()]
            delta = float(d.get("delta", 0.1))
            if not 0.0 < delta < 1.0:
                errs.append(f"mode.delta: must lie in (0, 1), got {delta}")
            return FixedConfidence(thr, delta, int(d.get("step_cap", DEFAULT_STEP_CAP)))
        if kind in ("fixed_budget", "convergence"):
            if "budget" not in d:
                errs.append("mode.budget: required for fixed-budget and convergence modes")
                return None
            cps = tuple(int(c) for c in d.get("checkpoints", ()))
            cls = FixedBudget if kind == "fixed_budget" else Convergence
            return cls(int(d["budget"]), cps)
    except KeyError:
        errs.append(f"mode.threshold: unknown threshold {d.get('threshold')!r}")
        return None
    except (TypeError, ValueError) as exc:
        errs.append(f"mode: {exc}")
        return None
    errs.append(f"mode.type: unknown mode {d.get('type')!r}")
    return None


def parse_config(raw: bytes | str) -> ParsedConfig:
    """Validate a JSON experiment config.

    Raises:
        ConfigError: listing every validation problem, not just the first.
    """
    errs: list[str] = []
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object"])
    _unknown(data, _TOP_FIELDS, "config", errs)
    inst_d = _section(data, "instance", errs)
    query_d = _section(data, "query", errs)
    mode_d = _section(data, "mode", errs)
    instance = _parse_instance(inst_d, errs) if inst_d is not None else None
    n_arms = len(inst_d["means"]) if inst_d and isinstance(inst_d.get("means"), list) else None
    query = _parse_query(query_d, n_arms, errs) if query_d is not None else None
    if "rule" not in data:
        errs.append("rule: missing")
        rule = None
    else:
        rule = _parse_rule(data["rule"], errs)
    mode = _parse_mode(mode_d, errs) if mode_d is not None else None
    reps = data.get("replications", 1)
    if not isinstance(reps, int) or reps < 1:
        errs.append(f"replications: must be an integer >= 1, got {reps!r}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        errs.append(f"seed: must be an unsigned 64-bit integer, got {seed!r}")
    if errs or None in (instance, query, rule, mode):
        raise ConfigError(errs or ["config is incomplete"])
    cfg = object.__new__(ExperimentConfig)
    for name, val in (("instance", instance), ("query", query), ("rule", rule), ("mode", mode),
                      ("replications", reps), ("master_seed", seed), ("log_steps", False)):
        object.__setattr__(cfg, name, val)
    errs = validate_config(cfg)
    if errs:
        raise ConfigError(errs)
    return ParsedConfig(ExperimentConfig(instance, query, rule, mode, reps, seed), data)


def _with_seed(parsed: ParsedConfig, seed):
    if seed is None:
        return parsed
    exp = parsed.experiment
    echo = dict(parsed.echo, seed=seed)
    return ParsedConfig(ExperimentConfig(exp.instance, exp.query, exp.rule, exp.mode,
                                         exp.replications, seed), echo)


def _workers(arg):
    if arg is not None:
        return arg
    env = os.environ.get("PURE_EXPLORE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([f"PURE_EXPLORE_WORKERS must be an integer, got {env!r}"]) from None
    return 1


def _answer_json(ans):
    return sorted(ans) if isinstance(ans, frozenset) else ans


def cmd_solve(parsed: ParsedConfig, out: Path | None) -> int:
    exp = parsed.experiment
    p, gamma = solve(exp.query, exp.instance.theta, exp.instance.family)
    result = {"p_star": p.weights.tolist(), "gamma_star": gamma}
    if np.all(p.weights > 0):
        cert = certify(exp.query, exp.instance.theta, p, exp.instance.family)
        result["certificate"] = {
            "mu": cert.mu.tolist(), "pitfalls": [str(x) for x in cert.pitfalls],
            "gamma": cert.gamma, "stationarity_residual": cert.stationarity_residual,
            "slackness_residual": cert.slackness_residual, "mu_sum_error": cert.mu_sum_error,
            "singular": cert.singular}
    text = json.dumps(result, indent=2)
    print(text)
    if out is not None:
        (out / "solve.json").write_text(text + "\n")
    return EXIT_OK


def cmd_run(parsed: ParsedConfig, out: Path | None) -> int:
    rec = run_one(parsed.experiment, 0)
    print(json.dumps({"replication": rec.replication, "tau_or_T": rec.tau,
                      "answer": _answer_json(rec.answer), "correct": rec.correct,
                      "censored": rec.censored, "fallback_count": rec.fallback_count,
                      "counts": rec.counts.tolist()}, indent=2))
    if out is not None:
        (out / "runs.csv").write_text(runs_csv([rec]))
        if rec.trajectory is not None:
            (out / "trajectory.csv").write_text(trajectory_csv([rec], parsed.experiment.instance.K))
    return EXIT_OK


def _rule_name(exp):
    return "uniform" if exp.uniform else exp.rule.name


def cmd_experiment(parsed: ParsedConfig, out: Path, workers: int, trajectory=False) -> int:
    exp = parsed.experiment
    stats, records = run_replications(exp, workers)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(runs_csv(records))
    (out / "summary.json").write_text(summary_json(parsed.echo, stats))
    if trajectory:
        (out / "trajectory.csv").write_text(trajectory_csv(records, exp.instance.K))
    print(f"{_rule_name(exp)}: {stats.mean:.1f} ± {stats.ci95:.1f} "
          f"(PCS {stats.pcs:.3f}, n={stats.n})")
    return EXIT_OK


def cmd_convergence(parsed: ParsedConfig, out: Path, workers: int) -> int:
    if isinstance(parsed.experiment.mode, FixedConfidence):
        raise ConfigError(["convergence needs a fixed_budget or convergence mode"])
    return cmd_experiment(parsed, out, workers, trajectory=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pure-explore",
        description="Pure-exploration bandit experiments with information-directed selection.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{solve,run,experiment,convergence}")
    helps = {
        "solve": "solve the optimal allocation and print p*, Gamma* and its dual certificate",
        "run": "run a single replication and print its record",
        "experiment": "run all replications; write runs.csv and summary.json",
        "convergence": "fixed-budget replications with checkpoints; also write trajectory.csv",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", required=True, metavar="PATH", help="JSON experiment config")
        sp.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (default: current directory for experiment/convergence)")
        sp.add_argument("--workers", type=int, default=None, metavar="N",
                        help="worker threads (default: $PURE_EXPLORE_WORKERS or 1)")
        sp.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="override the master seed in the config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = Path(args.config).read_bytes()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError([f"--seed must be an unsigned 64-bit integer, got {args.seed}"])
        if args.workers is not None and args.workers < 1:
            raise ConfigError(["--workers must be >= 1"])
        parsed = _with_seed(parse_config(raw), args.seed)
        workers = _workers(args.workers)
    except (ConfigError, DomainError) as exc:
        for msg in getattr(exc, "errors", [str(exc)]):
            print(f"validation error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out) if args.out else None
    try:
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(parsed, out)
        if args.command == "run":
            return cmd_run(parsed, out)
        if args.command == "experiment":
            return cmd_experiment(parsed, out or Path("."), workers)
        return cmd_convergence(parsed, out or Path("."), workers)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"validation error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, SolverError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
