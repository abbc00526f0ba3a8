"""Command-line front end: ``smatch {score,match,estimate,diagnose,simulate,generate}``.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from typing import Optional, Sequence

from smatch import __version__
from smatch.dataset import Dataset, load_csv, standardize
from smatch.effects import balance_report, dose_chain, effects_to_csv, estimate_pairwise
from smatch.errors import InputError, NumericError
from smatch.matching import MatchingResult, MatchSpec, match_all_pivots, match_units, select_best_pivot
from smatch.ratio_estim import BasisConfig, ratio_score_model
from smatch.scores import KnownDensityModel, ScoreTable, fit_multinomial_logit, score_table
from smatch.simulation import PipelineConfig, SimulationScenario, generate, reference_scenario, run_experiment

log = logging.getLogger("smatch")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "SMATCH_SEED"


def _csv_list(text: str) -> list:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {text!r}")


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use flag names."""
    if not os.path.isfile(path):
        raise InputError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{no}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _add_data_args(p: argparse.ArgumentParser, response: bool = True) -> None:
    p.add_argument("--input", help="input CSV file")
    p.add_argument("--treatment-col", default="treatment")
    p.add_argument("--covariate-cols", help="comma-separated covariate columns")
    if response:
        p.add_argument("--response-col", default=None)
    p.add_argument("--id-col", default=None, help="unit id column (default: data row number)")
    p.add_argument("--levels", default=None, help="comma-separated treatment order (default: first appearance)")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("known", "glm", "ratio"), default=None)
    p.add_argument("--pivot", default=None, help="pivot treatment label (default: first level)")
    p.add_argument("--known-spec", default=None, help="JSON file describing known arm densities")
    p.add_argument("--ridge", type=float, default=1e-6, help="logit ridge penalty")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--ratio-max-centers", type=int, default=BasisConfig.max_centers)
    p.add_argument("--ratio-bandwidths", type=_floats, default=BasisConfig.bandwidth_grid)
    p.add_argument("--ratio-ridges", type=_floats, default=BasisConfig.ridge_grid)
    p.add_argument("--ratio-folds", type=int, default=BasisConfig.folds)
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)


def _add_match_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--anchor-arm", default=None, help="arm supplying anchors (default: pivot)")
    p.add_argument("--ratio-k", type=int, default=1, help="matches per arm (1:k matching)")
    p.add_argument("--with-replacement", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--caliper", type=float, default=None)
    p.add_argument("--metric", choices=("log", "ratio"), default="log")


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--format", default="csv,json", help="comma-separated subset of csv,json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"smatch {__version__}")
    parser.add_argument("--config", default=None, help="flat key = value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="compute score vectors for every unit")
    _add_data_args(p)
    _add_model_args(p)
    _add_output_args(p)

    p = sub.add_parser("match", help="match units across arms on scores")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--scores", default=None, help="score CSV from 'smatch score'")
    _add_match_args(p)
    p.add_argument("--all-pivots", action="store_true")
    p.add_argument("--select-best", choices=("euclidean", "sup"), default=None)
    p.add_argument("--search", choices=("scan", "kdtree"), default="scan")
    p.add_argument("--brute-force", action="store_true", help="use the exhaustive pure-Python scan")
    _add_output_args(p)

    p = sub.add_parser("estimate", help="pairwise effects from a match file")
    _add_data_args(p)
    p.add_argument("--matches", default=None, help="match JSON from 'smatch match'")
    p.add_argument("--dose-order", default=None, help="comma-separated levels in increasing dose")
    _add_output_args(p)

    p = sub.add_parser("diagnose", help="covariate balance before and after matching")
    _add_data_args(p)
    p.add_argument("--matches", default=None)
    _add_output_args(p)

    p = sub.add_parser("simulate", help="Monte Carlo bias experiment on a scenario")
    p.add_argument("--scenario", default="reference", help="scenario JSON file or 'reference'")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--model", choices=("glm", "true", "ratio", "constant"), default="glm")
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--pivot", default=None)
    p.add_argument("--balance", action="store_true", help="also average balance diagnostics")
    _add_match_args(p)
    _add_output_args(p)

    p = sub.add_parser("generate", help="write one simulated dataset as CSV")
    p.add_argument("--scenario", default="reference")
    p.add_argument("--n", type=int, default=2000)
    _add_output_args(p)
    return parser


def parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = read_config(known.config)
        command = next((a for a in argv if a in parser._subparsers._group_actions[0].choices), None)
        if command is not None:
            subparser = parser._subparsers._group_actions[0].choices[command]
            dests = {a.dest: a for a in subparser._actions}
            unknown = [k for k in cfg if k not in dests and k != "config"]
            if unknown:
                raise InputError(f"unknown config key(s) for {command}: {unknown}")
            defaults = {}
            for key, value in cfg.items():
                action = dests.get(key)
                if action is None:
                    continue
                if isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
                    defaults[key] = _bool(value)
                elif action.type is not None:
                    defaults[key] = action.type(value)
                else:
                    defaults[key] = value
            subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _formats(args) -> set:
    fmts = set(_csv_list(args.format))
    if not fmts or fmts - {"csv", "json"}:
        raise InputError(f"--format must be a subset of csv,json; got {args.format!r}")
    return fmts


def _require_file(path, flag) -> str:
    if not path:
        raise InputError(f"{flag} is required")
    if not os.path.isfile(path):
        raise InputError(f"file not found for {flag}: {path}")
    return path


def _prepare_out_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise InputError(f"output directory is not writable: {path}")
    return path


def _echo(args) -> dict:
    skip = {"out_dir", "verbose", "config"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _metadata(args, seed: int) -> dict:
    return {"tool": "smatch", "version": __version__, "command": args.command, "seed": seed, "options": _echo(args)}


def _header_lines(meta: dict) -> list:
    return [
        f"tool={meta['tool']} version={meta['version']} command={meta['command']} seed={meta['seed']}",
        "options=" + json.dumps(meta["options"], sort_keys=True),
    ]


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_json(path: str, meta: dict, payload: dict) -> None:
    _write(path, json.dumps({"metadata": meta, **payload}, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _json_clean(obj):
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return None
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    return obj


def _load_dataset(args, need_response: bool = False) -> Dataset:
    _require_file(args.input, "--input")
    if not args.covariate_cols:
        raise InputError("--covariate-cols is required")
    response = getattr(args, "response_col", None)
    if need_response and not response:
        raise InputError("--response-col is required")
    return load_csv(
        args.input,
        treatment_col=args.treatment_col,
        covariate_cols=_csv_list(args.covariate_cols),
        response_col=response,
        id_col=args.id_col,
        levels=_csv_list(args.levels) if args.levels else None,
    )


def _known_model(path: str, d: Dataset) -> KnownDensityModel:
    _require_file(path, "--known-spec")
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
        labels = [l.label for l in d.levels]
        family = spec["family"]
        if family == "normal":
            return KnownDensityModel.normal(spec["means"], spec["covs"], labels=labels)
        if family == "polynomial":
            polys = [{tuple(t["exponents"]): float(t["coef"]) for t in arm} for arm in spec["polynomials"]]
            return KnownDensityModel.polynomial_family(polys, [tuple(b) for b in spec["box"]], labels=labels)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"malformed known-density spec: {exc!r}") from None
    raise InputError(f"unknown density family {family!r}")


def _basis(args, seed: int) -> BasisConfig:
    return BasisConfig(
        max_centers=args.ratio_max_centers,
        bandwidth_grid=args.ratio_bandwidths,
        ridge_grid=args.ratio_ridges,
        folds=args.ratio_folds,
        seed=seed,
    )


class _ScoreSource:
    """Builds score tables per pivot; fitted models are reused where the pivot is irrelevant."""

    def __init__(self, args, d: Dataset, seed: int):
        self.args, self.d, self.seed = args, d, seed
        if args.model is None:
            raise InputError("--model is required (known, glm or ratio)")
        if args.model == "known":
            self.work = d
            self.known = _known_model(args.known_spec, d)
        else:
            self.work = standardize(d)[0] if args.standardize else d
        self._glm = None
        self.model_dump = None

    def __call__(self, pivot) -> ScoreTable:
        a, d = self.args, self.d
        piv = d.level(pivot)
        if a.model == "known":
            return score_table(self.known, d, piv)
        if a.model == "glm":
            if self._glm is None:
                self._glm = fit_multinomial_logit(self.work, 0, ridge=a.ridge, max_iter=a.max_iter)
                self.model_dump = {
                    "model": "glm",
                    "coefficients": self._glm.coefficients.tolist(),
                    "priors": self._glm.priors.probs.tolist(),
                    "iterations": self._glm.iterations,
                    "log_likelihood": self._glm.log_likelihood,
                    "grad_norm": self._glm.grad_norm,
                    "standardized": bool(a.standardize),
                }
            return score_table(self._glm, self.work, piv)
        model = ratio_score_model(self.work, piv, _basis(a, self.seed))
        self.model_dump = {"model": "ratio", **model.to_dict()}
        return score_table(model, self.work, piv)


def _match_spec(args, d: Dataset, pivot) -> MatchSpec:
    if args.caliper is not None and args.caliper < 0:
        raise InputError("--caliper must be nonnegative")
    return MatchSpec(
        pivot=d.level(pivot),
        anchor_arm=None if args.anchor_arm is None else d.level(args.anchor_arm),
        neighbors_per_arm=args.ratio_k,
        with_replacement=args.with_replacement,
        caliper=args.caliper,
        metric=args.metric,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_score(args) -> int:
    seed = _seed(args)
    fmts = _formats(args)
    d = _load_dataset(args)
    out = _prepare_out_dir(args.out_dir)
    source = _ScoreSource(args, d, seed)
    pivot = d.level(args.pivot) if args.pivot is not None else d.levels[0]
    table = source(pivot)
    meta = _metadata(args, seed)
    _write(os.path.join(out, "scores.csv"), table.to_csv(_header_lines(meta)))
    if "json" in fmts and source.model_dump is not None:
        _write_json(os.path.join(out, "model.json"), meta, {"model": _json_clean(source.model_dump)})
    return EXIT_OK


def cmd_match(args) -> int:
    seed = _seed(args)
    fmts = _formats(args)
    d = _load_dataset(args)
    out = _prepare_out_dir(args.out_dir)
    if args.scores:
        with open(_require_file(args.scores, "--scores"), encoding="utf-8") as fh:
            table = ScoreTable.from_csv(fh.read(), d.levels)
        provider = table.transform
    else:
        provider = _ScoreSource(args, d, seed)
    pivot = d.level(args.pivot) if args.pivot is not None else d.levels[0]
    spec = _match_spec(args, d, pivot)
    search = "brute" if args.brute_force else args.search
    meta = _metadata(args, seed)
    payload = {}
    if args.all_pivots:
        results = match_all_pivots(d, provider, spec, search=search)
        payload["all_pivots"] = [
            {"pivot": piv.label, "n_groups": len(res.groups), "n_unmatched": len(res.unmatched)} for piv, res in results
        ]
        if args.select_best:
            pivot, result = select_best_pivot(results, d, args.select_best)
            payload["selected_pivot"] = pivot.label
            payload["selection_norm"] = args.select_best
            print(f"selected pivot: {pivot.label}")
        else:
            pivot, result = results[0]
            for piv, res in results[1:]:
                _write_match_files(out, f"match_pivot_{piv.label}", res, meta, {}, fmts)
    else:
        result = match_units(d, provider(pivot), spec, search=search)
    if not result.groups:
        print(f"warning: no anchor was matched ({len(result.unmatched)} unmatched)", file=sys.stderr)
    _write_match_files(out, "match", result, meta, payload, fmts)
    return EXIT_OK


def _write_match_files(out, stem, result: MatchingResult, meta, payload, fmts) -> None:
    # the JSON match file is the input to estimate/diagnose, so it is always written
    _write_json(os.path.join(out, f"{stem}.json"), meta, {**payload, **result.to_dict()})
    if "csv" in fmts:
        _write(os.path.join(out, f"{stem}.csv"), result.to_csv(_header_lines(meta)))


def _load_matches(args, d: Dataset) -> MatchingResult:
    path = _require_file(args.matches, "--matches")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"match file is not valid JSON: {exc}") from None
    return MatchingResult.from_dict(data, d)


def cmd_estimate(args) -> int:
    seed = _seed(args)
    fmts = _formats(args)
    d = _load_dataset(args, need_response=True)
    _require_file(args.matches, "--matches")
    out = _prepare_out_dir(args.out_dir)
    result = _load_matches(args, d)
    estimates = estimate_pairwise(result, d)
    chain = dose_chain(result, d, _csv_list(args.dose_order)) if args.dose_order else None
    meta = _metadata(args, seed)
    if "json" in fmts:
        payload = {"effects": [e.to_dict() for e in estimates]}
        if chain is not None:
            payload["dose_chain"] = chain.to_dict()
        _write_json(os.path.join(out, "effects.json"), meta, _json_clean(payload))
    if "csv" in fmts:
        _write(os.path.join(out, "effects.csv"), effects_to_csv(estimates, _header_lines(meta)))
        if chain is not None:
            _write(os.path.join(out, "dose_chain.csv"), effects_to_csv(chain.steps, _header_lines(meta)))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    seed = _seed(args)
    d = _load_dataset(args)
    _require_file(args.matches, "--matches")
    out = _prepare_out_dir(args.out_dir)
    report = balance_report(d, _load_matches(args, d))
    meta = _metadata(args, seed)
    _write(os.path.join(out, "balance.csv"), report.to_csv(_header_lines(meta)))
    if report.flagged:
        print(f"warning: {len(report.flagged)} non-finite SMD value(s)", file=sys.stderr)
    return EXIT_OK


def _scenario(arg: str) -> SimulationScenario:
    if arg == "reference":
        return reference_scenario()
    return SimulationScenario.from_json(_require_file(arg, "--scenario"))


def cmd_simulate(args) -> int:
    seed = _seed(args)
    fmts = _formats(args)
    sc = _scenario(args.scenario)
    out = _prepare_out_dir(args.out_dir)
    pivot = args.pivot if args.pivot is not None else 0
    if args.caliper is not None and args.caliper < 0:
        raise InputError("--caliper must be nonnegative")
    labels = list(sc.labels)
    ref = lambda t: labels.index(t) if isinstance(t, str) and t in labels else t
    spec = MatchSpec(
        pivot=ref(pivot),
        anchor_arm=None if args.anchor_arm is None else ref(args.anchor_arm),
        neighbors_per_arm=args.ratio_k,
        with_replacement=args.with_replacement,
        caliper=args.caliper,
        metric=args.metric,
    )
    cfg = PipelineConfig(model=args.model, spec=spec, ridge=args.ridge, balance=args.balance)
    report = run_experiment(sc, cfg, args.n, args.reps, seed)
    meta = _metadata(args, seed)
    if "json" in fmts:
        _write_json(os.path.join(out, "experiment.json"), meta, {"report": report.to_dict(), "scenario": sc.to_dict()})
    if "csv" in fmts:
        _write(os.path.join(out, "experiment.csv"), report.to_csv(_header_lines(meta)))
    return EXIT_OK


def cmd_generate(args) -> int:
    seed = _seed(args)
    sc = _scenario(args.scenario)
    out = _prepare_out_dir(args.out_dir)
    d, _ = generate(sc, args.n, seed)
    buf = io.StringIO()
    for line in _header_lines(_metadata(args, seed)):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "treatment", *d.covariate_names, "y"])
    for i, uid in enumerate(d.ids):
        w.writerow([uid, d.levels[d.treatment[i]].label, *(repr(float(v)) for v in d.covariates[i]), repr(float(d.responses[i]))])
    _write(os.path.join(out, "data.csv"), buf.getvalue())
    return EXIT_OK


COMMANDS = {
    "score": cmd_score,
    "match": cmd_match,
    "estimate": cmd_estimate,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
    "generate": cmd_generate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except InputError as exc:
        print(f"smatch: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"smatch: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"smatch: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
