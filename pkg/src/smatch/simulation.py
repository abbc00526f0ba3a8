"""Generative scenarios with known ground truth and a seeded Monte Carlo runner."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import log_softmax

from smatch.dataset import Dataset, standardize
from smatch.effects import balance_report, estimate_pairwise, naive_differences
from smatch.errors import InputError, NumericError, SmatchError
from smatch.matching import MatchSpec, match_units
from smatch.ratio_estim import BasisConfig, ratio_score_model
from smatch.scores import (
    MultinomialLogitModel,
    PriorWeights,
    constant_scores,
    eval_polynomial,
    fit_multinomial_logit,
    score_table,
)

TRUE_ATE_DRAWS = 1_000_000
MAX_FAILED_FRACTION = 0.10

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class SimulationScenario:
    """Covariates from a Gaussian mixture, treatment from a multinomial logit,
    outcomes ``mu_t(x) = a_t + b_t'x + P_t(x)`` plus N(0, noise_sd^2) noise.

    ``assignment`` is ``k x (p+1)`` with the intercept first. ``polynomials``
    holds optional extra terms per arm as ``{exponent tuple: coefficient}``.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    assignment: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray
    noise_sd: float = 1.0
    polynomials: tuple = ()
    labels: tuple = ()
    seed: int = 0
    _chol: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        w = np.atleast_1d(np.array(self.weights, dtype=float))
        mu = np.atleast_2d(np.array(self.means, dtype=float))
        S = np.array(self.covs, dtype=float)
        if S.ndim == 2:
            S = S[None]
        B = np.atleast_2d(np.array(self.assignment, dtype=float))
        a = np.atleast_1d(np.array(self.intercepts, dtype=float))
        b = np.atleast_2d(np.array(self.slopes, dtype=float))
        m, p = mu.shape
        k = B.shape[0]
        if w.shape != (m,) or S.shape != (m, p, p):
            raise InputError("mixture weights, means and covariances disagree in shape")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError("mixture weights must be nonnegative and sum to 1")
        if k < 2 or B.shape[1] != p + 1:
            raise InputError(f"assignment matrix must be k x (p+1) with k >= 2; got {B.shape}")
        if a.shape != (k,) or b.shape != (k, p):
            raise InputError("outcome intercepts/slopes must be k and k x p")
        if not self.noise_sd >= 0:
            raise InputError("noise_sd must be nonnegative")
        chol = np.empty_like(S)
        for c in range(m):
            if not np.allclose(S[c], S[c].T):
                raise InputError(f"mixture covariance {c} is not symmetric")
            try:
                chol[c] = np.linalg.cholesky(S[c])
            except np.linalg.LinAlgError:
                raise InputError(f"mixture covariance {c} is degenerate (not positive definite)") from None
        polys = tuple(dict((tuple(int(e) for e in ex), float(cf)) for ex, cf in dict(pl).items()) for pl in self.polynomials)
        if polys and len(polys) != k:
            raise InputError("one polynomial (possibly empty) per arm required")
        labels = tuple(str(l) for l in self.labels) or tuple(f"t{i + 1}" for i in range(k))
        if len(labels) != k:
            raise InputError("one label per arm required")
        for name, val in (("weights", w), ("means", mu), ("covs", S), ("assignment", B), ("intercepts", a), ("slopes", b), ("_chol", chol)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "polynomials", polys)
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return self.assignment.shape[0]

    @property
    def p(self) -> int:
        return self.means.shape[1]

    @property
    def is_linear(self) -> bool:
        return not any(self.polynomials)

    def mean_x(self) -> np.ndarray:
        return self.weights @ self.means

    def outcome_means(self, X: np.ndarray) -> np.ndarray:
        """``(n, k)`` matrix of mu_t(x)."""
        X = np.atleast_2d(X)
        M = self.intercepts[None, :] + X @ self.slopes.T
        for t, poly in enumerate(self.polynomials):
            if poly:
                M[:, t] += eval_polynomial(poly, X)
        return M

    def posterior(self, X: np.ndarray) -> np.ndarray:
        Xt = np.hstack([np.ones((np.atleast_2d(X).shape[0], 1)), np.atleast_2d(X)])
        return np.exp(log_softmax(Xt @ self.assignment.T, axis=1))

    def sample_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        Z = rng.standard_normal((n, self.p))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], Z)

    def true_logit_model(self, priors: Optional[PriorWeights] = None) -> MultinomialLogitModel:
        return MultinomialLogitModel(
            coefficients=self.assignment,
            pivot=0,
            levels=self.labels,
            priors=priors if priors is not None else PriorWeights.equal(self.labels),
        )

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "covariates": {
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "covs": self.covs.tolist(),
            },
            "assignment": self.assignment.tolist(),
            "outcomes": {
                "intercepts": self.intercepts.tolist(),
                "slopes": self.slopes.tolist(),
                "polynomials": [
                    [{"exponents": list(ex), "coef": cf} for ex, cf in sorted(poly.items())] for poly in self.polynomials
                ],
                "noise_sd": self.noise_sd,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationScenario":
        try:
            cov = data["covariates"]
            out = data["outcomes"]
            polys = tuple(
                {tuple(term["exponents"]): float(term["coef"]) for term in arm} for arm in out.get("polynomials", [])
            )
            return cls(
                weights=cov["weights"],
                means=cov["means"],
                covs=cov["covs"],
                assignment=data["assignment"],
                intercepts=out["intercepts"],
                slopes=out["slopes"],
                noise_sd=float(out.get("noise_sd", 1.0)),
                polynomials=polys,
                labels=tuple(data.get("labels", ())),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed scenario: {exc!r}") from None

    @classmethod
    def from_json(cls, path) -> "SimulationScenario":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"scenario file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"scenario file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InputError("scenario JSON must be an object")
        return cls.from_dict(data)


def reference_scenario() -> SimulationScenario:
    """The confounded 3-arm, 2-covariate scenario with true effects 1, 1, 2."""
    text = resources.files("smatch").joinpath("scenarios/reference.json").read_text(encoding="utf-8")
    return SimulationScenario.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class PotentialOutcomes:
    """Every unit's response under every arm; for oracle code only."""

    ids: tuple
    table: np.ndarray
    treatment: np.ndarray


def generate(sc: SimulationScenario, n: int, seed: SeedLike = None):
    """Draw ``n`` i.i.d. units. Returns ``(Dataset, PotentialOutcomes)``.

    Only the received arm's response enters the Dataset.
    """
    if n < sc.k:
        raise InputError(f"n must be at least k={sc.k}")
    rng = _rng(sc.seed if seed is None else seed)
    X = sc.sample_x(n, rng)
    Q = sc.posterior(X)
    u = rng.random(n)
    t = np.minimum((np.cumsum(Q, axis=1) < u[:, None]).sum(axis=1), sc.k - 1)
    eps = rng.standard_normal((n, sc.k)) * sc.noise_sd
    table = sc.outcome_means(X) + eps
    width = len(str(n - 1))
    ids = tuple(f"u{i:0{width}d}" for i in range(n))
    if np.any(np.bincount(t, minlength=sc.k) == 0):
        raise InputError("a treatment arm received no units; increase n")
    d = Dataset.from_arrays(
        X,
        t.tolist(),
        responses=table[np.arange(n), t],
        ids=ids,
        levels=sc.labels,
        covariate_names=[f"x{j + 1}" for j in range(sc.p)],
    )
    table.setflags(write=False)
    return d, PotentialOutcomes(ids, table, t)


@dataclass(frozen=True)
class TrueEffect:
    value: float
    method: str
    mc_error: float = 0.0


def true_ate(sc: SimulationScenario, pair, draws: int = TRUE_ATE_DRAWS, seed: int = 12345) -> TrueEffect:
    """``E[r(a) - r(b)]``: closed form for linear outcomes, else a large covariate sample."""
    a, b = (_level_index(sc, t) for t in pair)
    if sc.is_linear:
        val = (sc.intercepts[a] - sc.intercepts[b]) + (sc.slopes[a] - sc.slopes[b]) @ sc.mean_x()
        return TrueEffect(float(val), "closed_form", 0.0)
    rng = np.random.default_rng(seed)
    diffs = []
    remaining = draws
    while remaining:
        m = min(remaining, 200_000)
        M = sc.outcome_means(sc.sample_x(m, rng))
        diffs.append(M[:, a] - M[:, b])
        remaining -= m
    diff = np.concatenate(diffs)
    return TrueEffect(float(diff.mean()), "monte_carlo", float(diff.std(ddof=1) / math.sqrt(diff.size)))


def _level_index(sc: SimulationScenario, ref) -> int:
    if hasattr(ref, "index") and hasattr(ref, "label"):
        ref = ref.label
    if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
        if 0 <= ref < sc.k:
            return int(ref)
        raise InputError(f"treatment index {ref} out of range")
    if str(ref) in sc.labels:
        return sc.labels.index(str(ref))
    raise InputError(f"unknown treatment {ref!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """Scoring and matching choices for one replication.

    ``model`` is ``glm`` (fitted logit), ``true`` (the scenario's own logit),
    ``ratio`` (fitted density ratios) or ``constant`` (a non-balancing
    negative control).
    """

    model: str = "glm"
    spec: MatchSpec = MatchSpec()
    standardize: bool = True
    ridge: float = 1e-6
    basis: BasisConfig = BasisConfig()
    balance: bool = False

    def __post_init__(self):
        if self.model not in ("glm", "true", "ratio", "constant"):
            raise InputError(f"unknown score model {self.model!r}")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "spec": self.spec.to_dict(),
            "standardize": self.standardize,
            "ridge": self.ridge,
        }


def pipeline_scores(sc: SimulationScenario, d: Dataset, cfg: PipelineConfig):
    pivot = d.level(cfg.spec.pivot)
    if cfg.model == "true":
        return score_table(sc.true_logit_model(PriorWeights.empirical(d)), d, pivot)
    if cfg.model == "constant":
        return constant_scores(d, pivot)
    work = standardize(d)[0] if cfg.standardize else d
    if cfg.model == "glm":
        return score_table(fit_multinomial_logit(work, pivot, ridge=cfg.ridge), work, pivot)
    return score_table(ratio_score_model(work, pivot, cfg.basis), work, pivot)


def run_once(sc: SimulationScenario, cfg: PipelineConfig, d: Dataset):
    """Score, match and estimate on one dataset; returns ``(estimates, result)``."""
    scores = pipeline_scores(sc, d, cfg)
    result = match_units(d, scores, cfg.spec)
    return estimate_pairwise(result, d), result


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple
    reps: int
    completed: int
    failed: int
    n: int
    seed: int
    config: dict
    balance: dict = field(default_factory=dict)
    failures: tuple = ()

    def row(self, a, b) -> dict:
        for r in self.rows:
            if (r["pair"][0], r["pair"][1]) == (str(a), str(b)):
                return r
        raise KeyError((a, b))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "reps": self.reps,
            "completed": self.completed,
            "failed": self.failed,
            "seed": self.seed,
            "config": self.config,
            "pairs": [_json_safe(r) for r in self.rows],
            "balance": _json_safe(self.balance),
            "failures": list(self.failures),
        }

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        cols = [
            "pair", "true_ate", "true_method", "mean_estimate", "bias", "sd", "mc_se",
            "naive_mean", "naive_bias", "naive_sd", "naive_mc_se", "reps",
        ]
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([f"{r['pair'][0]}-{r['pair'][1]}"] + [repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols[1:]])
        return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _moments(values: list):
    v = np.array(values, dtype=float)
    mean = math.fsum(values) / len(values)
    sd = float(np.std(v, ddof=1)) if len(values) > 1 else float("nan")
    return mean, sd, sd / math.sqrt(len(values)) if len(values) > 1 else float("nan")


def rep_seed(seed: int, rep: int) -> np.random.SeedSequence:
    """Independent substream for replication ``rep``; depends only on ``(seed, rep)``."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(rep,))


def run_experiment(sc: SimulationScenario, cfg: PipelineConfig, n: int, reps: int, seed: int) -> ExperimentReport:
    """Repeat generate -> score -> match -> estimate and compare with the truth.

    Failing replications are counted; more than 10% failures abort the run.
    """
    if reps < 1:
        raise InputError("reps must be at least 1")
    k = sc.k
    pairs = [(j, i) for i in range(k) for j in range(i + 1, k)]
    truth = {pr: true_ate(sc, pr) for pr in pairs}
    est = {pr: [] for pr in pairs}
    naive = {pr: [] for pr in pairs}
    bal_pre, bal_post = {}, {}
    failures = []
    for rep in range(reps):
        d, _ = generate(sc, n, np.random.default_rng(rep_seed(seed, rep)))
        try:
            estimates, result = run_once(sc, cfg, d)
            bal = balance_report(d, result) if cfg.balance else None
        except SmatchError as exc:
            failures.append((rep, str(exc)))
            continue
        for e in estimates:
            est[(e.pair[0].index, e.pair[1].index)].append(e.estimate)
        for (a, b), diff in naive_differences(d):
            naive[(a.index, b.index)].append(diff)
        if bal is not None:
            for name in d.covariate_names:
                bal_pre.setdefault(name, []).append(bal.max_abs("pre", name))
                bal_post.setdefault(name, []).append(bal.max_abs("post", name))
    if len(failures) > MAX_FAILED_FRACTION * reps:
        raise NumericError(f"{len(failures)} of {reps} replications failed; first error: {failures[0][1]}")
    rows = []
    for pr in pairs:
        tv = truth[pr]
        m, sd, se = _moments(est[pr])
        nm, nsd, nse = _moments(naive[pr])
        rows.append(
            {
                "pair": [sc.labels[pr[0]], sc.labels[pr[1]]],
                "true_ate": tv.value,
                "true_method": tv.method,
                "mean_estimate": m,
                "bias": m - tv.value,
                "sd": sd,
                "mc_se": se,
                "naive_mean": nm,
                "naive_bias": nm - tv.value,
                "naive_sd": nsd,
                "naive_mc_se": nse,
                "reps": len(est[pr]),
            }
        )
    balance = {
        name: {"pre_max_abs_smd": math.fsum(bal_pre[name]) / len(bal_pre[name]), "post_max_abs_smd": math.fsum(bal_post[name]) / len(bal_post[name])}
        for name in bal_pre
    }
    return ExperimentReport(
        rows=tuple(rows),
        reps=reps,
        completed=reps - len(failures),
        failed=len(failures),
        n=n,
        seed=seed,
        config=cfg.to_dict(),
        balance=balance,
        failures=tuple(failures),
    )


__all__ = [
    "ExperimentReport",
    "PipelineConfig",
    "PotentialOutcomes",
    "SimulationScenario",
    "TrueEffect",
    "generate",
    "pipeline_scores",
    "reference_scenario",
    "rep_seed",
    "run_experiment",
    "run_once",
    "true_ate",
]
