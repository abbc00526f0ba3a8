"""Pairwise effect estimates, dose-response chains and balance diagnostics from matched groups."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from smatch.dataset import Dataset, TreatmentId
from smatch.errors import InputError
from smatch.matching import MatchingResult

REUSE_CAVEAT = (
    "matching with replacement reuses units; standard errors treat group differences as independent"
)
SMD_CONVENTION = "(mean of first arm in pair - mean of second) / sqrt((var_first + var_second) / 2), pre-match sample variances"


@dataclass(frozen=True)
class EffectEstimate:
    """Mean over matched groups of ``r(pair[0]) - r(pair[1])``.

    ``exact`` is that mean in rational arithmetic over the float responses;
    ``estimate`` is its correctly rounded float.
    """

    pair: tuple
    estimate: float
    std_error: float
    n_groups: int
    caveat: Optional[str] = None
    exact: Optional[Fraction] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "pair": [self.pair[0].label, self.pair[1].label],
            "estimate": self.estimate,
            "std_error": None if math.isnan(self.std_error) else self.std_error,
            "n_groups": self.n_groups,
            "caveat": self.caveat,
        }


def group_responses(result: MatchingResult, d: Dataset) -> np.ndarray:
    """``(n_groups, k)`` matrix of per-arm responses; 1:k matches are averaged."""
    if not result.groups:
        raise InputError("no matched groups to estimate from")
    anchor = result.spec.anchor_arm.index
    R = np.empty((len(result.groups), d.k))

    def resp(uid):
        r = d.responses[d.index_of(uid)]
        if math.isnan(r):
            raise InputError(f"unit {uid!r} has no observed response")
        return float(r)

    for g_i, g in enumerate(result.groups):
        R[g_i, anchor] = resp(g.anchor)
        for a, ms in g.matches.items():
            R[g_i, a] = math.fsum(resp(uid) for uid, _ in ms) / len(ms)
    return R


def exact_sum(values) -> Fraction:
    """Exact rational sum of floats, via a common power-of-two denominator."""
    ratios = [float(v).as_integer_ratio() for v in values]
    if not ratios:
        return Fraction(0)
    den = max(q for _, q in ratios)
    return Fraction(sum(p * (den // q) for p, q in ratios), den)


def _column_sums(R: np.ndarray) -> list:
    return [exact_sum(R[:, j].tolist()) for j in range(R.shape[1])]


def _estimate(R: np.ndarray, sums: list, a: TreatmentId, b: TreatmentId, caveat) -> EffectEstimate:
    # the mean of group differences equals the difference of exact column sums over n
    n = R.shape[0]
    exact = (sums[a.index] - sums[b.index]) / n
    diff = R[:, a.index] - R[:, b.index]
    se = float(np.std(diff, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return EffectEstimate((a, b), float(exact), se, n, caveat, exact)


def estimate_pair(result: MatchingResult, d: Dataset, a, b) -> EffectEstimate:
    a, b = d.level(a), d.level(b)
    caveat = REUSE_CAVEAT if result.spec.with_replacement else None
    R = group_responses(result, d)
    return _estimate(R, _column_sums(R), a, b, caveat)


def estimate_pairwise(result: MatchingResult, d: Dataset) -> list:
    """Estimates for every unordered pair, as ``(later level, earlier level)``.

    Each group contributes the difference of its arms' responses (the
    anchor's own response for the anchor arm); groups are equally weighted.
    """
    R = group_responses(result, d)
    sums = _column_sums(R)
    caveat = REUSE_CAVEAT if result.spec.with_replacement else None
    return [
        _estimate(R, sums, d.levels[j], d.levels[i], caveat)
        for i in range(d.k)
        for j in range(i + 1, d.k)
    ]


@dataclass(frozen=True)
class DoseResponseChain:
    levels: tuple
    steps: tuple

    def to_dict(self) -> dict:
        return {"levels": [l.label for l in self.levels], "steps": [s.to_dict() for s in self.steps]}


def dose_chain(result: MatchingResult, d: Dataset, dose_order: Sequence) -> DoseResponseChain:
    """Consecutive differences ``r(t_{i+1}) - r(t_i)`` along ``dose_order``."""
    order = tuple(d.level(t) for t in dose_order)
    if sorted(l.index for l in order) != list(range(d.k)):
        raise InputError("dose order must list every treatment level exactly once")
    R = group_responses(result, d)
    sums = _column_sums(R)
    caveat = REUSE_CAVEAT if result.spec.with_replacement else None
    steps = tuple(_estimate(R, sums, order[i + 1], order[i], caveat) for i in range(len(order) - 1))
    return DoseResponseChain(order, steps)


def effects_to_csv(estimates: Sequence[EffectEstimate], header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair", "estimate", "std_error", "n_groups"])
    for e in estimates:
        w.writerow([f"{e.pair[0].label}-{e.pair[1].label}", repr(e.estimate), repr(e.std_error), e.n_groups])
    return buf.getvalue()


@dataclass(frozen=True)
class BalanceReport:
    """Long-format SMD rows: ``(covariate, first arm, second arm, phase, smd)``.

    ``flagged`` lists rows whose SMD is non-finite because the pooled
    pre-match sd is zero while the means differ.
    """

    rows: tuple
    convention: str = SMD_CONVENTION
    flagged: tuple = field(default=())

    def values(self, phase: str, covariate: Optional[str] = None) -> np.ndarray:
        return np.array([r[4] for r in self.rows if r[3] == phase and (covariate is None or r[0] == covariate)])

    def max_abs(self, phase: str, covariate: Optional[str] = None) -> float:
        v = self.values(phase, covariate)
        return float(np.max(np.abs(v))) if v.size else float("nan")

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["covariate", "arm_pair", "phase", "smd"])
        for cov, a, b, phase, smd in self.rows:
            w.writerow([cov, f"{a}-{b}", phase, repr(smd)])
        return buf.getvalue()


def _smd(m1, m2, sd_pooled):
    if sd_pooled > 0:
        return (m1 - m2) / sd_pooled, False
    if m1 == m2:
        return 0.0, False
    return math.copysign(math.inf, m1 - m2), True


def balance_report(d: Dataset, result: MatchingResult) -> BalanceReport:
    """Standardized mean differences before and after matching.

    Post-match means use matched units with multiplicity (anchors once per
    group, each match once per occurrence). Both phases divide by the
    pre-match pooled sd.
    """
    if not result.groups:
        raise InputError("no matched groups")
    X = d.covariates
    anchor = result.spec.anchor_arm.index
    matched_rows = {lev.index: [] for lev in d.levels}
    for g in result.groups:
        matched_rows[anchor].append(d.index_of(g.anchor))
        for a, ms in g.matches.items():
            matched_rows[a].extend(d.index_of(uid) for uid, _ in ms)
    pre_mean, pre_var, post_mean = {}, {}, {}
    for lev in d.levels:
        arm = X[d.arm_indices(lev)]
        pre_mean[lev.index] = arm.mean(axis=0)
        pre_var[lev.index] = arm.var(axis=0, ddof=1) if arm.shape[0] > 1 else np.zeros(d.p)
        post_mean[lev.index] = X[np.array(matched_rows[lev.index], dtype=np.int64)].mean(axis=0)
    rows, flagged = [], []
    for c, name in enumerate(d.covariate_names):
        for i in range(d.k):
            for j in range(i + 1, d.k):
                a, b = d.levels[j], d.levels[i]
                sd = math.sqrt((pre_var[a.index][c] + pre_var[b.index][c]) / 2.0)
                for phase, means in (("pre", pre_mean), ("post", post_mean)):
                    smd, bad = _smd(float(means[a.index][c]), float(means[b.index][c]), sd)
                    rows.append((name, a.label, b.label, phase, smd))
                    if bad:
                        flagged.append((name, a.label, b.label, phase))
    return BalanceReport(tuple(rows), flagged=tuple(flagged))


def naive_differences(d: Dataset) -> list:
    """Unmatched arm-mean differences for every pair, ``(later, earlier)`` order."""
    means = []
    for lev in d.levels:
        r = d.responses[d.arm_indices(lev)]
        if np.any(np.isnan(r)):
            raise InputError(f"arm {lev.label!r} has missing responses")
        means.append(exact_sum(r.tolist()) / r.shape[0])
    return [((d.levels[j], d.levels[i]), float(means[j] - means[i])) for i in range(d.k) for j in range(i + 1, d.k)]


__all__ = [
    "BalanceReport",
    "DoseResponseChain",
    "EffectEstimate",
    "balance_report",
    "dose_chain",
    "effects_to_csv",
    "estimate_pair",
    "estimate_pairwise",
    "exact_sum",
    "group_responses",
    "naive_differences",
]
