"""Nearest-neighbour matching of units across treatment arms on score vectors."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from smatch.dataset import Dataset, TreatmentId
from smatch.errors import InputError, NumericError
from smatch.scores import ScoreTable

METRICS = ("log", "ratio")
SEARCHES = ("scan", "kdtree", "brute")
_CHUNK = 512


@dataclass(frozen=True)
class MatchSpec:
    """How to match.

    ``pivot`` and ``anchor_arm`` accept a level index, label or TreatmentId;
    they are resolved against the Dataset at match time. ``caliper`` bounds
    the Euclidean (not squared) score distance of every match in a group;
    a caliper of 0 admits exact score ties only.
    """

    pivot: object = 0
    anchor_arm: object = None
    neighbors_per_arm: int = 1
    with_replacement: bool = True
    caliper: Optional[float] = None
    metric: str = "log"

    def __post_init__(self):
        if int(self.neighbors_per_arm) != self.neighbors_per_arm or self.neighbors_per_arm < 1:
            raise InputError("neighbors_per_arm must be an integer >= 1")
        if self.caliper is not None and not self.caliper >= 0:
            raise InputError("caliper must be nonnegative")
        if self.metric not in METRICS:
            raise InputError(f"metric must be one of {METRICS}")

    def resolved(self, d: Dataset) -> "MatchSpec":
        piv = d.level(self.pivot)
        anchor = piv if self.anchor_arm is None else d.level(self.anchor_arm)
        return replace(self, pivot=piv, anchor_arm=anchor)

    def to_dict(self) -> dict:
        lab = lambda t: t.label if isinstance(t, TreatmentId) else t
        return {
            "pivot": lab(self.pivot),
            "anchor_arm": lab(self.anchor_arm),
            "neighbors_per_arm": self.neighbors_per_arm,
            "with_replacement": self.with_replacement,
            "caliper": self.caliper,
            "metric": self.metric,
        }


@dataclass(frozen=True)
class MatchedGroup:
    """An anchor and, per other arm (keyed by level index), ``(id, sq_distance)`` pairs."""

    anchor: str
    matches: dict

    def ids_for(self, arm: int) -> tuple:
        return tuple(uid for uid, _ in self.matches[arm])


@dataclass(frozen=True, eq=False)
class MatchingResult:
    groups: tuple
    unmatched: tuple
    spec: MatchSpec
    levels: tuple
    summary: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, MatchingResult):
            return NotImplemented
        return self.groups == other.groups and self.unmatched == other.unmatched

    __hash__ = None

    @property
    def anchor_arm(self) -> TreatmentId:
        return self.spec.anchor_arm

    @property
    def other_arms(self) -> tuple:
        return tuple(lev for lev in self.levels if lev != self.spec.anchor_arm)

    def to_dict(self) -> dict:
        lab = {lev.index: lev.label for lev in self.levels}
        return {
            "spec": self.spec.to_dict(),
            "levels": [lev.label for lev in self.levels],
            "groups": [
                {
                    "anchor": g.anchor,
                    "matches": {lab[a]: [[uid, dist] for uid, dist in g.matches[a]] for a in sorted(g.matches)},
                }
                for g in self.groups
            ],
            "unmatched": [[uid, reason] for uid, reason in self.unmatched],
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, data: dict, d: Optional[Dataset] = None) -> "MatchingResult":
        try:
            labels = data["levels"]
            levels = tuple(TreatmentId(i, str(l)) for i, l in enumerate(labels))
            if d is not None and tuple(l.label for l in d.levels) != tuple(labels):
                raise InputError(f"match file levels {labels} differ from dataset levels {[l.label for l in d.levels]}")
            idx = {lev.label: lev.index for lev in levels}
            s = data["spec"]
            spec = MatchSpec(
                pivot=levels[idx[s["pivot"]]],
                anchor_arm=levels[idx[s["anchor_arm"]]],
                neighbors_per_arm=int(s["neighbors_per_arm"]),
                with_replacement=bool(s["with_replacement"]),
                caliper=s["caliper"],
                metric=s["metric"],
            )
            groups = tuple(
                MatchedGroup(
                    anchor=str(g["anchor"]),
                    matches={idx[a]: tuple((str(u), float(dist)) for u, dist in ms) for a, ms in g["matches"].items()},
                )
                for g in data["groups"]
            )
            unmatched = tuple((str(u), str(r)) for u, r in data["unmatched"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed match file: {exc!r}") from None
        return cls(groups, unmatched, spec, levels, data.get("summary", {}))

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["anchor_id", "arm", "match_id", "distance"])
        lab = {lev.index: lev.label for lev in self.levels}
        for g in self.groups:
            for a in sorted(g.matches):
                for uid, dist in g.matches[a]:
                    w.writerow([g.anchor, lab[a], uid, repr(dist)])
        return buf.getvalue()


def _coords(values: np.ndarray, metric: str) -> np.ndarray:
    if metric == "log":
        return np.ascontiguousarray(values, dtype=float)
    with np.errstate(over="ignore"):
        out = np.exp(values)
    if not np.all(np.isfinite(out)):
        raise NumericError("ratio-scale scores overflow; use the log metric")
    return out


def _sq_dist(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances ``(len(A), len(C))``, summed coordinate by coordinate."""
    out = np.zeros((A.shape[0], C.shape[0]))
    for j in range(A.shape[1]):
        diff = A[:, j][:, None] - C[:, j][None, :]
        out += diff * diff
    return out


def _score_rows(scores, d: Dataset, pivot: TreatmentId) -> np.ndarray:
    if isinstance(scores, ScoreTable):
        table = scores
    elif isinstance(scores, Mapping):
        table = ScoreTable.from_vectors(scores)
    else:
        raise InputError("scores must be a ScoreTable or a mapping id -> ScoreVector")
    if tuple(l.label for l in table.levels) != tuple(l.label for l in d.levels):
        raise InputError("score levels do not match dataset levels")
    if table.pivot.index != pivot.index:
        table = table.transform(pivot.index)
    return table.rows_for(d.ids)


def _arm_pool(d: Dataset, arm: TreatmentId, coords: np.ndarray):
    """Candidate indices for ``arm`` sorted by unit id, with their coordinates."""
    idx = d.arm_indices(arm)
    order = sorted(range(len(idx)), key=lambda i: d.ids[idx[i]])
    idx = idx[np.array(order, dtype=np.int64)] if len(idx) else idx
    return idx, coords[idx]


def _knn_scan(A: np.ndarray, C: np.ndarray, k: int):
    """k nearest (by squared distance, then candidate position) for each row of A."""
    n = A.shape[0]
    kk = min(k, C.shape[0])
    nn = np.empty((n, kk), dtype=np.int64)
    dd = np.empty((n, kk))
    for s in range(0, n, _CHUNK):
        D = _sq_dist(A[s : s + _CHUNK], C)
        order = np.argsort(D, axis=1, kind="stable")[:, :kk]
        nn[s : s + _CHUNK] = order
        dd[s : s + _CHUNK] = np.take_along_axis(D, order, axis=1)
    return nn, dd


def _knn_kdtree(A: np.ndarray, C: np.ndarray, k: int):
    kk = min(k, C.shape[0])
    tree = cKDTree(C)
    dk, _ = tree.query(A, k=kk)
    dk = np.asarray(dk).reshape(A.shape[0], kk)
    nn = np.empty((A.shape[0], kk), dtype=np.int64)
    dd = np.empty((A.shape[0], kk))
    for i in range(A.shape[0]):
        r = dk[i, -1] * (1 + 1e-9) + 1e-300
        cand = np.array(sorted(tree.query_ball_point(A[i], r)), dtype=np.int64)
        D = _sq_dist(A[i : i + 1], C[cand])[0]
        order = np.argsort(D, kind="stable")[:kk]
        nn[i] = cand[order]
        dd[i] = D[order]
    return nn, dd


def _knn_brute(A: np.ndarray, C: np.ndarray, k: int):
    kk = min(k, C.shape[0])
    nn = np.empty((A.shape[0], kk), dtype=np.int64)
    dd = np.empty((A.shape[0], kk))
    for i, a in enumerate(A.tolist()):
        dists = []
        for j, c in enumerate(C.tolist()):
            s = 0.0
            for u, v in zip(a, c):
                s += (u - v) * (u - v)
            dists.append((s, j))
        dists.sort()
        nn[i] = [j for _, j in dists[:kk]]
        dd[i] = [s for s, _ in dists[:kk]]
    return nn, dd


_KNN = {"scan": _knn_scan, "kdtree": _knn_kdtree, "brute": _knn_brute}


def _summary(groups, levels, anchor: TreatmentId) -> dict:
    out = {}
    for lev in levels:
        if lev == anchor:
            continue
        counts = {}
        for g in groups:
            for uid, _ in g.matches[lev.index]:
                counts[uid] = counts.get(uid, 0) + 1
        out[lev.label] = {
            "matches": sum(counts.values()),
            "distinct_units": len(counts),
            "max_reuse": max(counts.values(), default=0),
        }
    return out


def match_units(d: Dataset, scores, spec: MatchSpec, search: str = "scan") -> MatchingResult:
    """Match every anchor-arm unit to its nearest units in each other arm.

    Distances are squared Euclidean in the chosen metric (log scores or
    their exponentials); ties go to the lexicographically smaller unit id.
    ``search`` picks the neighbour search for matching with replacement:
    a vectorized scan, a k-d tree, or a pure-Python brute force.
    Without replacement anchors are processed greedily in ascending order of
    their provisional group distance (sum over arms of the squared distance
    to the nearest candidate in the full pool), ties by anchor id.
    """
    if search not in SEARCHES:
        raise InputError(f"search must be one of {SEARCHES}")
    spec = spec.resolved(d)
    coords = _coords(_score_rows(scores, d, spec.pivot), spec.metric)
    anchors = d.arm_indices(spec.anchor_arm)
    if anchors.size == 0:
        raise InputError(f"anchor arm {spec.anchor_arm.label!r} is empty")
    anchors = np.array(sorted(anchors, key=lambda i: d.ids[i]), dtype=np.int64)
    A = coords[anchors]
    others = [lev for lev in d.levels if lev != spec.anchor_arm]
    pools = {lev.index: _arm_pool(d, lev, coords) for lev in others}
    k = spec.neighbors_per_arm
    cal2 = None if spec.caliper is None else spec.caliper**2

    groups, unmatched = [], []
    if spec.with_replacement:
        knn = _KNN[search]
        found = {a: knn(A, pools[a][1], k) for a in pools}
        for i, ai in enumerate(anchors):
            reason = None
            matches = {}
            for a, (idx, _) in pools.items():
                nn, dd = found[a]
                if nn.shape[1] < k:
                    reason = "pool exhausted"
                    break
                matches[a] = tuple((d.ids[idx[j]], float(dist)) for j, dist in zip(nn[i], dd[i]))
            if reason is None and cal2 is not None:
                if any(dist > cal2 for ms in matches.values() for _, dist in ms):
                    reason = "caliper"
            if reason is None:
                groups.append(MatchedGroup(d.ids[ai], matches))
            else:
                unmatched.append((d.ids[ai], reason))
    else:
        provisional = np.zeros(len(anchors))
        for idx, C in pools.values():
            if C.shape[0]:
                provisional += _knn_scan(A, C, 1)[1][:, 0]
        order = sorted(range(len(anchors)), key=lambda i: (provisional[i], d.ids[anchors[i]]))
        used = {a: np.zeros(len(idx), dtype=bool) for a, (idx, _) in pools.items()}
        for i in order:
            reason = None
            picks = {}
            for a, (idx, C) in pools.items():
                free = np.flatnonzero(~used[a])
                if free.size < k:
                    reason = "pool exhausted"
                    break
                D = _sq_dist(A[i : i + 1], C[free])[0]
                sel = np.argsort(D, kind="stable")[:k]
                picks[a] = (free[sel], D[sel])
            if reason is None and cal2 is not None:
                if any(np.any(dd > cal2) for _, dd in picks.values()):
                    reason = "caliper"
            if reason is None:
                matches = {}
                for a, (pos, dd) in picks.items():
                    used[a][pos] = True
                    idx = pools[a][0]
                    matches[a] = tuple((d.ids[idx[j]], float(x)) for j, x in zip(pos, dd))
                groups.append(MatchedGroup(d.ids[anchors[i]], matches))
            else:
                unmatched.append((d.ids[anchors[i]], reason))
        groups.sort(key=lambda g: g.anchor)
        unmatched.sort()
    return MatchingResult(
        groups=tuple(groups),
        unmatched=tuple(unmatched),
        spec=spec,
        levels=d.levels,
        summary=_summary(groups, d.levels, spec.anchor_arm),
    )


def brute_force_match(d: Dataset, scores, spec: MatchSpec) -> MatchingResult:
    """Exhaustive pure-Python scan; the oracle for matching with replacement."""
    if not spec.with_replacement:
        raise InputError("the brute-force oracle covers matching with replacement only")
    return match_units(d, scores, spec, search="brute")


ScoreProvider = Union[Callable[[TreatmentId], object], Mapping]


def match_all_pivots(d: Dataset, score_provider: ScoreProvider, spec: MatchSpec, search: str = "scan") -> list:
    """One MatchingResult per pivot arm, holding the anchor arm fixed.

    ``score_provider`` maps a pivot (TreatmentId) to scores for that pivot; a
    single ScoreTable is also accepted and re-pivoted exactly.
    """
    base = spec.resolved(d)
    out = []
    for lev in d.levels:
        if isinstance(score_provider, ScoreTable):
            scores = score_provider.transform(lev.index)
        elif callable(score_provider):
            scores = score_provider(lev)
        else:
            try:
                scores = score_provider[lev]
            except KeyError:
                scores = score_provider[lev.index]
        out.append((lev, match_units(d, scores, replace(base, pivot=lev), search=search)))
    return out


def matched_mean_distance(result: MatchingResult, d: Dataset, norm: str = "euclidean") -> float:
    """Distance between the anchor-arm covariate mean and the mean of all matched units."""
    if norm not in ("euclidean", "sup"):
        raise InputError("norm must be 'euclidean' or 'sup'")
    if not result.groups:
        return math.inf
    anchor_mean = d.covariates[d.arm_indices(result.spec.anchor_arm)].mean(axis=0)
    rows = [d.index_of(uid) for g in result.groups for a in sorted(g.matches) for uid, _ in g.matches[a]]
    diff = d.covariates[np.array(rows, dtype=np.int64)].mean(axis=0) - anchor_mean
    return float(np.max(np.abs(diff))) if norm == "sup" else float(np.sqrt(np.sum(diff**2)))


def select_best_pivot(results: Sequence, d: Dataset, norm: str = "euclidean"):
    """Pick the ``(pivot, result)`` whose matched units' covariate mean is nearest the anchors'."""
    if not results:
        raise InputError("no matching results to choose from")
    anchors = {r.spec.anchor_arm for _, r in results}
    if len(anchors) != 1:
        raise InputError("all results must share the anchor arm")
    best = None
    for pivot, res in sorted(results, key=lambda pr: pr[0].index):
        crit = matched_mean_distance(res, d, norm)
        if best is None or crit < best[0]:
            best = (crit, pivot, res)
    if not math.isfinite(best[0]):
        raise InputError("nothing matched")
    return best[1], best[2]


@dataclass(frozen=True, eq=False)
class PcaReduction:
    loadings: np.ndarray
    explained: np.ndarray
    center: np.ndarray
    dim: int

    @property
    def retained_fraction(self) -> float:
        return float(self.explained[: self.dim].sum())

    def transform(self, scores) -> np.ndarray:
        S = np.atleast_2d(np.asarray(scores, dtype=float))
        return (S - self.center) @ self.loadings[: self.dim].T


def reduce_scores_pca(scores, dim: Optional[int] = None, variance: Optional[float] = None):
    """Project centered scores on their leading principal components.

    Give either the retained dimension ``dim`` or a cumulative explained
    variance target ``variance`` in (0, 1]. Returns ``(PcaReduction,
    projected)``; component signs make each loading's largest-magnitude
    entry positive.
    """
    S = np.asarray(scores, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    n, q = S.shape
    if n < 2:
        raise InputError("PCA needs at least 2 score vectors")
    if (dim is None) == (variance is None):
        raise InputError("give exactly one of dim or variance")
    center = S.mean(axis=0)
    _, sv, Vt = np.linalg.svd(S - center, full_matrices=False)
    for i in range(Vt.shape[0]):
        j = np.argmax(np.abs(Vt[i]))
        if Vt[i, j] < 0:
            Vt[i] = -Vt[i]
    var = sv**2
    total = var.sum()
    explained = var / total if total > 0 else np.zeros_like(var)
    if dim is not None:
        if not 1 <= dim <= q:
            raise InputError(f"dim must be in 1..{q}")
        d = int(dim)
    else:
        if not 0 < variance <= 1:
            raise InputError("variance fraction must be in (0, 1]")
        cum = np.cumsum(explained)
        hits = np.flatnonzero(cum >= variance - 1e-12)
        d = int(hits[0]) + 1 if hits.size else len(explained)
    red = PcaReduction(loadings=Vt, explained=explained, center=center, dim=d)
    return red, red.transform(S)


__all__ = [
    "MatchSpec",
    "MatchedGroup",
    "MatchingResult",
    "PcaReduction",
    "brute_force_match",
    "match_all_pivots",
    "match_units",
    "matched_mean_distance",
    "reduce_scores_pca",
    "select_best_pivot",
]
