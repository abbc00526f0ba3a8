"""Log likelihood-ratio score vectors and the models that produce them.

A score vector under pivot arm ``j`` holds, for every other arm ``i`` in
level order, ``log p(x|t_i) - log p(x|t_j)``. Three sources are supported:

* known arm densities (:class:`KnownDensityModel`),
* a multinomial-logit treatment posterior (:class:`MultinomialLogitModel`),
* directly estimated density ratios (see :mod:`smatch.ratio_estim`).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import expit, log_softmax
from scipy.stats import multivariate_normal

from smatch.dataset import Dataset, TreatmentId
from smatch.errors import InputError, NumericError

PFC_TIE_TOL = 1e-9


def _levels_from(labels_or_levels) -> tuple:
    out = []
    for i, lev in enumerate(labels_or_levels):
        out.append(lev if isinstance(lev, TreatmentId) else TreatmentId(i, str(lev)))
    return tuple(out)


def _resolve(levels: tuple, ref) -> TreatmentId:
    if isinstance(ref, TreatmentId):
        if ref.index < len(levels) and levels[ref.index] == ref:
            return ref
        raise InputError(f"treatment {ref} is not one of {[l.label for l in levels]}")
    if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
        if 0 <= ref < len(levels):
            return levels[int(ref)]
        raise InputError(f"treatment index {ref} out of range")
    for lev in levels:
        if lev.label == str(ref):
            return lev
    raise InputError(f"unknown treatment level {ref!r}")


def transform_pivot_array(values: np.ndarray, old: int, new: int) -> np.ndarray:
    """Re-pivot an ``(n, k-1)`` array of log scores from arm ``old`` to ``new``."""
    values = np.asarray(values, dtype=float)
    if old == new:
        return values.copy()
    n, km1 = values.shape
    full = np.insert(values, old, 0.0, axis=1)
    shifted = full - full[:, new : new + 1]
    return np.delete(shifted, new, axis=1)


@dataclass(frozen=True, eq=False)
class ScoreVector:
    pivot: TreatmentId
    log_values: np.ndarray
    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", _levels_from(self.levels))
        v = np.asarray(self.log_values, dtype=float).reshape(-1)
        if v.shape[0] != len(self.levels) - 1:
            raise InputError(f"score vector needs {len(self.levels) - 1} entries, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise NumericError("score vector has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "log_values", v)
        object.__setattr__(self, "pivot", _resolve(self.levels, self.pivot))

    @property
    def arms(self) -> tuple:
        """The non-pivot arms, in the order of ``log_values``."""
        return tuple(lev for lev in self.levels if lev != self.pivot)

    @property
    def ratios(self) -> np.ndarray:
        return np.exp(self.log_values)

    def full(self) -> np.ndarray:
        """Length-k log vector with 0 in the pivot slot."""
        return np.insert(self.log_values, self.pivot.index, 0.0)

    def __eq__(self, other):
        if not isinstance(other, ScoreVector):
            return NotImplemented
        return (
            self.pivot == other.pivot
            and self.levels == other.levels
            and np.array_equal(self.log_values, other.log_values)
        )

    __hash__ = None


def pivot_transform(sv: ScoreVector, new_pivot) -> ScoreVector:
    """Express ``sv`` against a different denominator arm.

    Exact log-space algebra: the entry for arm i becomes
    ``old(i) - old(new_pivot)`` with ``old(old_pivot) = 0``.
    """
    new = _resolve(sv.levels, new_pivot)
    if new == sv.pivot:
        return sv
    vals = transform_pivot_array(sv.log_values[None, :], sv.pivot.index, new.index)[0]
    return ScoreVector(new, vals, sv.levels)


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Score vectors for many units at once, rows aligned with ``ids``."""

    ids: tuple
    pivot: TreatmentId
    levels: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape != (len(self.ids), len(self.levels) - 1):
            raise InputError(
                f"score table shape {v.shape} does not match {len(self.ids)} ids x {len(self.levels) - 1} arms"
            )
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0][0])
            raise NumericError(f"non-finite score for unit {self.ids[bad]!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "levels", _levels_from(self.levels))
        object.__setattr__(self, "pivot", _resolve(self.levels, self.pivot))

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, ScoreVector]) -> "ScoreTable":
        if not vectors:
            raise InputError("no score vectors")
        first = next(iter(vectors.values()))
        for uid, sv in vectors.items():
            if sv.pivot != first.pivot or sv.levels != first.levels:
                raise InputError(f"score for {uid!r} uses a different pivot or level set")
        ids = tuple(vectors)
        return cls(ids, first.pivot, first.levels, np.array([vectors[i].log_values for i in ids]))

    @property
    def arms(self) -> tuple:
        return tuple(lev for lev in self.levels if lev != self.pivot)

    def vector(self, uid: str) -> ScoreVector:
        return ScoreVector(self.pivot, self.values[self.ids.index(uid)], self.levels)

    def rows_for(self, ids: Sequence[str]) -> np.ndarray:
        """Score rows in the order of ``ids``; raises if any id is missing."""
        pos = {u: i for i, u in enumerate(self.ids)}
        idx = []
        for u in ids:
            if u not in pos:
                raise InputError(f"missing score for unit {u!r}")
            idx.append(pos[u])
        return self.values[np.array(idx, dtype=np.int64)]

    def transform(self, new_pivot) -> "ScoreTable":
        new = _resolve(self.levels, new_pivot)
        return ScoreTable(self.ids, new, self.levels, transform_pivot_array(self.values, self.pivot.index, new.index))

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "pivot_label"] + [f"s_log_{i + 1}" for i in range(len(self.levels) - 1)])
        for uid, row in zip(self.ids, self.values):
            w.writerow([uid, self.pivot.label] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, levels: Sequence) -> "ScoreTable":
        levels = _levels_from(levels)
        lines = [line for line in io.StringIO(text) if not line.startswith("#")]
        rows = [r for r in csv.reader(lines) if r]
        if not rows or rows[0][:2] != ["id", "pivot_label"]:
            raise InputError("score file must start with columns id,pivot_label")
        if len(rows[0]) != 2 + len(levels) - 1:
            raise InputError(f"score file has {len(rows[0]) - 2} score columns; expected {len(levels) - 1}")
        data = rows[1:]
        if not data:
            raise InputError("score file has no rows")
        pivots = {r[1] for r in data}
        if len(pivots) != 1:
            raise InputError("score file mixes pivots")
        try:
            vals = np.array([[float(c) for c in r[2:]] for r in data], dtype=float)
        except ValueError as exc:
            raise InputError(f"score file: {exc}") from None
        return cls(tuple(r[0] for r in data), _resolve(levels, pivots.pop()), levels, vals)


# ---------------------------------------------------------------------------
# Known densities


Polynomial = Mapping[tuple, float]


def eval_polynomial(poly: Polynomial, X: np.ndarray) -> np.ndarray:
    """Evaluate ``sum coef * prod x_j**e_j`` over rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(X.shape[0])
    for expo, coef in poly.items():
        expo = tuple(expo)
        if len(expo) != X.shape[1]:
            raise InputError(f"monomial {expo} does not match dimension {X.shape[1]}")
        out += coef * np.prod(X ** np.asarray(expo, dtype=float), axis=1)
    return out


@dataclass(frozen=True, eq=False)
class KnownDensityModel:
    """Arm densities given in closed form.

    ``log_densities[t]`` maps an ``(n, p)`` array to ``n`` log-density values.
    ``domain`` is an optional list of ``(low, high)`` bounds per coordinate.
    """

    levels: tuple
    log_densities: tuple
    p: int
    domain: Optional[tuple] = None
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "levels", _levels_from(self.levels))
        if len(self.log_densities) != len(self.levels):
            raise InputError("one log-density per arm required")
        if len(self.levels) < 2:
            raise InputError("fewer than 2 treatment levels")

    @classmethod
    def normal(cls, means, covs, labels: Optional[Sequence[str]] = None) -> "KnownDensityModel":
        means = [np.atleast_1d(np.asarray(m, dtype=float)) for m in means]
        p = means[0].shape[0]
        covs = [float(c) * np.eye(p) if np.ndim(c) == 0 else np.atleast_2d(np.asarray(c, dtype=float)) for c in covs]
        dists = []
        for m, c in zip(means, covs):
            try:
                dists.append(multivariate_normal(mean=m, cov=c))
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise InputError(f"invalid normal arm: {exc}") from None
        fns = tuple((lambda X, d=d: np.atleast_1d(d.logpdf(X))) for d in dists)
        labels = labels or [f"t{i + 1}" for i in range(len(means))]
        return cls(
            labels,
            fns,
            p,
            description={"family": "normal", "means": [m.tolist() for m in means], "covs": [c.tolist() for c in covs]},
        )

    @classmethod
    def polynomial_family(
        cls,
        polys: Sequence[Polynomial],
        box: Sequence[tuple],
        log_h: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        labels: Optional[Sequence[str]] = None,
    ) -> "KnownDensityModel":
        """``p(x|t) = h(x) exp(P_t(x)) / Z_t`` restricted to a box, p <= 2.

        Normalizers are computed by adaptive quadrature over the box.
        """
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        p = len(box)
        if p not in (1, 2):
            raise InputError("polynomial family supports p = 1 or 2")
        if any(not hi > lo for lo, hi in box):
            raise InputError("box bounds must satisfy low < high")

        def log_h_(X):
            return np.zeros(np.atleast_2d(X).shape[0]) if log_h is None else np.asarray(log_h(np.atleast_2d(X)), dtype=float)

        log_z = []
        for poly in polys:
            def integrand(*coords, poly=poly):
                x = np.array([coords[::-1]]) if p == 2 else np.array([[coords[0]]])
                return float(np.exp(log_h_(x)[0] + eval_polynomial(poly, x)[0]))

            if p == 1:
                z, _ = integrate.quad(integrand, *box[0], epsabs=0, epsrel=1e-12, limit=200)
            else:
                # dblquad integrates func(y, x) with x outer
                z, _ = integrate.dblquad(integrand, box[0][0], box[0][1], box[1][0], box[1][1], epsabs=0, epsrel=1e-11)
            if not (z > 0 and math.isfinite(z)):
                raise NumericError("polynomial-family normalizer is not positive and finite")
            log_z.append(math.log(z))

        fns = tuple(
            (lambda X, poly=poly, lz=lz: log_h_(X) + eval_polynomial(poly, X) - lz) for poly, lz in zip(polys, log_z)
        )
        labels = labels or [f"t{i + 1}" for i in range(len(polys))]
        return cls(
            labels,
            fns,
            p,
            domain=box,
            description={"family": "polynomial", "log_normalizers": log_z},
        )

    def log_density_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise InputError(f"covariate dimension {X.shape[1]} != model dimension {self.p}")
        if self.domain is not None:
            lo = np.array([b[0] for b in self.domain])
            hi = np.array([b[1] for b in self.domain])
            outside = np.any((X < lo) | (X > hi), axis=1)
            if outside.any():
                raise InputError(f"point {X[np.argmax(outside)].tolist()} lies outside the model domain")
        L = np.column_stack([np.asarray(f(X), dtype=float).reshape(-1) for f in self.log_densities])
        bad = ~np.isfinite(L)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise NumericError(f"density of arm {self.levels[c].label!r} is zero or non-finite at {X[r].tolist()}")
        return L

    def scores(self, X: np.ndarray, pivot) -> np.ndarray:
        piv = _resolve(self.levels, pivot)
        L = self.log_density_matrix(X)
        return np.delete(L - L[:, piv.index : piv.index + 1], piv.index, axis=1)


def score_known(m: KnownDensityModel, x, pivot) -> ScoreVector:
    piv = _resolve(m.levels, pivot)
    return ScoreVector(piv, m.scores(np.atleast_2d(x), piv)[0], m.levels)


# ---------------------------------------------------------------------------
# Priors and the multinomial-logit posterior


@dataclass(frozen=True, eq=False)
class PriorWeights:
    probs: np.ndarray
    levels: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if p.shape[0] != len(self.levels):
            raise InputError("one prior weight per arm required")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InputError(f"prior weights must be nonnegative and sum to 1 (sum={p.sum()!r})")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "levels", _levels_from(self.levels))

    @classmethod
    def equal(cls, levels) -> "PriorWeights":
        k = len(levels)
        return cls(np.full(k, 1.0 / k), levels)

    @classmethod
    def empirical(cls, d: Dataset) -> "PriorWeights":
        counts = d.arm_sizes().astype(float)
        return cls(counts / counts.sum(), d.levels)

    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


def _augment(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([np.ones((X.shape[0], 1)), X])


def glm_scores(coef: np.ndarray, X: np.ndarray, pivot: int, log_priors: Optional[np.ndarray] = None) -> np.ndarray:
    """Rows ``(B_i - B_pivot) . [1, x] - log(pi_i / pi_pivot)`` for i != pivot."""
    coef = np.asarray(coef, dtype=float)
    Xt = _augment(X)
    if Xt.shape[1] != coef.shape[1]:
        raise InputError(f"covariate dimension {Xt.shape[1] - 1} != model dimension {coef.shape[1] - 1}")
    diff = np.delete(coef - coef[pivot], pivot, axis=0)
    out = Xt @ diff.T
    if log_priors is not None:
        lp = np.asarray(log_priors, dtype=float)
        out = out - np.delete(lp - lp[pivot], pivot)
    return out


@dataclass(frozen=True, eq=False)
class MultinomialLogitModel:
    """``q(t|x) = softmax(B [1, x])_t`` with the pivot row fixed at zero."""

    coefficients: np.ndarray
    pivot: TreatmentId
    levels: tuple
    priors: PriorWeights
    iterations: int = 0
    log_likelihood: float = float("nan")
    grad_norm: float = float("nan")
    ridge: float = 0.0

    def __post_init__(self):
        levels = _levels_from(self.levels)
        B = np.array(self.coefficients, dtype=float)
        if B.ndim != 2 or B.shape[0] != len(levels):
            raise InputError("coefficient matrix must be k x (p+1)")
        piv = _resolve(levels, self.pivot)
        if not np.all(np.isfinite(B)):
            raise NumericError("non-finite logit coefficients")
        B = B - B[piv.index]
        B.setflags(write=False)
        object.__setattr__(self, "coefficients", B)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "pivot", piv)

    @property
    def p(self) -> int:
        return self.coefficients.shape[1] - 1

    def posterior(self, X: np.ndarray) -> np.ndarray:
        """``(n, k)`` matrix of q(t|x)."""
        return np.exp(log_softmax(_augment(X) @ self.coefficients.T, axis=1))

    def scores(self, X: np.ndarray, pivot=None) -> np.ndarray:
        piv = self.pivot if pivot is None else _resolve(self.levels, pivot)
        return glm_scores(self.coefficients, X, piv.index, self.priors.log())


def glm_score(m: MultinomialLogitModel, x, pivot=None) -> ScoreVector:
    piv = m.pivot if pivot is None else _resolve(m.levels, pivot)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return ScoreVector(piv, m.scores(x, piv)[0], m.levels)


def logit_objective(theta: np.ndarray, X: np.ndarray, t: np.ndarray, pivot: int, ridge: float, k: int, hessian: bool = False):
    """Penalized mean negative log-likelihood over the non-pivot rows.

    ``theta`` has shape ``(k-1, p+1)``. Returns ``(value, gradient)`` or
    ``(value, gradient, hessian)`` with the Hessian over ``theta.ravel()``.
    """
    Xt = _augment(X)
    n, q = Xt.shape
    theta = np.asarray(theta, dtype=float).reshape(k - 1, q)
    B = np.insert(theta, pivot, 0.0, axis=0)
    logp = log_softmax(Xt @ B.T, axis=1)
    value = -logp[np.arange(n), t].mean() + 0.5 * ridge * np.sum(theta**2)
    P = np.exp(logp)
    Y = np.zeros_like(P)
    Y[np.arange(n), t] = 1.0
    G = (P - Y).T @ Xt / n
    grad = np.delete(G, pivot, axis=0) + ridge * theta
    if not hessian:
        return value, grad
    Pf = np.delete(P, pivot, axis=1)
    m = k - 1
    H = np.empty((m, q, m, q))
    for a in range(m):
        for b in range(a, m):
            w = Pf[:, a] * ((a == b) - Pf[:, b])
            blk = (Xt * w[:, None]).T @ Xt / n
            H[a, :, b, :] = blk
            H[b, :, a, :] = blk.T
    H = H.reshape(m * q, m * q) + ridge * np.eye(m * q)
    return value, grad, H


def fit_multinomial_logit(
    d: Dataset,
    pivot=0,
    ridge: float = 1e-6,
    tol: float = 1e-8,
    max_iter: int = 200,
    coef_bound: float = 1e4,
    priors: Optional[PriorWeights] = None,
) -> MultinomialLogitModel:
    """Damped Newton fit of the ridge-penalized multinomial logit of T on x.

    Starts from all-zero coefficients and stops when the gradient max-norm
    drops below ``tol``.
    """
    if ridge < 0:
        raise InputError("ridge must be nonnegative")
    piv = d.level(pivot)
    k, p = d.k, d.p
    X, t = d.covariates, d.treatment
    theta = np.zeros((k - 1, p + 1))
    value, grad, H = logit_objective(theta, X, t, piv.index, ridge, k, hessian=True)
    it = 0
    while np.max(np.abs(grad)) >= tol:
        if it >= max_iter:
            raise NumericError(
                f"multinomial logit did not converge in {max_iter} iterations "
                f"(gradient {np.max(np.abs(grad)):.3g}); try a larger ridge"
            )
        it += 1
        g = grad.ravel()
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        step = step.reshape(theta.shape)
        slope = float(g @ step.ravel())
        a = 1.0
        while True:
            cand = theta - a * step
            v_new, _ = logit_objective(cand, X, t, piv.index, ridge, k)
            if v_new <= value - 1e-4 * a * slope or a < 1e-10:
                break
            a *= 0.5
        theta = cand
        if np.max(np.abs(theta)) > coef_bound:
            raise NumericError(
                f"logit coefficients exceed {coef_bound:g}: the arms look separable; try a larger ridge"
            )
        value, grad, H = logit_objective(theta, X, t, piv.index, ridge, k, hessian=True)
    B = np.insert(theta, piv.index, 0.0, axis=0)
    loglik = -(value - 0.5 * ridge * np.sum(theta**2)) * d.n
    return MultinomialLogitModel(
        coefficients=B,
        pivot=piv,
        levels=d.levels,
        priors=priors if priors is not None else PriorWeights.empirical(d),
        iterations=it,
        log_likelihood=float(loglik),
        grad_norm=float(np.max(np.abs(grad))),
        ridge=ridge,
    )


def binary_propensity(sv: ScoreVector, priors: PriorWeights) -> float:
    """``e(x) = pi_1 / (pi_1 + pi_2 exp(log_value))`` for two arms, pivot t1."""
    if len(sv.levels) != 2:
        raise InputError("binary_propensity needs exactly 2 treatment levels")
    if sv.pivot.index != 0:
        raise InputError("binary_propensity needs the first arm as pivot")
    lp = priors.log()
    return float(expit(-(sv.log_values[0] + lp[1] - lp[0])))


# ---------------------------------------------------------------------------
# Sufficiency checks on a finite grid


@dataclass
class PfcResult:
    sufficient: bool
    coarsest: Optional[bool]
    sufficiency_violations: list
    coarseness_violations: list
    n_pairs: int

    @property
    def ok(self) -> bool:
        return self.sufficient and self.coarsest is not False


def check_pfc(
    q_table,
    s_values,
    tol: float = PFC_TIE_TOL,
    check_coarseness: bool = True,
    max_witnesses: int = 20,
) -> PfcResult:
    """Check posterior factorization (and optionally coarseness) on a grid.

    Sufficiency: every pair with equal scores has a t-free posterior ratio.
    Coarseness: every pair with a t-free posterior ratio has equal scores.
    Equality is absolute within ``tol``; ratios are compared in log scale.
    Witnesses are ``(i, j)`` grid index pairs, at most ``max_witnesses`` each.
    """
    Q = np.asarray(q_table, dtype=float)
    S = np.asarray(s_values, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if Q.ndim != 2 or S.shape[0] != Q.shape[0]:
        raise InputError("q_table and s_values must have one row per grid point")
    if np.any(~(Q > 0)):
        raise InputError("q_table rows must be strictly positive")
    sums = Q.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > max(tol, 1e-12)):
        raise InputError(f"q_table row {int(np.argmax(np.abs(sums - 1.0)))} does not sum to 1")
    logQ = np.log(Q)
    G = Q.shape[0]
    suff_v, coarse_v = [], []
    n_suff = n_coarse = 0
    for i in range(G - 1):
        ds = np.max(np.abs(S[i + 1 :] - S[i]), axis=1)
        lr = logQ[i] - logQ[i + 1 :]
        spread = lr.max(axis=1) - lr.min(axis=1)
        same_s = ds <= tol
        tfree = spread <= tol
        bad = np.flatnonzero(same_s & ~tfree)
        n_suff += bad.size
        suff_v.extend((i, i + 1 + int(j)) for j in bad[: max(0, max_witnesses - len(suff_v))])
        if check_coarseness:
            bad = np.flatnonzero(tfree & ~same_s)
            n_coarse += bad.size
            coarse_v.extend((i, i + 1 + int(j)) for j in bad[: max(0, max_witnesses - len(coarse_v))])
    return PfcResult(
        sufficient=n_suff == 0,
        coarsest=(n_coarse == 0) if check_coarseness else None,
        sufficiency_violations=suff_v,
        coarseness_violations=coarse_v,
        n_pairs=G * (G - 1) // 2,
    )


def score_table(model, d: Dataset, pivot) -> ScoreTable:
    """Evaluate any score model (``.scores(X, pivot)``) on every unit of ``d``."""
    levels = getattr(model, "levels", d.levels)
    if tuple(l.label for l in levels) != tuple(l.label for l in d.levels):
        raise InputError("score model levels do not match the dataset levels")
    piv = d.level(pivot)
    return ScoreTable(d.ids, piv, d.levels, model.scores(d.covariates, piv))


def constant_scores(d: Dataset, pivot) -> ScoreTable:
    """All-zero scores: a non-balancing negative control."""
    return ScoreTable(d.ids, d.level(pivot), d.levels, np.zeros((d.n, d.k - 1)))


__all__ = [
    "KnownDensityModel",
    "MultinomialLogitModel",
    "PfcResult",
    "PriorWeights",
    "ScoreTable",
    "ScoreVector",
    "binary_propensity",
    "check_pfc",
    "constant_scores",
    "eval_polynomial",
    "fit_multinomial_logit",
    "glm_score",
    "glm_scores",
    "logit_objective",
    "pivot_transform",
    "score_known",
    "score_table",
    "transform_pivot_array",
]
