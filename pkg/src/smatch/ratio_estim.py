"""Direct density-ratio estimation by least-squares fitting on a kernel basis.

The ratio ``r(x) = p_num(x) / p_den(x)`` is modelled as
``sum_l alpha_l exp(-|x - c_l|^2 / (2 sigma^2))`` and ``alpha`` solves the
ridge system ``(H + lambda I) alpha = h`` where ``H`` is the denominator
mean of the basis outer products and ``h`` the numerator mean of the basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from smatch.dataset import Dataset, TreatmentId
from smatch.errors import InputError, NumericError
from smatch.scores import _resolve, transform_pivot_array

LOG_FLOOR = 1e-12
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class BasisConfig:
    max_centers: int = 100
    bandwidth_grid: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    ridge_grid: tuple = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bandwidth_grid", tuple(float(s) for s in self.bandwidth_grid))
        object.__setattr__(self, "ridge_grid", tuple(float(r) for r in self.ridge_grid))
        if not self.bandwidth_grid or not self.ridge_grid:
            raise InputError("bandwidth and ridge grids must be non-empty")
        if any(not s > 0 for s in self.bandwidth_grid):
            raise InputError("bandwidths must be positive")
        if any(not r >= 0 for r in self.ridge_grid):
            raise InputError("ridge values must be nonnegative")
        if self.max_centers < 1:
            raise InputError("max_centers must be at least 1")
        if self.folds < 2:
            raise InputError("folds must be at least 2")


@dataclass(frozen=True, eq=False)
class DensityRatioModel:
    centers: np.ndarray
    bandwidth: float
    coefficients: np.ndarray
    ridge: float
    numerator_arm: Optional[TreatmentId] = None
    denominator_arm: Optional[TreatmentId] = None
    raw_coefficients: Optional[np.ndarray] = field(default=None, repr=False)
    cv_scores: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.centers, dtype=float))
        a = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if C.shape[0] < 1:
            raise InputError("at least one center required")
        if a.shape[0] != C.shape[0]:
            raise InputError("one coefficient per center required")
        if not self.bandwidth > 0:
            raise InputError("bandwidth must be positive")
        if np.any(a < 0):
            raise InputError("coefficients must be nonnegative")
        object.__setattr__(self, "centers", C)
        object.__setattr__(self, "coefficients", a)

    @property
    def p(self) -> int:
        return self.centers.shape[1]

    def to_dict(self) -> dict:
        return {
            "numerator_arm": None if self.numerator_arm is None else self.numerator_arm.label,
            "denominator_arm": None if self.denominator_arm is None else self.denominator_arm.label,
            "bandwidth": self.bandwidth,
            "ridge": self.ridge,
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
        }


def kernel_design(X: np.ndarray, centers: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian basis matrix ``(n, m)``; an infinite bandwidth gives all ones."""
    X = np.atleast_2d(X)
    if math.isinf(bandwidth):
        return np.ones((X.shape[0], centers.shape[0]))
    sq = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * bandwidth**2))


def _solve(H: np.ndarray, h: np.ndarray, ridge: float) -> np.ndarray:
    A = H + ridge * np.eye(H.shape[0])
    if ridge == 0 and np.linalg.cond(A) > _COND_LIMIT:
        raise NumericError("density-ratio system is singular with ridge 0; use a positive ridge")
    try:
        return np.linalg.solve(A, h)
    except np.linalg.LinAlgError:
        raise NumericError("density-ratio system is singular; use a positive ridge") from None


def _as_sample(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise InputError("samples must be non-empty (n, p) arrays")
    return a


def fit_ratio(
    numerator_sample,
    denominator_sample,
    cfg: BasisConfig = BasisConfig(),
    numerator_arm: Optional[TreatmentId] = None,
    denominator_arm: Optional[TreatmentId] = None,
) -> DensityRatioModel:
    """Fit ``p_num / p_den`` from two samples.

    Centers are a seeded uniform subsample (without replacement) of the
    numerator sample. When either grid has more than one value, ``(sigma,
    lambda)`` minimizes the k-fold held-out squared-error criterion
    ``0.5 a'H_val a - h_val'a``; ties go to the lexicographically smallest
    pair. Negative coefficients are clamped to zero after the solve.
    """
    num = _as_sample(numerator_sample)
    den = _as_sample(denominator_sample)
    if num.shape[1] != den.shape[1]:
        raise InputError(f"dimension mismatch: numerator p={num.shape[1]}, denominator p={den.shape[1]}")
    rng = np.random.default_rng(cfg.seed)
    m = min(cfg.max_centers, num.shape[0])
    centers = num[np.sort(rng.choice(num.shape[0], size=m, replace=False))]

    candidates = sorted((s, r) for s in cfg.bandwidth_grid for r in cfg.ridge_grid)
    cv_scores = {}
    if len(candidates) > 1:
        folds = min(cfg.folds, num.shape[0], den.shape[0])
        if folds < 2:
            raise InputError("cross-validation needs at least 2 points in each sample")
        fold_num = rng.permutation(num.shape[0]) % folds
        fold_den = rng.permutation(den.shape[0]) % folds
        best = None
        for sigma in sorted(set(cfg.bandwidth_grid)):
            Pn = kernel_design(num, centers, sigma)
            Pd = kernel_design(den, centers, sigma)
            parts = []
            for f in range(folds):
                tn, vn = Pn[fold_num != f], Pn[fold_num == f]
                td, vd = Pd[fold_den != f], Pd[fold_den == f]
                parts.append((td.T @ td / td.shape[0], tn.mean(axis=0), vd.T @ vd / vd.shape[0], vn.mean(axis=0)))
            for ridge in sorted(set(cfg.ridge_grid)):
                total = 0.0
                try:
                    for H_tr, h_tr, H_va, h_va in parts:
                        a = np.maximum(_solve(H_tr, h_tr, ridge), 0.0)
                        total += 0.5 * a @ H_va @ a - h_va @ a
                except NumericError:
                    total = math.inf
                score = total / folds
                cv_scores[(sigma, ridge)] = score
                if best is None or score < best[0]:
                    best = (score, sigma, ridge)
        if not math.isfinite(best[0]):
            raise NumericError("every density-ratio candidate was singular; use a positive ridge")
        _, sigma, ridge = best
    else:
        sigma, ridge = candidates[0]

    Pn = kernel_design(num, centers, sigma)
    Pd = kernel_design(den, centers, sigma)
    H = Pd.T @ Pd / den.shape[0]
    h = Pn.mean(axis=0)
    raw = _solve(H, h, ridge)
    return DensityRatioModel(
        centers=centers,
        bandwidth=sigma,
        coefficients=np.maximum(raw, 0.0),
        ridge=ridge,
        numerator_arm=numerator_arm,
        denominator_arm=denominator_arm,
        raw_coefficients=raw,
        cv_scores=cv_scores,
    )


def predict_ratio(m: DensityRatioModel, x):
    """Evaluate the fitted ratio; a float for one point, an array for ``(n, p)``."""
    a = np.asarray(x, dtype=float)
    single = a.ndim <= 1
    X = a.reshape(1, -1) if single else a
    if m.p == 1 and single and a.ndim == 1 and a.shape[0] != 1:
        X = a[:, None]
        single = False
    if X.shape[1] != m.p:
        raise InputError(f"dimension mismatch: got {X.shape[1]}, model has {m.p}")
    out = kernel_design(X, m.centers, m.bandwidth) @ m.coefficients
    return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class RatioScoreModel:
    """One fitted ratio per non-pivot arm, all against the same pivot arm."""

    levels: tuple
    pivot: TreatmentId
    ratios: dict
    floor: float = LOG_FLOOR

    def scores(self, X: np.ndarray, pivot=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cols = []
        for lev in self.levels:
            if lev == self.pivot:
                continue
            cols.append(np.log(np.maximum(predict_ratio(self.ratios[lev.index], X), self.floor)))
        S = np.column_stack(cols)
        if pivot is not None:
            new = _resolve(self.levels, pivot)
            S = transform_pivot_array(S, self.pivot.index, new.index)
        return S

    def to_dict(self) -> dict:
        return {
            "pivot": self.pivot.label,
            "log_floor": self.floor,
            "ratios": [self.ratios[lev.index].to_dict() for lev in self.levels if lev != self.pivot],
        }


def ratio_score_model(d: Dataset, pivot=0, cfg: BasisConfig = BasisConfig()) -> RatioScoreModel:
    piv = d.level(pivot)
    den = d.covariates[d.arm_indices(piv)]
    if den.shape[0] == 0:
        raise InputError(f"treatment arm {piv.label!r} is empty")
    ratios = {}
    for lev in d.levels:
        if lev == piv:
            continue
        num = d.covariates[d.arm_indices(lev)]
        if num.shape[0] == 0:
            raise InputError(f"treatment arm {lev.label!r} is empty")
        ratios[lev.index] = fit_ratio(num, den, cfg, numerator_arm=lev, denominator_arm=piv)
    return RatioScoreModel(levels=d.levels, pivot=piv, ratios=ratios)


__all__ = [
    "BasisConfig",
    "DensityRatioModel",
    "LOG_FLOOR",
    "RatioScoreModel",
    "fit_ratio",
    "kernel_design",
    "predict_ratio",
    "ratio_score_model",
]
