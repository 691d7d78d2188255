"""Soft-margin RBF support vector classifier trained with SMO.

Labels follow the false-alarm filter convention: ``+1`` is a false alarm and
``-1`` a real defect, so the calibrated probability reads as ``p_fa``.

The dual problem solved is::

    max_a  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t.   0 <= a_i <= C,  sum(a_i y_i) = 0

with ``K(a, b) = exp(-||a - b||^2 / (2 sigma^2))`` on z-scored features and
decision function ``f(x) = sum(a_i y_i K(x_i, x)) + b``.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

logger = logging.getLogger(__name__)

SV_THRESHOLD = 1e-12
PLATT_MAX_ITER = 100
PLATT_RIDGE = 1e-3


class ConvergenceWarning(UserWarning):
    pass


# -- kernel ------------------------------------------------------------------


def rbf_kernel(a, b, sigma):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    diff = a - b
    return math.exp(-float(diff @ diff) / (2.0 * sigma * sigma))


def rbf_gram(X, Y, sigma):
    """Kernel matrix ``K[i, j] = K(X[i], Y[j])``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d2 = cdist(np.atleast_2d(X), np.atleast_2d(Y), "sqeuclidean")
    return np.exp(-d2 / (2.0 * sigma * sigma))


def median_sigma(X, max_points=1000, seed=0):
    """Median pairwise distance among at most ``max_points`` rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) > max_points:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(len(X), size=max_points, replace=False))]
    d = pdist(X)
    d = d[d > 0]
    return float(np.median(d)) if len(d) else 1.0


# -- scaling -----------------------------------------------------------------


def fit_scaler(X):
    """Per-column mean and population std; zero-variance columns get std 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least 2 samples to fit the scaler")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def apply_scaler(stats, X):
    mean, std = stats
    return (np.asarray(X, dtype=np.float64) - mean) / std


# -- SMO ---------------------------------------------------------------------


def dual_objective(alpha, y, K):
    c = alpha * y
    return float(alpha.sum() - 0.5 * c @ K @ c)


def kkt_violations(K, y, alpha, b, C, tol):
    """Boolean array marking points that break the tol-relaxed KKT conditions."""
    yf = y * (K @ (alpha * y) + b)
    at_zero = alpha <= SV_THRESHOLD
    at_c = alpha >= C - SV_THRESHOLD * max(C, 1.0)
    free = ~at_zero & ~at_c
    return (
        (at_zero & (yf < 1 - tol))
        | (at_c & (yf > 1 + tol))
        | (free & (np.abs(yf - 1) > tol))
    )


class _SMO:
    """Platt's SMO with an error cache.

    Second-choice heuristic: maximize ``|E1 - E2|`` over non-bound points,
    then fall back to non-bound and finally all points, each scanned from a
    random start drawn from the run's generator.
    """

    eps = 1e-12

    def __init__(self, K, y, C, tol, rng):
        self.K = K
        self.y = y.astype(np.float64)
        self.C = float(C)
        self.tol = tol
        self.rng = rng
        self.n = len(y)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.E = -self.y.copy()  # f(x_i) - y_i with alpha = 0, b = 0

    def _nonbound(self):
        return np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))

    def take_step(self, i1, i2):
        if i1 == i2:
            return False
        K, C = self.K, self.C
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = self.y[i1], self.y[i2]
        E1, E2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if y1 != y2:
            L, H = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            L, H = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if L >= H:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            a2n = min(max(a2 + y2 * (E1 - E2) / eta, L), H)
        else:
            # Objective along the constraint line is linear; pick the better end.
            f1 = y1 * (E1 + y1) - a1 * k11 - s * a2 * k12
            f2 = y2 * (E2 + y2) - s * a1 * k12 - a2 * k22
            L1 = a1 + s * (a2 - L)
            H1 = a1 + s * (a2 - H)
            obj_l = L1 * f1 + L * f2 + 0.5 * L1 * L1 * k11 + 0.5 * L * L * k22 + s * L * L1 * k12
            obj_h = H1 * f1 + H * f2 + 0.5 * H1 * H1 * k11 + 0.5 * H * H * k22 + s * H * H1 * k12
            if obj_l < obj_h - self.eps:
                a2n = L
            elif obj_l > obj_h + self.eps:
                a2n = H
            else:
                a2n = a2
        # Snap to the box to keep bound membership exact.
        snap = SV_THRESHOLD * max(C, 1.0)
        if a2n < snap:
            a2n = 0.0
        elif a2n > C - snap:
            a2n = C
        if abs(a2n - a2) < self.eps * (a2n + a2 + self.eps):
            return False
        a1n = a1 + s * (a2 - a2n)
        if a1n < snap:
            a1n = 0.0
        elif a1n > C - snap:
            a1n = C

        d1, d2 = y1 * (a1n - a1), y2 * (a2n - a2)
        b1 = self.b - E1 - d1 * k11 - d2 * k12
        b2 = self.b - E2 - d1 * k12 - d2 * k22
        if 0 < a1n < C:
            bn = b1
        elif 0 < a2n < C:
            bn = b2
        else:
            bn = 0.5 * (b1 + b2)
        self.E += d1 * K[i1] + d2 * K[i2] + (bn - self.b)
        self.b = bn
        self.alpha[i1], self.alpha[i2] = a1n, a2n
        return True

    def examine(self, i2):
        y2, a2 = self.y[i2], self.alpha[i2]
        r2 = self.E[i2] * y2
        if not ((r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0)):
            return 0
        nonbound = self._nonbound()
        if len(nonbound) > 1:
            i1 = nonbound[np.argmax(np.abs(self.E[nonbound] - self.E[i2]))]
            if self.take_step(i1, i2):
                return 1
        if len(nonbound):
            start = int(self.rng.integers(len(nonbound)))
            for i1 in np.roll(nonbound, -start):
                if self.take_step(i1, i2):
                    return 1
        start = int(self.rng.integers(self.n))
        for i1 in np.roll(np.arange(self.n), -start):
            if self.take_step(i1, i2):
                return 1
        return 0

    def run(self, max_passes=10, max_iter=100_000):
        examine_all = True
        quiet_passes = 0
        for _ in range(max_iter):
            if examine_all:
                changed = sum(self.examine(i) for i in range(self.n))
                if changed == 0:
                    quiet_passes += 1
                    if quiet_passes >= max_passes:
                        return True
                else:
                    quiet_passes = 0
                    examine_all = False
            else:
                changed = sum(self.examine(i) for i in self._nonbound())
                if changed == 0:
                    examine_all = True
            # Resync the cache to stop rounding drift from accumulating.
            self.E = self.K @ (self.alpha * self.y) + self.b - self.y
        return False


def smo(K, y, C=1.0, tol=1e-3, max_passes=10, seed=0):
    """Solve the soft-margin dual for a precomputed kernel matrix.

    Returns ``(alpha, b)``. ``max_passes`` consecutive sweeps over all points
    without any update end the run.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    K = np.asarray(K, dtype=np.float64)
    solver = _SMO(K, np.asarray(y), C, tol, np.random.default_rng(seed))
    if not solver.run(max_passes=max_passes):
        logger.warning("SMO hit its iteration cap before converging")
    alpha, b = solver.alpha, solver.b
    if not np.any((alpha > 0) & (alpha < C)):
        b = _bias_midpoint(K, solver.y, alpha, C, b)
    return alpha, b


def _bias_midpoint(K, y, alpha, C, fallback):
    """Centre of the bias interval allowed by KKT when no multiplier is free.

    Without free multipliers the optimum only pins ``b`` to an interval; the
    midpoint makes the choice independent of the solver's path.
    """
    resid = y - K @ (alpha * y)
    at_zero = alpha <= 0
    lower = (y > 0) == at_zero
    lo = resid[lower].max() if lower.any() else -np.inf
    hi = resid[~lower].min() if (~lower).any() else np.inf
    if not lo <= hi:
        return fallback
    if np.isfinite(lo) and np.isfinite(hi):
        return float(0.5 * (lo + hi))
    return float(lo if np.isfinite(lo) else hi)


# -- calibration -------------------------------------------------------------


def _platt_loss(f, t, A, B):
    z = A * f + B
    # -(t log p + (1-t) log(1-p)) with p = 1 / (1 + exp(z)), written stably.
    return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                 (t - 1) * z + np.log1p(np.exp(-np.abs(z))))))


def fit_platt(f, y, ridge=PLATT_RIDGE, max_iter=PLATT_MAX_ITER):
    """Sigmoid calibration ``p = 1 / (1 + exp(A f + B))`` for label ``+1``.

    Minimizes the cross-entropy plus ``ridge / 2 * A**2`` with damped Newton
    steps. The ridge keeps ``A`` finite when the decision values separate the
    classes. Returns ``(A, B)``; falls back to ``(-1, 0)`` if the iteration
    does not converge.
    """
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int(np.sum(y > 0))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("calibration needs both classes")
    t = (y > 0).astype(np.float64)

    def objective(A, B):
        return _platt_loss(f, t, A, B) + 0.5 * ridge * A * A

    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = objective(A, B)
    for _ in range(max_iter):
        p = expit(-(A * f + B))
        d1 = t - p                 # dL/dz
        d2 = p * (1.0 - p)         # d2L/dz2
        gA = float(f @ d1) + ridge * A
        gB = float(d1.sum())
        if abs(gA) < 1e-7 and abs(gB) < 1e-7:
            return A, B
        hAA = float(f * f @ d2) + ridge + 1e-12
        hAB = float(f @ d2)
        hBB = float(d2.sum()) + 1e-12
        det = hAA * hBB - hAB * hAB
        dA = -(hBB * gA - hAB * gB) / det
        dB = -(-hAB * gA + hAA * gB) / det
        gd = gA * dA + gB * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nval = objective(nA, nB)
            if nval < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nval
                break
            step /= 2.0
        else:
            # No further decrease is representable; treat as converged.
            return A, B
    logger.warning("Platt calibration did not converge in %d iterations; using A=-1, B=0", max_iter)
    return -1.0, 0.0


def sigmoid_probability(f, A, B):
    return expit(-(A * np.asarray(f, dtype=np.float64) + B))


# -- estimator ---------------------------------------------------------------


class RBFSVC(ClassifierMixin, BaseEstimator):
    """Binary soft-margin SVM with a Gaussian kernel.

    Parameters
    ----------
    C : float
        Box constraint of the dual.
    sigma : float or "median"
        Kernel width in z-scored feature units. ``"median"`` uses the median
        pairwise distance of (up to 1000 subsampled) training points.
    tol : float
        KKT tolerance of the SMO solver.
    max_passes : int
        Consecutive update-free sweeps that end training.
    calibrate : bool
        Fit Platt calibration on the training decision values; otherwise the
        probability is ``expit(f)``.
    random_state : int
        Seed for the solver's random second-choice fallback and the median
        subsample.
    """

    def __init__(self, C=1.0, sigma="median", tol=1e-3, max_passes=10, calibrate=True, random_state=0):
        self.C = C
        self.sigma = sigma
        self.tol = tol
        self.max_passes = max_passes
        self.calibrate = calibrate
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        labels = np.unique(y)
        if len(labels) < 2:
            raise ValueError("training data contains a single class; both -1 and +1 are required")
        if not set(labels.tolist()) <= {-1, 1}:
            raise ValueError(f"labels must be -1 (defect) or +1 (false alarm), got {labels}")
        if not self.C > 0:
            raise ValueError("C must be positive")

        self.scale_mean_, self.scale_std_ = fit_scaler(X)
        Xs = apply_scaler((self.scale_mean_, self.scale_std_), X)
        if isinstance(self.sigma, str):
            if self.sigma != "median":
                raise ValueError(f"sigma must be a positive number or 'median', got {self.sigma!r}")
            self.sigma_ = median_sigma(Xs, seed=self.random_state)
        else:
            if not self.sigma > 0:
                raise ValueError("sigma must be positive")
            self.sigma_ = float(self.sigma)

        K = rbf_gram(Xs, Xs, self.sigma_)
        yy = y.astype(np.float64)
        alpha, b = smo(K, yy, self.C, self.tol, self.max_passes, self.random_state)
        sv = alpha > SV_THRESHOLD
        self.support_ = np.flatnonzero(sv)
        self.support_vectors_ = Xs[sv]
        self.dual_coef_ = alpha[sv] * yy[sv]
        self.intercept_ = float(b)
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        self.train_kkt_violations_ = int(kkt_violations(K, yy, alpha, b, self.C, self.tol).sum())

        if self.calibrate:
            f = K[:, sv] @ self.dual_coef_ + b
            self.platt_A_, self.platt_B_ = fit_platt(f, y)
        else:
            self.platt_A_, self.platt_B_ = -1.0, 0.0
        return self

    @classmethod
    def from_dual(cls, support_vectors, dual_coef, intercept, sigma, C, platt, scale_mean, scale_std):
        """Rebuild a fitted model from its dual-form parameters."""
        model = cls(C=C, sigma=sigma)
        model.support_vectors_ = np.asarray(support_vectors, dtype=np.float64)
        model.dual_coef_ = np.asarray(dual_coef, dtype=np.float64)
        model.intercept_ = float(intercept)
        model.sigma_ = float(sigma)
        model.platt_A_, model.platt_B_ = (float(v) for v in platt)
        model.scale_mean_ = np.asarray(scale_mean, dtype=np.float64)
        model.scale_std_ = np.asarray(scale_std, dtype=np.float64)
        if np.any(model.scale_std_ <= 0):
            raise ValueError("scaling std must be positive")
        if not model.sigma_ > 0:
            raise ValueError("sigma must be positive")
        model.classes_ = np.array([-1, 1])
        model.n_features_in_ = len(model.scale_mean_)
        model.support_ = np.arange(len(model.dual_coef_))
        return model

    def _scaled(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return apply_scaler((self.scale_mean_, self.scale_std_), X)

    def decision_function(self, X):
        Xs = self._scaled(X)
        if len(self.dual_coef_) == 0:
            return np.full(len(Xs), self.intercept_)
        return rbf_gram(Xs, self.support_vectors_, self.sigma_) @ self.dual_coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def false_alarm_probability(self, X):
        return sigmoid_probability(self.decision_function(X), self.platt_A_, self.platt_B_)

    def predict_proba(self, X):
        p = self.false_alarm_probability(X)
        return np.column_stack([1.0 - p, p])

    def dual_objective(self):
        """Dual objective value of the fitted solution."""
        check_is_fitted(self, "dual_coef_")
        K = rbf_gram(self.support_vectors_, self.support_vectors_, self.sigma_)
        c = self.dual_coef_
        return float(np.abs(c).sum() - 0.5 * c @ K @ c)
