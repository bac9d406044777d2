"""Ordinary-kriging digital twin of the coverage term.

The surrogate maps a deployment chromosome to a prediction of its coverage
deficit. It is trained offline on true-simulator evaluations of randomly drawn
chromosomes and then queried by the genetic search instead of the simulator.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y
from threadpoolctl import threadpool_limits

from .fitness import CostEvaluator, cost_term
from .scenario import Scenario

logger = logging.getLogger(__name__)

FORMAT_NAME = "emsplan-surrogate"
FORMAT_VERSION = 1


class SurrogateError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# training data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingSet:
    X: np.ndarray  # (T, K) uint8 chromosomes, all distinct
    y: np.ndarray  # (T,) true coverage terms

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_walls(self) -> int:
        return self.X.shape[1]

    @property
    def phi(self) -> np.ndarray:
        """Total true cost of each training chromosome."""
        return self.y + self.X.sum(axis=1) / self.n_walls

    def to_dict(self) -> dict:
        return {
            "chromosomes": ["".join(map(str, row)) for row in self.X.tolist()],
            "phi_cov": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSet":
        X = np.array([[int(c) for c in s] for s in d["chromosomes"]], dtype=np.uint8)
        return cls(X, np.asarray(d["phi_cov"], dtype=float))


def _random_distinct(n_walls: int, n: int, rng: np.random.Generator) -> np.ndarray:
    space = 2**n_walls if n_walls < 63 else math.inf
    if n > space:
        raise ValueError(f"cannot draw {n} distinct chromosomes from 2^{n_walls} = {space}")
    if space <= 2**20 and n > space // 2:
        codes = rng.choice(int(space), size=n, replace=False)
        return ((codes[:, None] >> np.arange(n_walls)[::-1]) & 1).astype(np.uint8)
    seen: set[bytes] = set()
    rows = []
    while len(rows) < n:
        chi = rng.integers(0, 2, size=n_walls, dtype=np.uint8)
        key = chi.tobytes()
        if key not in seen:
            seen.add(key)
            rows.append(chi)
    return np.array(rows, dtype=np.uint8)


def generate_training_set(
    scenario: Scenario, n_samples: int, seed: int, evaluator: CostEvaluator | None = None
) -> TrainingSet:
    """Draw ``n_samples`` distinct uniform chromosomes and score them with the true simulator."""
    evaluator = evaluator or CostEvaluator(scenario)
    X = _random_distinct(scenario.n_walls, n_samples, np.random.default_rng(seed))
    return TrainingSet(X, evaluator.coverage_terms(X))


# ---------------------------------------------------------------------------
# correlation
# ---------------------------------------------------------------------------

def correlation(a, b, beta, gamma) -> float:
    """exp(-sum_k beta_k |a_k - b_k|^gamma_k)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), a.shape)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), a.shape)
    return float(np.exp(-np.sum(beta * np.abs(a - b) ** gamma)))


def correlation_matrix(A: np.ndarray, B: np.ndarray, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    expo = np.zeros((len(A), len(B)))
    for k in range(A.shape[1]):
        expo += beta[k] * np.abs(A[:, k, None] - B[None, :, k]) ** gamma[k]
    return np.exp(-expo)


def _factor(C: np.ndarray, nugget: float, max_nugget: float):
    """Cholesky of C + nugget*I, growing the nugget tenfold until it succeeds."""
    eye = np.eye(len(C))
    while nugget <= max_nugget * (1 + 1e-9):
        try:
            return cho_factor(C + nugget * eye, lower=True), nugget
        except LinAlgError:
            nugget *= 10.0
    raise SurrogateError(f"correlation matrix not positive definite with nugget <= {max_nugget:g}")


def _raw_factor(C: np.ndarray, nugget: float, max_nugget: float):
    """Same nugget schedule as _factor, on bare LAPACK; lower factor with a zeroed upper part, or None."""
    diag = np.diag(C).copy()
    idx = np.diag_indices_from(C)
    while nugget <= max_nugget * (1 + 1e-9):
        C[idx] = diag + nugget
        chol, info = dpotrf(C, lower=1, clean=1)
        if info == 0:
            C[idx] = diag
            return chol
        nugget *= 10.0
    C[idx] = diag
    return None


class _Distances:
    """Per-input distance terms D_j = |x_aj - x_bj|^gamma used by the likelihood.

    For 0/1 inputs D_j = x_a + x_b - 2 x_a x_b, so both the weighted sum and the
    gradient contractions reduce to matrix products and nothing is cached.
    """

    def __init__(self, X: np.ndarray, gamma: float):
        self.X = X
        self.binary = bool(np.all((X == 0) | (X == 1)))
        if not self.binary:
            self.D = [np.abs(X[:, j, None] - X[None, :, j]) ** gamma for j in range(X.shape[1])]

    def weighted(self, beta: np.ndarray) -> np.ndarray:
        """sum_j beta_j D_j"""
        if not self.binary:
            return sum(b * d for b, d in zip(beta, self.D))
        s = self.X @ beta
        out = s[:, None] + s[None, :] - 2.0 * (self.X * beta) @ self.X.T
        np.fill_diagonal(out, 0.0)
        return np.maximum(out, 0.0)

    def contract(self, M: np.ndarray) -> np.ndarray:
        """sum_ab M_ab D_j,ab for every j."""
        if not self.binary:
            return np.array([float(np.sum(M * d)) for d in self.D])
        X = self.X
        return (M.sum(axis=1) + M.sum(axis=0)) @ X - 2.0 * np.einsum("aj,aj->j", X, M @ X)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------

class KrigingRegressor(RegressorMixin, BaseEstimator):
    """Ordinary kriging with the anisotropic exponential correlation.

    Parameters
    ----------
    gamma : float
        Correlation exponent, shared by all inputs. Inert for 0/1 inputs.
    fit_gamma : bool
        Also estimate per-input exponents in [1, 2] by maximum likelihood.
    isotropic : {"auto", True, False}
        Use one shared ``beta``. ``"auto"`` does so when ``T < 10 K``.
    n_restarts : int
        Number of multi-start local searches of the likelihood.
    log_beta_bounds : tuple
        Search box for ``ln(beta)``.
    nugget, max_nugget : float
        Initial and maximum diagonal inflation of the correlation matrix.
    random_state : int
        Seed of the restart points.
    n_jobs : int or None
        Threads used for the restarts.
    """

    def __init__(
        self,
        gamma=2.0,
        fit_gamma=False,
        isotropic="auto",
        n_restarts=10,
        log_beta_bounds=(-6.0, 6.0),
        nugget=1e-12,
        max_nugget=1e-6,
        random_state=0,
        n_jobs=None,
    ):
        self.gamma = gamma
        self.fit_gamma = fit_gamma
        self.isotropic = isotropic
        self.n_restarts = n_restarts
        self.log_beta_bounds = log_beta_bounds
        self.nugget = nugget
        self.max_nugget = max_nugget
        self.random_state = random_state
        self.n_jobs = n_jobs

    # -- likelihood --------------------------------------------------------

    def _expand(self, theta: np.ndarray, n_features: int, iso: bool):
        nb = 1 if iso else n_features
        beta = np.exp(theta[:nb])
        if iso:
            beta = np.full(n_features, beta[0])
        if self.fit_gamma:
            gamma = theta[nb:]
        else:
            gamma = np.full(n_features, float(self.gamma))
        return beta, gamma

    def _solve(self, X, y, beta, gamma):
        C = correlation_matrix(X, X, beta, gamma)
        chol, nugget = _factor(C, self.nugget, self.max_nugget)
        ones = np.ones(len(y))
        ci_one = cho_solve(chol, ones)
        ci_y = cho_solve(chol, y)
        nu = float(ones @ ci_y) / float(ones @ ci_one)
        resid = y - nu
        alpha = cho_solve(chol, resid)
        sigma2 = float(resid @ alpha) / len(y)
        return chol, nugget, nu, alpha, sigma2

    def _neg_loglik(self, theta, X, y, iso):
        beta, gamma = self._expand(theta, X.shape[1], iso)
        try:
            chol, _, _, _, sigma2 = self._solve(X, y, beta, gamma)
        except SurrogateError:
            return 1e10
        if sigma2 <= 0:
            return 1e10
        # concentrated likelihood, process variance profiled out
        return 0.5 * len(y) * math.log(sigma2) + float(np.sum(np.log(np.diag(chol[0]))))

    def _nll_grad(self, theta, X, y, iso, dist):
        """Negative log-likelihood and its gradient in ln(beta) (exponents held fixed)."""
        n, k = X.shape
        beta, _ = self._expand(theta, k, iso)
        C = dist.weighted(beta)
        np.negative(C, out=C)
        np.exp(C, out=C)
        chol = _raw_factor(C, self.nugget, self.max_nugget)
        if chol is None:
            return 1e10, np.zeros_like(theta)
        ci_one = dpotrs(chol, np.ones(n), lower=1)[0]
        nu = float(ci_one @ y) / float(ci_one.sum())
        alpha = dpotrs(chol, y - nu, lower=1)[0]
        sigma2 = float((y - nu) @ alpha) / n
        if sigma2 <= 0:
            return 1e10, np.zeros_like(theta)
        nll = 0.5 * n * math.log(sigma2) + float(np.sum(np.log(np.diag(chol))))
        # d nll / d ln(beta_j) = 1/2 tr(C^-1 dC) - alpha' dC alpha / (2 sigma2),  dC = -beta_j D_j o C
        inv, info = dpotri(chol, lower=1, overwrite_c=1)
        if info != 0:
            return 1e10, np.zeros_like(theta)
        # only the lower triangle of inv is filled; D_j has a zero diagonal, so doubling it is exact
        M = np.multiply(inv, 2.0, out=inv)
        M -= np.outer(alpha / sigma2, alpha)
        M *= C
        g = -0.5 * beta * dist.contract(M)
        if iso:
            g = np.array([g.sum()])
        return nll, g

    # -- sklearn API -------------------------------------------------------

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if len(y) < 2:
            raise ValueError("kriging needs at least two training samples")
        n, k = X.shape
        iso = (n < 10 * k) if self.isotropic == "auto" else bool(self.isotropic)
        self.isotropic_ = iso
        self.X_train_ = X
        self.y_train_ = y
        self.n_features_in_ = k

        if np.ptp(y) == 0:
            # flat field: the predictor is the constant itself
            self.beta_ = np.ones(k)
            self.gamma_ = np.full(k, float(self.gamma))
            self.log_likelihood_ = math.nan
        else:
            self.beta_, self.gamma_, self.log_likelihood_ = self._mle(X, y, iso)

        chol, nugget, nu, alpha, sigma2 = self._solve(X, y, self.beta_, self.gamma_)
        self.chol_ = chol
        self.nugget_ = nugget
        self.nu_ = nu
        self.alpha_ = alpha
        self.sigma2_ = sigma2
        return self

    def _mle(self, X, y, iso):
        k = X.shape[1]
        lo, hi = self.log_beta_bounds
        nb = 1 if iso else k
        bounds = [(lo, hi)] * nb
        if self.fit_gamma:
            bounds += [(1.0, 2.0)] * k
        rng = np.random.default_rng(self.random_state)
        starts = []
        for _ in range(max(1, self.n_restarts)):
            th = rng.uniform(max(lo, -3.0), min(hi, 2.0), size=nb)
            if self.fit_gamma:
                th = np.concatenate([th, rng.uniform(1.0, 2.0, size=k)])
            starts.append(th)

        if self.fit_gamma:
            def local(th0):
                res = minimize(self._neg_loglik, th0, args=(X, y, iso), method="L-BFGS-B", bounds=bounds)
                return float(res.fun), res.x
        else:
            dist = _Distances(X, float(self.gamma))

            def local(th0):
                res = minimize(self._nll_grad, th0, args=(X, y, iso, dist), jac=True, method="L-BFGS-B", bounds=bounds)
                return float(res.fun), res.x

        # single-threaded BLAS keeps the search path identical whatever the thread budget
        with threadpool_limits(limits=1, user_api="blas"):
            if self.n_jobs and self.n_jobs > 1:
                with ThreadPoolExecutor(self.n_jobs) as pool:
                    results = list(pool.map(local, starts))
            else:
                results = [local(s) for s in starts]
        # ties resolved by restart order so the outcome never depends on scheduling
        best = min(range(len(results)), key=lambda i: (results[i][0], i))
        fun, theta = results[best]
        beta, gamma = self._expand(np.asarray(theta), k, iso)
        logger.debug("kriging MLE: nll=%.6g beta=%s", fun, beta)
        return beta, gamma, -fun

    def predict(self, X):
        check_is_fitted(self, "alpha_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        rho = correlation_matrix(X, self.X_train_, self.beta_, self.gamma_)
        return self.nu_ + rho @ self.alpha_

    # -- diagnostics -------------------------------------------------------

    def loo_residuals(self) -> np.ndarray:
        """Closed-form leave-one-out residuals (truth minus prediction) at fixed hyperparameters."""
        check_is_fitted(self, "alpha_")
        cinv = cho_solve(self.chol_, np.eye(len(self.y_train_)))
        return self.alpha_ / np.diag(cinv)

    def loo_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.loo_residuals() ** 2)))

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "alpha_")
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "isotropic": bool(self.isotropic_),
            "beta": self.beta_.tolist(),
            "gamma": self.gamma_.tolist(),
            "nu": self.nu_,
            "nugget": self.nugget_,
            "log_likelihood": None if math.isnan(self.log_likelihood_) else self.log_likelihood_,
            "X": self.X_train_.tolist(),
            "y": self.y_train_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KrigingRegressor":
        if d.get("format") != FORMAT_NAME:
            raise SurrogateError("not a surrogate model file")
        if d.get("version") != FORMAT_VERSION:
            raise SurrogateError(f"unsupported surrogate format version {d.get('version')}")
        params = dict(d["params"])
        params["log_beta_bounds"] = tuple(params["log_beta_bounds"])
        model = cls(**params)
        X = np.asarray(d["X"], dtype=float)
        y = np.asarray(d["y"], dtype=float)
        model.X_train_, model.y_train_ = X, y
        model.n_features_in_ = X.shape[1]
        model.isotropic_ = d["isotropic"]
        model.beta_ = np.asarray(d["beta"], dtype=float)
        model.gamma_ = np.asarray(d["gamma"], dtype=float)
        ll = d.get("log_likelihood")
        model.log_likelihood_ = math.nan if ll is None else ll
        # refactor at the stored nugget, never a smaller one
        model.nugget = d["nugget"]
        chol, nugget, nu, alpha, sigma2 = model._solve(X, y, model.beta_, model.gamma_)
        model.nugget = params["nugget"]
        model.chol_, model.nugget_, model.nu_, model.alpha_, model.sigma2_ = chol, nugget, nu, alpha, sigma2
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "KrigingRegressor":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit(training: TrainingSet, **params) -> KrigingRegressor:
    return KrigingRegressor(**params).fit(training.X, training.y)


def predict(model: KrigingRegressor, chi) -> float:
    """Predicted coverage term of one chromosome."""
    return float(model.predict(np.asarray(chi, dtype=float)[None])[0])


def predict_total(model: KrigingRegressor, chi) -> float:
    """Predicted coverage term plus the exact deployment cost."""
    return predict(model, chi) + cost_term(chi)


def predict_total_batch(model: KrigingRegressor, chromosomes: np.ndarray) -> np.ndarray:
    X = np.asarray(chromosomes)
    return model.predict(X.astype(float)) + X.sum(axis=1) / X.shape[1]
