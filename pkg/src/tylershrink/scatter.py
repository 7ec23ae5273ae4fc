"""Scatter matrix machinery and fixed point estimators for directional data.

The estimators in this module operate on unit norm samples and return
symmetric positive definite scatter matrices. Inverses are never formed
explicitly: every solve goes through a cached lower Cholesky factor, and
log determinants come from the factor diagonal.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dtrsm
from scipy.linalg.lapack import dpotrf

from .errors import ConvergenceError, NotPositiveDefiniteError

# Tolerance for the symmetry check on ScatterMatrix entries.
_SYM_TOL = 1e-12
# Rows of a UnitSampleSet must have norm 1 within this tolerance.
_UNIT_TOL = 1e-12
# Quadratic form floor; anything below signals severe ill conditioning.
_WEIGHT_FLOOR = 1e-12


class ScatterMatrix:
    """Symmetric positive definite matrix with a cached Cholesky factor.

    Parameters
    ----------
    entries : (p, p) array_like
        Symmetric matrix. Entry symmetry is checked on construction;
        positive definiteness is checked lazily when the factor is first
        needed.

    Notes
    -----
    The lower triangular factor is computed at most once and reused for
    every quadratic form and log determinant. Concurrent first access
    may duplicate the factorization but both threads store the same
    result, so reads never see a partial value.
    """

    __slots__ = ("entries", "_factor")

    def __init__(self, entries):
        entries = np.array(entries, dtype=float, order="C")
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"scatter matrix must be square, got shape {entries.shape}")
        if not np.isfinite(entries).all():
            raise ValueError("scatter matrix entries must be finite")
        gap = np.abs(entries - entries.T)
        if (gap > _SYM_TOL * np.maximum(1.0, np.abs(entries))).any():
            raise ValueError("scatter matrix entries are not symmetric")
        self.entries = entries
        self._factor = None

    @classmethod
    def identity(cls, p: int) -> "ScatterMatrix":
        return cls(np.eye(p))

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def factor(self) -> np.ndarray:
        """Lower Cholesky factor L with ``L @ L.T == entries``."""
        L = self._factor
        if L is None:
            c, info = dpotrf(self.entries, lower=1)
            if info != 0:
                raise NotPositiveDefiniteError(
                    f"matrix is not positive definite (dpotrf info={info})"
                )
            # dpotrf leaves the strict upper triangle untouched.
            L = np.tril(c)
            self._factor = L
        return L

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def logdet(self) -> float:
        """Log determinant from the factor diagonal, 2 * sum(log diag L)."""
        return 2.0 * float(np.log(np.diag(self.factor)).sum())

    def quad_forms(self, rows: np.ndarray) -> np.ndarray:
        """Quadratic forms x_i' S^{-1} x_i for each row x_i of ``rows``."""
        rows = np.ascontiguousarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != self.p:
            raise ValueError(f"rows must have shape (n, {self.p})")
        return _quad_forms(self.factor, rows)

    def __repr__(self):
        return f"ScatterMatrix(p={self.p}, trace={self.trace():.6g})"


def _quad_forms(L: np.ndarray, rows: np.ndarray) -> np.ndarray:
    # Right sided triangular solve: Z = rows @ L^{-T}, so each row of Z is
    # L^{-1} x_i and the squared row norms are the quadratic forms. The
    # right sided dtrsm is about twice as fast as the left sided solve on
    # row major sample blocks. The solve returns a Fortran ordered block;
    # the C ordered copy keeps the einsum reduction order identical to a
    # reduction over the input rows, so solving against L = I reproduces
    # the plain squared norms bit for bit.
    Z = np.ascontiguousarray(dtrsm(1.0, L, rows, side=1, lower=1, trans_a=1))
    return np.einsum("ij,ij->i", Z, Z)


def _chol_lower(S: np.ndarray) -> np.ndarray:
    c, info = dpotrf(S, lower=1)
    if info != 0:
        raise NotPositiveDefiniteError(
            f"iterate lost positive definiteness (dpotrf info={info})"
        )
    return c


@dataclass
class UnitSamples:
    """Sample rows constrained to the unit sphere.

    Attributes
    ----------
    rows : (n, p) ndarray
        Unit norm rows.
    dropped : int
        Number of zero norm rows removed during normalization.
    """

    rows: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("unit samples must be a nonempty (n, p) array")
        if not np.isfinite(rows).all():
            raise ValueError("unit samples must be finite")
        norms = np.linalg.norm(rows, axis=1)
        if (np.abs(norms - 1.0) > _UNIT_TOL).any():
            worst = float(np.abs(norms - 1.0).max())
            raise ValueError(f"rows are not unit norm (worst deviation {worst:.3g})")
        self.rows = rows

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


def normalize_samples(raw) -> UnitSamples:
    """Project raw sample rows onto the unit sphere.

    Parameters
    ----------
    raw : RawSamples or (n, p) array_like
        Rows to normalize. Zero norm rows are dropped and counted in the
        result. Synthetic sample sets carry their exactly factored
        directions z_i / ||z_i|| = v_i / ||v_i|| (the positive radial
        scale cancels algebraically); those are used directly, which
        avoids amplifying rounding noise from extreme radial scales.

    Raises
    ------
    ValueError
        If every row has zero norm, or the input is empty.
    """
    directions = getattr(raw, "directions", None)
    if directions is not None:
        return UnitSamples(np.array(directions, dtype=float), dropped=0)
    rows = np.ascontiguousarray(getattr(raw, "rows", raw), dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("samples must be a nonempty (n, p) array")
    norms = np.linalg.norm(rows, axis=1)
    # Rows this close to the origin carry no usable direction.
    keep = norms >= 1e-300
    if not keep.any():
        raise ValueError("all sample rows have zero norm; nothing to normalize")
    dropped = int((~keep).sum())
    rows = rows[keep] / norms[keep, None]
    return UnitSamples(rows, dropped=dropped)


def _unit_rows(X) -> np.ndarray:
    """Coerce UnitSamples or an array of unit rows to a validated ndarray."""
    if isinstance(X, UnitSamples):
        return X.rows
    return UnitSamples(np.asarray(X)).rows


# ---------------------------------------------------------------------------
# Losses and weights


def acg_nll(X, S) -> float:
    """Angular central Gaussian negative log likelihood, constants dropped.

    Computes ``(p/2) sum_i log(x_i' S^{-1} x_i / x_i' x_i) + (n/2) log det S``.
    Dividing each quadratic form by the sample's own squared norm evaluates
    the loss at the exact direction x_i / ||x_i||, so rounding in nominally
    unit inputs cannot leak into the spherical term; for S = I the loss is
    exactly zero.

    Parameters
    ----------
    X : UnitSamples or (n, p) array_like
        Unit norm sample rows.
    S : ScatterMatrix or (p, p) array_like
        Scatter matrix candidate.

    Returns
    -------
    float
    """
    rows = _unit_rows(X)
    if not isinstance(S, ScatterMatrix):
        S = ScatterMatrix(S)
    n, p = rows.shape
    if S.p != p:
        raise ValueError(f"dimension mismatch: samples have p={p}, matrix has p={S.p}")
    w = S.quad_forms(rows)
    sq = np.einsum("ij,ij->i", rows, rows)
    return float(0.5 * p * (np.log(w) - np.log(sq)).sum() + 0.5 * n * S.logdet())


def weights(X, S) -> np.ndarray:
    """Quadratic form weights x_i' S^{-1} x_i for every sample row.

    For unit norm rows the values lie in [1/lambda_max(S), 1/lambda_min(S)].
    """
    rows = _unit_rows(X)
    if not isinstance(S, ScatterMatrix):
        S = ScatterMatrix(S)
    return S.quad_forms(rows)


def fixed_point_residual(X, S, alpha: float, target=None) -> float:
    """Frobenius distance between S and one fixed point map application.

    For ``alpha > 0`` the map is the shrunk weighted second moment
    ``(1-alpha) (p/n) sum_i x_i x_i' / w_i + alpha T``. For ``alpha = 0``
    the unregularized map is defined only up to scale, so its output is
    rescaled to match ``trace(S)`` before taking the distance.
    """
    rows = _unit_rows(X)
    if not isinstance(S, ScatterMatrix):
        S = ScatterMatrix(S)
    n, p = rows.shape
    L = S.factor
    w = np.maximum(_quad_forms(L, rows), _WEIGHT_FLOOR)
    M = (rows / w[:, None]).T @ rows
    M = (0.5 * p / n) * (M + M.T)
    if alpha == 0.0:
        M *= S.trace() / np.trace(M)
    else:
        T = np.eye(p) if target is None else _target_entries(target, p)
        M *= 1.0 - alpha
        M += alpha * T
    return float(np.linalg.norm(M - S.entries))


def _target_entries(target, p: int) -> np.ndarray:
    if isinstance(target, ScatterMatrix):
        entries = target.entries
    else:
        entries = ScatterMatrix(target).entries
    if entries.shape[0] != p:
        raise ValueError(f"target has p={entries.shape[0]}, expected {p}")
    return entries


# ---------------------------------------------------------------------------
# Fit configuration and reports


@dataclass
class FitConfig:
    """Settings shared by the fixed point fits.

    Attributes
    ----------
    alpha : float
        Shrinkage coefficient in [0, 1]. 0 selects the unregularized
        estimator; when p >= n it must be strictly greater than 1 - n/p
        or the regularized fixed point does not exist.
    target : ScatterMatrix or None
        Shrinkage target, identity when None.
    tol : float
        Stop when the Frobenius norm of the iterate difference falls
        below this.
    max_iter : int
        Iteration cap. The step size contracts roughly like (1 - alpha)
        per iteration, so small alpha needs a high cap: reaching
        tol = 1e-9 takes about 21/alpha iterations.
    init : ScatterMatrix or None
        Starting iterate, identity when None.
    """

    alpha: float = 0.0
    target: ScatterMatrix | None = None
    tol: float = 1e-9
    max_iter: int = 2000
    init: ScatterMatrix | None = None

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (self.tol > 0.0):
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class FitReport:
    """Result of a fixed point fit."""

    estimate: ScatterMatrix
    iterations: int
    final_step: float
    fixed_point_residual: float
    wall_time_ns: int
    warnings: list = field(default_factory=list)
    step_history: np.ndarray = field(default_factory=lambda: np.empty(0))


class _CallCounter:
    """Correctly synchronized process wide invocation counter."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0

    def bump(self):
        with self._lock:
            self._value += 1

    @property
    def value(self) -> int:
        with self._lock:
            return self._value


_RFPI_CALLS = _CallCounter()


def rfpi_call_count() -> int:
    """Total regularized fixed point fits started in this process."""
    return _RFPI_CALLS.value


def _resolve_init(cfg: FitConfig, p: int) -> np.ndarray:
    if cfg.init is None:
        return np.eye(p)
    if cfg.init.p != p:
        raise ValueError(f"init has p={cfg.init.p}, expected {p}")
    cfg.init.factor  # fail fast if the starting point is not PD
    return cfg.init.entries.copy()


# ---------------------------------------------------------------------------
# Estimators


def tme_fit(X, cfg: FitConfig | None = None) -> FitReport:
    """Unregularized maximum likelihood scatter fit for directional data.

    Iterates the fixed point map ``S <- (p/n) sum_i x_i x_i' / (x_i' S^{-1} x_i)``
    with every iterate rescaled to trace p (the estimator is defined only
    up to scale). Requires strictly more samples than dimensions.

    Parameters
    ----------
    X : UnitSamples or (n, p) array_like
    cfg : FitConfig, optional
        ``alpha`` must be 0; ``target`` is unused.

    Returns
    -------
    FitReport

    Raises
    ------
    ValueError
        If n <= p, where the estimator does not exist.
    ConvergenceError
        If the step tolerance is not reached within ``max_iter``.
    """
    cfg = cfg or FitConfig()
    if cfg.alpha != 0.0:
        raise ValueError("tme_fit is the alpha=0 estimator; use rtme_fit for alpha > 0")
    rows = _unit_rows(X)
    n, p = rows.shape
    if n <= p:
        raise ValueError(f"estimator undefined for n <= p (n={n}, p={p})")
    warns = []
    if n == p + 1:
        warns.append(
            "n == p + 1: the fit may converge, but the convergence guarantee needs n > p + 1"
        )
    S = _resolve_init(cfg, p)
    tr0 = np.trace(S)
    if abs(tr0 - p) > 1e-9 * p:
        S = S * (p / tr0)
    scale = 0.5 * p / n
    clamped = False
    steps = []
    t0 = time.perf_counter_ns()
    for it in range(1, cfg.max_iter + 1):
        L = _chol_lower(S)
        w = _quad_forms(L, rows)
        if (w < _WEIGHT_FLOOR).any():
            clamped = True
            w = np.maximum(w, _WEIGHT_FLOOR)
        M = (rows / w[:, None]).T @ rows
        Snew = M + M.T
        Snew *= scale
        Snew *= p / np.trace(Snew)
        D = Snew - S
        step = float(np.sqrt((D * D).sum()))
        steps.append(step)
        S = Snew
        if step < cfg.tol:
            break
    else:
        raise ConvergenceError(
            f"no convergence in {cfg.max_iter} iterations (last step {step:.3e})",
            last_iterate=S,
            iterations=cfg.max_iter,
            final_step=step,
        )
    wall = time.perf_counter_ns() - t0
    if clamped:
        warns.append(
            f"quadratic forms clamped at {_WEIGHT_FLOOR:g}; data is severely ill conditioned"
        )
    est = ScatterMatrix(S)
    resid = fixed_point_residual(rows, est, 0.0)
    return FitReport(est, it, step, resid, wall, warns, np.asarray(steps))


def rtme_fit(X, cfg: FitConfig) -> FitReport:
    """Regularized scatter fit: shrink the weighted second moment toward a target.

    Iterates ``S <- (1-alpha) (p/n) sum_i x_i x_i' / (x_i' S^{-1} x_i) + alpha T``
    from ``cfg.init`` until the Frobenius step drops below ``cfg.tol``.
    No rescaling is applied: the regularized fixed point is unique, and
    at alpha = 1 the fit returns the target exactly.

    Raises
    ------
    ValueError
        If alpha is outside (0, 1], or p >= n and alpha <= 1 - n/p,
        where the regularized fixed point does not exist.
    ConvergenceError
        If the step tolerance is not reached within ``max_iter``.
    """
    if cfg is None or cfg.alpha <= 0.0:
        raise ValueError("rtme_fit needs alpha in (0, 1]; use tme_fit for alpha = 0")
    rows = _unit_rows(X)
    n, p = rows.shape
    alpha = float(cfg.alpha)
    if p >= n and alpha <= 1.0 - n / p:
        raise ValueError(
            f"alpha={alpha} inadmissible: with p={p} >= n={n} the fixed point "
            f"exists only for alpha strictly greater than {1.0 - n / p}"
        )
    T = np.eye(p) if cfg.target is None else _target_entries(cfg.target, p)
    S = _resolve_init(cfg, p)
    _RFPI_CALLS.bump()
    aT = alpha * T
    scale = 0.5 * (1.0 - alpha) * p / n
    clamped = False
    steps = []
    t0 = time.perf_counter_ns()
    for it in range(1, cfg.max_iter + 1):
        L = _chol_lower(S)
        w = _quad_forms(L, rows)
        if (w < _WEIGHT_FLOOR).any():
            clamped = True
            w = np.maximum(w, _WEIGHT_FLOOR)
        M = (rows / w[:, None]).T @ rows
        Snew = M + M.T
        Snew *= scale
        Snew += aT
        D = Snew - S
        step = float(np.sqrt((D * D).sum()))
        steps.append(step)
        S = Snew
        if step < cfg.tol:
            break
    else:
        raise ConvergenceError(
            f"no convergence in {cfg.max_iter} iterations at alpha={alpha} "
            f"(last step {step:.3e}); the contraction rate degrades like 1 - alpha",
            last_iterate=S,
            iterations=cfg.max_iter,
            final_step=step,
        )
    wall = time.perf_counter_ns() - t0
    warns = []
    if clamped:
        warns.append(
            f"quadratic forms clamped at {_WEIGHT_FLOOR:g}; data is severely ill conditioned"
        )
    est = ScatterMatrix(S)
    resid = fixed_point_residual(rows, est, alpha, cfg.target)
    return FitReport(est, it, step, resid, wall, warns, np.asarray(steps))
