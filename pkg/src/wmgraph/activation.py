"""GLM activation maps, thresholding and ROC scoring."""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_positive_int
from .exceptions import DegenerateROCError, DesignError, DomainError, NumericalError, ShapeError
from .phantom import BlockParadigm, block_regressor
from .volume_io import Mask, Volume3D, Volume4D

# Residual energy below (ZERO_RTOL * |y|)**2 counts as an exact fit.
ZERO_RTOL = 1e-10
FPR_GRID_POINTS = 1001


# -- design and GLM -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """``[regressor - mean(regressor), 1]`` with ``n_frames`` rows."""

    matrix: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.matrix, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] <= X.shape[1]:
            raise DesignError(f"design needs more rows than columns, got shape {X.shape}")
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise DesignError("design matrix is rank deficient")
        object.__setattr__(self, "matrix", X)
        object.__setattr__(self, "gram_inv", np.linalg.inv(X.T @ X))

    @classmethod
    def from_regressor(cls, regressor):
        x = np.asarray(regressor, dtype=np.float64).ravel()
        return cls(np.column_stack([x - x.mean(), np.ones_like(x)]))

    @classmethod
    def from_paradigm(cls, paradigm):
        """Design for a block paradigm using the unit-height boxcar.

        With this column the task coefficient of a phantom voxel equals
        ``amplitude * amplitude_scale``.
        """
        unit = BlockParadigm(paradigm.n_frames, paradigm.tr_seconds,
                             paradigm.block_on_frames, paradigm.block_off_frames, 1.0)
        return cls.from_regressor(block_regressor(unit))

    @property
    def n_frames(self):
        return self.matrix.shape[0]

    @property
    def dof(self):
        return self.n_frames - self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class GLMFit:
    """Per-voxel OLS results.  ``beta`` has shape ``(n_columns, n_voxels)``."""

    beta: np.ndarray
    rss: np.ndarray
    y_energy: np.ndarray
    design: DesignMatrix
    dims: tuple = None
    voxel_indices: np.ndarray = None
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)

    @property
    def dof(self):
        return self.design.dof

    @property
    def residual_variance(self):
        return self.rss / self.dof


def _series_matrix(series, mask):
    if isinstance(series, Volume4D):
        nt = series.n_frames
        flat = series.data.reshape(-1, nt, order="F")
        if mask is None:
            idx = np.arange(flat.shape[0])
        else:
            vox = mask.voxels if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
            if vox.shape != series.dims[:3]:
                raise ShapeError(f"mask {vox.shape} does not match series {series.dims[:3]}")
            idx = np.flatnonzero(vox.ravel(order="F"))
        return flat[idx].T, series.dims[:3], idx, series.voxel_size_mm
    Y = np.asarray(series, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2:
        raise ShapeError("series must be a Volume4D or an (n_frames, n_voxels) array")
    return Y, None, None, (1.0, 1.0, 1.0)


def glm_fit(series, design, mask=None):
    """Ordinary least squares of every voxel time course on ``design``.

    ``series`` is a :class:`Volume4D` (optionally restricted to ``mask``) or an
    array of shape ``(n_frames, n_voxels)``.
    """
    Y, dims, idx, vs = _series_matrix(series, mask)
    if Y.shape[0] != design.n_frames:
        raise ShapeError(f"series has {Y.shape[0]} frames, design has {design.n_frames}")
    X = design.matrix
    beta = design.gram_inv @ (X.T @ Y)
    resid = Y - X @ beta
    rss = np.einsum("tv,tv->v", resid, resid)
    energy = np.einsum("tv,tv->v", Y, Y)
    return GLMFit(beta, rss, energy, design, dims, idx, vs)


@dataclass(frozen=True, eq=False)
class TMap:
    """t statistics.  ``values`` is a volume when the fit came from one."""

    values: object
    dof: int
    mask: np.ndarray = None

    @property
    def array(self):
        return self.values.data if isinstance(self.values, Volume3D) else self.values

    def masked(self):
        a = self.array
        return a[self.mask] if self.mask is not None else np.asarray(a).ravel()


def t_statistics(fit, contrast=(1.0, 0.0)):
    """Flat t values ``c.beta / sqrt(s2 c (X'X)^-1 c)`` with exact-fit handling.

    Voxels fitted exactly (zero residual) get 0 when the contrast is zero and
    ``+inf``/``-inf`` otherwise.
    """
    c = np.asarray(contrast, dtype=np.float64)
    if c.shape != (fit.beta.shape[0],):
        raise ShapeError(f"contrast must have {fit.beta.shape[0]} entries")
    effect = c @ fit.beta
    var_factor = float(c @ fit.design.gram_inv @ c)
    exact = fit.rss <= (ZERO_RTOL**2) * fit.y_energy
    rms = np.sqrt(fit.y_energy / fit.design.n_frames)
    zero_effect = np.abs(effect) <= ZERO_RTOL * np.maximum(rms, np.finfo(float).tiny)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = effect / np.sqrt(fit.residual_variance * var_factor)
    t = np.where(exact, np.where(zero_effect, 0.0, np.copysign(np.inf, effect)), t)
    if np.any(np.isnan(t)):
        raise NumericalError("t statistic is NaN")
    return t


def t_map(fit, contrast=(1.0, 0.0)):
    """t-map of a GLM fit; voxels outside the analysis mask are set to 0."""
    t = t_statistics(fit, contrast)
    if fit.dims is None:
        return TMap(t, fit.dof)
    full = np.zeros(int(np.prod(fit.dims)))
    full[fit.voxel_indices] = t
    inside = np.zeros(full.size, dtype=bool)
    inside[fit.voxel_indices] = True
    return TMap(Volume3D(full.reshape(fit.dims, order="F"), fit.voxel_size_mm), fit.dof,
                inside.reshape(fit.dims, order="F"))


class GLMActivation(BaseEstimator, RegressorMixin):
    """Voxelwise GLM against one task regressor plus intercept.

    ``fit(X)`` takes ``X`` of shape ``(n_frames, n_voxels)``.

    Attributes
    ----------
    coef_ : ndarray of shape (2, n_voxels)
        Task and intercept coefficients.
    residual_variance_ : ndarray of shape (n_voxels,)
    tvalues_ : ndarray of shape (n_voxels,)
    dof_ : int
    """

    def __init__(self, regressor=None):
        self.regressor = regressor

    def fit(self, X, y=None):
        X = check_array(X)
        self.design_ = DesignMatrix.from_regressor(self.regressor)
        fit = glm_fit(X, self.design_)
        self.coef_ = fit.beta
        self.residual_variance_ = fit.residual_variance
        self.tvalues_ = t_statistics(fit)
        self.dof_ = fit.dof
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X=None):
        """Fitted time courses, shape ``(n_frames, n_voxels)``."""
        check_is_fitted(self, "coef_")
        return self.design_.matrix @ self.coef_


# -- p-values ---------------------------------------------------------------------


def _betacf(a, b, x, max_iter=500, eps=1e-15):
    """Continued fraction of the regularized incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < eps
        if done.all():
            return h
    raise NumericalError("incomplete beta continued fraction did not converge")


def betainc_regularized(a, b, x, xc=None):
    """Regularized incomplete beta ``I_x(a, b)`` for array ``x`` in [0, 1].

    ``xc`` optionally supplies ``1 - x`` computed without cancellation; it
    keeps full relative precision when ``x`` is close to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    xc = 1.0 - x if xc is None else np.broadcast_to(np.asarray(xc, dtype=np.float64), x.shape)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("x must lie in [0, 1]")
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0) & (xc > 0)
    if not inner.any():
        return out
    xi, yi = x[inner], xc[inner]
    lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    front = np.exp(a * np.log(xi) + b * np.log(yi) - lbeta)
    direct = xi < (a + 1.0) / (a + b + 2.0)
    res = np.empty_like(xi)
    if direct.any():
        res[direct] = front[direct] * _betacf(a, b, xi[direct]) / a
    if (~direct).any():
        res[~direct] = 1.0 - front[~direct] * _betacf(b, a, yi[~direct]) / b
    out[inner] = res
    return out


def t_two_sided_pvalues(t, dof):
    """Two-sided p-values of Student t statistics with ``dof`` degrees of freedom."""
    t = np.asarray(t, dtype=np.float64)
    dof = float(dof)
    if dof <= 0:
        raise DomainError("dof must be positive")
    big = np.abs(t) > 1e150  # t * t would overflow; the p-value underflows to 0 anyway
    tt = np.where(big, 0.0, t)
    t2 = tt * tt
    x = np.where(big, 0.0, dof / (dof + t2))
    xc = np.where(big, 1.0, t2 / (dof + t2))
    return betainc_regularized(dof / 2.0, 0.5, x, xc)


# -- thresholding -------------------------------------------------------------------


def _tmap_mask(tmap, mask):
    a = np.asarray(tmap.array)
    if mask is not None:
        m = mask.voxels if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    elif tmap.mask is not None:
        m = tmap.mask
    else:
        m = np.ones(a.shape, dtype=bool)
    if m.shape != a.shape:
        raise ShapeError(f"mask shape {m.shape} differs from t-map shape {a.shape}")
    return a, m


def threshold_fixed(tmap, t0, mask=None):
    """Boolean map of mask voxels with ``t >= t0``."""
    a, m = _tmap_mask(tmap, mask)
    return m & (a >= t0)


def bh_reject(pvalues, q):
    """Benjamini-Hochberg step-up: reject the ``k`` smallest p-values, where
    ``k`` is the largest rank with ``p_(k) <= k q / m``."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    p = np.asarray(pvalues, dtype=np.float64).ravel()
    m = p.size
    out = np.zeros(m, dtype=bool)
    if m == 0:
        return out
    order = np.argsort(p, kind="stable")
    crit = q * np.arange(1, m + 1) / m
    passed = np.flatnonzero(p[order] <= crit)
    if passed.size:
        out[order[: passed[-1] + 1]] = True
    return out


def threshold_fdr(tmap, q=0.05, mask=None):
    """Boolean map of mask voxels surviving BH-FDR at level ``q`` (two-sided)."""
    a, m = _tmap_mask(tmap, mask)
    p = t_two_sided_pvalues(a[m], tmap.dof)
    out = np.zeros(a.shape, dtype=bool)
    out[m] = bh_reject(p, q)
    return out


# -- ROC --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray = None

    @property
    def auc(self):
        f, t = self.fpr, self.tpr
        return float(np.sum((f[1:] - f[:-1]) * (t[1:] + t[:-1]) * 0.5))


def _sweep_thresholds(finite_scores, n_thresholds):
    u = np.unique(finite_scores)[::-1]
    if u.size <= n_thresholds:
        return u
    # log-spaced ranks put more thresholds among the highest scores
    ranks = np.unique(np.round(np.geomspace(1, u.size, n_thresholds)).astype(np.int64)) - 1
    return u[ranks]


def roc_curve(scores, truth, n_thresholds=200, mask=None):
    """ROC of ``scores >= threshold`` against binary ``truth``.

    ``scores`` may be a :class:`TMap`, a volume or an array.  Only voxels in
    ``mask`` (or the t-map's analysis mask) are scored.  The sweep uses all
    distinct finite scores when there are at most ``n_thresholds`` of them,
    otherwise ``n_thresholds`` scores at log-spaced ranks, plus ``+inf`` when
    some scores are infinite; the endpoints (0, 0) and (1, 1) are always
    included.
    """
    n_thresholds = check_positive_int(n_thresholds, "n_thresholds")
    if isinstance(scores, TMap):
        s_all, m = _tmap_mask(scores, mask)
    else:
        s_all = scores.data if isinstance(scores, Volume3D) else np.asarray(scores, dtype=np.float64)
        m = np.ones(s_all.shape, bool) if mask is None else (
            mask.voxels if isinstance(mask, Mask) else np.asarray(mask, dtype=bool))
    t_all = truth.data > 0.5 if isinstance(truth, Volume3D) else np.asarray(truth, dtype=bool)
    if t_all.shape != s_all.shape or m.shape != s_all.shape:
        raise ShapeError("scores, truth and mask must share a shape")
    s, truth_m = np.asarray(s_all, dtype=np.float64)[m], t_all[m]
    if np.any(np.isnan(s)):
        raise NumericalError("scores contain NaN")
    n_pos = int(truth_m.sum())
    n_neg = truth_m.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateROCError("ground truth must contain both positives and negatives")

    order = np.argsort(-s, kind="stable")
    desc = s[order]
    cum_tp = np.concatenate([[0], np.cumsum(truth_m[order])])
    thr = _sweep_thresholds(s[np.isfinite(s)], n_thresholds)
    if np.any(np.isposinf(s)):
        # exact-fit voxels form their own first step above every finite score
        thr = np.concatenate([[np.inf], thr])
    counts = np.searchsorted(-desc, -thr, side="right")
    tp = cum_tp[counts]
    fp = counts - tp
    fpr = np.concatenate([[0.0], fp / n_neg, [1.0]])
    tpr = np.concatenate([[0.0], tp / n_pos, [1.0]])
    thresholds = np.concatenate([[np.inf], thr, [-np.inf]])
    return RocCurve(fpr, tpr, thresholds)


def average_roc(curves, n_grid=FPR_GRID_POINTS):
    """Mean TPR of several curves on a uniform FPR grid (linear interpolation).

    Where a curve has several points at the same FPR, the highest TPR is used.
    """
    curves = list(curves)
    if not curves:
        raise DomainError("need at least one ROC curve")
    grid = np.linspace(0.0, 1.0, n_grid)
    rows = []
    for c in curves:
        f, t = np.asarray(c.fpr), np.asarray(c.tpr)
        starts = np.flatnonzero(np.concatenate([[True], f[1:] != f[:-1]]))
        rows.append(np.interp(grid, f[starts], np.maximum.reduceat(t, starts)))
    mean_tpr = np.mean(rows, axis=0)
    return RocCurve(np.concatenate([[0.0], grid]), np.concatenate([[0.0], mean_tpr]))


def write_roc_csv(curve, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        fh.writelines(f"{float(f)!r},{float(t)!r}\n" for f, t in zip(curve.fpr, curve.tpr))
