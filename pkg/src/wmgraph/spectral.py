"""Heat-kernel filtering of graph signals.

Two routes compute ``K(L) f`` for the normalized Laplacian ``L`` and the
heat kernel ``K(lam) = exp(-tau * lam)``:

* :func:`exact_filter_apply` diagonalises ``L`` densely (small graphs only)
  and is used as a reference.
* :func:`cheb_filter_apply` evaluates a truncated Chebyshev expansion of the
  kernel on ``[0, lambda_max]`` through the three-term recurrence, needing
  only products with ``L``.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_positive, check_positive_int, check_signal
from .exceptions import ConsistencyError, DomainError, NumericalError, ShapeError, SizeLimitError
from .graph import laplacian_apply
from .volume_io import Mask, Volume4D

logger = logging.getLogger(__name__)

LAMBDA_MAX = 2.0
DEFAULT_ORDER = 50
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class HeatKernel:
    """Spectral profile ``exp(-tau * lam)``; ``tau = 0`` is the identity."""

    tau: float

    def __post_init__(self):
        object.__setattr__(self, "tau", check_positive(self.tau, "tau", allow_zero=True))

    def __call__(self, lam):
        return np.exp(-self.tau * np.asarray(lam, dtype=np.float64))


def heat_kernel_eval(tau, lam):
    """``exp(-tau * lam)`` for a single ``lam`` in ``[0, 2]``."""
    tau = check_positive(tau, "tau", allow_zero=True)
    if not 0.0 <= lam <= LAMBDA_MAX:
        raise DomainError(f"lambda must lie in [0, {LAMBDA_MAX}], got {lam}")
    return float(np.exp(-tau * lam))


@dataclass(frozen=True, eq=False)
class ChebApprox:
    """Truncated Chebyshev expansion on ``[0, lambda_max]``.

    The approximating polynomial is ``c[0]/2 + sum_{k>=1} c[k] T_k(x)`` with
    ``x = (lam - a) / a`` and ``a = lambda_max / 2``.
    """

    coefficients: np.ndarray
    lambda_max: float = LAMBDA_MAX
    kernel: object = field(default=None, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.ndim != 1 or c.size < 2:
            raise DomainError("need at least two coefficients (order >= 1)")
        if not np.all(np.isfinite(c)):
            raise NumericalError("Chebyshev coefficients are not finite")
        if not 0.0 < self.lambda_max <= LAMBDA_MAX:
            raise DomainError(f"lambda_max must lie in (0, {LAMBDA_MAX}], got {self.lambda_max}")
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self):
        return self.coefficients.size - 1

    def __call__(self, lam):
        """Evaluate the polynomial at spectral values ``lam``."""
        a = self.lambda_max / 2.0
        x = (np.asarray(lam, dtype=np.float64) - a) / a
        c = self.coefficients.copy()
        c[0] /= 2.0
        return np.polynomial.chebyshev.chebval(x, c)


def cheb_coefficients(kernel, order=DEFAULT_ORDER, lambda_max=LAMBDA_MAX, n_nodes=None):
    """Chebyshev coefficients of ``kernel`` by Gauss-Chebyshev quadrature.

    Parameters
    ----------
    kernel : callable
        Vectorised spectral profile, e.g. :class:`HeatKernel`.
    order : int
        Truncation order ``K``; ``K + 1`` coefficients are returned.
    lambda_max : float
        Upper end of the approximation interval.
    n_nodes : int, optional
        Quadrature nodes, default ``max(4 K, 200)``.
    """
    order = check_positive_int(order, "order")
    if not 0.0 < lambda_max <= LAMBDA_MAX:
        raise DomainError(f"lambda_max must lie in (0, {LAMBDA_MAX}], got {lambda_max}")
    m = max(4 * order, 200) if n_nodes is None else check_positive_int(n_nodes, "n_nodes", 4 * order)
    theta = np.pi * (np.arange(m) + 0.5) / m
    a = lambda_max / 2.0
    g = np.asarray(kernel(a * np.cos(theta) + a), dtype=np.float64)
    k = np.arange(order + 1)
    c = (2.0 / m) * (np.cos(np.outer(k, theta)) @ g)
    if not np.all(np.isfinite(c)):
        raise NumericalError("non-finite Chebyshev coefficient; kernel not finite on the interval")
    return ChebApprox(c, lambda_max, kernel)


@dataclass(frozen=True, eq=False)
class FilterResult:
    signal: np.ndarray
    kernel: object
    order: object
    graph_digest: str


def _cheb_recurrence(graph, approx, f):
    c = approx.coefficients
    a = approx.lambda_max / 2.0
    t_prev = f
    t_cur = (laplacian_apply(graph, f) - a * f) / a
    out = 0.5 * c[0] * t_prev + c[1] * t_cur
    for ck in c[2:]:
        t_next = (2.0 / a) * (laplacian_apply(graph, t_cur) - a * t_cur) - t_prev
        out += ck * t_next
        t_prev, t_cur = t_cur, t_next
    return out


def cheb_filter_apply(graph, approx, f):
    """Apply the Chebyshev approximation ``P(L)`` to ``f``.

    ``f`` has shape ``(n_vertices,)`` or ``(n_vertices, k)``.
    """
    f = check_signal(f, graph.n_vertices)
    out = _cheb_recurrence(graph, approx, f)
    return FilterResult(out, approx.kernel, approx.order, graph.digest())


def graph_spectrum(graph, dense_limit=DENSE_LIMIT):
    """Eigenvalues (ascending) and orthonormal eigenvectors of the dense Laplacian."""
    if graph.n_vertices > dense_limit:
        raise SizeLimitError(
            f"{graph.n_vertices} vertices exceed the dense limit of {dense_limit}; "
            "use cheb_filter_apply instead")
    lam, chi = np.linalg.eigh(graph.dense_laplacian())
    return lam, chi


def exact_filter_apply(graph, kernel, f, dense_limit=DENSE_LIMIT):
    """Filter ``f`` through a full eigendecomposition of the Laplacian."""
    f = check_signal(f, graph.n_vertices)
    lam, chi = graph_spectrum(graph, dense_limit)
    gain = kernel(np.clip(lam, 0.0, LAMBDA_MAX))
    f_hat = chi.T @ f
    scaled = gain * f_hat if f.ndim == 1 else gain[:, None] * f_hat
    return FilterResult(chi @ scaled, kernel, "exact", graph.digest())


def _check_series_layout(graph, vol4d, mask):
    vox = mask.voxels if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    if vox.shape != tuple(vol4d.dims[:3]) or tuple(graph.dims) != vox.shape:
        raise ConsistencyError(
            f"grid mismatch: series {vol4d.dims[:3]}, mask {vox.shape}, graph {tuple(graph.dims)}")
    inside = vox.ravel(order="F")[graph.vertex_indices]
    if not inside.all():
        raise ConsistencyError(f"{int((~inside).sum())} graph vertices lie outside the mask")


def filter_timeseries(graph, approx, vol4d, mask, threads=1):
    """Filter each frame of a 4D series on ``graph``.

    Voxels that are not graph vertices (outside the mask, or isolated at
    build time) are copied through unchanged.  Frames are split into
    ``threads`` contiguous chunks; the output does not depend on the split.
    """
    if not isinstance(vol4d, Volume4D):
        raise ShapeError("filter_timeseries expects a Volume4D")
    _check_series_layout(graph, vol4d, mask)
    nt = vol4d.n_frames
    flat = vol4d.data.reshape(-1, nt, order="F")
    signals = flat[graph.vertex_indices]
    threads = max(1, min(int(threads), nt))
    if threads == 1:
        filtered = _cheb_recurrence(graph, approx, signals)
    else:
        bounds = np.linspace(0, nt, threads + 1).astype(int)
        chunks = [signals[:, lo:hi] for lo, hi in itertools.pairwise(bounds)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: _cheb_recurrence(graph, approx, s), chunks))
        filtered = np.concatenate(parts, axis=1)
    out = flat.copy()
    out[graph.vertex_indices] = filtered
    return Volume4D(out.reshape(vol4d.dims, order="F"), vol4d.voxel_size_mm, vol4d.tr_seconds)


class GraphHeatFilter(BaseEstimator, TransformerMixin):
    """Heat-kernel smoothing of graph signals as a scikit-learn transformer.

    Rows of ``X`` are samples (e.g. fMRI frames) and columns are graph
    vertices.

    Parameters
    ----------
    graph : VoxelGraph
        Graph the signals live on.
    tau : float, default=1.4
        Heat-kernel scale; 0 disables smoothing.
    order : int, default=50
        Chebyshev truncation order.
    lambda_max : float, default=2.0
        Upper end of the spectral interval.
    method : {"chebyshev", "exact"}, default="chebyshev"
        ``"exact"`` uses a dense eigendecomposition and is limited to
        ``dense_limit`` vertices.
    dense_limit : int, default=2000

    Attributes
    ----------
    approx_ : ChebApprox
        Fitted expansion (``method="chebyshev"`` only).
    kernel_ : HeatKernel
    n_features_in_ : int
    """

    def __init__(self, graph=None, tau=1.4, order=DEFAULT_ORDER, lambda_max=LAMBDA_MAX,
                 method="chebyshev", dense_limit=DENSE_LIMIT):
        self.graph = graph
        self.tau = tau
        self.order = order
        self.lambda_max = lambda_max
        self.method = method
        self.dense_limit = dense_limit

    def fit(self, X=None, y=None):
        if self.graph is None:
            raise ValueError("GraphHeatFilter needs a graph")
        if self.method not in ("chebyshev", "exact"):
            raise ValueError(f"unknown method {self.method!r}")
        if X is not None:
            X = check_array(X)
            if X.shape[1] != self.graph.n_vertices:
                raise ShapeError(f"X has {X.shape[1]} features, graph has {self.graph.n_vertices} vertices")
        self.kernel_ = HeatKernel(self.tau)
        if self.method == "chebyshev":
            self.approx_ = cheb_coefficients(self.kernel_, self.order, self.lambda_max)
        self.n_features_in_ = self.graph.n_vertices
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if self.method == "exact":
            res = exact_filter_apply(self.graph, self.kernel_, X.T, self.dense_limit)
        else:
            res = cheb_filter_apply(self.graph, self.approx_, X.T)
        return res.signal.T
