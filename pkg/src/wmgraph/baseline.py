"""Comparison filters: isotropic Gaussian smoothing and the uniform mask graph."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_dims, check_positive, check_voxel_size
from .exceptions import ShapeError
from .graph import NeighborhoodSpec, _assemble, _mask_array, _neighbor_table
from .volume_io import Volume3D, Volume4D

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
_DELTA_SIGMA_VOXELS = 1e-6


@dataclass(frozen=True)
class GaussianSpec:
    fwhm_mm: float
    truncation_radius_sigmas: float = 4.0

    def __post_init__(self):
        check_positive(self.fwhm_mm, "fwhm_mm")
        check_positive(self.truncation_radius_sigmas, "truncation_radius_sigmas")

    @property
    def sigma_mm(self):
        return self.fwhm_mm * FWHM_TO_SIGMA


def gaussian_kernel_1d(sigma_voxels, truncate=4.0):
    """Unit-sum sampled Gaussian on ``[-R, R]`` with ``R = ceil(truncate * sigma)``."""
    radius = math.ceil(truncate * sigma_voxels)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_voxels) ** 2)
    return k / k.sum()


def _smooth_array(data, sigmas, truncate):
    out = np.asarray(data, dtype=np.float64)
    for axis, sigma in enumerate(sigmas):
        if sigma < _DELTA_SIGMA_VOXELS:
            continue
        k = gaussian_kernel_1d(sigma, truncate)
        # weight of the in-volume part of the kernel at each position on this axis
        support = ndimage.correlate1d(np.ones(out.shape[axis]), k, mode="constant", cval=0.0)
        shape = [1] * out.ndim
        shape[axis] = -1
        out = ndimage.correlate1d(out, k, axis=axis, mode="constant", cval=0.0) / support.reshape(shape)
    return out


def gaussian_filter(vol, spec):
    """Isotropic Gaussian smoothing of a 3D volume or of every frame of a 4D one.

    The kernel is truncated at ``spec.truncation_radius_sigmas`` and, near the
    volume boundary, renormalised over the part that falls inside the volume,
    so constant volumes stay constant everywhere.
    """
    if isinstance(spec, (int, float)):
        spec = GaussianSpec(float(spec))
    sigmas = [spec.sigma_mm / s for s in vol.voxel_size_mm]
    data = _smooth_array(vol.data, sigmas, spec.truncation_radius_sigmas)
    if isinstance(vol, Volume4D):
        return Volume4D(data, vol.voxel_size_mm, vol.tr_seconds)
    return Volume3D(data, vol.voxel_size_mm)


def masked_uniform_graph(mask, spec=None):
    """Graph over mask voxels joining every 5x5x5 neighbour pair with weight 1.

    Heat-kernel filtering on this graph respects the mask boundary but ignores
    fibre orientation.  Voxels without any in-mask neighbour are dropped.
    """
    spec = spec or NeighborhoodSpec()
    vox = _mask_array(mask)
    flat, nb = _neighbor_table(vox, spec)
    rows, cols = np.nonzero(nb >= 0)
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], nb[rows[order], cols[order]]
    graph, _ = _assemble(flat, rows, cols, np.ones(rows.size), vox.shape, {"uniform": True})
    return graph


class GaussianSmoother(BaseEstimator, TransformerMixin):
    """Isotropic Gaussian smoothing of flattened volumes.

    Each row of ``X`` is one volume of shape ``dims`` flattened x-fastest
    (``order="F"``).

    Parameters
    ----------
    dims : tuple of 3 ints
    fwhm_mm : float, default=2.0
    voxel_size_mm : tuple of 3 floats, default=(1, 1, 1)
    truncate : float, default=4.0
    """

    def __init__(self, dims=None, fwhm_mm=2.0, voxel_size_mm=(1.0, 1.0, 1.0), truncate=4.0):
        self.dims = dims
        self.fwhm_mm = fwhm_mm
        self.voxel_size_mm = voxel_size_mm
        self.truncate = truncate

    def fit(self, X=None, y=None):
        self.dims_ = check_dims(self.dims, 3)
        self.spec_ = GaussianSpec(self.fwhm_mm, self.truncate)
        vs = check_voxel_size(self.voxel_size_mm)
        self.sigmas_ = [self.spec_.sigma_mm / s for s in vs]
        self.n_features_in_ = int(np.prod(self.dims_))
        if X is not None and check_array(X).shape[1] != self.n_features_in_:
            raise ShapeError(f"X must have {self.n_features_in_} columns")
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X must have {self.n_features_in_} columns, got {X.shape[1]}")
        vols = X.T.reshape(self.dims_ + (X.shape[0],), order="F")
        sm = _smooth_array(vols, self.sigmas_, self.truncate)
        return sm.reshape(-1, X.shape[0], order="F").T
