"""Fully synthetic white-matter geometry: two crossing straight tracts.

Used for the end-to-end experiment when no real diffusion data is at hand.
Each tract is a box of voxels running along one grid axis; voxels in it get
an analytic ODF lobe along that axis, and voxels where the tracts overlap get
both lobes.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_dims, check_positive, check_positive_int
from .graph import neighborhood_directions
from .phantom import Grid
from .rng import CounterRNG
from .volume_io import Mask, ODFField, StreamlineSet


@dataclass(frozen=True, eq=False)
class SyntheticTracts:
    mask: Mask
    odf: ODFField
    streamlines: StreamlineSet
    grid: Grid


def lobe_odf(directions, axes, kappa=20.0, floor=0.05):
    """``floor + sum_a exp(-kappa * (1 - (u . a)^2))`` for unit directions ``u``."""
    d = np.asarray(directions, dtype=np.float64)
    out = np.full(d.shape[0], floor)
    for a in axes:
        a = np.asarray(a, dtype=np.float64)
        a = a / np.linalg.norm(a)
        out += np.exp(-kappa * (1.0 - (d @ a) ** 2))
    return out


def crossing_tracts(dims=(40, 40, 40), width=10, margin=2, kappa=20.0, floor=0.05,
                    streamlines_per_tract=150, seed=0, directions=None):
    """Two orthogonal tracts (along x and along y) crossing in the middle of the grid.

    Streamlines are straight lines along each tract's axis at seeded random
    positions inside its cross-section.
    """
    nx, ny, nz = check_dims(dims, 3)
    width = check_positive_int(width, "width")
    check_positive(kappa, "kappa")
    dirs = neighborhood_directions() if directions is None else np.asarray(directions, float)

    lo_y = (ny - width) // 2
    lo_x = (nx - width) // 2
    lo_z = (nz - width) // 2
    zs = slice(lo_z, lo_z + width)
    in_a = np.zeros(dims, dtype=bool)
    in_a[margin:nx - margin, lo_y:lo_y + width, zs] = True
    in_b = np.zeros(dims, dtype=bool)
    in_b[lo_x:lo_x + width, margin:ny - margin, zs] = True
    vox = in_a | in_b
    mask = Mask(vox)

    flat = mask.flat_indices
    a_flat, b_flat = in_a.ravel(order="F")[flat], in_b.ravel(order="F")[flat]
    lobes = {
        (True, False): lobe_odf(dirs, [(1, 0, 0)], kappa, floor),
        (False, True): lobe_odf(dirs, [(0, 1, 0)], kappa, floor),
        (True, True): lobe_odf(dirs, [(1, 0, 0), (0, 1, 0)], kappa, floor),
    }
    values = np.stack([lobes[(bool(a), bool(b))] for a, b in zip(a_flat, b_flat)])
    odf = ODFField(dirs, dims, flat, values)

    rng = CounterRNG(seed, 7)
    lines = []
    for axis, lo in ((0, lo_y), (1, lo_x)):
        cross = lo + rng.uniform((streamlines_per_tract, 2)) * width - 0.5
        cross[:, 1] = lo_z + (cross[:, 1] - lo)
        n_len = (nx if axis == 0 else ny) - 2 * margin
        for c, z in cross:
            start = np.zeros(3)
            start[axis], start[1 - axis], start[2] = margin, c, z
            end = start.copy()
            end[axis] = margin + n_len - 1
            lines.append(np.stack([start, end]))
    return SyntheticTracts(mask, odf, StreamlineSet(lines), Grid(dims))
