"""Semi-synthetic activation phantoms built from streamlines.

An activation starts at a random arc-length position on a streamline and
decays along it with a Gaussian profile.  Patterns from several streamlines
are merged by voxelwise maximum, multiplied by a block-design regressor and
corrupted by white Gaussian noise.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import check_dims, check_positive, check_positive_int, check_voxel_size
from .exceptions import DomainError, ShapeError
from .rng import CounterRNG
from .volume_io import Volume3D, Volume4D, write_volume

NOISE_STREAM = 0
SELECTION_STREAM = 1
STREAMLINE_STREAM_BASE = 1000


@dataclass(frozen=True)
class Grid:
    """Voxel grid; voxel ``(i, j, k)`` is centred at ``(i*sx, j*sy, k*sz)`` mm."""

    dims: tuple
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", check_dims(self.dims, 3))
        object.__setattr__(self, "voxel_size_mm", check_voxel_size(self.voxel_size_mm))

    def nearest_voxel(self, points):
        """Integer voxel coordinates of ``points`` (mm) and an in-grid flag."""
        idx = np.floor(np.asarray(points) / np.array(self.voxel_size_mm) + 0.5).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)
        return idx, inside


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    amplitude: Volume3D
    activation_floor: float = 0.1

    def __post_init__(self):
        a = self.amplitude.data
        if np.any(a < 0) or np.any(a > 1):
            raise DomainError("activation amplitudes must lie in [0, 1]")

    @property
    def ground_truth_mask(self):
        return self.amplitude.data > self.activation_floor


@dataclass(frozen=True)
class BlockParadigm:
    """Boxcar design starting with an off block."""

    n_frames: int = 200
    tr_seconds: float = 1.0
    block_on_frames: int = 10
    block_off_frames: int = 10
    amplitude_scale: float = 1.0

    def __post_init__(self):
        check_positive_int(self.block_on_frames, "block_on_frames")
        check_positive_int(self.block_off_frames, "block_off_frames")
        check_positive_int(self.n_frames, "n_frames", 2 * (self.block_on_frames + self.block_off_frames))
        check_positive(self.tr_seconds, "tr_seconds")
        check_positive(self.amplitude_scale, "amplitude_scale", allow_zero=True)


@dataclass(frozen=True)
class PhantomSpec:
    n_streamlines: int = 100
    diffusion_sigma_mm: float = 10.0
    noise_sigma: float = 1.0
    rng_seed: int = 0
    activation_floor: float = 0.1

    def __post_init__(self):
        check_positive_int(self.n_streamlines, "n_streamlines")
        check_positive(self.diffusion_sigma_mm, "diffusion_sigma_mm")
        check_positive(self.noise_sigma, "noise_sigma", allow_zero=True)
        check_positive_int(self.rng_seed, "rng_seed", 0)


def _arc_lengths(points):
    seg = np.sqrt((np.diff(points, axis=0) ** 2).sum(axis=1))
    return np.concatenate([[0.0], np.cumsum(seg)])


def streamline_activation(streamline, grid, diffusion_sigma_mm, rng, step_mm=None,
                          activation_floor=0.1):
    """Rasterise a Gaussian activation centred at a random point of ``streamline``.

    The centre ``s0`` is drawn uniformly in arc length.  The polyline is
    sampled at ``s0 + m * step_mm`` for every integer ``m`` that stays on it
    (``step_mm`` defaults to the smallest voxel side), each sample gets
    ``exp(-(s - s0)**2 / (2 sigma**2))`` and voxels keep the maximum over the
    samples they contain.  The voxel containing ``s0`` therefore has value 1.
    """
    pts = np.asarray(streamline, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
        raise DomainError("a streamline needs at least two 3D points")
    sigma = check_positive(diffusion_sigma_mm, "diffusion_sigma_mm")
    s = _arc_lengths(pts)
    length = s[-1]
    if not length > 0:
        raise DomainError("streamline has zero length")
    step = min(grid.voxel_size_mm) if step_mm is None else check_positive(step_mm, "step_mm")

    s0 = rng.uniform() * length
    m = np.arange(-np.floor(s0 / step), np.floor((length - s0) / step) + 1)
    samples = s0 + m * step
    samples[m == 0] = s0
    xyz = np.stack([np.interp(samples, s, pts[:, c]) for c in range(3)], axis=1)
    amp = np.exp(-((samples - s0) ** 2) / (2.0 * sigma * sigma))

    idx, inside = grid.nearest_voxel(xyz)
    out = np.zeros(int(np.prod(grid.dims)))
    flat = idx[inside, 0] + grid.dims[0] * (idx[inside, 1] + grid.dims[1] * idx[inside, 2])
    np.maximum.at(out, flat, amp[inside])
    vol = Volume3D(out.reshape(grid.dims, order="F"), grid.voxel_size_mm)
    return ActivationPattern(vol, activation_floor)


def combine_patterns(patterns, activation_floor=None):
    """Voxelwise maximum of activation patterns on a common grid."""
    patterns = list(patterns)
    if not patterns:
        raise DomainError("need at least one pattern")
    first = patterns[0].amplitude
    out = first.data.copy()
    for p in patterns[1:]:
        if p.amplitude.dims != first.dims or p.amplitude.voxel_size_mm != first.voxel_size_mm:
            raise ShapeError("patterns do not share a grid")
        np.maximum(out, p.amplitude.data, out=out)
    floor = patterns[0].activation_floor if activation_floor is None else activation_floor
    return ActivationPattern(Volume3D(out, first.voxel_size_mm), floor)


def block_regressor(paradigm, centered=False):
    """Off/on boxcar of length ``n_frames`` scaled by ``amplitude_scale``."""
    period = paradigm.block_off_frames + paradigm.block_on_frames
    on = (np.arange(paradigm.n_frames) % period) >= paradigm.block_off_frames
    x = paradigm.amplitude_scale * on.astype(np.float64)
    return x - x.mean() if centered else x


def synthesize_timeseries(pattern, regressor, noise_sigma, rng_seed, tr_seconds=1.0):
    """``y_v(t) = amplitude_v * x(t) + noise``, noise i.i.d. N(0, noise_sigma^2).

    Noise is drawn from ``CounterRNG(rng_seed, NOISE_STREAM)`` in x-fastest,
    time-slowest order.
    """
    sigma = check_positive(noise_sigma, "noise_sigma", allow_zero=True)
    x = np.asarray(regressor, dtype=np.float64)
    amp = pattern.amplitude.data
    data = amp[..., None] * x
    if sigma > 0:
        noise = CounterRNG(rng_seed, NOISE_STREAM).normal(amp.size * x.size)
        data = data + sigma * noise.reshape(data.shape, order="F")
    return Volume4D(data, pattern.amplitude.voxel_size_mm, tr_seconds)


@dataclass(frozen=True, eq=False)
class Phantom:
    pattern: ActivationPattern
    series: Volume4D
    provenance: dict


def _streamlines_digest(streamlines):
    h = hashlib.sha256()
    for pts in streamlines:
        h.update(np.asarray(pts, dtype="<f8").tobytes())
        h.update(b"|")
    return h.hexdigest()


def make_phantom(streamlines, grid, spec=PhantomSpec(), paradigm=BlockParadigm(), step_mm=None):
    """Generate one phantom; a pure function of its arguments.

    ``spec.n_streamlines`` streamlines are picked from ``streamlines`` by a
    seeded permutation (all of them if there are fewer).  Streamline ``n`` of
    the set draws its start point from stream ``STREAMLINE_STREAM_BASE + n``.
    """
    lines = list(streamlines)
    if not lines:
        raise DomainError("no streamlines")
    perm = CounterRNG(spec.rng_seed, SELECTION_STREAM).permutation(len(lines))
    chosen = np.sort(perm[:min(spec.n_streamlines, len(lines))])
    patterns = [
        streamline_activation(lines[n], grid, spec.diffusion_sigma_mm,
                              CounterRNG(spec.rng_seed, STREAMLINE_STREAM_BASE + int(n)),
                              step_mm, spec.activation_floor)
        for n in chosen
    ]
    pattern = combine_patterns(patterns, spec.activation_floor)
    x = block_regressor(paradigm)
    series = synthesize_timeseries(pattern, x, spec.noise_sigma, spec.rng_seed, paradigm.tr_seconds)
    provenance = {
        "grid": {"dims": list(grid.dims), "voxel_size_mm": list(grid.voxel_size_mm)},
        "phantom_spec": asdict(spec),
        "paradigm": asdict(paradigm),
        "step_mm": step_mm,
        "streamlines_sha256": _streamlines_digest(lines),
        "selected_streamlines": [int(n) for n in chosen],
    }
    return Phantom(pattern, series, provenance)


def phantom_from_provenance(provenance, streamlines):
    """Regenerate a phantom from its provenance record."""
    if provenance["streamlines_sha256"] != _streamlines_digest(list(streamlines)):
        raise ShapeError("streamlines differ from those recorded in the provenance")
    grid = Grid(tuple(provenance["grid"]["dims"]), tuple(provenance["grid"]["voxel_size_mm"]))
    return make_phantom(streamlines, grid, PhantomSpec(**provenance["phantom_spec"]),
                        BlockParadigm(**provenance["paradigm"]), provenance.get("step_mm"))


def write_phantom_bundle(phantom, out_dir, extra=None):
    """Write ``amplitude.vol``, ``ground_truth.vol``, ``series.vol`` and ``provenance.json``."""
    os.makedirs(out_dir, exist_ok=True)
    amp = phantom.pattern.amplitude
    write_volume(amp, os.path.join(out_dir, "amplitude.vol"))
    truth = Volume3D(phantom.pattern.ground_truth_mask.astype(np.float64), amp.voxel_size_mm)
    write_volume(truth, os.path.join(out_dir, "ground_truth.vol"))
    write_volume(phantom.series, os.path.join(out_dir, "series.vol"))
    record = dict(phantom.provenance)
    if extra:
        record.update(extra)
    with open(os.path.join(out_dir, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
