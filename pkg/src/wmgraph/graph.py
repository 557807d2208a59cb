"""White-matter voxel graphs with ODF-derived edge weights.

Every masked voxel is a vertex and is linked to every other masked voxel in
its 5x5x5 neighbourhood.  The weight of edge ``(i, j)`` combines how much
diffusion the ODF of ``i`` puts into a cone around the direction ``i -> j``
with the same quantity seen from ``j``:

    p(i, r)  = 4 pi / N_o * sum_{k in cone(r)} O_ik ** n
    C_i      = 2 * max_{l in neighbours(i)} p(i, r_il)
    w_ij     = p(i, r_ij) / C_i + p(j, r_ji) / C_j

Each term is at most 1/2, so ``0 <= w_ij <= 1``.  The cone around an edge has
solid angle 4 pi / 98, i.e. half-angle ``arccos(48/49)``.
"""

import hashlib
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _cc

from ._validation import check_dims, check_positive_int, check_signal
from .exceptions import (
    ConsistencyError,
    DegenerateVoxelError,
    DomainError,
    FormatError,
    ShapeError,
    SizeMismatchError,
)
from .volume_io import Mask, flat_index, grid_coords

logger = logging.getLogger(__name__)

GRAPH_MAGIC = b"WMGF-GRF1\n"
CONE_COS_98 = 48.0 / 49.0
FOUR_PI = 4.0 * math.pi


# -- neighbourhood -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NeighborhoodSpec:
    """Integer offsets of a cubic neighbourhood and their direction classes.

    ``offsets`` are ordered by flat offset (x fastest).  ``class_of[m]`` is the
    row of ``unique_directions`` obtained by dividing ``offsets[m]`` by the gcd
    of its components.
    """

    radius: int = 2
    offsets: np.ndarray = field(init=False)
    unique_directions: np.ndarray = field(init=False)
    class_of: np.ndarray = field(init=False)
    opposite: np.ndarray = field(init=False)

    def __post_init__(self):
        r = check_positive_int(self.radius, "radius")
        span = range(-r, r + 1)
        offs = [(dx, dy, dz) for dz, dy, dx in itertools.product(span, span, span)
                if (dx, dy, dz) != (0, 0, 0)]
        offsets = np.array(offs, dtype=np.int64)
        reduced = [tuple(int(c) // math.gcd(*map(abs, o)) for c in o) for o in offs]
        classes = sorted(set(reduced))
        lookup = {c: n for n, c in enumerate(classes)}
        pos = {o: n for n, o in enumerate(offs)}
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "unique_directions", np.array(classes, dtype=np.int64))
        object.__setattr__(self, "class_of", np.array([lookup[c] for c in reduced]))
        object.__setattr__(self, "opposite",
                           np.array([pos[(-o[0], -o[1], -o[2])] for o in offs]))

    def __len__(self):
        return len(self.offsets)


def neighborhood_directions(radius=2):
    """Unit vectors of the neighbourhood direction classes (98 for radius 2).

    Used as the ODF sampling set, every edge cone of half-angle
    ``arccos(48/49)`` contains exactly one sampling direction.
    """
    d = NeighborhoodSpec(radius).unique_directions.astype(np.float64)
    return d / np.sqrt((d**2).sum(axis=1))[:, None]


def fibonacci_sphere(n):
    """``n`` roughly uniform unit vectors on the sphere (golden-angle spiral)."""
    n = check_positive_int(n, "n")
    k = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return pts / np.sqrt((pts**2).sum(axis=1))[:, None]


# -- config --------------------------------------------------------------------


@dataclass(frozen=True)
class GraphBuildConfig:
    """Parameters of the edge-weight computation.

    Parameters
    ----------
    sharpening_power : int
        Exponent ``n`` applied to ODF samples before integration.
    cone_cos_threshold : float
        Cosine of the cone half-angle; the default gives a solid angle of
        ``4 pi / 98``.
    min_weight_epsilon : float
        Edges with weight below this value are dropped.  Zero-weight edges
        are always dropped.
    """

    sharpening_power: int = 2
    cone_cos_threshold: float = CONE_COS_98
    min_weight_epsilon: float = 0.0

    def __post_init__(self):
        check_positive_int(self.sharpening_power, "sharpening_power")
        if not 0.0 < self.cone_cos_threshold < 1.0:
            raise DomainError(f"cone_cos_threshold must lie in (0, 1), got {self.cone_cos_threshold}")
        if not (np.isfinite(self.min_weight_epsilon) and self.min_weight_epsilon >= 0):
            raise DomainError(f"min_weight_epsilon must be >= 0, got {self.min_weight_epsilon}")
        object.__setattr__(self, "cone_cos_threshold", float(self.cone_cos_threshold))
        object.__setattr__(self, "min_weight_epsilon", float(self.min_weight_epsilon))

    def to_dict(self):
        return asdict(self)


# -- edge weights ------------------------------------------------------------


def solid_angle_membership(directions, r_ij, cone_cos_threshold=CONE_COS_98):
    """Indices ``k`` with ``dot(directions[k], r_ij / |r_ij|) >= cone_cos_threshold``."""
    d = np.asarray(directions, dtype=np.float64)
    r = np.asarray(r_ij, dtype=np.float64)
    norm = np.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    if norm == 0:
        raise DomainError("r_ij must be non-zero")
    u = r / norm
    dots = d[:, 0] * u[0] + d[:, 1] * u[1] + d[:, 2] * u[2]
    return np.flatnonzero(dots >= cone_cos_threshold)


def _sharpen(values, n):
    out = np.array(values, dtype=np.float64, copy=True)
    for _ in range(n - 1):
        out *= values
    return out


def _masses(sharpened, members, n_dirs):
    # columns summed in ascending direction order so results are reproducible
    s = np.zeros(sharpened.shape[0])
    for k in members:
        s += sharpened[:, k]
    return (FOUR_PI / n_dirs) * s


def _voxel_flat(voxel, dims):
    if np.ndim(voxel) == 0:
        return int(voxel)
    return int(flat_index(np.asarray(voxel), dims))


def odf_transition_mass(field, voxel, r_ij, config=GraphBuildConfig()):
    """Diffusion mass of ``voxel``'s sharpened ODF inside the cone around ``r_ij``.

    ``voxel`` is a flat index or ``(x, y, z)`` grid coordinates.  Raises
    ``KeyError`` if the voxel has no ODF.
    """
    row = field.row(_voxel_flat(voxel, field.dims))
    members = solid_angle_membership(field.directions, r_ij, config.cone_cos_threshold)
    vals = _sharpen(field.values[row:row + 1], config.sharpening_power)
    return float(_masses(vals, members, field.n_dirs)[0])


def _membership_table(directions, spec, config):
    return [solid_angle_membership(directions, o, config.cone_cos_threshold) for o in spec.offsets]


def _mask_array(mask):
    if isinstance(mask, Mask):
        return mask.voxels
    vox = np.asarray(mask, dtype=bool)
    check_dims(vox.shape, 3, "mask")
    if not vox.any():
        raise DomainError("mask is empty")
    return vox


def voxel_normalizers(field, mask, config=GraphBuildConfig(), spec=None):
    """``C_k = 2 max_l p(k, r_kl)`` over in-mask neighbours, keyed by flat index.

    Voxels without any in-mask neighbour are absent from the result.
    """
    spec = spec or NeighborhoodSpec()
    tables = _transition_tables(field, _mask_array(mask), config, spec)
    flat, _, _, norm, has_nb = tables
    return {int(v): float(c) for v, c, h in zip(flat, norm, has_nb) if h}


def edge_weight(field, i, j, config=GraphBuildConfig(), normalizers=None, mask=None):
    """Weight of the edge between voxels ``i`` and ``j`` (flat indices or coords).

    ``normalizers`` maps flat index to ``C_k`` (see :func:`voxel_normalizers`);
    when omitted it is computed over ``mask``, or over the voxels covered by
    ``field`` if no mask is given.

    Raises
    ------
    DegenerateVoxelError
        If ``C_i`` or ``C_j`` is zero; such edges are omitted from graphs.
    """
    fi, fj = _voxel_flat(i, field.dims), _voxel_flat(j, field.dims)
    ci, cj = grid_coords(fi, field.dims), grid_coords(fj, field.dims)
    off = cj - ci
    if fi == fj or np.abs(off).max() > 2:
        raise DomainError(f"voxels {fi} and {fj} are not neighbours")
    if normalizers is None:
        if mask is None:
            covered = np.zeros(int(np.prod(field.dims)), dtype=bool)
            covered[field.voxel_indices] = True
            mask = covered.reshape(field.dims, order="F")
        normalizers = voxel_normalizers(field, mask, config)
    c_i, c_j = normalizers.get(fi, 0.0), normalizers.get(fj, 0.0)
    if c_i == 0.0 or c_j == 0.0:
        raise DegenerateVoxelError(f"edge ({fi}, {fj}) touches a voxel with an all-zero ODF")
    a = odf_transition_mass(field, fi, off, config) / c_i
    b = odf_transition_mass(field, fj, -off, config) / c_j
    return a + b


# -- graph -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VoxelGraph:
    """Sparse undirected weighted graph over grid voxels.

    Parameters
    ----------
    adjacency : scipy.sparse.csr_matrix, shape (n_vertices, n_vertices)
        Symmetric, zero diagonal, weights in [0, 1], sorted column indices.
    vertex_indices : array of shape (n_vertices,)
        Flat voxel index of each vertex, strictly increasing.
    dims : tuple of 3 ints
        Grid dimensions.
    config : dict
        Build parameters, recorded for provenance.
    """

    adjacency: sparse.csr_matrix
    vertex_indices: np.ndarray
    dims: tuple
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        adj = sparse.csr_matrix(self.adjacency, dtype=np.float64)
        adj.sort_indices()
        idx = np.asarray(self.vertex_indices, dtype=np.int64)
        if adj.shape != (idx.size, idx.size):
            raise ShapeError(f"adjacency shape {adj.shape} does not match {idx.size} vertices")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "vertex_indices", idx)
        object.__setattr__(self, "dims", check_dims(self.dims, 3))
        deg = np.asarray(adj.sum(axis=1)).ravel()
        object.__setattr__(self, "_degrees", deg)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_inv_sqrt_deg", 1.0 / np.sqrt(deg))

    @property
    def n_vertices(self):
        return self.vertex_indices.size

    @property
    def n_edges(self):
        return self.adjacency.nnz // 2

    @property
    def degrees(self):
        return self._degrees

    @property
    def vertex_coords(self):
        return grid_coords(self.vertex_indices, self.dims)

    def dense_laplacian(self):
        """Explicit ``I - D^-1/2 A D^-1/2`` as a dense array (small graphs only)."""
        s = self._inv_sqrt_deg
        return np.eye(self.n_vertices) - s[:, None] * self.adjacency.toarray() * s[None, :]

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.adjacency.indptr, self.adjacency.indices):
            h.update(np.asarray(arr, dtype="<u8").tobytes())
        h.update(np.asarray(self.adjacency.data, dtype="<f8").tobytes())
        h.update(np.asarray(self.vertex_indices, dtype="<u8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class BuildReport:
    n_mask_voxels: int
    n_vertices: int
    n_edges: int
    n_components: int
    isolated_voxels: list
    degenerate_voxels: list

    @property
    def n_isolated(self):
        return len(self.isolated_voxels)

    @property
    def n_degenerate(self):
        return len(self.degenerate_voxels)

    def to_dict(self):
        return {
            "n_mask_voxels": self.n_mask_voxels,
            "n_vertices": self.n_vertices,
            "n_edges": self.n_edges,
            "n_components": self.n_components,
            "n_isolated": self.n_isolated,
            "n_degenerate": self.n_degenerate,
            "isolated_voxels": list(self.isolated_voxels),
            "degenerate_voxels": list(self.degenerate_voxels),
        }


def _neighbor_table(vox, spec):
    """Position of each in-mask neighbour (``-1`` if absent) for every offset."""
    dims = vox.shape
    flat = np.flatnonzero(vox.ravel(order="F"))
    coords = grid_coords(flat, dims)
    position = np.full(int(np.prod(dims)), -1, dtype=np.int64)
    position[flat] = np.arange(flat.size)
    nb = np.full((flat.size, len(spec)), -1, dtype=np.int64)
    for m, off in enumerate(spec.offsets):
        c = coords + off
        inside = np.all((c >= 0) & (c < np.array(dims)), axis=1)
        nb[inside, m] = position[flat_index(c[inside], dims)]
    return flat, nb


def _transition_tables(field, vox, config, spec):
    if tuple(field.dims) != vox.shape:
        raise ShapeError(f"ODF field dims {field.dims} differ from mask dims {vox.shape}")
    flat, nb = _neighbor_table(vox, spec)
    rows = field.rows(flat)
    if np.any(rows < 0):
        missing = flat[rows < 0]
        raise ShapeError(f"{missing.size} mask voxels have no ODF (first: {int(missing[0])})")
    sharpened = _sharpen(field.values[rows], config.sharpening_power)
    members = _membership_table(field.directions, spec, config)
    mass = np.empty((flat.size, len(spec)))
    for m, mem in enumerate(members):
        mass[:, m] = _masses(sharpened, mem, field.n_dirs)
    has_nb = (nb >= 0).any(axis=1)
    norm = np.zeros(flat.size)
    if flat.size:
        norm = 2.0 * np.where(nb >= 0, mass, -np.inf).max(axis=1)
        norm[~has_nb] = 0.0
    return flat, nb, mass, norm, has_nb


def _assemble(flat, rows, cols, weights, dims, config):
    """Drop isolated voxels and build a sorted CSR graph."""
    n = flat.size
    keep = np.zeros(n, dtype=bool)
    keep[rows] = True
    new_id = np.cumsum(keep) - 1
    adj = sparse.coo_matrix(
        (weights, (new_id[rows], new_id[cols])), shape=(int(keep.sum()),) * 2).tocsr()
    adj.sort_indices()
    graph = VoxelGraph(adj, flat[keep], dims, config)
    return graph, flat[~keep]


def build_graph(mask, field, config=GraphBuildConfig(), spec=None):
    """Build the white-matter graph of ``mask`` with weights from ``field``.

    Returns
    -------
    graph : VoxelGraph
        Vertices are the mask voxels that keep at least one edge, in flat
        index order.
    report : BuildReport
    """
    spec = spec or NeighborhoodSpec()
    vox = _mask_array(mask)
    flat, nb, mass, norm, has_nb = _transition_tables(field, vox, config, spec)
    degenerate = flat[has_nb & (norm == 0.0)]
    if degenerate.size:
        logger.warning("%d voxels have all-zero ODF mass toward their neighbours", degenerate.size)

    with np.errstate(divide="ignore", invalid="ignore"):
        half = mass / norm[:, None]
    rows_l, cols_l, w_l = [], [], []
    for m in range(len(spec)):
        i = np.flatnonzero(nb[:, m] >= 0)
        j = nb[i, m]
        ok = (norm[i] > 0) & (norm[j] > 0)
        i, j = i[ok], j[ok]
        w = half[i, m] + half[j, spec.opposite[m]]
        keep = (w > 0) & (w >= config.min_weight_epsilon)
        rows_l.append(i[keep])
        cols_l.append(j[keep])
        w_l.append(w[keep])
    rows = np.concatenate(rows_l) if rows_l else np.zeros(0, np.int64)
    cols = np.concatenate(cols_l) if cols_l else np.zeros(0, np.int64)
    weights = np.concatenate(w_l) if w_l else np.zeros(0)

    graph, isolated = _assemble(flat, rows, cols, weights, vox.shape, config.to_dict())
    n_comp = connected_components(graph)[0] if graph.n_vertices else 0
    report = BuildReport(
        n_mask_voxels=int(flat.size),
        n_vertices=graph.n_vertices,
        n_edges=graph.n_edges,
        n_components=int(n_comp),
        isolated_voxels=[int(v) for v in isolated],
        degenerate_voxels=[int(v) for v in degenerate],
    )
    logger.info("built graph: %d vertices, %d edges, %d components, %d isolated",
                report.n_vertices, report.n_edges, report.n_components, report.n_isolated)
    return graph, report


def laplacian_apply(graph, f):
    """``f - D^-1/2 A D^-1/2 f`` without forming the Laplacian.

    ``f`` may be a single signal of length ``n_vertices`` or a stack of
    signals with shape ``(n_vertices, k)``.
    """
    f = check_signal(f, graph.n_vertices)
    if np.any(graph.degrees <= 0):
        raise ConsistencyError("graph has zero-degree vertices; they must be removed at build time")
    s = graph._inv_sqrt_deg if f.ndim == 1 else graph._inv_sqrt_deg[:, None]
    return f - s * (graph.adjacency @ (s * f))


def connected_components(graph):
    """Return ``(n_components, labels)``; labels are numbered by first vertex."""
    n, labels = _cc(graph.adjacency, directed=False)
    return int(n), labels


# -- serialization -----------------------------------------------------------------


def save_graph(graph, path):
    adj = graph.adjacency
    header = {
        "n_vertices": graph.n_vertices,
        "n_edges": graph.n_edges,
        "dims": list(graph.dims),
        "config": graph.config,
    }
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode())
        fh.write(np.asarray(adj.indptr, dtype="<u8").tobytes())
        fh.write(np.asarray(adj.indices, dtype="<u8").tobytes())
        fh.write(np.asarray(adj.data, dtype="<f8").tobytes())
        fh.write(np.asarray(graph.vertex_indices, dtype="<u8").tobytes())


def load_graph(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(GRAPH_MAGIC):
        raise FormatError(f"{path}: bad magic, expected {GRAPH_MAGIC!r}")
    end = blob.find(b"\n", len(GRAPH_MAGIC))
    try:
        header = json.loads(blob[len(GRAPH_MAGIC):end])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from None
    for key in ("n_vertices", "n_edges", "dims", "config"):
        if key not in header:
            raise FormatError(f"{path}: header missing field '{key}'")
    n, m = int(header["n_vertices"]), int(header["n_edges"])
    nnz = 2 * m
    payload = memoryview(blob)[end + 1:]
    expected = 8 * ((n + 1) + nnz + nnz + n)
    if len(payload) != expected:
        raise SizeMismatchError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    parts, pos = [], 0
    for count, dt in ((n + 1, "<u8"), (nnz, "<u8"), (nnz, "<f8"), (n, "<u8")):
        parts.append(np.frombuffer(payload[pos:pos + 8 * count], dtype=dt))
        pos += 8 * count
    indptr, indices, data, vert = parts
    adj = sparse.csr_matrix((data.astype(np.float64), indices.astype(np.int64),
                             indptr.astype(np.int64)), shape=(n, n))
    return VoxelGraph(adj, vert.astype(np.int64), tuple(header["dims"]), header["config"])
