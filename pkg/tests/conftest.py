import numpy as np
import pytest
from scipy import sparse

from wmgraph.graph import VoxelGraph, neighborhood_directions
from wmgraph.volume_io import ODFField


def random_connected_graph(n, seed, density=None):
    """Random weighted connected graph: a random spanning tree plus extra edges."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    rows = [perm[k] for k in range(1, n)]
    cols = [perm[rng.integers(0, k)] for k in range(1, n)]
    extra = int((density or min(4.0 / n, 1.0)) * n * (n - 1) / 2)
    rows += list(rng.integers(0, n, extra))
    cols += list(rng.integers(0, n, extra))
    rows, cols = np.array(rows), np.array(cols)
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    w = rng.uniform(0.0, 1.0, rows.size)
    w = np.where(w == 0.0, 1.0, w)  # weights in (0, 1]
    A = sparse.coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    A = sparse.triu(A.maximum(A.T), k=1)
    A = (A + A.T).tocsr()
    return VoxelGraph(A, np.arange(n), (n, 1, 1))


def graph_from_dense(A):
    A = np.asarray(A, dtype=float)
    return VoxelGraph(sparse.csr_matrix(A), np.arange(A.shape[0]), (A.shape[0], 1, 1))


def random_odf_field(mask, seed, directions=None, low=0.0, high=1.0):
    rng = np.random.default_rng(seed)
    dirs = neighborhood_directions() if directions is None else directions
    flat = np.flatnonzero(np.asarray(mask).ravel(order="F"))
    values = rng.uniform(low, high, (flat.size, dirs.shape[0]))
    return ODFField(dirs, np.asarray(mask).shape, flat, values)


def constant_odf_field(mask, value=1.0, directions=None):
    dirs = neighborhood_directions() if directions is None else directions
    flat = np.flatnonzero(np.asarray(mask).ravel(order="F"))
    return ODFField(dirs, np.asarray(mask).shape, flat, np.full((flat.size, dirs.shape[0]), value))


@pytest.fixture
def tmp(tmp_path):
    return tmp_path


# acceptance results, filled by test_acceptance.py and printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
