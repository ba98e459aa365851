"""Seeded synthetic instances for sparse NMF and matrix completion."""
import math

import numpy as np

from ..blocks import ObservationMask
from ..errors import ConfigError
from ..io import split_train_test
from ..numerics import hard_threshold_columns
from .mcp import McpInstance
from .nmf import SparseNmfInstance


def planted_nmf(dims, rank, s=None, noise=0.0, seed=0):
    """``M = U* V* + noise |N|`` with nonnegative, ``s``-sparse-column ``U*``.

    Returns ``(M, U*, V*)``.
    """
    m, n = dims
    s = math.ceil(0.25 * rank) if s is None else s
    # stream [1, seed] keeps planted factors independent of nmf_initial_point(seed)
    rng = np.random.default_rng([1, seed])
    U = hard_threshold_columns(rng.random((m, rank)), s)
    V = rng.random((rank, n))
    M = U @ V
    if noise:
        M = M + noise * np.abs(rng.standard_normal(M.shape))
    return M, U, V


def low_rank_ratings(dims, rank, noise=0.0, seed=0):
    """Dense ``A = U* V* + noise N`` with Gaussian factors scaled to unit entry variance."""
    m, n = dims
    rng = np.random.default_rng([2, seed])
    U = rng.standard_normal((m, rank))
    V = rng.standard_normal((rank, n)) / math.sqrt(rank)
    A = U @ V
    if noise:
        A = A + noise * rng.standard_normal(A.shape)
    return A


def synthesize_instances(kind, dims, rank, noise=0.0, density=1.0, seed=0, s=None,
                         train_fraction=0.7, lam=0.1, theta=5.0):
    """Desk-scale stand-ins for the image and ratings datasets.

    ``nmf``: a :class:`SparseNmfInstance` built on :func:`planted_nmf`.
    ``mcp``: ``round(density m n)`` entries of :func:`low_rank_ratings`
    sampled without replacement, split ``train_fraction`` / rest.
    """
    m, n = (int(dims[0]), int(dims[1]))
    if m < 1 or n < 1 or rank < 1:
        raise ConfigError("dims and rank must be positive")
    if kind == "nmf":
        M, _, _ = planted_nmf((m, n), rank, s, noise, seed)
        return SparseNmfInstance(M, rank, s)
    if kind == "mcp":
        if not 0.0 < density <= 1.0:
            raise ConfigError(f"density must lie in (0, 1], got {density}")
        A = low_rank_ratings((m, n), rank, noise, seed)
        rng = np.random.default_rng([3, seed])
        count = int(math.floor(density * m * n + 0.5))
        keys = np.sort(rng.choice(m * n, size=count, replace=False))
        rows, cols = np.divmod(keys, n)
        full = ObservationMask(rows, cols, A[rows, cols], (m, n))
        train, test = split_train_test(full, train_fraction, seed)
        return McpInstance(train, test, rank, lam=lam, theta=theta)
    raise ConfigError(f"kind must be 'nmf' or 'mcp', got {kind!r}")
