"""Block vectors, the problem interface and observation masks."""
import math

import numpy as np

from . import kernels
from .errors import DataError, NumericalError, ShapeError


def _frozen(a):
    arr = np.array(a, dtype=np.float64, order="C", copy=True)
    arr.setflags(write=False)
    return arr


class BlockVector:
    """An iterate ``x = (x_1, ..., x_m)`` stored as read-only float64 arrays.

    Instances are immutable: :meth:`replace` returns a new vector that shares
    the untouched blocks with ``self``.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks):
        blocks = tuple(_frozen(b) for b in blocks)
        if not blocks:
            raise ShapeError("a BlockVector needs at least one block")
        self.blocks = blocks

    @classmethod
    def _wrap(cls, blocks):
        obj = cls.__new__(cls)
        obj.blocks = tuple(blocks)
        return obj

    @property
    def m(self):
        return len(self.blocks)

    @property
    def shapes(self):
        return [b.shape for b in self.blocks]

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    def __repr__(self):
        return f"BlockVector(shapes={self.shapes})"

    def replace(self, i, block):
        """Return a copy of ``self`` with block ``i`` set to ``block``."""
        block = _frozen(block)
        if block.shape != self.blocks[i].shape:
            raise ShapeError(
                f"block {i} has shape {self.blocks[i].shape}, got {block.shape}")
        blocks = list(self.blocks)
        blocks[i] = block
        return BlockVector._wrap(blocks)

    def is_finite(self):
        return all(np.isfinite(b).all() for b in self.blocks)

    def sqnorm(self):
        return sum(float(np.vdot(b, b)) for b in self.blocks)


def _check_same_shapes(x, y):
    if x.shapes != y.shapes:
        raise ShapeError(f"shape mismatch: {x.shapes} vs {y.shapes}")


def block_axpy(a, x, y):
    """Blockwise ``a * x + y``."""
    _check_same_shapes(x, y)
    return BlockVector._wrap(_frozen(a * xb + yb) for xb, yb in zip(x, y))


class Problem:
    """Objective ``F(x) = f(x) + sum_i g_i(x_i)`` over ``m`` blocks.

    Subclasses provide ``f`` and, where a gradient-based surrogate is used,
    ``grad``. ``prox`` must return a point of ``argmin_x <c, x> + lam/2
    ||x - z||^2 + g_i(x)``; the default assumes ``g_i = 0`` and no constraint.
    """

    m = 1

    def f(self, x):
        raise NotImplementedError

    def grad(self, i, x):
        raise NotImplementedError(f"{type(self).__name__} has no gradient for block {i}")

    def g(self, i, xi):
        return 0.0

    def prox(self, i, c, z, lam):
        return z - c / lam

    def g_convex(self, i):
        return True

    def g_is_zero(self, i):
        return type(self).g is Problem.g and type(self).prox is Problem.prox


class FunctionalProblem(Problem):
    """A :class:`Problem` assembled from plain callables.

    ``g`` and ``prox`` are optional per-block lists; ``None`` entries mean
    ``g_i = 0`` on the whole space.
    """

    def __init__(self, m, f, grad=None, g=None, prox=None, g_convex=None):
        self.m = m
        self._f = f
        self._grad = grad
        self._g = list(g) if g is not None else [None] * m
        self._prox = list(prox) if prox is not None else [None] * m
        self._g_convex = list(g_convex) if g_convex is not None else [True] * m

    def f(self, x):
        return self._f(x)

    def grad(self, i, x):
        if self._grad is None:
            return super().grad(i, x)
        return self._grad(i, x)

    def g(self, i, xi):
        return 0.0 if self._g[i] is None else self._g[i](xi)

    def prox(self, i, c, z, lam):
        if self._prox[i] is None:
            return z - c / lam
        return self._prox[i](c, z, lam)

    def g_convex(self, i):
        return self._g_convex[i]

    def g_is_zero(self, i):
        return self._g[i] is None and self._prox[i] is None


def objective_value(p, x):
    """``F(x) = f(x) + sum_i g_i(x_i)``; ``inf`` when an indicator is violated."""
    if len(x) != p.m:
        raise ShapeError(f"problem has {p.m} blocks, iterate has {len(x)}")
    total = float(p.f(x))
    if math.isnan(total):
        raise NumericalError("f evaluated to NaN")
    for i in range(p.m):
        gi = float(p.g(i, x[i]))
        if math.isnan(gi):
            raise NumericalError(f"g_{i} evaluated to NaN")
        total += gi
    if math.isnan(total):
        raise NumericalError("objective evaluated to NaN")
    return total


class ObservationMask:
    """Observed entries ``(row, col, value)`` of a nominal ``shape`` matrix.

    ``row_ids`` / ``col_ids`` optionally record the external identifiers of
    each dense index (as produced by :func:`titan.io.load_ratings`).
    """

    __slots__ = ("rows", "cols", "vals", "shape", "row_ids", "col_ids")

    def __init__(self, rows, cols, vals, shape, row_ids=None, col_ids=None):
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        vals = np.ascontiguousarray(vals, dtype=np.float64)
        m, n = (int(shape[0]), int(shape[1]))
        if not (rows.ndim == cols.ndim == vals.ndim == 1):
            raise DataError("rows, cols and vals must be one-dimensional")
        if not (rows.shape == cols.shape == vals.shape):
            raise DataError("rows, cols and vals must have equal lengths")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
                raise DataError(f"entry index out of range for shape {(m, n)}")
            if not np.isfinite(vals).all():
                raise DataError("observed values must be finite")
            keys = rows * n + cols
            if np.unique(keys).size != keys.size:
                raise DataError("duplicate (row, col) entries")
        for a in (rows, cols, vals):
            a.setflags(write=False)
        self.rows, self.cols, self.vals = rows, cols, vals
        self.shape = (m, n)
        self.row_ids = row_ids
        self.col_ids = col_ids

    @property
    def nnz(self):
        return int(self.rows.size)

    def __len__(self):
        return self.nnz

    def __repr__(self):
        return f"ObservationMask(shape={self.shape}, nnz={self.nnz})"

    def triplets(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist()))

    def subset(self, index):
        index = np.asarray(index)
        return ObservationMask(self.rows[index], self.cols[index], self.vals[index],
                               self.shape, self.row_ids, self.col_ids)

    def keys(self):
        return self.rows * self.shape[1] + self.cols

    def residual(self, U, V):
        """Observed entries of ``A - U V``, never forming the dense product."""
        return kernels.mask_residual(self.rows, self.cols, self.vals,
                                     np.ascontiguousarray(U), np.ascontiguousarray(V))

    def to_dense(self, fill=0.0):
        out = np.full(self.shape, fill, dtype=np.float64)
        out[self.rows, self.cols] = self.vals
        return out

    def indicator(self):
        out = np.zeros(self.shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def save(self, path):
        """Write as UTF-8 text: a ``# shape m n`` header then ``row<TAB>col<TAB>value``."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# shape {self.shape[0]} {self.shape[1]}\n")
            for r, c, v in zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist()):
                fh.write(f"{r}\t{c}\t{v!r}\n")

    @classmethod
    def load(cls, path):
        rows, cols, vals = [], [], []
        shape = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    if len(parts) == 3 and parts[0] == "shape":
                        shape = (int(parts[1]), int(parts[2]))
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
                try:
                    rows.append(int(parts[0]))
                    cols.append(int(parts[1]))
                    vals.append(float(parts[2]))
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
        if shape is None:
            raise DataError(f"{path}: missing '# shape m n' header")
        return cls(rows, cols, vals, shape)
