"""Blocked dense matrices for out-of-core style linear algebra.

A :class:`BlockedMatrix` is a 2-D grid of dense float64 blocks.  Interior
blocks all share one shape; blocks on the bottom/right edges are smaller
when the global shape is not an exact multiple of the block shape.  Blocks
are never padded.  Values are immutable by convention: operations return
new matrices and callers must not write into ``blocks``.

Reductions (matter for bitwise reproducibility) always run in a fixed
order: row-major over the grid, ascending over the inner index of a block
product.  Per-block kernels are pure, so they may be dispatched onto a
thread pool without changing any result.

Binary persistence uses the BMX1 layout: a 4-byte magic ``b"BMX1"``,
four little-endian uint64 header words (global_rows, global_cols,
rows_per_block, cols_per_block), then every block in grid row-major
order as little-endian float64 values in column-major element order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"BMX1"
_HEADER = struct.Struct("<4sQQQQ")


@dataclass(frozen=True)
class BlockShape:
    """Interior block dimensions of a blocked matrix."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError(f"block dims must be positive, got {self.rows}x{self.cols}")


def grid_shape(global_rows: int, global_cols: int, block_shape: BlockShape) -> tuple[int, int]:
    """Number of block rows and block columns covering a global shape.

    Edge blocks absorb the remainder, so this is a ceiling division.
    """
    if global_rows <= 0 or global_cols <= 0:
        raise ValueError(f"global dims must be positive, got {global_rows}x{global_cols}")
    return (
        -(-global_rows // block_shape.rows),
        -(-global_cols // block_shape.cols),
    )


def _as_block(a) -> np.ndarray:
    return np.asfortranarray(a, dtype=np.float64)


class BlockedMatrix:
    """Immutable dense matrix stored as a row-major grid of blocks."""

    def __init__(self, global_rows: int, global_cols: int, block_shape: BlockShape, blocks):
        n_br, n_bc = grid_shape(global_rows, global_cols, block_shape)
        if len(blocks) != n_br or any(len(row) != n_bc for row in blocks):
            raise ValueError("block grid does not match the global shape")
        for i, row in enumerate(blocks):
            for j, blk in enumerate(row):
                want = (
                    min(block_shape.rows, global_rows - i * block_shape.rows),
                    min(block_shape.cols, global_cols - j * block_shape.cols),
                )
                if blk.shape != want:
                    raise ValueError(f"block ({i},{j}) has shape {blk.shape}, expected {want}")
        self.global_rows = global_rows
        self.global_cols = global_cols
        self.block_shape = block_shape
        self.blocks = blocks

    @property
    def shape(self) -> tuple[int, int]:
        return (self.global_rows, self.global_cols)

    @property
    def n_blocks(self) -> tuple[int, int]:
        return grid_shape(self.global_rows, self.global_cols, self.block_shape)


def from_dense(a, block_shape: BlockShape) -> BlockedMatrix:
    """Split a dense 2-D array into a BlockedMatrix."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got ndim={a.ndim}")
    rows, cols = a.shape
    n_br, n_bc = grid_shape(rows, cols, block_shape)
    blocks = [
        [
            _as_block(
                a[
                    i * block_shape.rows : min((i + 1) * block_shape.rows, rows),
                    j * block_shape.cols : min((j + 1) * block_shape.cols, cols),
                ]
            )
            for j in range(n_bc)
        ]
        for i in range(n_br)
    ]
    return BlockedMatrix(rows, cols, block_shape, blocks)


def to_dense(m: BlockedMatrix) -> np.ndarray:
    return np.block([[np.asarray(b) for b in row] for row in m.blocks])


def _map_blocks(entries, fn, pool):
    """Evaluate fn over (key, args) entries, optionally on an executor.

    Results are collected by key, so the outcome does not depend on the
    pool or its size.
    """
    if pool is None:
        return {key: fn(*args) for key, args in entries}
    futures = {key: pool.submit(fn, *args) for key, args in entries}
    return {key: f.result() for key, f in futures.items()}


def _matmul_block(a_row, b_col):
    acc = a_row[0] @ b_col[0]
    for ak, bk in zip(a_row[1:], b_col[1:]):
        acc = acc + ak @ bk
    return _as_block(acc)


def matmul(a: BlockedMatrix, b: BlockedMatrix, pool=None) -> BlockedMatrix:
    """Blocked product ``a @ b``.

    The inner blockings must conform (``a.block_shape.cols`` equals
    ``b.block_shape.rows``); the result is blocked by
    ``(a.block_shape.rows, b.block_shape.cols)``.  Accumulation over the
    inner index runs in ascending order for every output block.
    """
    if a.global_cols != b.global_rows:
        raise ValueError(f"inner dims differ: {a.shape} @ {b.shape}")
    if a.block_shape.cols != b.block_shape.rows:
        b = rechunk(b, BlockShape(a.block_shape.cols, b.block_shape.cols))
    out_shape = BlockShape(a.block_shape.rows, b.block_shape.cols)
    n_br, _ = a.n_blocks
    _, n_bc = b.n_blocks
    entries = [
        ((i, j), ([a.blocks[i][k] for k in range(len(a.blocks[i]))], [b.blocks[k][j] for k in range(len(b.blocks))]))
        for i in range(n_br)
        for j in range(n_bc)
    ]
    got = _map_blocks(entries, _matmul_block, pool)
    blocks = [[got[(i, j)] for j in range(n_bc)] for i in range(n_br)]
    return BlockedMatrix(a.global_rows, b.global_cols, out_shape, blocks)


def _t_matmul_block(a_col, b_col):
    acc = a_col[0].T @ b_col[0]
    for ak, bk in zip(a_col[1:], b_col[1:]):
        acc = acc + ak.T @ bk
    return _as_block(acc)


def transpose_matmul(a: BlockedMatrix, b: BlockedMatrix, pool=None) -> BlockedMatrix:
    """Blocked product ``a.T @ b`` without materializing ``a.T``."""
    if a.global_rows != b.global_rows:
        raise ValueError(f"inner dims differ: {a.shape}.T @ {b.shape}")
    if a.block_shape.rows != b.block_shape.rows:
        b = rechunk(b, BlockShape(a.block_shape.rows, b.block_shape.cols))
    out_shape = BlockShape(a.block_shape.cols, b.block_shape.cols)
    _, n_br_out = a.n_blocks
    _, n_bc = b.n_blocks
    entries = [
        ((i, j), ([a.blocks[k][i] for k in range(len(a.blocks))], [b.blocks[k][j] for k in range(len(b.blocks))]))
        for i in range(n_br_out)
        for j in range(n_bc)
    ]
    got = _map_blocks(entries, _t_matmul_block, pool)
    blocks = [[got[(i, j)] for j in range(n_bc)] for i in range(n_br_out)]
    return BlockedMatrix(a.global_cols, b.global_cols, out_shape, blocks)


def sub(a: BlockedMatrix, b: BlockedMatrix) -> BlockedMatrix:
    """Elementwise ``a - b``; b is rechunked to a's blocking if needed."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} - {b.shape}")
    if b.block_shape != a.block_shape:
        b = rechunk(b, a.block_shape)
    blocks = [
        [_as_block(ab - bb) for ab, bb in zip(arow, brow)]
        for arow, brow in zip(a.blocks, b.blocks)
    ]
    return BlockedMatrix(a.global_rows, a.global_cols, a.block_shape, blocks)


def scale_cols(a: BlockedMatrix, w) -> BlockedMatrix:
    """Right-multiplication by diag(w): column j is scaled by w[j]."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != a.global_cols:
        raise ValueError(f"weight length {w.shape[0]} != column count {a.global_cols}")
    cpb = a.block_shape.cols
    blocks = [
        [_as_block(blk * w[j * cpb : j * cpb + blk.shape[1]][None, :]) for j, blk in enumerate(row)]
        for row in a.blocks
    ]
    return BlockedMatrix(a.global_rows, a.global_cols, a.block_shape, blocks)


def scale_rows(a: BlockedMatrix, w) -> BlockedMatrix:
    """Left-multiplication by diag(w): row i is scaled by w[i]."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != a.global_rows:
        raise ValueError(f"weight length {w.shape[0]} != row count {a.global_rows}")
    rpb = a.block_shape.rows
    blocks = [
        [_as_block(blk * w[i * rpb : i * rpb + blk.shape[0]][:, None]) for blk in row]
        for i, row in enumerate(a.blocks)
    ]
    return BlockedMatrix(a.global_rows, a.global_cols, a.block_shape, blocks)


def frobenius_norm(a: BlockedMatrix) -> float:
    """Frobenius norm, accumulated block by block in grid row-major order."""
    acc = 0.0
    for row in a.blocks:
        for blk in row:
            acc += float(np.sum(blk * blk))
    return float(np.sqrt(acc))


def _rows_dense(m: BlockedMatrix, start: int, stop: int) -> np.ndarray:
    """Contiguous row range [start, stop) as one dense strip."""
    rpb = m.block_shape.rows
    pieces = []
    br = start // rpb
    r = start
    while r < stop:
        hi = min((br + 1) * rpb, stop)
        strip = np.hstack([np.asarray(b) for b in m.blocks[br]])
        pieces.append(strip[r - br * rpb : hi - br * rpb])
        r = hi
        br += 1
    return pieces[0] if len(pieces) == 1 else np.vstack(pieces)


def _from_row_source(global_rows, global_cols, block_shape, fetch) -> BlockedMatrix:
    """Build a matrix from a callable returning dense row strips."""
    n_br, n_bc = grid_shape(global_rows, global_cols, block_shape)
    blocks = []
    for i in range(n_br):
        strip = fetch(i * block_shape.rows, min((i + 1) * block_shape.rows, global_rows))
        row = [
            _as_block(strip[:, j * block_shape.cols : min((j + 1) * block_shape.cols, global_cols)])
            for j in range(n_bc)
        ]
        blocks.append(row)
    return BlockedMatrix(global_rows, global_cols, block_shape, blocks)


def rechunk(m: BlockedMatrix, block_shape: BlockShape) -> BlockedMatrix:
    if block_shape == m.block_shape:
        return m
    return _from_row_source(m.global_rows, m.global_cols, block_shape, lambda a, b: _rows_dense(m, a, b))


def select_rows(m: BlockedMatrix, indices) -> BlockedMatrix:
    """New matrix holding the given rows, in order, with the same blocking.

    Indices must be strictly increasing and within range.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("empty row selection")
    if np.any(idx < 0) or np.any(idx >= m.global_rows):
        raise ValueError("row index out of range")
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise ValueError("row indices must be strictly increasing")

    rpb = m.block_shape.rows
    src_br = idx // rpb
    src_off = idx - src_br * rpb

    def fetch(start, stop):
        take_br = src_br[start:stop]
        take_off = src_off[start:stop]
        strip = np.empty((stop - start, m.global_cols))
        for br in np.unique(take_br):
            mask = take_br == br
            src = np.hstack([np.asarray(b) for b in m.blocks[br]])
            strip[mask] = src[take_off[mask]]
        return strip

    return _from_row_source(idx.size, m.global_cols, m.block_shape, fetch)


def vstack(a: BlockedMatrix, b: BlockedMatrix) -> BlockedMatrix:
    """Stack a over b; the result keeps a's blocking."""
    if a.global_cols != b.global_cols:
        raise ValueError(f"column counts differ: {a.shape} over {b.shape}")

    def fetch(start, stop):
        pieces = []
        if start < a.global_rows:
            pieces.append(_rows_dense(a, start, min(stop, a.global_rows)))
        if stop > a.global_rows:
            pieces.append(_rows_dense(b, max(start - a.global_rows, 0), stop - a.global_rows))
        return pieces[0] if len(pieces) == 1 else np.vstack(pieces)

    return _from_row_source(a.global_rows + b.global_rows, a.global_cols, a.block_shape, fetch)


def transpose(m: BlockedMatrix) -> BlockedMatrix:
    n_br, n_bc = m.n_blocks
    shape = BlockShape(m.block_shape.cols, m.block_shape.rows)
    blocks = [[_as_block(m.blocks[i][j].T) for i in range(n_br)] for j in range(n_bc)]
    return BlockedMatrix(m.global_cols, m.global_rows, shape, blocks)


class ColumnFiller:
    """Writes column ranges into an a-priori allocated block grid.

    The grid shape is fixed up front; ``fill`` may then run in any order
    (each column range exactly once).  ``finish`` checks full coverage and
    returns the assembled matrix.
    """

    def __init__(self, global_rows: int, global_cols: int, block_shape: BlockShape):
        n_br, n_bc = grid_shape(global_rows, global_cols, block_shape)
        self.global_rows = global_rows
        self.global_cols = global_cols
        self.block_shape = block_shape
        self._blocks = [
            [
                np.zeros(
                    (
                        min(block_shape.rows, global_rows - i * block_shape.rows),
                        min(block_shape.cols, global_cols - j * block_shape.cols),
                    ),
                    order="F",
                )
                for j in range(n_bc)
            ]
            for i in range(n_br)
        ]
        self._filled = []

    def fill(self, col_start: int, data) -> None:
        data = np.asarray(data, dtype=np.float64)
        if data.shape[0] != self.global_rows:
            raise ValueError(f"strip has {data.shape[0]} rows, expected {self.global_rows}")
        lo, hi = col_start, col_start + data.shape[1]
        if lo < 0 or hi > self.global_cols:
            raise ValueError(f"column range [{lo}, {hi}) out of bounds")
        for a, b in self._filled:
            if lo < b and a < hi:
                raise ValueError(f"column range [{lo}, {hi}) overlaps [{a}, {b})")
        self._filled.append((lo, hi))
        rpb, cpb = self.block_shape.rows, self.block_shape.cols
        for j in range(lo // cpb, (hi - 1) // cpb + 1):
            jlo, jhi = max(lo, j * cpb), min(hi, j * cpb + self._blocks[0][j].shape[1])
            for i, row in enumerate(self._blocks):
                row[j][:, jlo - j * cpb : jhi - j * cpb] = data[
                    i * rpb : i * rpb + row[j].shape[0], jlo - lo : jhi - lo
                ]

    def finish(self) -> BlockedMatrix:
        covered = sum(b - a for a, b in self._filled)
        if covered != self.global_cols:
            raise ValueError(f"only {covered} of {self.global_cols} columns were filled")
        return BlockedMatrix(self.global_rows, self.global_cols, self.block_shape, self._blocks)


def save_bmx(m: BlockedMatrix, path) -> None:
    """Write a matrix in the BMX1 binary layout."""
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(_MAGIC, m.global_rows, m.global_cols, m.block_shape.rows, m.block_shape.cols)
        )
        for row in m.blocks:
            for blk in row:
                fh.write(np.asarray(blk, dtype="<f8").tobytes(order="F"))


def load_bmx(path) -> BlockedMatrix:
    """Read a matrix written by :func:`save_bmx`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, rows, cols, rpb, cpb = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        shape = BlockShape(rpb, cpb)
        n_br, n_bc = grid_shape(rows, cols, shape)
        blocks = []
        for i in range(n_br):
            brow = []
            for j in range(n_bc):
                h = min(rpb, rows - i * rpb)
                w = min(cpb, cols - j * cpb)
                raw = fh.read(8 * h * w)
                if len(raw) < 8 * h * w:
                    raise ValueError(f"{path}: truncated block ({i},{j})")
                brow.append(_as_block(np.frombuffer(raw, dtype="<f8").reshape((h, w), order="F")))
            blocks.append(brow)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after the last block")
    return BlockedMatrix(rows, cols, shape, blocks)


def to_csv(m: BlockedMatrix, path) -> None:
    """Human-readable export; intended for small matrices only."""
    np.savetxt(path, to_dense(m), fmt="%.17g", delimiter=",")
