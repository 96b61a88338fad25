"""Exact joint sampling of (W^H, W) paths on a uniform grid.

Random numbers are organised in *stream blocks*: paths ``[b*chunk, (b+1)*chunk)``
are driven by a Philox generator keyed by ``SeedSequence(seed, spawn_key=(b,))``.
Within a block the standard normals are drawn as one ``(paths, dim)`` array in
C order, i.e. each path consumes ``dim`` consecutive normals.  A batch is thus
fully determined by ``(seed, chunk, grid, H, M)`` and independent of how many
workers generate it or in which order blocks are produced.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .kernels_cov import HurstParams, PsdFactor, TimeGrid

__all__ = [
    "DEFAULT_CHUNK",
    "Moments",
    "PathBatch",
    "block_normals",
    "dump_batch",
    "empirical_moments",
    "iter_path_blocks",
    "load_batch",
    "sample_joint_paths",
    "subsample",
]

DEFAULT_CHUNK = 1024

_MAGIC = b"RWPB"
_VERSION = 1
# magic, version, H, T, n, M, seed, chunk -> padded to 64 bytes
_HEADER = struct.Struct("<4sIddQQqQ")
_HEADER_SIZE = 64


def _generator(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def block_normals(seed: int, block: int, paths: int, dim: int) -> np.ndarray:
    """Standard normals for one stream block, shape ``(paths, dim)``."""
    return _generator(seed, block).standard_normal((paths, dim))


@dataclass(frozen=True)
class PathBatch:
    """``M`` joint paths of ``(W^H, W)``; row ``i`` is time ``t_i``, column is a path.

    ``first_path`` is the global index of column 0, non-zero for stream blocks
    produced by :func:`iter_path_blocks`.
    """

    grid: TimeGrid
    H: float
    WH: np.ndarray
    W: np.ndarray
    seed: int
    stream_layout: int = DEFAULT_CHUNK
    first_path: int = 0

    def __post_init__(self) -> None:
        rows = self.grid.n + 1
        if self.WH.ndim != 2 or self.WH.shape[0] != rows or self.W.shape != self.WH.shape:
            raise ValueError(
                f"path arrays must both have shape (n+1, M) with n+1 = {rows}, "
                f"got {self.WH.shape} and {self.W.shape}"
            )

    @property
    def M(self) -> int:
        return self.WH.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


def _block_paths(factor: PsdFactor, grid: TimeGrid, hp: HurstParams, seed: int,
                 chunk: int, block: int, paths: int) -> PathBatch:
    n = grid.n
    z = block_normals(seed, block, paths, 2 * n)
    X = factor.F @ z.T
    WH = np.zeros((n + 1, paths))
    W = np.zeros((n + 1, paths))
    WH[1:] = X[:n]
    W[1:] = X[n:]
    return PathBatch(grid, hp.H, WH, W, seed, chunk, block * chunk)


def _check_factor(factor: PsdFactor, grid: TimeGrid) -> None:
    if factor.dim != 2 * grid.n:
        raise ValueError(
            f"factor dimension {factor.dim} does not match grid (expected {2 * grid.n})"
        )


def iter_path_blocks(factor: PsdFactor, grid: TimeGrid, hp: HurstParams, M: int,
                     seed: int, stream_layout: int = DEFAULT_CHUNK,
                     blocks_per_yield: int = 1) -> Iterator[PathBatch]:
    """Yield the batch of :func:`sample_joint_paths` as consecutive column blocks."""
    _check_factor(factor, grid)
    if M < 0 or stream_layout < 1 or blocks_per_yield < 1:
        raise ValueError("M must be >= 0 and stream_layout, blocks_per_yield >= 1")
    nblocks = -(-M // stream_layout)
    for start in range(0, nblocks, blocks_per_yield):
        parts = []
        for b in range(start, min(start + blocks_per_yield, nblocks)):
            paths = min(stream_layout, M - b * stream_layout)
            parts.append(_block_paths(factor, grid, hp, seed, stream_layout, b, paths))
        if len(parts) == 1:
            yield parts[0]
        else:
            yield PathBatch(grid, hp.H, np.hstack([p.WH for p in parts]),
                            np.hstack([p.W for p in parts]), seed, stream_layout,
                            parts[0].first_path)


def sample_joint_paths(factor: PsdFactor, grid: TimeGrid, hp: HurstParams, M: int,
                       seed: int, stream_layout: int = DEFAULT_CHUNK,
                       workers: int = 1) -> PathBatch:
    """Draw ``M`` exact joint paths of ``(W^H, W)`` on ``grid``.

    ``factor`` must factorize the covariance built for the same ``(grid, hp)``.
    Blocks may be generated by several threads; the result is bitwise identical
    for any ``workers``.
    """
    _check_factor(factor, grid)
    if M < 0:
        raise ValueError("M must be non-negative")
    n = grid.n
    WH = np.zeros((n + 1, M))
    W = np.zeros((n + 1, M))
    nblocks = -(-M // stream_layout)

    def fill(b: int) -> None:
        lo = b * stream_layout
        paths = min(stream_layout, M - lo)
        blk = _block_paths(factor, grid, hp, seed, stream_layout, b, paths)
        WH[:, lo:lo + paths] = blk.WH
        W[:, lo:lo + paths] = blk.W

    if workers > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(nblocks)))
    else:
        for b in range(nblocks):
            fill(b)
    return PathBatch(grid, hp.H, WH, W, seed, stream_layout)


def subsample(batch: PathBatch, stride: int) -> PathBatch:
    """View of ``batch`` on every ``stride``-th grid point (rows 0, stride, ..., n)."""
    coarse = batch.grid.coarsen(stride)
    return PathBatch(coarse, batch.H, batch.WH[::stride], batch.W[::stride],
                     batch.seed, batch.stream_layout, batch.first_path)


@dataclass(frozen=True)
class Moments:
    """Per-grid-point sample moments with standard errors."""

    mean: np.ndarray
    mean_se: np.ndarray
    var: np.ndarray
    var_se: np.ndarray
    m4: np.ndarray
    m4_se: np.ndarray


def _moments(X: np.ndarray) -> Moments:
    M = X.shape[1]
    mean = X.mean(axis=1)
    c = X - mean[:, None]
    var = (c**2).sum(axis=1) / (M - 1)
    m4c = (c**4).mean(axis=1)
    m4 = (X**4).mean(axis=1)
    m8 = (X**8).mean(axis=1)
    return Moments(
        mean=mean,
        mean_se=np.sqrt(var / M),
        var=var,
        var_se=np.sqrt(np.maximum(m4c - var**2, 0.0) / M),
        m4=m4,
        m4_se=np.sqrt(np.maximum(m8 - m4**2, 0.0) / M),
    )


def empirical_moments(batch: PathBatch) -> dict[str, Moments]:
    """Sample mean, variance and raw fourth moment of ``W^H`` and ``W`` per time."""
    if batch.M < 2:
        raise ValueError("need at least two paths for sample moments")
    return {"WH": _moments(batch.WH), "W": _moments(batch.W)}


def dump_batch(batch: PathBatch, path) -> None:
    """Write ``batch`` in the little-endian binary layout documented in the README."""
    header = _HEADER.pack(_MAGIC, _VERSION, float(batch.H), float(batch.grid.T),
                          batch.grid.n, batch.M, int(batch.seed), batch.stream_layout)
    with open(path, "wb") as fh:
        fh.write(header.ljust(_HEADER_SIZE, b"\0"))
        fh.write(np.ascontiguousarray(batch.WH, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(batch.W, dtype="<f8").tobytes())


def load_batch(path) -> PathBatch:
    """Read a file written by :func:`dump_batch`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_SIZE:
        raise ValueError(f"{path}: file too short for a path batch header")
    magic, version, H, T, n, M, seed, chunk = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    size = (n + 1) * M
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER_SIZE)
    if body.size != 2 * size:
        raise ValueError(f"{path}: expected {2 * size} values, found {body.size}")
    WH = body[:size].reshape(n + 1, M).astype(float)
    W = body[size:].reshape(n + 1, M).astype(float)
    return PathBatch(TimeGrid(T, n), H, WH, W, seed, chunk)
