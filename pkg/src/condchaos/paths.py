"""Time grid and seeded Brownian increments.

Every increment stream is keyed by ``(seed, role, m, i)`` through
:class:`numpy.random.SeedSequence`, so the common-noise array does not depend
on how many idiosyncratic particles are requested and generation order is
irrelevant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, ResourceError

_ROLE_COMMON = 0
_ROLE_IDIO = 1

_MAX_ELEMENTS = 2**31

DUMP_MAGIC = b"CBPB"
DUMP_VERSION = 1
# magic, version, T, K, d, n, M, seed, idio_stream
_HEADER = struct.Struct("<4sIdQQQQqQ")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    K: int

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def nodes(self) -> np.ndarray:
        # multiply rather than accumulate; pin the last node to T
        nodes = np.arange(self.K + 1) * self.dt
        nodes[-1] = self.T
        return nodes

    @property
    def num_nodes(self) -> int:
        return self.K + 1


def make_time_grid(T: float, K: int) -> TimeGrid:
    if not np.isfinite(T) or T <= 0:
        raise InvalidArgument(f"horizon T must be positive, got {T}")
    if int(K) != K or K < 1:
        raise InvalidArgument(f"number of steps K must be a positive integer, got {K}")
    return TimeGrid(float(T), int(K))


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Common increments ``[M][K][d]`` and idiosyncratic increments ``[M][n][K][d]``."""

    grid: TimeGrid
    common_increments: np.ndarray
    idio_increments: np.ndarray
    seed: int
    idio_stream: int = 0
    replicas: int = 1
    key: tuple = field(init=False)

    def __post_init__(self):
        self.common_increments.setflags(write=False)
        self.idio_increments.setflags(write=False)
        object.__setattr__(
            self,
            "key",
            (self.seed, self.idio_stream, self.replicas, self.grid.T, self.grid.K)
            + self.idio_increments.shape,
        )

    @property
    def M(self) -> int:
        return self.common_increments.shape[0]

    @property
    def n(self) -> int:
        return self.idio_increments.shape[1]

    @property
    def d(self) -> int:
        return self.common_increments.shape[2]

    @property
    def K(self) -> int:
        return self.grid.K

    def common_paths(self) -> np.ndarray:
        """Common path values ``[M][K+1][d]``."""
        return _prefix_sums(self.common_increments, axis=1)

    def idio_paths(self) -> np.ndarray:
        """Idiosyncratic path values ``[M][n][K+1][d]``."""
        return _prefix_sums(self.idio_increments, axis=2)


def _prefix_sums(increments: np.ndarray, axis: int) -> np.ndarray:
    shape = list(increments.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    idx = [slice(None)] * len(shape)
    idx[axis] = slice(1, None)
    np.cumsum(increments, axis=axis, out=out[tuple(idx)])
    return out


def _normals(seed: int, role: int, m: int, i: int, size: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(role, m, i))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal(size)


def sample_path_bundle(
    grid: TimeGrid, n: int, M: int, d: int, seed: int, idio_stream: int = 0
) -> PathBundle:
    """Sample a bundle of Brownian increments with variance ``grid.dt`` per coordinate.

    ``idio_stream`` selects an independent family of idiosyncratic streams
    sharing the same common noise (used for reference clouds).
    """
    for name, value in (("n", n), ("M", M), ("d", d)):
        if int(value) != value or value < 1:
            raise InvalidArgument(f"{name} must be a positive integer, got {value}")
    if idio_stream < 0:
        raise InvalidArgument("idio_stream must be nonnegative")
    K = grid.K
    total = M * (n + 1) * K * d
    if total > _MAX_ELEMENTS:
        raise ResourceError(f"bundle of {total} increments exceeds the {_MAX_ELEMENTS} limit")
    scale = np.sqrt(grid.dt)
    seed = int(seed)
    common = np.empty((M, K, d))
    idio = np.empty((M, n, K, d))
    for m in range(M):
        common[m] = _normals(seed, _ROLE_COMMON, m, 0, K * d).reshape(K, d)
        for i in range(n):
            idio[m, i] = _normals(seed, _ROLE_IDIO + idio_stream, m, i, K * d).reshape(K, d)
    common *= scale
    idio *= scale
    return PathBundle(grid, common, idio, seed, idio_stream)


def bundle_from_arrays(grid: TimeGrid, common, idio, seed: int = 0) -> PathBundle:
    common = np.array(common, dtype=float)
    idio = np.array(idio, dtype=float)
    if common.ndim != 3 or idio.ndim != 4:
        raise InvalidArgument("expected common [M][K][d] and idio [M][n][K][d] arrays")
    M, K, d = common.shape
    if idio.shape[0] != M or idio.shape[2] != K or idio.shape[3] != d or K != grid.K:
        raise InvalidArgument("increment array shapes disagree with each other or the grid")
    return PathBundle(grid, common, idio, int(seed))


def split_replicas(bundle: PathBundle, R: int) -> PathBundle:
    """Regroup ``R*n`` particles per common path into ``R`` systems of ``n``.

    The result has ``M*R`` rows; row ``m*R + r`` is replica ``r`` of common path ``m``.
    """
    if R < 1 or bundle.n % R:
        raise InvalidArgument(f"cannot split {bundle.n} particles into {R} replicas")
    n = bundle.n // R
    common = np.repeat(bundle.common_increments, R, axis=0)
    idio = bundle.idio_increments.reshape(bundle.M * R, n, bundle.K, bundle.d)
    return PathBundle(bundle.grid, common, idio.copy(), bundle.seed,
                      bundle.idio_stream, bundle.replicas * R)


def cumulative_path(bundle: PathBundle, which: str, indices) -> np.ndarray:
    """Path values at every grid node for the selected paths.

    ``which='common'`` takes an iterable of common-path indices and returns
    ``[len][K+1][d]``; ``which='idio'`` takes ``(m, i)`` pairs and returns the
    same shape.
    """
    if which == "common":
        idx = np.asarray(indices, dtype=int).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= bundle.M):
            raise InvalidArgument(f"common-path index out of range [0, {bundle.M})")
        inc = bundle.common_increments[idx]
    elif which == "idio":
        pairs = np.asarray(indices, dtype=int).reshape(-1, 2)
        m, i = pairs[:, 0], pairs[:, 1]
        if pairs.size and (m.min() < 0 or m.max() >= bundle.M or i.min() < 0 or i.max() >= bundle.n):
            raise InvalidArgument("idiosyncratic (m, i) index out of range")
        inc = bundle.idio_increments[m, i]
    else:
        raise InvalidArgument(f"which must be 'common' or 'idio', got {which!r}")
    return _prefix_sums(inc, axis=1)


def dump_bundle(bundle: PathBundle, path) -> None:
    """Write the binary bundle format: header, common block, idio block (float64 LE)."""
    header = _HEADER.pack(DUMP_MAGIC, DUMP_VERSION, bundle.grid.T, bundle.K, bundle.d,
                          bundle.n, bundle.M, bundle.seed, bundle.idio_stream)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(bundle.common_increments, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.idio_increments, dtype="<f8").tobytes())


def load_bundle(path) -> PathBundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise InvalidArgument(f"{path}: truncated header")
    magic, version, T, K, d, n, M, seed, stream = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC or version != DUMP_VERSION:
        raise InvalidArgument(f"{path}: not a bundle file (magic={magic!r}, version={version})")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    nc = M * K * d
    if body.size != nc + M * n * K * d:
        raise InvalidArgument(f"{path}: payload size does not match header")
    grid = make_time_grid(T, K)
    common = body[:nc].reshape(M, K, d).astype(float)
    idio = body[nc:].reshape(M, n, K, d).astype(float)
    return PathBundle(grid, common, idio, seed, stream)
