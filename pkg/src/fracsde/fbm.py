"""
Fractional Brownian motion on uniform grids.

Exact sampling by circulant embedding of the fractional Gaussian noise
covariance (Cholesky fallback), plus the closed-form covariance calculus of
indicator functions in the Gaussian Hilbert space of the driver.

Random streams are keyed by ``(master_seed, path_index)`` through a
counter-based Philox generator, so a path is a pure function of its key and
ensembles can be produced in any order or on any number of threads.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import linalg

__all__ = [
    "FbmBatch",
    "FbmPath",
    "FbmSamplingError",
    "TimeGrid",
    "W_STREAM_OFFSET",
    "fbm_covariance",
    "indicator_inner",
    "path_generator",
    "read_fbm_dump",
    "sample_fbm",
    "sample_fbm_batch",
    "semiinfinite_inner",
    "validate_hurst",
    "write_fbm_dump",
]

# path indices at or above this value are reserved for the auxiliary
# Brownian motions W; x streams must stay below it
W_STREAM_OFFSET = 2**31

EIGEN_CLAMP = 1e-10
_SNAP = 1e-9


class FbmSamplingError(RuntimeError):
    """Raised when no exact factorisation of the covariance is available."""


def validate_hurst(h: float, rough: bool = False) -> float:
    """Check ``0 < h < 1`` and, with ``rough=True``, also ``h < 1/2``."""
    h = float(h)
    if not 0.0 < h < 1.0:
        raise ValueError(f"Hurst parameter must lie in (0, 1), got {h}")
    if rough and h >= 0.5:
        raise ValueError(f"this operation requires H < 1/2, got H={h}")
    return h


# ------------------------------------------------------------------ #
# grids
# ------------------------------------------------------------------ #
@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, T]`` into ``n`` coarse steps of ``m`` fine sub-steps.

    Coarse points are ``t_k = k T / n``, fine points ``u_j = j T / (n m)``;
    coarse point ``k`` is fine point ``k m``. The projections ``eta`` and
    ``lam`` are computed on indices. At the right end ``eta(T) = T``.
    """

    T: float
    n: int
    m: int = 1

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))

    @property
    def N(self) -> int:
        return self.n * self.m

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def fine_dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt

    @property
    def fine_times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.fine_dt

    def coarsen(self, n: int) -> "TimeGrid":
        """Same fine grid viewed with ``n`` coarse steps."""
        if self.N % n:
            raise ValueError(f"n={n} does not divide the fine resolution {self.N}")
        return TimeGrid(self.T, n, self.N // n)

    # -- index maps ------------------------------------------------------
    def eta_index(self, j):
        """Coarse index of ``eta(u_j)``: the last coarse point ``<= u_j``."""
        return np.asarray(j) // self.m

    def lambda_index(self, j):
        """Coarse index of ``lam(u_j)``: the first coarse point ``>= u_j``."""
        return -(-np.asarray(j) // self.m)

    def eta(self, u: float) -> float:
        return self.eta_index(self._fine_floor(u)) * self.dt

    def lam(self, u: float) -> float:
        return float(self._coarse_ceil(u)) * self.dt

    def _fine_floor(self, u: float) -> int:
        r = u / self.fine_dt
        j = round(r)
        return int(j) if abs(r - j) < _SNAP else int(math.floor(r))

    def _coarse_ceil(self, u: float) -> int:
        r = u / self.dt
        k = round(r)
        return int(k) if abs(r - k) < _SNAP else int(math.ceil(r))

    def index_of(self, t: float) -> int:
        """Coarse index of a grid time; misaligned times raise ``ValueError``."""
        r = t / self.dt
        k = round(r)
        if abs(r - k) >= _SNAP or not 0 <= k <= self.n:
            raise ValueError(f"time {t} is not a point of the coarse grid (dt={self.dt})")
        return int(k)

    def step_range(self, s: float, t: float) -> tuple[int, int]:
        """Half-open range ``[k0, k1)`` of steps with ``s <= t_k < t``."""
        if t < s:
            raise ValueError(f"need s <= t, got s={s}, t={t}")
        k0 = min(max(self._coarse_ceil(s), 0), self.n)
        k1 = min(max(self._coarse_ceil(t), 0), self.n)
        return k0, max(k0, k1)


# ------------------------------------------------------------------ #
# covariance calculus
# ------------------------------------------------------------------ #
def _pow(x, h):
    return np.abs(x) ** (2.0 * h)


def fbm_covariance(s, t, h: float):
    """``E[x_s x_t] = (|s|^2H + |t|^2H - |s-t|^2H) / 2``."""
    return 0.5 * (_pow(s, h) + _pow(t, h) - _pow(np.subtract(s, t), h))


def indicator_inner(u, v, s, t, h: float):
    """Inner product of ``1_[u,v]`` and ``1_[s,t]``, i.e. ``E[(x_v - x_u)(x_t - x_s)]``."""
    return 0.5 * (
        _pow(np.subtract(t, u), h)
        + _pow(np.subtract(s, v), h)
        - _pow(np.subtract(s, u), h)
        - _pow(np.subtract(t, v), h)
    )


def semiinfinite_inner(t, a, b, h: float):
    """Inner product of ``1_(-inf, t]`` and ``1_[a, b]``.

    Only defined for ``H < 1/2``, where the limit of the finite intervals
    ``[-M, t]`` exists.
    """
    validate_hurst(h, rough=True)
    return 0.5 * (_pow(np.subtract(t, a), h) - _pow(np.subtract(t, b), h))


# ------------------------------------------------------------------ #
# paths
# ------------------------------------------------------------------ #
def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FbmPath:
    """One fBm trajectory on the fine points of ``grid`` (``values[0] == 0``)."""

    grid: TimeGrid
    h: float
    values: np.ndarray = field(repr=False)
    seed: int
    path_index: int

    def __post_init__(self):
        if self.values.shape != (self.grid.N + 1,):
            raise ValueError(
                f"expected {self.grid.N + 1} values, got shape {self.values.shape}"
            )
        object.__setattr__(self, "values", _readonly(self.values))

    @property
    def key(self) -> tuple:
        """Identity of the underlying noise (independent of the coarse view)."""
        return (self.seed, (self.path_index,), self.grid.N, self.grid.T, self.h)

    @property
    def coarse(self) -> np.ndarray:
        return self.values[:: self.grid.m]

    def coarsen(self, n: int) -> "FbmPath":
        return FbmPath(self.grid.coarsen(n), self.h, self.values, self.seed, self.path_index)


@dataclass(frozen=True)
class FbmBatch:
    """A stack of independent paths, ``values`` of shape ``(M, N + 1)``."""

    grid: TimeGrid
    h: float
    values: np.ndarray = field(repr=False)
    seed: int
    path_indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "path_indices", tuple(int(i) for i in self.path_indices))
        if self.values.shape != (len(self.path_indices), self.grid.N + 1):
            raise ValueError(f"bad batch shape {self.values.shape}")
        object.__setattr__(self, "values", _readonly(self.values))

    def __len__(self):
        return len(self.path_indices)

    @property
    def key(self) -> tuple:
        return (self.seed, self.path_indices, self.grid.N, self.grid.T, self.h)

    @property
    def coarse(self) -> np.ndarray:
        return self.values[:, :: self.grid.m]

    def coarsen(self, n: int) -> "FbmBatch":
        return FbmBatch(self.grid.coarsen(n), self.h, self.values, self.seed, self.path_indices)

    def path(self, i: int) -> FbmPath:
        return FbmPath(self.grid, self.h, self.values[i], self.seed, self.path_indices[i])


def path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    """Independent Philox stream for one Monte Carlo path."""
    if master_seed < 0 or path_index < 0:
        raise ValueError("seeds and path indices must be non-negative")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


def _fgn_autocov(N: int, h: float) -> np.ndarray:
    k = np.arange(N, dtype=float)
    return 0.5 * (np.abs(k + 1) ** (2 * h) - 2 * k ** (2 * h) + np.abs(k - 1) ** (2 * h))


@functools.lru_cache(maxsize=8)
def _embedding_sqrt(N: int, h: float):
    """``sqrt(lambda / 2N)`` for the unit-step fGn embedding, or None if it is not PSD."""
    gamma = _fgn_autocov(N, h)
    row = np.concatenate([gamma, [0.0], gamma[:0:-1]])
    lam = sfft.fft(row).real
    lo = -EIGEN_CLAMP * lam.max()
    if lam.min() < lo:
        return None
    lam = np.clip(lam, 0.0, None)
    out = np.sqrt(lam / row.size)
    out.flags.writeable = False
    return out


@functools.lru_cache(maxsize=4)
def _cholesky_factor(N: int, h: float) -> np.ndarray:
    gamma = _fgn_autocov(N, h)
    cov = linalg.toeplitz(gamma)
    try:
        L = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise FbmSamplingError(
            f"fGn covariance not numerically positive definite (N={N}, H={h})"
        ) from exc
    L.flags.writeable = False
    return L


def _increments(N: int, h: float, rngs, method: str) -> np.ndarray:
    if method not in ("auto", "circulant", "cholesky"):
        raise ValueError(f"unknown sampling method {method!r}")
    root = None if method == "cholesky" else _embedding_sqrt(N, h)
    if root is None:
        if method == "circulant":
            raise FbmSamplingError(f"circulant embedding has negative eigenvalues (N={N}, H={h})")
        L = _cholesky_factor(N, h)
        z = np.stack([g.standard_normal(N) for g in rngs])
        return z @ L.T
    M = root.size
    out = np.empty((len(rngs), N))
    # chunked to bound the complex work array
    chunk = max(1, (1 << 22) // M)
    for lo in range(0, len(rngs), chunk):
        part = rngs[lo : lo + chunk]
        w = np.empty((len(part), M), dtype=complex)
        for r, g in enumerate(part):
            z = g.standard_normal(2 * M)
            w[r].real = z[:M]
            w[r].imag = z[M:]
        w *= root
        out[lo : lo + len(part)] = sfft.fft(w, axis=-1).real[:, :N]
    return out


def sample_fbm_batch(
    grid: TimeGrid,
    h: float,
    master_seed: int,
    path_indices,
    method: str = "auto",
) -> FbmBatch:
    """Sample one path per index; path ``i`` depends only on ``(master_seed, i)``."""
    h = validate_hurst(h)
    idx = [int(i) for i in path_indices]
    if any(i >= W_STREAM_OFFSET for i in idx):
        raise ValueError(f"path indices >= {W_STREAM_OFFSET} are reserved for W streams")
    rngs = [path_generator(master_seed, i) for i in idx]
    inc = _increments(grid.N, h, rngs, method) * grid.fine_dt**h
    values = np.zeros((len(idx), grid.N + 1))
    np.cumsum(inc, axis=1, out=values[:, 1:])
    return FbmBatch(grid, h, values, int(master_seed), tuple(idx))


def sample_fbm(
    grid: TimeGrid,
    h: float,
    master_seed: int,
    path_index: int,
    method: str = "auto",
) -> FbmPath:
    """Exact fBm sample on the fine grid via circulant embedding of fGn.

    Falls back to a Cholesky factorisation when the embedding has an
    eigenvalue below ``-1e-10 * max``; smaller negatives are clamped to 0.
    """
    return sample_fbm_batch(grid, h, master_seed, [path_index], method).path(0)


# ------------------------------------------------------------------ #
# binary dump
# ------------------------------------------------------------------ #
_MAGIC = b"FBM1"
# magic, n, m, H, seed, path_index  (32 bytes)
_HEADER = struct.Struct("<4sIIdQI")


def write_fbm_dump(path: FbmPath, target) -> None:
    """Write header + little-endian float64 values."""
    head = _HEADER.pack(
        _MAGIC, path.grid.n, path.grid.m, path.h, path.seed, path.path_index & 0xFFFFFFFF
    )
    with open(Path(target), "wb") as fh:
        fh.write(head)
        fh.write(np.asarray(path.values, dtype="<f8").tobytes())


def read_fbm_dump(source, T: float = 1.0) -> FbmPath:
    """Read a dump; the horizon is not stored and must be supplied."""
    raw = Path(source).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for an FBM1 header")
    magic, n, m, h, seed, index = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return FbmPath(TimeGrid(T, n, m), h, values.astype(float), seed, index)
