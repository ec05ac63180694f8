"""
Discrete sums driven by a sampled fBm path.

Every function works on an ``FbmPath`` or an ``FbmBatch``: arrays carry the
time index on their last axis, so a batch is just extra leading axes. Time
integrals over one coarse step are composite trapezoid rules on the ``m``
fine sub-steps of the path's grid.

Interval arguments ``(s, t)`` select the coarse steps with ``s <= t_k < t``;
the weight base point of the monomial and Skorohod sums is ``lam(s)``, the
first coarse point at or after ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constants import mu
from .fbm import TimeGrid, indicator_inner, validate_hurst

__all__ = [
    "ControlledPath",
    "compensated_sum",
    "discrete_integral",
    "exact_variance_z1",
    "h_increment",
    "h_increments",
    "least_ell",
    "monomial_sum",
    "monomial_terms",
    "remainder_constant",
    "riemann_residual",
    "skorohod_equivalence_gap",
    "skorohod_sum",
    "weighted_sums",
]


def least_ell(h: float) -> int:
    """Smallest integer ``l`` with ``l H > 1/2``."""
    h = validate_hurst(h)
    ell = math.floor(0.5 / h) + 1
    while (ell - 1) * h > 0.5:
        ell -= 1
    return ell


def _segments(values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Increments ``x_u - x_{t_k}`` on each step, shape ``(..., n, m + 1)``."""
    n, m = grid.n, grid.m
    head = values[..., :-1].reshape(values.shape[:-1] + (n, m))
    tail = values[..., m::m][..., None]
    seg = np.concatenate([head, tail], axis=-1)
    return seg - seg[..., :1]


def _trapezoid(f: np.ndarray, du: float) -> np.ndarray:
    return du * (f[..., 1:-1].sum(axis=-1) + 0.5 * (f[..., 0] + f[..., -1]))


def h_increments(path, i: int) -> np.ndarray:
    """``h^i_k = int_{t_k}^{t_{k+1}} (x_u - x_{t_k})^i / i! du`` for every coarse step."""
    if i < 1:
        raise ValueError("order i must be >= 1")
    grid = path.grid
    if grid.m < 2:
        raise ValueError(f"need at least 2 fine sub-steps per coarse step, got m={grid.m}")
    d = _segments(path.values, grid)
    return _trapezoid(d**i, grid.fine_dt) / math.factorial(i)


def h_increment(path, k: int, i: int):
    if not 0 <= k < path.grid.n:
        raise IndexError(f"step {k} outside 0..{path.grid.n - 1}")
    return h_increments(path, i)[..., k]


def _weighted(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``sum_k f_k g_k`` where ``f`` may carry one trailing vector axis."""
    if f.ndim == g.ndim + 1:
        return np.einsum("...kd,...k->...d", f, g)
    return np.sum(f * g, axis=-1)


def discrete_integral(
    f,
    g: np.ndarray,
    grid: TimeGrid,
    s: float,
    t: float,
) -> np.ndarray:
    """``J_s^t(f, g) = sum_{s <= t_k < t} f_{t_k} g_{t_k t_{k+1}}``.

    ``f`` is either an array over coarse points (``n`` or ``n + 1`` entries on
    the last axis, or the second to last with a vector axis) or, for the
    two-argument variant, a callable ``f(b, ks)`` returning ``f_{t_b t_k}``
    for the base index ``b = lam(s)``. ``s`` and ``t`` must be grid points.
    """
    k0, k1 = grid.index_of(s), grid.index_of(t)
    if k1 < k0:
        raise ValueError("need s <= t")
    g = np.asarray(g)
    ks = np.arange(k0, k1)
    if callable(f):
        fk = np.asarray(f(k0, ks))
    else:
        f = np.asarray(f)
        fk = f[..., k0:k1, :] if f.ndim == g.ndim + 1 else f[..., k0:k1]
    return _weighted(fk, g[..., k0:k1])


# ------------------------------------------------------------------ #
# controlled paths and compensated sums
# ------------------------------------------------------------------ #
@dataclass(frozen=True)
class ControlledPath:
    """Levels ``(z, z', ..., z^{(l-1)})`` of a path controlled by ``x``.

    Each level lives either on the coarse points (``n + 1`` values) or on the
    fine points (``N + 1``) of ``grid`` along the time axis; a trailing vector
    axis is allowed when ``vector`` is set.
    """

    grid: TimeGrid
    levels: tuple = field(repr=False)
    vector: bool = False

    def __post_init__(self):
        levels = tuple(np.asarray(a, dtype=float) for a in self.levels)
        if not levels:
            raise ValueError("a controlled path needs at least one level")
        object.__setattr__(self, "levels", levels)
        for a in levels:
            if self._time_len(a) not in (self.grid.n + 1, self.grid.N + 1):
                raise ValueError(f"level of length {self._time_len(a)} does not fit {self.grid}")

    def _time_len(self, a) -> int:
        return a.shape[-2] if self.vector else a.shape[-1]

    @property
    def ell(self) -> int:
        return len(self.levels)

    @property
    def on_fine_grid(self) -> bool:
        return self._time_len(self.levels[0]) == self.grid.N + 1

    def coarse_level(self, i: int) -> np.ndarray:
        a = self.levels[i]
        if self._time_len(a) == self.grid.n + 1:
            return a
        return a[..., :: self.grid.m, :] if self.vector else a[..., :: self.grid.m]

    @classmethod
    def from_functions(cls, path, funcs: Sequence[Callable]) -> "ControlledPath":
        """``z^{(i)} = f_i(x)`` on the fine grid, e.g. ``(sin, cos, -sin)``."""
        return cls(path.grid, tuple(f(path.values) for f in funcs))


def weighted_sums(z: ControlledPath, hs: Sequence[np.ndarray], k0: int, k1: int) -> list:
    """The individual sums ``J(z^{(i-1)}, h^i)`` over steps ``[k0, k1)``."""
    out = []
    for i, h_i in enumerate(hs):
        zc = z.coarse_level(i)
        zk = zc[..., k0:k1, :] if z.vector else zc[..., k0:k1]
        out.append(_weighted(zk, h_i[..., k0:k1]))
    return out


def compensated_sum(z: ControlledPath, path, s: float, t: float, override: bool = False):
    """``E^{z,n}_l(s, t) = sum_{i=1}^{l} J_s^t(z^{(i-1)}, h^i)``.

    ``l = z.ell`` must satisfy ``l H > 1/2`` unless ``override`` is set.
    """
    h = path.h
    if z.ell * h <= 0.5 and not override:
        raise ValueError(
            f"l={z.ell} levels do not compensate at H={h} (need l H > 1/2, "
            f"least such l is {least_ell(h)}); pass override=True to study it anyway"
        )
    if z.grid != path.grid:
        raise ValueError(f"weight grid {z.grid} differs from path grid {path.grid}")
    k0, k1 = path.grid.step_range(s, t)
    hs = [h_increments(path, i) for i in range(1, z.ell + 1)]
    return sum(weighted_sums(z, hs, k0, k1))


# ------------------------------------------------------------------ #
# monomial and Skorohod-type sums
# ------------------------------------------------------------------ #
def _monomial(xc: np.ndarray, b: int, k0: int, k1: int, p: int) -> np.ndarray:
    """``x^p_{t_b t_k}`` for ``k in [k0, k1)``, zero for negative ``p``."""
    shape = xc[..., k0:k1].shape
    if p < 0:
        return np.zeros(shape)
    if p == 0:
        return np.ones(shape)
    return (xc[..., k0:k1] - xc[..., b : b + 1]) ** p / math.factorial(p)


def monomial_terms(path, L: int, s: float, t: float) -> list:
    """The summands ``J_s^t(x^{L-i}, h^i)``, ``i = 1..L``, weights based at ``lam(s)``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    k0, k1 = path.grid.step_range(s, t)
    xc = path.coarse
    out = []
    for i in range(1, L + 1):
        w = _monomial(xc, k0, k0, k1, L - i)
        out.append(np.sum(w * h_increments(path, i)[..., k0:k1], axis=-1))
    return out


def monomial_sum(path, L: int, s: float, t: float):
    """``E^x_L(s, t) = sum_{i=1}^{L} J_s^t(x^{L-i}, h^i)``."""
    return sum(monomial_terms(path, L, s, t))


def _correction_integrals(grid: TimeGrid, h: float, b: int, k0: int, k1: int) -> np.ndarray:
    """``int_{t_k}^{t_{k+1}} <1_[t_b, t_k], 1_[t_k, v]> dv`` by the same trapezoid rule."""
    ks = np.arange(k0, k1)[:, None]
    tk = ks * grid.dt
    v = tk + np.arange(grid.m + 1)[None, :] * grid.fine_dt
    f = indicator_inner(b * grid.dt, tk, tk, v, h)
    return _trapezoid(f, grid.fine_dt)


def skorohod_sum(path, i: int, s: float, t: float):
    """Skorohod-type Riemann sum ``Z^{(n),i}_{st}``.

    Each summand is ``int_{t_k}^{t_{k+1}} delta(x^{i-1}_{lam(s) t_k} 1_[t_k, v]) dv``,
    evaluated through ``delta(F u) = F delta(u) - <DF, u>``:

        x^{i-1}_{b k} (x_v - x_{t_k}) - x^{i-2}_{b k} <1_[t_b, t_k], 1_[t_k, v]>,

    scaled by ``n^{H + 1/2}``.
    """
    if i < 1:
        raise ValueError("order i must be >= 1")
    grid, h = path.grid, path.h
    k0, k1 = grid.step_range(s, t)
    xc = path.coarse
    h1 = h_increments(path, 1)[..., k0:k1]
    main = np.sum(_monomial(xc, k0, k0, k1, i - 1) * h1, axis=-1)
    if i >= 2:
        corr = _correction_integrals(grid, h, k0, k0, k1)
        main = main - np.sum(_monomial(xc, k0, k0, k1, i - 2) * corr, axis=-1)
    return grid.n ** (h + 0.5) * main


def exact_variance_z1(grid: TimeGrid, h: float) -> float:
    """``Var Z^{(n),1}_{0T} = T^{2H+2} sum_{|j|<n} (1 - |j|/n) mu(j)``."""
    h = validate_hurst(h, rough=True)
    n = grid.n
    j = np.arange(1, n)
    total = mu(0, h) + 2.0 * np.sum(((1 - j / n) * mu(j, h))[::-1])
    return float(grid.T ** (2 * h + 2) * total)


def skorohod_equivalence_gap(paths, L: int, n_list: Sequence[int], s: float = 0.0, t: float | None = None):
    """Empirical L2 norm of ``n^{H+1/2} E^x_L(s,t) - Z^{(n),L}_{st}`` for each ``n``.

    ``paths`` is a batch on a fine grid that every ``n`` divides; the same
    paths drive both sums.
    """
    if paths.values.ndim != 2:
        raise ValueError("expected a batch of paths")
    t = paths.grid.T if t is None else t
    out = []
    for n in n_list:
        if paths.grid.N % n:
            raise ValueError(f"n={n} does not divide the ensemble's fine grid N={paths.grid.N}")
        view = paths.coarsen(n)
        gap = n ** (paths.h + 0.5) * monomial_sum(view, L, s, t) - skorohod_sum(view, L, s, t)
        out.append(math.sqrt(float(np.mean(gap**2))))
    return np.array(out)


def riemann_residual(z: ControlledPath, path, s: float, t: float):
    """``U^n_{st} = n^{H+1/2} (int_s^t z_u du - sum_{s <= t_k < t} z_{t_k} T / n)``.

    ``z`` needs ``l + 1`` levels (``l`` the least integer with ``l H > 1/2``)
    and its base level on the fine grid, where the integral is taken by the
    trapezoid rule.
    """
    grid, h = path.grid, path.h
    need = least_ell(h) + 1
    if z.ell < need:
        raise ValueError(f"insufficient levels: need {need} at H={h}, got {z.ell}")
    if not z.on_fine_grid:
        raise ValueError("the base level must be given on the fine grid")
    k0, k1 = grid.step_range(s, t)
    zf = z.levels[0][..., k0 * grid.m : k1 * grid.m + 1]
    integral = _trapezoid(zf, grid.fine_dt) if k1 > k0 else np.zeros(zf.shape[:-1])
    riemann = np.sum(z.coarse_level(0)[..., k0:k1], axis=-1) * grid.dt
    return grid.n ** (h + 0.5) * (integral - riemann)


def remainder_constant(
    z: ControlledPath,
    path,
    eps: float = 0.05,
    n_pairs: int = 200,
    seed: int = 0,
) -> np.ndarray:
    """Controlled-path diagnostic ``G``.

    For random coarse pairs ``s < t`` computes
    ``r^{(k)}_{st} = dz^{(k)}_{st} - sum_{i=1}^{l-k-1} z^{(k+i)}_s x^i_{st}`` and
    returns ``max |r^{(k)}_{st}| / (t - s)^{(l-k)(H-eps)}`` per path.
    """
    grid, h, ell = path.grid, path.h, z.ell
    rng = np.random.default_rng(seed)
    pairs = np.sort(rng.choice(grid.n + 1, size=(n_pairs, 2), replace=True), axis=1)
    pairs = pairs[pairs[:, 0] < pairs[:, 1]]
    a, b = pairs[:, 0], pairs[:, 1]
    xc = path.coarse
    dx = xc[..., b] - xc[..., a]
    lv = [z.coarse_level(i) for i in range(ell)]
    G = np.zeros(xc.shape[:-1])
    for k in range(ell):
        r = lv[k][..., b] - lv[k][..., a]
        for i in range(1, ell - k):
            r = r - lv[k + i][..., a] * dx**i / math.factorial(i)
        scale = ((b - a) * grid.dt) ** ((ell - k) * (h - eps))
        G = np.maximum(G, np.max(np.abs(r) / scale, axis=-1))
    return G
