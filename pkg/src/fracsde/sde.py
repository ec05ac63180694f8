"""
Additive SDEs driven by a one-dimensional fBm.

    y_t = y_0 + int_0^t b(y_s) ds + int_0^t sigma(s) dx_s,   y in R^d.

States are arrays with the time index second to last and the state
dimension last, so a batch of paths gives shape ``(M, n + 1, d)``. Drift
derivatives ``d^i b(y)`` are arrays with ``i + 1`` trailing axes of size
``d``: the output component first, then the ``i`` input slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constants import CHResult
from .fbm import W_STREAM_OFFSET, TimeGrid, path_generator, validate_hurst
from .sums import ControlledPath, compensated_sum, h_increments, least_ell

__all__ = [
    "EulerResult",
    "FundamentalPair",
    "LimitSdeResult",
    "SdeProblem",
    "check_derivatives",
    "conditional_variance",
    "corollary_residual",
    "e211",
    "error_process",
    "euler_solve",
    "fundamental_solution",
    "limit_sde_solve",
    "linear_problem",
    "reference_solve",
    "scalar_problem",
    "sine_problem",
    "weight_process",
]

DEFECT_TOL = 1e-6
INVERSE_TOL = 1e-8


@dataclass(frozen=True)
class SdeProblem:
    """Drift ``b`` with derivatives, diffusion ``sigma`` with ``sigma'``, and ``y0``.

    ``b(y)`` maps ``(..., d)`` to ``(..., d)``; ``b_derivs[i - 1](y)`` returns
    ``d^i b(y)`` with shape ``(...,) + (d,) * (i + 1)``. ``sigma`` and
    ``sigma_prime`` map a time array of shape ``(k,)`` to ``(k, d)``.
    """

    dim: int
    y0: np.ndarray
    b: Callable
    b_derivs: tuple
    sigma: Callable
    sigma_prime: Callable
    name: str = "custom"

    def __post_init__(self):
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if y0.shape != (self.dim,):
            raise ValueError(f"y0 must have shape ({self.dim},), got {y0.shape}")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "b_derivs", tuple(self.b_derivs))

    @property
    def max_order(self) -> int:
        return len(self.b_derivs)

    def require_order(self, order: int) -> None:
        if order > self.max_order:
            raise ValueError(
                f"problem {self.name!r} supplies drift derivatives up to order "
                f"{self.max_order}, but order {order} is needed"
            )

    def deriv(self, i: int, y):
        self.require_order(i)
        return self.b_derivs[i - 1](y)

    def sigma_at(self, t) -> np.ndarray:
        return np.asarray(self.sigma(np.atleast_1d(np.asarray(t, dtype=float))), dtype=float)

    def sigma_prime_at(self, t) -> np.ndarray:
        return np.asarray(self.sigma_prime(np.atleast_1d(np.asarray(t, dtype=float))), dtype=float)


def scalar_problem(
    b: Callable,
    derivs: Sequence[Callable],
    sigma: Callable,
    sigma_prime: Callable,
    y0: float,
    name: str = "scalar",
) -> SdeProblem:
    """Wrap scalar ufunc-style callables into a ``d = 1`` problem."""

    def lift(f, i):
        def g(y):
            v = f(y[..., 0])
            return np.reshape(v, np.shape(v) + (1,) * (i + 1))

        return g

    def lift_t(f):
        def g(t):
            return np.broadcast_to(np.asarray(f(t), dtype=float), np.shape(t))[:, None]

        return g

    return SdeProblem(
        1,
        np.array([y0], dtype=float),
        lambda y: b(y[..., 0])[..., None],
        tuple(lift(f, i) for i, f in enumerate(derivs, start=1)),
        lift_t(sigma),
        lift_t(sigma_prime),
        name,
    )


def sine_problem(y0: float = 1.0, orders: int = 12) -> SdeProblem:
    """``b = sin``, ``sigma(t) = 1 + t / 2``."""
    cycle = (np.cos, lambda y: -np.sin(y), lambda y: -np.cos(y), np.sin)
    derivs = [cycle[i % 4] for i in range(orders)]
    return scalar_problem(
        np.sin, derivs, lambda t: 1.0 + 0.5 * t, lambda t: 0.5 + 0.0 * t, y0, name="sine"
    )


def linear_problem(A, sigma, y0, orders: int = 12) -> SdeProblem:
    """``b(y) = A y`` with constant diffusion vector ``sigma``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (d,)).copy()

    def first(y):
        return np.broadcast_to(A, np.shape(y)[:-1] + (d, d))

    def zero(i):
        return lambda y: np.zeros(np.shape(y)[:-1] + (d,) * (i + 1))

    derivs = [first] + [zero(i) for i in range(2, orders + 1)]
    return SdeProblem(
        d,
        y0,
        lambda y: np.einsum("ij,...j->...i", A, y),
        derivs,
        lambda t: np.tile(sig, (np.size(t), 1)),
        lambda t: np.zeros((np.size(t), d)),
        name="linear",
    )


def check_derivatives(
    problem: SdeProblem,
    order: int,
    n_points: int = 20,
    seed: int = 0,
    rtol: float = 1e-5,
    step: float = 1e-5,
) -> float:
    """Compare each ``d^i b`` with central differences of ``d^{i-1} b``.

    Returns the worst relative discrepancy and raises ``ValueError`` above ``rtol``.
    """
    rng = np.random.default_rng(seed)
    y = rng.uniform(-2, 2, size=(n_points, problem.dim))
    worst = 0.0
    for i in range(1, order + 1):
        prev = problem.b if i == 1 else (lambda v, i=i: problem.deriv(i - 1, v))
        got = problem.deriv(i, y)
        for j in range(problem.dim):
            e = np.zeros(problem.dim)
            e[j] = step
            fd = (prev(y + e) - prev(y - e)) / (2 * step)
            ref = got[..., j]
            scale = np.maximum(np.abs(fd), 1.0)
            worst = max(worst, float(np.max(np.abs(ref - fd) / scale)))
    if worst > rtol:
        raise ValueError(f"drift derivatives of {problem.name!r} disagree with finite differences ({worst:.2e})")
    return worst


# ------------------------------------------------------------------ #
# Euler scheme
# ------------------------------------------------------------------ #
@dataclass(frozen=True)
class EulerResult:
    """Euler iterates on the coarse points of ``grid``, shape ``(..., n + 1, d)``."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    path_key: tuple

    def at(self, n: int) -> np.ndarray:
        """Values at the coarse points of an ``n``-step sub-grid."""
        if self.grid.n % n:
            raise ValueError(f"n={n} does not divide the solution grid n={self.grid.n}")
        return self.values[..., :: self.grid.n // n, :]

    def check_update(self, problem: SdeProblem, path) -> float:
        """Largest violation of the update identity on the stored steps."""
        view = path.coarsen(self.grid.n)
        dx = np.diff(view.coarse, axis=-1)
        y = self.values
        sig = problem.sigma_at(self.grid.times[:-1])
        pred = y[..., :-1, :] + problem.b(y[..., :-1, :]) * self.grid.dt + sig * dx[..., None]
        return float(np.max(np.abs(pred - y[..., 1:, :])))


def euler_solve(problem: SdeProblem, path, n: int | None = None) -> EulerResult:
    """Euler scheme on ``n`` coarse steps, driven by the coarse increments of ``path``."""
    view = path if n is None else path.coarsen(n)
    grid = view.grid
    dx = np.diff(view.coarse, axis=-1)
    sig = problem.sigma_at(grid.times[:-1])
    out = np.empty(dx.shape[:-1] + (grid.n + 1, problem.dim))
    y = np.broadcast_to(problem.y0, dx.shape[:-1] + (problem.dim,)).copy()
    out[..., 0, :] = y
    dt = grid.dt
    for k in range(grid.n):
        y = y + problem.b(y) * dt + sig[k] * dx[..., k, None]
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite Euler state at step {k + 1} of {grid.n}")
        out[..., k + 1, :] = y
    return EulerResult(grid, out, path.key)


def reference_solve(problem: SdeProblem, path, n: int, r: int = 64) -> EulerResult:
    """Euler on the ``n r``-step grid of the same path, as a stand-in for the exact solution.

    ``r = 1`` reproduces ``euler_solve``; error studies should use ``r >= 8``.
    """
    if r < 1:
        raise ValueError("refine factor must be >= 1")
    if path.grid.N % (n * r):
        raise ValueError(f"path resolution N={path.grid.N} is not a multiple of n r = {n * r}")
    return euler_solve(problem, path, n * r)


def error_process(reference: EulerResult, euler: EulerResult) -> np.ndarray:
    """``y - y^(n)`` at the coarse points of ``euler``."""
    if reference.path_key != euler.path_key:
        raise ValueError("reference and Euler solutions were driven by different paths")
    return reference.at(euler.grid.n) - euler.values


# ------------------------------------------------------------------ #
# fundamental solutions
# ------------------------------------------------------------------ #
@dataclass(frozen=True)
class FundamentalPair:
    """``Lambda`` and its inverse ``Gamma`` at the coarse points, shape ``(..., n + 1, d, d)``."""

    grid: TimeGrid
    lam: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)

    def defect(self) -> float:
        eye = np.eye(self.lam.shape[-1])
        return float(np.max(np.linalg.norm(self.lam @ self.gamma - eye, axis=(-2, -1))))


def _matrix_cumprod(P: np.ndarray, right: bool) -> np.ndarray:
    """Running products along axis -3: ``P_k ... P_0`` (left) or ``P_0 ... P_k`` (right)."""
    shape = P.shape[:-3] + (P.shape[-3] + 1,) + P.shape[-2:]
    out = np.empty(shape)
    out[..., 0, :, :] = np.eye(P.shape[-1])
    if P.shape[-1] == 1:
        out[..., 1:, :, :] = np.cumprod(P, axis=-3)
        return out
    acc = out[..., 0, :, :]
    for k in range(P.shape[-3]):
        acc = acc @ P[..., k, :, :] if right else P[..., k, :, :] @ acc
        out[..., k + 1, :, :] = acc
    return out


def _rk4_propagators(problem: SdeProblem, y0: np.ndarray, y1: np.ndarray, dt: float, substeps: int):
    """One-step propagators of ``Lambda`` (left factors) and ``Gamma`` (right factors)."""
    eye = np.eye(problem.dim)
    h = dt / substeps
    P = np.broadcast_to(eye, y0.shape[:-1] + eye.shape)
    Q = P
    for j in range(substeps):
        a = [problem.deriv(1, y0 + (y1 - y0) * ((j + c) / substeps)) for c in (0.0, 0.5, 1.0)]
        k1 = a[0]
        k2 = a[1] @ (eye + 0.5 * h * k1)
        k3 = a[1] @ (eye + 0.5 * h * k2)
        k4 = a[2] @ (eye + h * k3)
        P = (eye + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)) @ P
        l1 = -a[0]
        l2 = -(eye + 0.5 * h * l1) @ a[1]
        l3 = -(eye + 0.5 * h * l2) @ a[1]
        l4 = -(eye + h * l3) @ a[2]
        Q = Q @ (eye + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4))
    return P, Q


def fundamental_solution(
    problem: SdeProblem,
    y,
    grid: TimeGrid | None = None,
    substeps: int | None = None,
) -> FundamentalPair:
    """Solve ``Lambda' = db(y) Lambda`` and ``Gamma' = -Gamma db(y)`` by RK4.

    ``y`` is an ``EulerResult`` or a state array on the coarse points of
    ``grid``; between grid points the state is interpolated linearly and
    ``db`` is evaluated at the interpolated state of each RK stage.

    With ``substeps=None`` each coarse step starts with 4 RK4 sub-steps,
    doubled (up to 64) until ``Lambda Gamma`` is within ``INVERSE_TOL`` of
    the identity. A final defect above ``DEFECT_TOL`` is an error.
    """
    if isinstance(y, EulerResult):
        grid = grid or y.grid
        y = y.at(grid.n)
    if grid is None:
        raise ValueError("a grid is needed when y is a plain array")
    y = np.asarray(y, dtype=float)
    if y.shape[-2] != grid.n + 1:
        raise ValueError(f"state has {y.shape[-2]} time points, grid has {grid.n + 1}")
    y0, y1 = y[..., :-1, :], y[..., 1:, :]
    steps = [substeps] if substeps is not None else [4, 8, 16, 32, 64]
    for m in steps:
        P, Q = _rk4_propagators(problem, y0, y1, grid.dt, m)
        pair = FundamentalPair(grid, _matrix_cumprod(P, right=False), _matrix_cumprod(Q, right=True))
        defect = pair.defect()
        if defect <= INVERSE_TOL:
            break
    if not defect <= DEFECT_TOL:
        raise ValueError(f"step size too coarse: Lambda Gamma deviates from I by {defect:.2e}")
    return pair


def _contract(D: np.ndarray, sig: np.ndarray, order: int) -> np.ndarray:
    """Apply the ``order``-linear form ``D`` (time axis before its d-axes) to ``sig^{(x) order}``."""
    T, d = sig.shape
    for c in range(order - 1, -1, -1):
        D = np.sum(D * sig.reshape((T,) + (1,) * (c + 1) + (d,)), axis=-1)
    return D


def weight_process(problem: SdeProblem, euler: EulerResult, fp: FundamentalPair, ell: int) -> ControlledPath:
    """Levels ``z^{(i-1)} = Gamma_t d^i b(y_t) sigma(t)^{(x) i}``, ``i = 1..ell``."""
    problem.require_order(ell)
    grid = euler.grid
    sig = problem.sigma_at(grid.times)
    levels = []
    for i in range(1, ell + 1):
        v = _contract(problem.deriv(i, euler.values), sig, i)
        levels.append(np.einsum("...ij,...j->...i", fp.gamma, v))
    return ControlledPath(grid, tuple(levels), vector=True)


def e211(problem: SdeProblem, fp: FundamentalPair, path, s: float = 0.0, t: float | None = None):
    """``E_211(s, t) = - sum_{s <= t_k < t} Gamma_{t_k} sigma'(t_k) h^1_{t_k t_{k+1}}``."""
    grid = fp.grid
    t = grid.T if t is None else t
    k0, k1 = grid.step_range(s, t)
    view = path.coarsen(grid.n)
    h1 = h_increments(view, 1)[..., k0:k1]
    sp = problem.sigma_prime_at(grid.times[k0:k1])
    g = np.einsum("...kij,kj->...ki", fp.gamma[..., k0:k1, :, :], sp)
    return -np.einsum("...ki,...k->...i", g, h1)


def corollary_residual(
    problem: SdeProblem,
    path,
    n: int,
    r: int = 64,
    ell: int | None = None,
) -> np.ndarray:
    """``n^{H+1/2} |(y - y^(n))_T - Lambda^(n)_T (E^{z,n}_l(0,T) + E_211(0,T))|`` per path."""
    ell = least_ell(path.h) if ell is None else ell
    view = path.coarsen(n)
    eu = euler_solve(problem, view)
    ref = reference_solve(problem, path, n, r)
    err = error_process(ref, eu)[..., -1, :]
    fp = fundamental_solution(problem, eu)
    z = weight_process(problem, eu, fp, ell)
    e = compensated_sum(z, view, 0.0, view.grid.T) + e211(problem, fp, view)
    pred = np.einsum("...ij,...j->...i", fp.lam[..., -1, :, :], e)
    return n ** (path.h + 0.5) * np.linalg.norm(err - pred, axis=-1)


# ------------------------------------------------------------------ #
# limit error equation
# ------------------------------------------------------------------ #
@dataclass(frozen=True)
class LimitSdeResult:
    grid: TimeGrid
    u_values: np.ndarray = field(repr=False)
    w_seed: int
    w_streams: tuple


def _limit_integrand(problem: SdeProblem, y: np.ndarray, fp: FundamentalPair) -> np.ndarray:
    """``Gamma_u (db(y_u) sigma(u) - sigma'(u))`` on the coarse points."""
    times = fp.grid.times
    g = _contract(problem.deriv(1, y), problem.sigma_at(times), 1) - problem.sigma_prime_at(times)
    return np.einsum("...ij,...j->...i", fp.gamma, g)


def _state(y, grid: TimeGrid) -> np.ndarray:
    return y.at(grid.n) if isinstance(y, EulerResult) else np.asarray(y, dtype=float)


def limit_sde_solve(
    problem: SdeProblem,
    y,
    fp: FundamentalPair,
    ch: CHResult,
    h: float,
    w_seed: int,
    path_indices: Sequence[int],
) -> LimitSdeResult:
    """``U_t = c_H^{1/2} T^{H+1/2} Lambda_t int_0^t Gamma_u (db sigma - sigma')(u) dW_u``.

    ``W`` for path ``i`` is drawn from stream ``2^31 + i`` of ``w_seed``,
    disjoint from every fBm stream; the stochastic integral is a left-point sum.
    """
    h = validate_hurst(h, rough=True)
    grid = fp.grid
    streams = tuple(W_STREAM_OFFSET + int(i) for i in path_indices)
    if any(i < 0 or i >= W_STREAM_OFFSET for i in path_indices):
        raise ValueError("path indices must lie in [0, 2^31) so W streams stay disjoint from fBm streams")
    dW = np.stack([path_generator(w_seed, s).standard_normal(grid.n) for s in streams]) * math.sqrt(grid.dt)
    f = _limit_integrand(problem, _state(y, grid), fp)
    f = np.broadcast_to(f, (len(streams),) + f.shape[-2:])
    integral = np.zeros((len(streams), grid.n + 1, problem.dim))
    np.cumsum(f[:, :-1, :] * dW[..., None], axis=1, out=integral[:, 1:, :])
    lam = np.broadcast_to(fp.lam, (len(streams),) + fp.lam.shape[-3:])
    u = math.sqrt(ch.value) * grid.T ** (h + 0.5) * np.einsum("mkij,mkj->mki", lam, integral)
    return LimitSdeResult(grid, u, int(w_seed), streams)


def conditional_variance(problem: SdeProblem, y, fp: FundamentalPair, ch: CHResult, h: float) -> np.ndarray:
    """``c_H T^{2H+1} Lambda_T (int_0^T f f^T du) Lambda_T^T`` with ``f`` the limit integrand.

    The time integral is a trapezoid rule on the coarse points; the result has
    shape ``(..., d, d)``.
    """
    h = validate_hurst(h, rough=True)
    grid = fp.grid
    f = _limit_integrand(problem, _state(y, grid), fp)
    outer = f[..., :, None] * f[..., None, :]
    integral = grid.dt * (outer[..., 1:-1, :, :].sum(axis=-3) + 0.5 * (outer[..., 0, :, :] + outer[..., -1, :, :]))
    lamT = fp.lam[..., -1, :, :]
    return ch.value * grid.T ** (2 * h + 1) * lamT @ integral @ np.swapaxes(lamT, -1, -2)
