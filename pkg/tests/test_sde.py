import math

import numpy as np
import pytest
from scipy import integrate, linalg

from fracsde.constants import c_h
from fracsde.fbm import W_STREAM_OFFSET, FbmPath, TimeGrid, path_generator, sample_fbm_batch
from fracsde.sde import (
    SdeProblem,
    check_derivatives,
    conditional_variance,
    corollary_residual,
    error_process,
    euler_solve,
    fundamental_solution,
    limit_sde_solve,
    linear_problem,
    reference_solve,
    scalar_problem,
    sine_problem,
    weight_process,
)
from fracsde.sums import remainder_constant

H = 0.3


def zero(y):
    return 0.0 * y


def drift_free(sigma, sigma_prime, y0=0.3):
    return scalar_problem(zero, [zero] * 4, sigma, sigma_prime, y0, name="drift-free")


@pytest.fixture(scope="module")
def paths():
    return sample_fbm_batch(TimeGrid(1.0, 2048, 1), H, 21, range(40))


# -- problems ------------------------------------------------------------------
def test_problem_validation():
    p = sine_problem(orders=3)
    assert p.max_order == 3 and p.dim == 1
    with pytest.raises(ValueError, match="order 4"):
        p.deriv(4, np.zeros((2, 1)))
    with pytest.raises(ValueError, match="y0"):
        SdeProblem(2, [1.0], p.b, p.b_derivs, p.sigma, p.sigma_prime)


def test_derivative_spot_check():
    assert check_derivatives(sine_problem(), 6) < 1e-5
    A = [[-1.0, 0.5], [0.2, -0.3]]
    assert check_derivatives(linear_problem(A, [1.0, 0.5], [0.0, 0.0]), 3) < 1e-5
    wrong = scalar_problem(np.sin, [np.cos, np.sin], lambda t: 1 + 0 * t, zero, 1.0)
    with pytest.raises(ValueError, match="finite differences"):
        check_derivatives(wrong, 2)


# -- Euler scheme --------------------------------------------------------------
def test_euler_update_identity_and_start(paths):
    prob = sine_problem()
    eu = euler_solve(prob, paths, 64)
    assert np.all(eu.values[:, 0, 0] == 1.0)
    assert eu.check_update(prob, paths) < 1e-14
    assert eu.path_key == paths.key


def test_euler_without_drift_is_plain_sum(paths):
    prob = drift_free(lambda t: 1 + t / 2, lambda t: 0.5 + 0 * t)
    n = 32
    eu = euler_solve(prob, paths, n)
    xc = paths.coarsen(n).coarse
    t = np.arange(n) / n
    ref = 0.3 + np.concatenate([np.zeros((len(paths), 1)), np.cumsum((1 + t / 2) * np.diff(xc), axis=-1)], axis=-1)
    assert np.allclose(eu.values[..., 0], ref, rtol=0, atol=1e-14)


def test_euler_ode_case():
    prob = scalar_problem(lambda y: -y, [lambda y: -1 + 0 * y], lambda t: 0 * t, lambda t: 0 * t, 2.0)
    for n in (10, 100, 1000):
        g = TimeGrid(1.0, n, 1)
        p = FbmPath(g, H, np.zeros(n + 1), 0, 0)
        y = euler_solve(prob, p).values[:, 0]
        k = np.arange(n + 1)
        assert np.allclose(y, 2.0 * (1 - 1 / n) ** k, rtol=1e-12)
        err = np.max(np.abs(y - 2.0 * np.exp(-g.times)))
        # leading error t e^{-t} y0 / (2 n), maximal at t = 1
        assert n * err == pytest.approx(2.0 * math.exp(-1) / 2, rel=5 / n)


def test_euler_linear_oracle_rate():
    A = np.array([[-1.0, 0.8], [-0.5, -0.4]])
    sig = np.array([1.0, 0.5])
    y0 = np.array([0.5, -1.0])
    prob = linear_problem(A, sig, y0)
    ns = [16, 32, 64, 128, 256]
    g = TimeGrid(1.0, 256 * 64, 1)
    b = sample_fbm_batch(g, H, 31, range(300))
    u = g.fine_times
    # y_T = e^{AT} y0 + sigma x_T + int_0^T A e^{A(T-s)} sigma x_s ds (integration by parts)
    kern = np.stack([linalg.expm(A * (1.0 - s)) @ A @ sig for s in u])
    f = b.values[:, :, None] * kern[None]
    integral = g.fine_dt * (f[:, 1:-1].sum(axis=1) + 0.5 * (f[:, 0] + f[:, -1]))
    exact = linalg.expm(A) @ y0 + sig * b.values[:, -1:] + integral
    errs = [np.sqrt(np.mean(np.sum((euler_solve(prob, b, n).values[:, -1] - exact) ** 2, axis=-1))) for n in ns]
    slope = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert 0.7 <= slope <= 0.9


def test_euler_blow_up_names_the_step():
    prob = scalar_problem(lambda y: 1e3 * y**3, [lambda y: 3e3 * y**2], lambda t: 0 * t, lambda t: 0 * t, 1.0)
    p = FbmPath(TimeGrid(1.0, 50, 1), H, np.zeros(51), 0, 0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(FloatingPointError, match="step"):
        euler_solve(prob, p)


# -- reference solution ------------------------------------------------------------
def test_reference_r1_is_euler(paths):
    prob = sine_problem()
    assert np.array_equal(reference_solve(prob, paths, 128, 1).values, euler_solve(prob, paths, 128).values)
    with pytest.raises(ValueError):
        reference_solve(prob, paths, 128, 0)
    with pytest.raises(ValueError, match="multiple"):
        reference_solve(prob, paths, 128, 3)


def test_reference_self_consistency():
    prob = sine_problem()
    g = TimeGrid(1.0, 1024 * 128, 1)
    d64 = {64: [], 1024: []}
    d_eu = {64: [], 1024: []}
    for chunk in range(4):
        b = sample_fbm_batch(g, H, 41, range(50 * chunk, 50 * (chunk + 1)))
        for n in d64:
            r64, r128 = reference_solve(prob, b, n, 64), reference_solve(prob, b, n, 128)
            d64[n].append(r128.at(n)[:, :, 0] - r64.at(n)[:, :, 0])
            d_eu[n].append(error_process(r64, euler_solve(prob, b, n))[:, :, 0])
    for n in d64:
        a = np.sqrt(np.mean(np.concatenate(d64[n]) ** 2))
        e = np.sqrt(np.mean(np.concatenate(d_eu[n]) ** 2))
        assert a / e < 0.2


def test_reference_deterministic_case_matches_ode_solver():
    prob = scalar_problem(np.sin, [np.cos], lambda t: 0 * t, lambda t: 0 * t, 1.0)
    sol = integrate.solve_ivp(lambda t, y: np.sin(y), (0, 1), [1.0], rtol=1e-12, atol=1e-12)
    n = 16
    for r in (8, 64):
        p = FbmPath(TimeGrid(1.0, n * r, 1), H, np.zeros(n * r + 1), 0, 0)
        err = abs(reference_solve(prob, p, n, r).values[-1, 0] - sol.y[0, -1])
        assert err < 1.0 / (n * r)


# -- error process -------------------------------------------------------------------
def test_error_process_checks_paths(paths):
    prob = sine_problem()
    other = sample_fbm_batch(paths.grid, H, 22, range(40))
    with pytest.raises(ValueError, match="different paths"):
        error_process(reference_solve(prob, paths, 64, 8), euler_solve(prob, other, 64))
    full = euler_solve(prob, paths, paths.grid.n)
    assert np.all(error_process(reference_solve(prob, paths, paths.grid.n, 1), full) == 0)


def test_error_without_drift_is_sigma_defect_integral(paths):
    s, sp = (lambda t: np.cos(3 * t)), (lambda t: -3 * np.sin(3 * t))
    prob = drift_free(s, sp)
    n, r = 32, 64
    e = error_process(reference_solve(prob, paths, n, r), euler_solve(prob, paths, n))[..., 0]
    u = paths.grid.fine_times[:-1]
    eta = np.floor(u * n + 1e-9) / n
    dx = np.diff(paths.values, axis=-1)
    direct = np.cumsum((np.cos(3 * u) - np.cos(3 * eta)) * dx, axis=-1)[:, r - 1 :: r]
    assert np.allclose(e[:, 1:], direct, rtol=0, atol=1e-13)


def test_error_increment_scaling():
    prob = sine_problem()
    n, r = 128, 16
    b = sample_fbm_batch(TimeGrid(1.0, n * r, 1), H, 5, range(2000))
    e = error_process(reference_solve(prob, b, n, r), euler_solve(prob, b, n))[..., 0]
    s, lags = 64, np.array([2, 4, 8, 16, 32, 64])
    rms = [np.sqrt(np.mean((e[:, s + k] - e[:, s]) ** 2)) for k in lags]
    expo = np.polyfit(np.log(lags / n), np.log(rms), 1)[0]
    assert 0.35 <= expo <= 0.65


# -- fundamental solutions ----------------------------------------------------------------
def test_fundamental_trivial_and_linear():
    g = TimeGrid(2.0, 40, 1)
    drift_free_pb = drift_free(lambda t: 1 + 0 * t, zero)
    fp = fundamental_solution(drift_free_pb, np.zeros((41, 1)), g)
    assert np.all(fp.lam == 1) and np.all(fp.gamma == 1)
    A = np.array([[-0.5, 1.0], [-1.0, -0.2]])
    lp = linear_problem(A, [1.0, 0.0], [0.0, 0.0])
    fp = fundamental_solution(lp, np.zeros((41, 2)), g)
    for k in range(41):
        assert np.linalg.norm(fp.lam[k] - linalg.expm(A * g.times[k])) < 1e-8
    assert np.array_equal(fp.lam[0], np.eye(2)) and np.array_equal(fp.gamma[0], np.eye(2))
    with pytest.raises(ValueError, match="grid"):
        fundamental_solution(lp, np.zeros((41, 2)))
    with pytest.raises(ValueError, match="time points"):
        fundamental_solution(lp, np.zeros((40, 2)), g)


def test_fundamental_inverse_on_stochastic_path(paths):
    prob = sine_problem()
    for n in (16, 256):
        fp = fundamental_solution(prob, euler_solve(prob, paths, n))
        assert fp.defect() < 1e-8
    A = np.array([[-0.5, 1.0], [-1.0, -0.2]])
    lp = linear_problem(A, [1.0, 0.3], [1.0, 0.0])
    b2 = sample_fbm_batch(TimeGrid(1.0, 64, 1), H, 3, range(5))
    assert fundamental_solution(lp, euler_solve(lp, b2)).defect() < 1e-8


def test_fundamental_rejects_coarse_steps():
    prob = scalar_problem(lambda y: 50 * y, [lambda y: 50 + 0 * y], lambda t: 0 * t, zero, 1.0)
    with pytest.raises(ValueError, match="too coarse"):
        fundamental_solution(prob, np.ones((5, 1)), TimeGrid(1.0, 4, 1), substeps=1)


def test_fundamental_coupling_rate():
    prob = sine_problem()
    r, ns = 16, [16, 32, 64, 128, 256]
    b = sample_fbm_batch(TimeGrid(1.0, 256 * r, 1), H, 6, range(500))
    fine = fundamental_solution(prob, euler_solve(prob, b))
    errs = []
    for n in ns:
        fp = fundamental_solution(prob, euler_solve(prob, b, n))
        lam = fine.lam[:, :: (256 * r) // n]
        errs.append(np.sqrt(np.mean(np.max(np.abs(lam - fp.lam)[..., 0, 0], axis=-1) ** 2)))
    slope = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert slope >= H + 0.3


# -- weight process ------------------------------------------------------------------------
def test_weight_linear_drift_has_no_second_level():
    A = np.array([[-0.5, 1.0], [-1.0, -0.2]])
    lp = linear_problem(A, [1.0, 0.3], [1.0, 0.0])
    b = sample_fbm_batch(TimeGrid(1.0, 64, 1), H, 3, range(5))
    eu = euler_solve(lp, b)
    z = weight_process(lp, eu, fundamental_solution(lp, eu), 2)
    assert z.vector and z.levels[0].shape == (5, 65, 2)
    assert np.all(z.levels[1] == 0)
    assert np.allclose(z.levels[0], np.einsum("mkij,j->mki", fundamental_solution(lp, eu).gamma, A @ [1.0, 0.3]))


def test_weight_sine_matches_hand_composition(paths):
    prob = scalar_problem(np.sin, [np.cos, lambda y: -np.sin(y)], lambda t: 1 + 0 * t, zero, 1.0)
    n = 64
    eu = euler_solve(prob, paths.path(0), n)
    fp = fundamental_solution(prob, eu)
    z = weight_process(prob, eu, fp, 2)
    y = eu.values[:, 0]
    interp = lambda u: np.interp(u, eu.grid.times, y)
    for k in np.linspace(0, n, 10).astype(int):
        t = k / n
        gamma = math.exp(-integrate.quad(lambda u: math.cos(interp(u)), 0, t, points=eu.grid.times[1:k], limit=200)[0])
        assert z.levels[0][k, 0] == pytest.approx(gamma * math.cos(y[k]), rel=1e-7)
        assert z.levels[1][k, 0] == pytest.approx(-gamma * math.sin(y[k]), rel=1e-7, abs=1e-12)
    with pytest.raises(ValueError, match="order 3"):
        weight_process(prob, eu, fp, 3)


def test_weight_remainder_stable_in_n():
    prob = sine_problem()
    b = sample_fbm_batch(TimeGrid(1.0, 1024, 1), H, 8, range(100))
    G = {}
    for n in (64, 256, 1024):
        eu = euler_solve(prob, b, n)
        z = weight_process(prob, eu, fundamental_solution(prob, eu), 2)
        scalar = type(z)(z.grid, tuple(a[..., 0] for a in z.levels))
        G[n] = remainder_constant(scalar, b.coarsen(n))
    assert all(np.all(np.isfinite(g)) for g in G.values())
    assert np.median(G[1024]) < 2 * np.median(G[64])


# -- limit equation -------------------------------------------------------------------------
def test_limit_vanishes_when_integrand_does():
    a = -0.7
    prob = scalar_problem(
        lambda y: a * y, [lambda y: a + 0 * y, zero], lambda t: np.exp(a * t), lambda t: a * np.exp(a * t), 1.0
    )
    g = TimeGrid(1.0, 64, 1)
    b = sample_fbm_batch(g, H, 1, range(3))
    eu = euler_solve(prob, b)
    fp = fundamental_solution(prob, eu)
    res = limit_sde_solve(prob, eu.values, fp, c_h(H), H, 5, range(3))
    assert np.max(np.abs(res.u_values)) < 1e-12
    assert np.all(res.u_values[:, 0] == 0)


def test_limit_with_constant_sigma_prime():
    c, T, M = 0.8, 1.5, 10000
    prob = drift_free(lambda t: 1 + c * t, lambda t: c + 0 * t)
    g = TimeGrid(T, 64, 1)
    y = np.zeros((65, 1))
    fp = fundamental_solution(prob, y, g)
    ch = c_h(H)
    res = limit_sde_solve(prob, y, fp, ch, H, 13, range(M))
    uT = res.u_values[:, -1, 0]
    # pathwise: U_T = -c_H^{1/2} T^{H+1/2} c W_T with W from the reserved streams
    WT = np.array([path_generator(13, W_STREAM_OFFSET + i).standard_normal(64).sum() for i in range(5)]) * math.sqrt(g.dt)
    assert np.allclose(uT[:5], -math.sqrt(ch.value) * T ** (H + 0.5) * c * WT, rtol=1e-12)
    assert res.w_streams[0] == W_STREAM_OFFSET
    target = ch.value * T ** (2 * H + 1) * c**2 * T
    v = uT.var(ddof=1)
    assert abs(v - target) < 4 * v * math.sqrt(2 / (M - 1))
    assert conditional_variance(prob, y, fp, ch, H)[0, 0] == pytest.approx(target, rel=1e-12)


def test_limit_isometry_given_frozen_path():
    prob = sine_problem()
    g = TimeGrid(1.0, 256, 1)
    b = sample_fbm_batch(g, H, 17, [0])
    eu = euler_solve(prob, b)
    fp = fundamental_solution(prob, eu)
    ch, M = c_h(H), 10000
    res = limit_sde_solve(prob, eu.values[0], type(fp)(g, fp.lam[0], fp.gamma[0]), ch, H, 99, range(M))
    v = res.u_values[:, -1, 0].var(ddof=1)
    target = conditional_variance(prob, eu, fp, ch, H)[0, 0, 0]
    assert abs(v - target) < 4 * v * math.sqrt(2 / (M - 1))


def test_limit_rejects_colliding_streams():
    prob = sine_problem()
    g = TimeGrid(1.0, 8, 1)
    fp = fundamental_solution(prob, np.ones((9, 1)), g)
    for bad in ([W_STREAM_OFFSET], [-1]):
        with pytest.raises(ValueError, match="disjoint"):
            limit_sde_solve(prob, np.ones((9, 1)), fp, c_h(H), H, 0, bad)


# -- error expansion --------------------------------------------------------------------------
@pytest.fixture(scope="module")
def corollary_l2():
    prob = sine_problem()
    res = {64: [], 256: [], 1024: []}
    for chunk in range(4):
        b = sample_fbm_batch(TimeGrid(1.0, 65536, 1), H, 9, range(50 * chunk, 50 * (chunk + 1)))
        for n in res:
            res[n].append(corollary_residual(prob, b, n, 64))
    return {n: float(np.sqrt(np.mean(np.concatenate(v) ** 2))) for n, v in res.items()}


def test_corollary_residual_decreases(corollary_l2):
    assert corollary_l2[64] > corollary_l2[256] > corollary_l2[1024]


@pytest.mark.xfail(
    strict=True,
    reason="the normalised residual still contains the O(1/n) part of the error, "
    "which scales as n^(H-1/2) = n^-0.2 after normalisation: the 16x ratio tends to 0.57",
)
def test_corollary_residual_halves(corollary_l2):
    assert corollary_l2[1024] / corollary_l2[64] < 0.5
