import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fracsde.fbm import (
    W_STREAM_OFFSET,
    FbmPath,
    FbmSamplingError,
    TimeGrid,
    _embedding_sqrt,
    fbm_covariance,
    indicator_inner,
    read_fbm_dump,
    sample_fbm,
    sample_fbm_batch,
    semiinfinite_inner,
    validate_hurst,
    write_fbm_dump,
)

hursts = st.floats(0.02, 0.98)
times = st.floats(0.0, 10.0)


def _interval(draw_a, draw_b):
    return (min(draw_a, draw_b), max(draw_a, draw_b))


# -- Hurst parameter and grids -------------------------------------------
def test_validate_hurst():
    assert validate_hurst(0.3) == 0.3
    for bad in (0.0, 1.0, -0.1, float("nan")):
        with pytest.raises(ValueError):
            validate_hurst(bad)
    validate_hurst(0.7)
    with pytest.raises(ValueError, match="H < 1/2"):
        validate_hurst(0.5, rough=True)


def test_grid_basics():
    g = TimeGrid(2.0, 4, 3)
    assert g.N == 12 and g.dt == 0.5
    assert np.allclose(g.times, [0, 0.5, 1, 1.5, 2])
    # every coarse point is a fine point
    assert np.allclose(g.fine_times[:: g.m], g.times)
    assert g.coarsen(6) == TimeGrid(2.0, 6, 2)
    with pytest.raises(ValueError):
        g.coarsen(5)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_eta_lambda_on_indices():
    g = TimeGrid(1.0, 10, 4)
    j = np.arange(g.N + 1)
    assert np.array_equal(g.eta_index(j), j // 4)
    assert np.array_equal(g.lambda_index(j), (j + 3) // 4)
    # grid points map to themselves under both projections
    assert g.eta(0.3) == pytest.approx(0.3) and g.lam(0.3) == pytest.approx(0.3)
    assert g.eta(0.325) == pytest.approx(0.3)
    assert g.lam(0.325) == pytest.approx(0.4)
    assert g.eta(1.0) == pytest.approx(1.0)


def test_index_of_and_step_range():
    g = TimeGrid(1.0, 10)
    assert g.index_of(0.7) == 7
    with pytest.raises(ValueError):
        g.index_of(0.75)
    assert g.step_range(0.0, 1.0) == (0, 10)
    assert g.step_range(0.25, 0.75) == (3, 8)
    assert g.step_range(0.3, 0.3) == (3, 3)
    assert g.step_range(0.31, 0.39) == (4, 4)


@given(st.integers(1, 50), st.integers(0, 350), st.integers(0, 350))
def test_step_range_matches_definition(n, a, b):
    # s = a / (7 n), t = b / (7 n): s <= t_k < t  <=>  a <= 7 k < b
    g = TimeGrid(1.0, n, 3)
    a, b = sorted((a, b))
    a, b = min(a, 7 * n), min(b, 7 * n)
    k0, k1 = g.step_range(a / (7 * n), b / (7 * n))
    assert list(range(k0, k1)) == [k for k in range(n) if a <= 7 * k < b]


# -- covariance calculus -----------------------------------------------
def test_fbm_covariance_examples():
    assert fbm_covariance(1, 1, 0.3) == pytest.approx(1.0)
    s, t = 0.4, 1.3
    assert fbm_covariance(s, t, 0.5) == pytest.approx(min(s, t))
    # hand evaluation at H = 1/4: (1 + sqrt 2 - 1) / 2
    assert fbm_covariance(1, 2, 0.25) == pytest.approx(2**-0.5, abs=1e-12)
    assert fbm_covariance(1, 2, 0.25) == pytest.approx(0.70710678, abs=1e-8)


def test_indicator_inner_examples():
    assert indicator_inner(0.2, 0.9, 0.2, 0.9, 0.3) == pytest.approx(0.7**0.6)
    assert indicator_inner(0, 1, 2, 3.5, 0.5) == pytest.approx(0.0, abs=1e-15)
    # agrees with the covariance of x
    u, v, s, t, h = 0.1, 0.7, 0.3, 1.9, 0.2
    direct = fbm_covariance(v, t, h) - fbm_covariance(v, s, h) - fbm_covariance(u, t, h) + fbm_covariance(u, s, h)
    assert indicator_inner(u, v, s, t, h) == pytest.approx(direct, rel=1e-12)


@given(times, times, times, times, hursts)
def test_indicator_inner_symmetry(a, b, c, d, h):
    u, v = _interval(a, b)
    s, t = _interval(c, d)
    x, y = indicator_inner(u, v, s, t, h), indicator_inner(s, t, u, v, h)
    assert x == pytest.approx(y, rel=1e-14, abs=1e-300)


@given(times, times, times, times, times, hursts)
def test_indicator_inner_additivity(a, b, c, d, e, h):
    u, v, w = sorted((a, b, c))
    s, t = _interval(d, e)
    whole = indicator_inner(u, w, s, t, h)
    parts = indicator_inner(u, v, s, t, h) + indicator_inner(v, w, s, t, h)
    assert whole == pytest.approx(parts, abs=1e-11)


@given(times, times, times, times, hursts, st.floats(0.01, 100.0))
def test_indicator_inner_scaling(a, b, c, d, h, scale):
    u, v = _interval(a, b)
    s, t = _interval(c, d)
    lhs = indicator_inner(scale * u, scale * v, scale * s, scale * t, h)
    rhs = scale ** (2 * h) * indicator_inner(u, v, s, t, h)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9 * (1 + abs(rhs)) * max(1, scale) ** 2)


def test_indicator_inner_explicit_bound():
    rng = np.random.default_rng(11)
    for h in (0.05, 0.2, 0.3, 0.45):
        a = np.sort(rng.uniform(0, 5, size=(10_000, 2)), axis=1)
        b = np.sort(rng.uniform(0, 5, size=(10_000, 2)), axis=1)
        s, t, u, v = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
        lhs = np.abs(indicator_inner(s, t, u, v, h))
        rhs = 4 * 2 ** (2 * h - 1) * np.abs(v - u) ** (2 * h)
        assert np.all(lhs <= rhs + 1e-12)


def test_semiinfinite_inner():
    h = 0.3
    for tk, u in ((0.5, 0.8), (1.0, 1.01), (0.0, 2.0)):
        assert semiinfinite_inner(tk, tk, u, h) == pytest.approx(-0.5 * (u - tk) ** (2 * h))
    assert semiinfinite_inner(1.0, 0.4, 0.4, h) == 0.0
    assert semiinfinite_inner(2, 0, 1, 0.3) == pytest.approx(0.5 * (2**0.6 - 1), abs=1e-12)
    assert semiinfinite_inner(2, 0, 1, 0.3) == pytest.approx(0.25786, abs=1e-5)
    # limit of finite intervals [-M, t]
    # the truncation error decays like M^{2H-1}, so one Richardson step on
    # M = 5e5, 1e6 removes its leading term
    target = semiinfinite_inner(2, 0, 1, h)
    f = lambda M: indicator_inner(-M, 2, 0, 1, h)
    errs = [abs(f(M) - target) for M in (1e3, 1e4, 1e5, 1e6)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    q = 2.0 ** (1 - 2 * h)
    extrapolated = (q * f(1e6) - f(5e5)) / (q - 1)
    assert extrapolated == pytest.approx(target, abs=1e-4)
    with pytest.raises(ValueError):
        semiinfinite_inner(2, 0, 1, 0.5)


# -- sampling ---------------------------------------------------------------
def test_sample_shape_and_determinism():
    g = TimeGrid(1.0, 16, 4)
    p1 = sample_fbm(g, 0.3, 123, 7)
    p2 = sample_fbm(g, 0.3, 123, 7)
    assert isinstance(p1, FbmPath)
    assert p1.values.shape == (g.N + 1,)
    assert p1.values[0] == 0.0
    assert np.array_equal(p1.values, p2.values)
    assert not np.array_equal(p1.values, sample_fbm(g, 0.3, 123, 8).values)
    assert not np.array_equal(p1.values, sample_fbm(g, 0.3, 124, 7).values)
    with pytest.raises(ValueError):
        p1.values[3] = 1.0


def test_batch_is_order_independent():
    g = TimeGrid(1.0, 32, 2)
    b = sample_fbm_batch(g, 0.25, 5, [3, 1, 2])
    for i, idx in enumerate((3, 1, 2)):
        assert np.array_equal(b.values[i], sample_fbm(g, 0.25, 5, idx).values)
    assert b.path(0).key == (5, (3,), g.N, 1.0, 0.25)


def test_coarse_views_share_the_fine_path():
    g = TimeGrid(1.0, 8, 16)
    p = sample_fbm(g, 0.3, 1, 0)
    v = p.coarsen(32)
    assert v.grid == TimeGrid(1.0, 32, 4)
    assert np.array_equal(v.coarse, p.values[::4])
    assert v.key == p.key


def test_reserved_w_streams():
    with pytest.raises(ValueError, match="reserved"):
        sample_fbm(TimeGrid(1.0, 4), 0.3, 1, W_STREAM_OFFSET)


def test_cholesky_matches_distribution_and_fails_loudly():
    g = TimeGrid(1.0, 8, 1)
    b = sample_fbm_batch(g, 0.3, 9, range(20_000), method="cholesky")
    emp = np.cov(b.values[:, 1:].T, bias=True)
    t = g.times[1:]
    assert np.max(np.abs(emp - fbm_covariance(t[:, None], t[None, :], 0.3))) < 0.05
    # the fallback error names the grid size and H
    from fracsde import fbm

    fbm._cholesky_factor.cache_clear()
    orig = fbm._fgn_autocov
    try:
        fbm._fgn_autocov = lambda N, h: -np.ones(N)
        with pytest.raises(FbmSamplingError, match=r"N=5.*H=0.3"):
            fbm._cholesky_factor(5, 0.3)
    finally:
        fbm._fgn_autocov = orig
        fbm._cholesky_factor.cache_clear()


def test_embedding_is_nonnegative():
    for h in (0.05, 0.3, 0.45, 0.5, 0.8):
        assert _embedding_sqrt(1024, h) is not None


def test_brownian_case_increments():
    g = TimeGrid(1.0, 10_000, 1)
    x = sample_fbm(g, 0.5, 3, 0).values
    dx = np.diff(x) * np.sqrt(g.n)
    assert stats.kstest(dx, "norm").pvalue > 0.01
    r1 = np.corrcoef(dx[:-1], dx[1:])[0, 1]
    assert abs(r1) < 4 / np.sqrt(dx.size)


def test_empirical_covariance_8_points():
    h = 0.3
    g = TimeGrid(1.0, 8, 1)
    x = sample_fbm_batch(g, h, 21, range(20_000)).values[:, 1:]
    t = g.times[1:]
    prods = x[:, :, None] * x[:, None, :]
    emp = prods.mean(axis=0)
    se = prods.std(axis=0) / np.sqrt(x.shape[0])
    theo = fbm_covariance(t[:, None], t[None, :], h)
    assert np.all(np.abs(emp - theo) < 4 * se)


def test_quadratic_variation_mean():
    h, N = 0.3, 512
    g = TimeGrid(2.0, N, 1)
    x = sample_fbm_batch(g, h, 4, range(1000)).values
    qv = np.sum(np.diff(x, axis=1) ** 2, axis=1)
    target = N * (g.T / N) ** (2 * h)
    assert abs(qv.mean() - target) < 4 * qv.std() / np.sqrt(qv.size)


# -- binary dump -----------------------------------------------------------
def test_dump_round_trip(tmp_path):
    g = TimeGrid(1.0, 8, 4)
    p = sample_fbm(g, 0.35, 2**40 + 3, 12)
    f = tmp_path / "p.bin"
    write_fbm_dump(p, f)
    raw = f.read_bytes()
    assert raw[:4] == b"FBM1"
    assert len(raw) == 32 + 8 * (g.N + 1)
    q = read_fbm_dump(f)
    assert q.grid == g and q.h == 0.35 and q.seed == p.seed and q.path_index == 12
    assert np.array_equal(q.values, p.values)


def test_dump_rejects_garbage(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        read_fbm_dump(f)
