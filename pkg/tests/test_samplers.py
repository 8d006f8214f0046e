import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pdmpbnn.errors import ConfigError, ModelError, SamplingError
from pdmpbnn.model import Model, ModelSpec, synth_regression
from pdmpbnn.samplers import (BoomerangReference, Chain, PdmpState, Preconditioner,
                              SamplerConfig, Welford, boomerang_bounce, boomerang_flow,
                              boomerang_rate, bps_bounce, bps_flow, bps_rate, precond_bounce,
                              precond_flow, refresh_velocity, run_chain, welford_warmup)

vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10))
pos3 = arrays(np.float64, 3, elements=st.floats(0.1, 10))


def gauss(dim, **kw):
    return Model(ModelSpec("gaussian-target", dim=dim, **kw))


def state(w, v, clock=0.0):
    return PdmpState(np.asarray(w, float), np.asarray(v, float), clock)


# -- flows ------------------------------------------------------------------------


def test_bps_flow_examples():
    s = state([0, 0], [1, 2])
    np.testing.assert_array_equal(bps_flow(s, 0.0).w, s.w)
    out = bps_flow(s, 2.0)
    np.testing.assert_array_equal(out.w, [2, 4])
    np.testing.assert_array_equal(out.v, [1, 2])
    assert out.clock == 2.0


@given(w=vec3, v=vec3, t1=st.floats(0, 5), t2=st.floats(0, 5))
def test_linear_flows_compose(w, v, t1, t2):
    s = state(w, v)
    a = bps_flow(bps_flow(s, t1), t2)
    b = bps_flow(s, t1 + t2)
    np.testing.assert_allclose(a.w, b.w, rtol=1e-12, atol=1e-10)
    scale = np.array([2.0, 0.5, 1.0])
    a = precond_flow(precond_flow(s, scale, t1), scale, t2)
    b = precond_flow(s, scale, t1 + t2)
    np.testing.assert_allclose(a.w, b.w, rtol=1e-12, atol=1e-10)


def test_precond_flow_examples():
    np.testing.assert_array_equal(precond_flow(state([0], [1]), np.array([2.0]), 1.0).w, [2.0])
    s = state([1, 2], [3, -1])
    np.testing.assert_array_equal(precond_flow(s, np.ones(2), 0.7).w, bps_flow(s, 0.7).w)


def test_boomerang_flow_examples():
    ref = BoomerangReference(np.zeros(1), np.ones(1))
    s = state([1.0], [0.0])
    np.testing.assert_array_equal(boomerang_flow(s, ref, 0.0).w, s.w)
    full = boomerang_flow(s, ref, 2 * math.pi)
    np.testing.assert_allclose(full.w, s.w, atol=1e-12)
    np.testing.assert_allclose(full.v, s.v, atol=1e-12)
    quarter = boomerang_flow(s, ref, math.pi / 2)
    np.testing.assert_allclose(quarter.w, [0.0], atol=1e-15)
    np.testing.assert_allclose(quarter.v, [-1.0], atol=1e-15)


@given(w=vec3, v=vec3, mean=vec3, t=st.floats(0, 100))
def test_boomerang_flow_conserves_energy(w, v, mean, t):
    ref = BoomerangReference(mean, np.ones(3))
    out = boomerang_flow(state(w, v), ref, t)
    before = (w - mean) ** 2 + v ** 2
    after = (out.w - mean) ** 2 + out.v ** 2
    np.testing.assert_allclose(after, before, rtol=1e-12, atol=1e-12)


# -- bounces ----------------------------------------------------------------------------


def test_bps_bounce_examples():
    g = np.array([1.0, 0.0])
    np.testing.assert_array_equal(bps_bounce(g, np.array([1.0, 0.0])), [-1, 0])
    np.testing.assert_array_equal(bps_bounce(g, np.array([0.0, 1.0])), [0, 1])
    np.testing.assert_array_equal(bps_bounce(g, np.array([1.0, 1.0])), [-1, 1])
    assert bps_bounce(np.zeros(2), np.ones(2)) is None


def test_precond_bounce_examples():
    g, v = np.array([1.0, 0.0]), np.array([1.0, 1.0])
    np.testing.assert_array_equal(precond_bounce(g, v, np.array([2.0, 1.0])), [-1, 1])
    np.testing.assert_array_equal(precond_bounce(g, v, np.ones(2)), bps_bounce(g, v))
    np.testing.assert_array_equal(precond_bounce(g, np.array([0.0, 3.0]), np.array([2.0, 1.0])),
                                  [0, 3])


def test_boomerang_bounce_examples():
    g, v = np.array([1.0, 0.0]), np.array([1.0, 0.0])
    np.testing.assert_array_equal(boomerang_bounce(g, v, np.array([4.0, 1.0])), [-1, 0])
    v2 = np.array([0.3, -2.0])
    np.testing.assert_allclose(boomerang_bounce(np.array([1.0, 2.0]), v2, np.ones(2)),
                               bps_bounce(np.array([1.0, 2.0]), v2))


@given(g=vec3, v=vec3, scale=pos3)
@settings(max_examples=200)
def test_bounce_invariants(g, v, scale):
    if np.linalg.norm(g) < 1e-3:
        return
    out = bps_bounce(g, v)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(v), rel=1e-10, abs=1e-10)
    assert g @ out == pytest.approx(-(g @ v), rel=1e-10, abs=1e-9)
    np.testing.assert_allclose(bps_bounce(g, out), v, atol=1e-9)

    out = precond_bounce(g, v, scale)
    ag = scale * g
    assert ag @ out == pytest.approx(-(ag @ v), rel=1e-10, abs=1e-8)
    np.testing.assert_allclose(precond_bounce(g, out, scale), v, atol=1e-8)

    out = boomerang_bounce(g, v, scale)
    assert g @ out == pytest.approx(-(g @ v), rel=1e-10, abs=1e-8)
    assert np.sum(out ** 2 / scale) == pytest.approx(np.sum(v ** 2 / scale), rel=1e-10, abs=1e-8)
    np.testing.assert_allclose(boomerang_bounce(g, out, scale), v, atol=1e-8)


# -- rates ------------------------------------------------------------------------------


def test_bps_rate_on_gaussian():
    rate = bps_rate(gauss(2), state([0, 0], [1, 0]))
    for t in (0.0, 0.5, 2.0):
        assert rate(t) == pytest.approx(t)
    assert max(rate(-1.0), 0.0) == 0.0


def test_bps_rate_orthogonal_velocity_is_zero():
    rate = bps_rate(gauss(2), state([1, 0], [0, 1]))
    assert rate(0.0) == 0.0


def test_sigma_bps_rate_follows_preconditioned_flow():
    rate = bps_rate(gauss(2), state([0, 0], [1, 0]), scale=np.array([2.0, 1.0]))
    # position (2t, 0), velocity (2, 0): grad . velocity = 4t
    assert rate(1.5) == pytest.approx(6.0)


def test_boomerang_rate_matches_direct_evaluation():
    m = gauss(2)
    ref = BoomerangReference(np.zeros(2), np.ones(2))
    s = state([1.0, 0.5], [0.2, -1.0])
    rate = boomerang_rate(m, s, ref)
    t = 0.7
    moved = boomerang_flow(s, ref, t)
    assert rate(t) == pytest.approx(m.grad(moved.w) @ moved.v)


# -- refreshment ---------------------------------------------------------------------------


def test_refresh_moments():
    rng = np.random.default_rng(0)
    n = 10**5
    draws = np.array([refresh_velocity("bps", rng, 2, gamma=0.5) for _ in range(n)])
    np.testing.assert_allclose(draws.var(axis=0), 0.25, rtol=0.05)
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * 0.5 / math.sqrt(n))

    ref = BoomerangReference(np.zeros(2), np.array([4.0, 0.25]))
    draws = np.array([refresh_velocity("boomerang", rng, 2, reference=ref) for _ in range(n)])
    np.testing.assert_allclose(draws.var(axis=0), [4.0, 0.25], rtol=0.05)

    unit = BoomerangReference(np.zeros(3), np.ones(3))
    draws = np.array([refresh_velocity("boomerang", rng, 3, reference=unit) for _ in range(n)])
    np.testing.assert_allclose(draws.var(axis=0), 1.0, rtol=0.05)


def test_sigma_bps_effective_velocity_has_warmup_scale():
    rng = np.random.default_rng(1)
    scale = np.array([3.0, 0.2])
    draws = np.array([scale * refresh_velocity("sigma-bps", rng, 2) for _ in range(20000)])
    np.testing.assert_allclose(draws.std(axis=0), scale, rtol=0.05)


# -- Welford ---------------------------------------------------------------------------------


def test_welford_textbook_stream():
    acc = Welford()
    for x in [1, 2, 3, 4, 5]:
        acc.push([x])
    assert acc.mean[0] == 3.0
    assert acc.variance[0] == 2.5


def test_welford_constant_stream_clamps():
    acc = Welford()
    for _ in range(10):
        acc.push([4.0, 4.0])
    np.testing.assert_array_equal(acc.std(), [1e-8, 1e-8])


def test_welford_needs_two_points():
    acc = Welford()
    acc.push([1.0])
    with pytest.raises(ValueError):
        acc.variance


@given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e3, 1e3)))
def test_welford_matches_two_pass(xs):
    acc = Welford()
    for x in xs:
        acc.push([x])
    assert acc.mean[0] == pytest.approx(xs.mean(), rel=1e-12, abs=1e-9)
    assert acc.variance[0] == pytest.approx(xs.var(ddof=1), rel=1e-9, abs=1e-9)
    rev = Welford()
    for x in xs[::-1]:
        rev.push([x])
    assert rev.mean[0] == pytest.approx(acc.mean[0], rel=1e-12, abs=1e-9)


def test_welford_warmup_estimates_target_scale():
    m = gauss(2)
    cfg = SamplerConfig(kernel="sigma-bps", gamma=1.0, lambda_ref=5.0, warmup_events=5000)
    pre = welford_warmup(m, cfg, np.zeros(2), rng=np.random.default_rng(0))
    assert pre.source == "welford-warmup"
    np.testing.assert_allclose(pre.scale, 1.0, rtol=0.15)


def test_welford_warmup_needs_two_events():
    with pytest.raises(ConfigError):
        SamplerConfig(kernel="sigma-bps", warmup_events=1)


# -- configuration ------------------------------------------------------------------------


def test_config_defaults():
    assert SamplerConfig(kernel="bps").gamma == 0.001
    assert SamplerConfig(kernel="sigma-bps").gamma == 0.001
    assert SamplerConfig(kernel="boomerang").gamma == 0.1
    cfg = SamplerConfig()
    assert (cfg.alpha, cfg.R, cfg.lambda_ref, cfg.t_init) == (1.0, 2.0, 1.0, 0.1)


@pytest.mark.parametrize("kwargs,field", [
    (dict(kernel="zigzag"), "kernel"),
    (dict(lambda_ref=0.0), "lambda_ref"),
    (dict(gamma=-1.0), "gamma"),
    (dict(alpha=0.5), "alpha"),
    (dict(R=1.0), "R"),
    (dict(t_init=0.0), "t_init"),
    (dict(thinning_factor=0), "thinning_factor"),
    (dict(batch_size=0), "batch_size"),
    (dict(num_samples=0), "num_samples"),
])
def test_config_validation_names_field(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        SamplerConfig(**kwargs)
    assert field in [f for f, _ in exc.value.problems]


def test_preconditioner_and_reference_validate():
    with pytest.raises(ModelError):
        Preconditioner(np.array([1.0, 0.0]))
    with pytest.raises(ModelError):
        BoomerangReference(np.zeros(2), np.array([1.0, -1.0]))


def test_reference_from_map_uses_scaled_inverse_hessian():
    data = synth_regression(0, 20)
    m = Model(ModelSpec("linear-regression", noise_var=1.0), data)
    w = np.zeros(m.dim)
    ref = BoomerangReference.from_map(m, w, 0.1)
    np.testing.assert_allclose(ref.cov, 0.1 / m.diag_hessian_nll(w))
    np.testing.assert_array_equal(ref.mean, w)


# -- chains -------------------------------------------------------------------------------------


def test_chain_timestamps_and_counts():
    c = run_chain(gauss(3), SamplerConfig(kernel="bps", gamma=1.0, num_samples=500, seed=1),
                  init=np.zeros(3))
    assert len(c) == 500
    assert np.all(np.diff(c.clock) > 0)
    assert c.total_events == 500
    assert c.audit.proposals == c.audit.acceptances + c.audit.rejections


def test_thinning_factor_keeps_every_kth_event():
    cfg = SamplerConfig(kernel="bps", gamma=1.0, num_samples=100, thinning_factor=7, seed=3)
    c = run_chain(gauss(2), cfg, init=np.zeros(2))
    full = run_chain(gauss(2), SamplerConfig(kernel="bps", gamma=1.0, num_samples=700, seed=3),
                     init=np.zeros(2))
    assert c.total_events == 700
    np.testing.assert_array_equal(c.samples, full.samples[6::7])


@pytest.mark.parametrize("kernel", ["bps", "sigma-bps", "boomerang"])
def test_fixed_seed_is_bit_identical(kernel):
    data = synth_regression(0, 20)
    m = Model(ModelSpec("mlp-regression", widths=(4,)), data)
    cfg = SamplerConfig(kernel=kernel, num_samples=100, batch_size=5, warmup_events=50, seed=9)
    a, b = run_chain(m, cfg), run_chain(m, cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.clock, b.clock)
    other = run_chain(m, SamplerConfig(kernel=kernel, num_samples=100, batch_size=5,
                                       warmup_events=50, seed=10))
    assert not np.array_equal(a.samples, other.samples)


def test_refresh_dominates_for_large_lambda_ref():
    m = gauss(2)
    frac = {}
    for lam in (0.01, 100.0):
        c = run_chain(m, SamplerConfig(kernel="bps", gamma=1.0, lambda_ref=lam,
                                       num_samples=2000, seed=0), init=np.ones(2))
        frac[lam] = c.bounce_count / c.total_events
    assert frac[100.0] < 0.05
    assert frac[0.01] > 0.9


def test_one_dimensional_gaussian_moments():
    # recording at event points over-weights regions with large bounce rates; the
    # weight is (E|w v|_+ + lambda_ref), so refreshes must dominate for tight moments
    cfg = SamplerConfig(kernel="bps", gamma=1.0, lambda_ref=5.0, thinning_factor=10,
                        num_samples=5000, seed=4)
    c = run_chain(gauss(1), cfg, init=np.zeros(1))
    assert abs(c.samples.mean()) < 0.05
    assert 0.9 <= c.samples.var() <= 1.1


def _event_point_variance(gamma, lam):
    # 1-D: positions at events have density prop. to phi(w) (gamma |w| / sqrt(2 pi) + lam)
    c = gamma / math.sqrt(2 * math.pi)
    e_abs, e_abs3 = math.sqrt(2 / math.pi), 2 * math.sqrt(2 / math.pi)
    return (c * e_abs3 + lam) / (c * e_abs + lam)


def test_event_point_bias_matches_analysis():
    cfg = SamplerConfig(kernel="bps", gamma=1.0, lambda_ref=1.0, num_samples=50000, seed=5)
    c = run_chain(gauss(1), cfg, init=np.zeros(1))
    assert c.samples.var() == pytest.approx(_event_point_variance(1.0, 1.0), rel=0.04)


def test_zero_gradient_bounce_falls_back_to_refresh():
    class Flat:
        dim, n_data = 2, 0

        def grad_minibatch(self, w, plan):
            return np.zeros(2) if np.all(w == 0) else np.array([1.0, 0.0])

    # a constant rate of 1 along +x makes bounces happen; zero gradient never reached
    c = run_chain(Flat(), SamplerConfig(kernel="bps", gamma=1.0, num_samples=50, seed=0),
                  init=np.ones(2))
    assert c.total_events == 50


def test_errors_carry_event_index_and_clock():
    class Exploding:
        dim, n_data = 1, 0
        calls = 0

        def grad_minibatch(self, w, plan):
            self.calls += 1
            if self.calls > 200:
                raise ModelError("non-finite gradient")
            return w

    with pytest.raises(SamplingError) as exc:
        run_chain(Exploding(), SamplerConfig(kernel="bps", gamma=1.0, num_samples=10**4),
                  init=np.zeros(1))
    assert exc.value.event_index is not None and exc.value.event_index > 0
    assert exc.value.clock > 0
    assert "event" in str(exc.value)


def test_chain_csv_round_trip(tmp_path):
    c = run_chain(gauss(2), SamplerConfig(kernel="bps", gamma=1.0, num_samples=20, seed=0),
                  init=np.zeros(2))
    path = tmp_path / "chain.csv"
    c.to_csv(path)
    assert path.read_text().splitlines()[0] == "clock,w_0,w_1"
    back = Chain.from_csv(path)
    np.testing.assert_array_equal(back.samples, c.samples)
    np.testing.assert_array_equal(back.clock, c.clock)
    c.write_metadata(tmp_path / "meta.json")
    assert "thinning_audit" in (tmp_path / "meta.json").read_text()


def test_boomerang_gaussian_composite_target():
    # potential carries 10% of the precision; the reference carries the rest
    m = gauss(2, prior_precision=0.1)
    ref = BoomerangReference(np.zeros(2), np.full(2, 1 / 0.9))
    c = run_chain(m, SamplerConfig(kernel="boomerang", num_samples=20000, seed=2),
                  init=np.zeros(2), reference=ref)
    assert np.all(np.abs(c.samples.mean(axis=0)) < 0.05)
    assert np.all((c.samples.var(axis=0) > 0.9) & (c.samples.var(axis=0) < 1.1))
