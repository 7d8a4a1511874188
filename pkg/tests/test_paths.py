import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathwise_lab.calculus import quadratic_variation
from pathwise_lab.errors import InvalidArgument
from pathwise_lab.partitions import PartitionSequence
from pathwise_lab.paths import (
    ContinuousQV, DiscreteJumpLaw, ExplicitJumps, GammaGaps, GeometricPoisson, JumpDiffusion, LogNormalJumpLaw,
    ParetoGaps, PoissonJumps, RationalGaps, RenewalJumps, UniformJumpLaw, fbm_walk, generate_bundle,
    generate_trajectory, poisson_trajectory, read_trajectory_csv, splice, trajectory_from_csv, trajectory_to_csv,
    with_terminal, write_trajectory_csv,
)


def test_explicit_poisson_path_matches_closed_form(p10):
    x = generate_trajectory(GeometricPoisson(100.0, 0.05, -0.1, ExplicitJumps((0.5,))), p10, seed=0)
    t = p10.grid(10)
    expected = 100 * np.exp(0.05 * t) * np.where(t >= 0.5, 0.9, 1.0)
    np.testing.assert_allclose(x.values(t), expected, rtol=1e-15)


def test_gbm_positive_no_jumps(p10, gbm):
    x = generate_trajectory(gbm, p10, seed=3)
    assert x.values(0.0) == 100.0
    assert x.n_jumps == 0
    assert x.minimum() > 0


def test_fbm_mixture_keeps_brownian_qv(p14):
    spec = ContinuousQV(100.0, 0.2, "bm_plus_fbm", hurst=0.75)
    x = generate_trajectory(spec, p14, seed=11)
    # the fBm part has zero quadratic variation, so [z]_T stays close to T
    assert abs(np.sum(np.diff(x.z) ** 2) - 1.0) < 0.05
    assert x.n_jumps == 0


def test_fbm_increment_variance():
    rng = np.random.default_rng(5)
    n, H = 256, 0.75
    incs = np.array([np.diff(fbm_walk(rng, n, 1.0, H)) for _ in range(400)])
    var = incs.var()
    assert var == pytest.approx((1 / n) ** (2 * H), rel=0.05)
    # positively correlated neighbours for H > 1/2: rho(1) = 2^{2H-1} - 1
    corr = np.mean(incs[:, :-1] * incs[:, 1:]) / var
    assert corr == pytest.approx(2 ** (2 * H - 1) - 1, abs=0.03)


@pytest.mark.parametrize("hurst", [0.5, 0.3, 1.0])
def test_fbm_rejects_rough_hurst(hurst):
    with pytest.raises(InvalidArgument):
        ContinuousQV(100.0, 0.2, "bm_plus_fbm", hurst=hurst).validate()


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        GeometricPoisson(100.0, 0.05, -1.0, PoissonJumps(1.0)).validate()
    with pytest.raises(InvalidArgument):
        ContinuousQV(100.0, 0.0).validate()
    with pytest.raises(InvalidArgument):
        JumpDiffusion(100.0, 0.0, 0.2, UniformJumpLaw(-1.5, 0.1), PoissonJumps(1.0)).validate()
    with pytest.raises(InvalidArgument):
        ContinuousQV(100.0, 0.2, "bm_plus_reflected", rho=1.2).validate()
    with pytest.raises(InvalidArgument):
        PoissonJumps(0.0)


def test_evaluate_pure_drift_no_jump(p10):
    x = poisson_trajectory(100.0, 0.05, -0.1, [], p10.grid(10))
    for t in (0.1, 0.37, 0.9):
        assert x.evaluate(t)[2] == 0.0


def test_evaluate_jump_factor(p10):
    x = poisson_trajectory(100.0, 0.05, -0.1, [0.5], p10.grid(10))
    left, right, jump = x.evaluate(0.5)
    assert right == pytest.approx(0.9 * left, rel=1e-15)
    assert jump == pytest.approx(-0.1 * left, rel=1e-12)


def test_left_value_is_limit_from_the_left(p14):
    x = poisson_trajectory(100.0, 0.05, -0.1, [0.5], p14.grid(14))
    left = x.evaluate(0.5)[0]
    approach = x.values(0.5 - 2.0 ** -np.arange(20, 40))
    assert np.max(np.abs(approach - left)) <= 1e-12 * left * 10 + 100 * 0.05 * 2.0**-20 * 1.1


def test_evaluate_out_of_range(p10, gbm):
    x = generate_trajectory(gbm, p10, seed=1)
    with pytest.raises(InvalidArgument):
        x.evaluate(1.5)


def test_determinism(p10, jump_diffusion):
    a = generate_trajectory(jump_diffusion, p10, seed=42)
    b = generate_trajectory(jump_diffusion, p10, seed=42)
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.jump_times, b.jump_times)
    np.testing.assert_array_equal(a.jump_factors, b.jump_factors)


def test_bundle_filter_is_seed_deterministic(p10, geo_poisson):
    a = generate_bundle(geo_poisson, p10, 10, 7, lambda x: x.n_jumps <= 1)
    b = generate_bundle(geo_poisson, p10, 10, 7, lambda x: x.n_jumps <= 1)
    assert all(x.n_jumps <= 1 for x in a)
    assert [list(x.jump_times) for x in a] == [list(x.jump_times) for x in b]


def test_master_grid_must_cover_finest_level(gbm):
    p = PartitionSequence(1.0, max_level=8)
    with pytest.raises(InvalidArgument):
        generate_trajectory(gbm, p, 1, level=6)


@pytest.mark.parametrize("gaps", [GammaGaps(2.0, 0.1), ParetoGaps(2.0, 0.2), RationalGaps(5.0, 100)])
def test_renewal_sources(p10, gaps):
    spec = GeometricPoisson(100.0, 0.05, -0.1, RenewalJumps(gaps))
    x = generate_trajectory(spec, p10, seed=2)
    assert np.all((x.jump_times > 0) & (x.jump_times < 1))
    assert np.all(np.diff(x.jump_times) > 0)
    if isinstance(gaps, RationalGaps):
        np.testing.assert_allclose(x.jump_times * 100, np.round(x.jump_times * 100), atol=1e-9)


def test_jump_laws_support():
    rng = np.random.default_rng(0)
    assert np.all(LogNormalJumpLaw(0.0, 0.3).sample(rng, 1000) > -1)
    d = DiscreteJumpLaw((-0.2, 0.1), (0.5, 0.5))
    s = d.sample(rng, 100)
    assert set(np.unique(s)) <= {-0.2, 0.1}
    assert np.all(d.contains(s))


def test_reflected_mixture_qv(p14):
    spec = ContinuousQV(100.0, 0.2, "bm_plus_reflected", rho=0.6, bound=0.5)
    x = generate_trajectory(spec, p14, seed=4)
    assert abs(np.sum(np.diff(x.z) ** 2) - 1.0) < 0.05


# ---------------------------------------------------------------------------
# invariants


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rcll_and_positivity(seed):
    p = PartitionSequence(1.0, max_level=8)
    spec = JumpDiffusion(100.0, 0.02, 0.3, UniformJumpLaw(-0.5, 0.5), PoissonJumps(4.0))
    x = generate_trajectory(spec, p, seed)
    assert x.minimum() > 0
    for s, f in zip(x.jump_times, x.jump_factors):
        left, right, _ = x.evaluate(float(s))
        assert right == pytest.approx(f * left, rel=1e-14)
    # away from jumps left and right coincide exactly
    t = p.grid(8)
    t = t[~np.isin(t, x.jump_times)]
    np.testing.assert_array_equal(x.values(t), x.values(t, "left"))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-0.5, 0.5).filter(lambda v: abs(v) > 1e-3),
       mu=st.floats(-0.2, 0.2))
def test_geometric_poisson_closed_form(seed, a, mu):
    p = PartitionSequence(1.0, max_level=8)
    x = generate_trajectory(GeometricPoisson(50.0, mu, a, PoissonJumps(3.0)), p, seed)
    t = x.grid
    n_t = np.searchsorted(x.jump_times, t, side="right")
    expected = 50.0 * np.exp(mu * t) * (1 + a) ** n_t
    np.testing.assert_allclose(x.values(t), expected, rtol=1e-13)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_csv_round_trip_bit_exact(seed):
    p = PartitionSequence(1.0, max_level=6)
    spec = JumpDiffusion(100.0, 0.01, 0.25, UniformJumpLaw(-0.3, 0.3), PoissonJumps(3.0))
    x = generate_trajectory(spec, p, seed)
    y = trajectory_from_csv(trajectory_to_csv(x))
    for attr in ("grid", "z", "jump_times", "jump_factors"):
        np.testing.assert_array_equal(getattr(x, attr), getattr(y, attr))
    assert (x.x0, x.mu, x.sigma) == (y.x0, y.mu, y.sigma)
    buf = io.StringIO()
    write_trajectory_csv(x, buf)
    buf.seek(0)
    np.testing.assert_array_equal(read_trajectory_csv(buf).z, x.z)


def test_splice_agrees_before_seam(p10, gbm):
    x = generate_trajectory(gbm, p10, 1)
    y = generate_trajectory(gbm, p10, 2)
    t = 0.5
    z = splice(x, y, t)
    before = p10.grid(10)[p10.grid(10) < t]
    np.testing.assert_allclose(z.values(before), x.values(before), rtol=1e-14)
    assert z.values(t, "left") == pytest.approx(float(x.values(t, "left")), rel=1e-14)
    after = p10.grid(10)[p10.grid(10) >= t]
    np.testing.assert_allclose(z.values(after), y.values(after), rtol=1e-12)


def test_with_terminal_moves_only_the_end(p12, gbm):
    x = generate_trajectory(gbm, p12, 3)
    y = with_terminal(x, 123.456)
    assert float(y.values(1.0)) == pytest.approx(123.456, rel=1e-14)
    assert y.values(0.0) == 100.0
    # a linear drift adds no quadratic variation
    qx = quadratic_variation(x, p12, [1.0]).total[0]
    qy = quadratic_variation(y, p12, [1.0]).total[0]
    assert qy == pytest.approx(qx * (123.456 / float(x.values(1.0))) ** 2, rel=0.2)
