import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hurwitz, rel_err
from ctsmooth import linalg
from ctsmooth.errors import DomainError, InvalidInputError
from ctsmooth.messages import InfoGaussian, MomentGaussian
from ctsmooth.model import ContinuousLTISystem, SegmentedSystem, butterworth, simulate
from ctsmooth.oracle import discrete_decompose, joint_ls_solve
from ctsmooth.smoother import MeasurementSet, _backward_sweep, _forward_sweep, query, query_grid, run


def integrator(sigma_u=1.0, sigma_z=1.0):
    return ContinuousLTISystem([[0.0]], [[1.0]], [[1.0]], sigma_u=sigma_u, Vz=[[sigma_z**2]])


class BatchGaussian:
    """Brute-force posterior from the joint covariance of the state at chosen times and all samples."""

    def __init__(self, system, prior, t0, meas):
        self.s, self.prior, self.t0, self.meas = system, prior, t0, meas

    def _mean(self, t):
        s = self.s
        dt = t - self.t0
        return linalg.matrix_exponential(s.A, dt) @ self.prior.m + linalg.drift_integral(s.A, dt) @ s.h

    def _cov(self, t, u):
        """Cov(x(t), x(u))."""
        s = self.s
        lo = min(t, u)
        E = linalg.matrix_exponential(s.A, lo - self.t0)
        V = E @ self.prior.V @ E.T + s.sigma_u**2 * linalg.forward_gramian(s.A, s.B, lo - self.t0).value
        if t >= u:
            return linalg.matrix_exponential(s.A, t - u) @ V
        return V @ linalg.matrix_exponential(s.A, u - t).T

    def _data(self):
        s, meas = self.s, self.meas
        C, K = s.C, len(meas)
        mu = np.concatenate([C @ self._mean(t) for t in meas.times])
        S = np.block([[C @ self._cov(a, b) @ C.T for b in meas.times] for a in meas.times])
        S = S + np.kron(np.eye(K), s.Vz)
        return mu, S, meas.values.reshape(-1)

    def state(self, t):
        C = self.s.C
        mu, S, y = self._data()
        Cxy = np.hstack([self._cov(t, tk) @ C.T for tk in self.meas.times])
        mean = self._mean(t) + Cxy @ np.linalg.solve(S, y - mu)
        cov = self._cov(t, t) - Cxy @ np.linalg.solve(S, Cxy.T)
        return mean, cov

    def input(self, t):
        s, C = self.s, self.s.C
        mu, S, y = self._data()
        # white input at t only influences later samples
        Cuy = np.hstack(
            [
                s.sigma_u**2 * s.B.T @ linalg.matrix_exponential(s.A, tk - t).T @ C.T if tk > t else np.zeros((s.m, s.nu))
                for tk in self.meas.times
            ]
        )
        return Cuy @ np.linalg.solve(S, y - mu)


def random_problem(seed, n=None, K=None, nu=1):
    r = np.random.default_rng(seed)
    n = n or int(r.integers(1, 5))
    K = K or int(r.integers(1, 8))
    s = ContinuousLTISystem(
        random_hurwitz(r, n),
        r.standard_normal((n, 1)),
        r.standard_normal((nu, n)),
        h=r.standard_normal(n),
        sigma_u=float(r.uniform(0.5, 2.0)),
        Vz=np.diag(r.uniform(0.1, 1.0, nu)),
    )
    times = np.cumsum(r.uniform(0.1, 1.0, K))
    meas = MeasurementSet(times, r.standard_normal((K, nu)))
    X = r.standard_normal((n, n))
    prior = MomentGaussian(r.standard_normal(n), X @ X.T + np.eye(n))
    return s, meas, prior, r


# ---------------------------------------------------------------- run


def test_no_measurements_gives_propagated_prior():
    s = butterworth(3, 1.0)
    prior = MomentGaussian(np.array([1.0, 0.0, 0.0]), 0.1 * np.eye(3))
    state = run(s, MeasurementSet.empty(), prior=prior, t0=0.0, t_end=2.0)
    assert all(np.all(b.W == 0) for b in state.bwd)
    rec = query(state, 1.3)
    Phi = linalg.matrix_exponential(s.A, 1.3)
    np.testing.assert_allclose(rec.x_mean, Phi @ prior.m, atol=1e-12)
    Vref = Phi @ prior.V @ Phi.T + linalg.forward_gramian(s.A, s.B, 1.3).value
    assert rel_err(rec.x_cov, Vref) <= 1e-10


def test_integrator_single_measurement():
    state = run(integrator(), MeasurementSet([1.0], [2.0]), prior=MomentGaussian([0.0], [[0.0]]), t0=0.0)
    post = state.knot_posterior(int(state.measurement_knots[0]))
    assert post.m[0] == pytest.approx(1.0, abs=1e-14)
    assert post.V[0, 0] == pytest.approx(0.5, abs=1e-14)
    mid = query(state, 0.5)
    assert mid.x_mean[0] == pytest.approx(0.5, abs=1e-14)
    assert mid.x_cov[0, 0] == pytest.approx(0.375, abs=1e-14)
    assert mid.u_hat[0] == pytest.approx(1.0, abs=1e-14)


def test_sweep_order_does_not_matter():
    s, meas, prior, _ = random_problem(5, n=3, K=6)
    state = run(s, meas, prior=prior, t0=0.0)
    bwd, bwd_out = _backward_sweep(s.n, state.observations, state.transitions)
    fwd = _forward_sweep(prior, state.observations, state.transitions)
    for a, b in zip(fwd, state.fwd):
        assert np.array_equal(a.m, b.m) and np.array_equal(a.V, b.V)
    for a, b in zip(bwd, state.bwd):
        assert np.array_equal(a.W, b.W) and np.array_equal(a.xi, b.xi)


@given(st.integers(0, 2**31))
def test_knot_posteriors_match_batch_conditioning(seed):
    s, meas, prior, _ = random_problem(seed)
    state = run(s, meas, prior=prior, t0=0.0)
    batch = BatchGaussian(s, prior, 0.0, meas)
    for j, t in enumerate(state.knot_times):
        m, V = batch.state(t)
        post = state.knot_posterior(j)
        assert rel_err(post.m, m) <= 1e-8
        assert rel_err(post.V, V) <= 1e-8


@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_queries_match_batch_conditioning(seed, frac):
    s, meas, prior, _ = random_problem(seed)
    t_end = meas.times[-1] + 0.5
    state = run(s, meas, prior=prior, t0=0.0, t_end=t_end)
    t = frac * t_end
    rec = query(state, t)
    batch = BatchGaussian(s, prior, 0.0, meas)
    m, V = batch.state(t)
    assert rel_err(rec.x_mean, m) <= 1e-8
    assert rel_err(rec.x_cov, V) <= 1e-8
    np.testing.assert_allclose(rec.y_hat, s.C @ m, rtol=1e-8, atol=1e-10)
    if t not in meas.times:
        u_ref = batch.input(t)
        assert np.linalg.norm(rec.u_hat - u_ref) <= 1e-8 * max(np.linalg.norm(u_ref), 1.0)


def test_multi_output_samples():
    s, meas, prior, _ = random_problem(8, n=3, K=4, nu=2)
    state = run(s, meas, prior=prior, t0=0.0)
    batch = BatchGaussian(s, prior, 0.0, meas)
    for t in (0.3, float(meas.times[1]), float(meas.times[-1])):
        rec = query(state, t)
        m, V = batch.state(t)
        assert rel_err(rec.x_mean, m) <= 1e-8 and rel_err(rec.x_cov, V) <= 1e-8
        assert rec.y_var.shape == (2, 2)


# ---------------------------------------------------------------- query


def test_query_at_knot_equals_knot_posterior():
    s, meas, prior, _ = random_problem(3, n=4, K=7)
    state = run(s, meas, prior=prior, t0=0.0)
    for j, t in enumerate(state.knot_times):
        rec = query(state, t)
        np.testing.assert_allclose(rec.x_mean, state.knot_posterior(j).m, atol=1e-12, rtol=0)


def test_query_mid_interval_matches_discrete_oracle():
    s = ContinuousLTISystem([[-1.0]], [[1.0]], [[1.0]])
    times = np.array([1.0, 2.0, 3.0])
    meas = MeasurementSet(times, [0.5, -0.3, 1.2])
    prior = MomentGaussian([0.0], [[0.5]])
    state = run(s, meas, prior=prior, t0=0.0)
    N = 4096
    decomp = discrete_decompose(s, times, N, 0.0)
    sol = joint_ls_solve(decomp, meas, prior)
    t = 1.5
    rec = query(state, t)
    assert rel_err(rec.x_mean, sol.x_at(decomp, t)[0]) <= 1e-3
    # input average over the substep centred near t
    assert rel_err(rec.u_hat, sol.u_at(decomp, t + 0.5 / N)[0]) <= 1e-3


def test_after_last_sample_input_vanishes_and_uncertainty_grows():
    state = run(integrator(), MeasurementSet([1.0, 2.0], [0.3, 1.0]), prior=MomentGaussian([0.0], [[1.0]]), t0=0.0, t_end=5.0)
    recs = query_grid(state, np.linspace(2.0, 5.0, 13)[1:])
    assert all(r.u_hat[0] == 0.0 for r in recs)
    traces = [np.trace(r.x_cov) for r in recs]
    assert np.all(np.diff(traces) > 0)


def test_query_grid_equals_individual_queries():
    s, meas, prior, _ = random_problem(21, n=3, K=5)
    state = run(s, meas, prior=prior, t0=0.0)
    grid = np.linspace(meas.times[1], meas.times[2], 10)
    for a, t in zip(query_grid(state, grid), grid):
        b = query(state, t)
        assert np.array_equal(a.x_mean, b.x_mean) and np.array_equal(a.u_hat, b.u_hat)
    for rec, j in zip(query_grid(state, state.knot_times), range(len(state.knot_times))):
        np.testing.assert_allclose(rec.x_mean, state.knot_posterior(j).m, atol=1e-12)


def test_query_domain_errors():
    state = run(integrator(), MeasurementSet([1.0, 2.0], [0.3, 1.0]), prior=MomentGaussian([0.0], [[1.0]]), t0=0.0)
    with pytest.raises(DomainError):
        query(state, -0.1)
    with pytest.raises(DomainError):
        query(state, 2.5)
    with pytest.raises(InvalidInputError):
        query_grid(state, [1.0, 0.5])


def test_run_argument_errors():
    s = integrator()
    with pytest.raises(InvalidInputError):
        run(s, MeasurementSet([1.0], [0.0]))  # non-Hurwitz and no prior
    with pytest.raises(DomainError):
        run(s, MeasurementSet([1.0], [0.0]), prior=MomentGaussian([0.0], [[1.0]]), t0=2.0)
    with pytest.raises(DomainError):
        run(s, MeasurementSet([1.0, 2.0], [0.0, 1.0]), prior=MomentGaussian([0.0], [[1.0]]), t0=0.0, t_end=1.5)
    with pytest.raises(InvalidInputError):
        MeasurementSet([1.0, 1.0], [0.0, 1.0])
    with pytest.raises(InvalidInputError):
        MeasurementSet([1.0, 2.0], [0.0, np.nan])
    with pytest.raises(InvalidInputError):
        run(butterworth(2, 1.0), MeasurementSet([1.0], [[0.0, 1.0]]))


def test_default_prior_is_stationary():
    s = butterworth(4, 1.0, sigma_z=0.5)
    meas = MeasurementSet([0.5, 1.0], [0.2, -0.1])
    state = run(s, meas)
    from ctsmooth.analysis import stationary_state_cov

    explicit = run(s, meas, prior=MomentGaussian(np.zeros(4), stationary_state_cov(s)), t0=0.5)
    np.testing.assert_allclose(state.knot_posterior(1).m, explicit.knot_posterior(1).m, rtol=0, atol=0)


# ---------------------------------------------------------------- invariants


@given(st.integers(0, 2**31), st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5))
def test_inserted_observation_free_knots_do_not_change_posteriors(seed, fracs):
    s, meas, prior, _ = random_problem(seed)
    state = run(s, meas, prior=prior, t0=0.0)
    extra = sorted(set(float(f * meas.times[-1]) for f in fracs) - set(meas.times.tolist()))
    segmented = SegmentedSystem([(0.0, s)] + [(t, s) for t in extra])
    split = run(segmented, meas, prior=prior, t0=0.0)
    assert split.knot_times.size == state.knot_times.size + len(extra)
    for j, t in enumerate(state.knot_times):
        k = int(np.searchsorted(split.knot_times, t))
        a, b = state.knot_posterior(j), split.knot_posterior(k)
        assert rel_err(b.m, a.m) <= 1e-10 or np.linalg.norm(b.m - a.m) <= 1e-12
        assert rel_err(b.V, a.V) <= 1e-10


@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_joint_noise_scaling_leaves_estimates_unchanged(seed, gamma):
    s, meas, _, _ = random_problem(seed, n=3)
    prior = MomentGaussian(np.zeros(3), np.eye(3))
    scaled = ContinuousLTISystem(s.A, s.B, s.C, h=np.zeros(3), sigma_u=gamma * s.sigma_u, Vz=gamma**2 * s.Vz)
    base = ContinuousLTISystem(s.A, s.B, s.C, h=np.zeros(3), sigma_u=s.sigma_u, Vz=s.Vz)
    scaled_prior = MomentGaussian(np.zeros(3), gamma**2 * np.eye(3))
    a = run(base, meas, prior=prior, t0=0.0)
    b = run(scaled, meas, prior=scaled_prior, t0=0.0)
    for t in np.linspace(0.0, meas.times[-1], 7):
        ra, rb = query(a, t), query(b, t)
        np.testing.assert_allclose(rb.x_mean, ra.x_mean, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(rb.u_hat, ra.u_hat, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(rb.x_cov, gamma**2 * ra.x_cov, rtol=1e-8, atol=1e-10)


def test_segmented_dynamics_match_batch_over_each_piece():
    # a drift switch at t = 1: compare with a hand recursion on the knots
    a = ContinuousLTISystem([[-0.5]], [[1.0]], [[1.0]], h=[1.0])
    b = ContinuousLTISystem([[-0.5]], [[1.0]], [[1.0]], h=[-1.0])
    seg = SegmentedSystem([(0.0, a), (1.0, b)])
    prior = MomentGaussian([0.0], [[1.0]])
    state = run(seg, MeasurementSet([0.5, 2.0], [0.2, -0.4]), prior=prior, t0=0.0)
    assert 1.0 in state.knot_times
    # forward mean without data is the piecewise flow
    free = run(seg, MeasurementSet.empty(), prior=prior, t0=0.0, t_end=2.0)
    m1 = linalg.drift_integral(a.A, 1.0)[0, 0] * 1.0
    m2 = np.exp(-0.5) * m1 - linalg.drift_integral(b.A, 1.0)[0, 0]
    assert query(free, 1.0).x_mean[0] == pytest.approx(m1, rel=1e-12)
    assert query(free, 2.0).x_mean[0] == pytest.approx(m2, rel=1e-12)


def test_round_trip_with_simulated_data_tracks_the_truth():
    s = butterworth(4, 1.0)
    from ctsmooth.analysis import with_snr

    s = with_snr(s, 20.0)
    times = np.arange(1, 401) / 10.0
    sim = simulate(s, times, seed=4, dense_step=0.05)
    state = run(s, MeasurementSet(times, sim.noisy_samples))
    grid = sim.dense.t[(sim.dense.t >= times[0])]
    y_hat = np.array([r.y_hat[0] for r in query_grid(state, grid)])
    y = sim.dense.y[sim.dense.t >= times[0], 0]
    assert np.mean((y_hat - y) ** 2) < 0.1 * np.mean(y**2)
