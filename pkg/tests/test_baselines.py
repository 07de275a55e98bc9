import numpy as np
import pytest

from rcflow.baselines import LmmseContext, least_squares, lmmse, sample_row_covariance
from rcflow.core import SystemDims, complex_gaussian, make_rng
from rcflow.channelgen import GaussianChannelModel, sample_gaussian
from rcflow.measurement import Measurement, generate_pilots, observe


def _gaussian_trial(n_r, n_t, n_p, sigma, seed, r_h=None):
    dims = SystemDims(n_r, n_t, n_p)
    pilots = generate_pilots(dims, make_rng(seed, "p"))
    if r_h is None:
        h = complex_gaussian((n_r, n_t), 1.0, make_rng(seed, "h"))
    else:
        model = GaussianChannelModel(dims, row_cov=r_h)
        h = sample_gaussian(model, 1, make_rng(seed, "h")).samples[0]
    meas = observe(h, pilots, sigma, make_rng(seed, "n"))
    return meas, h


class TestLmmse:
    def test_noiseless_invertible_limit(self):
        meas, h = _gaussian_trial(4, 8, 8, 1e-12, seed=0)
        est = lmmse(meas, np.eye(8))
        nmse = 10 * np.log10(np.linalg.norm(est - h) ** 2 / np.linalg.norm(h) ** 2)
        assert nmse <= -100.0

    def test_high_noise_shrinks_to_prior_mean(self):
        # unit-power observation, sigma = 1e6: filter shrinks toward the zero mean
        dims = SystemDims(4, 8, 8)
        pilots = generate_pilots(dims, make_rng(1, "p"))
        y = complex_gaussian((4, 8), 1.0, make_rng(1, "y"))
        meas = Measurement(y=y, pilots=pilots, sigma_pilot=1e6)
        est = lmmse(meas, np.eye(8))
        assert np.max(np.abs(est)) <= 1e-6

    def test_matches_joint_covariance_oracle(self):
        # assemble the joint Gaussian of (h_row, y_row) explicitly and condition
        # through a generic block solve
        rng = make_rng(2)
        n_t, n_p, sigma = 5, 3, 0.7
        a = (rng.standard_normal((n_t, n_t)) + 1j * rng.standard_normal((n_t, n_t))) / np.sqrt(2)
        r_h = a @ a.conj().T / n_t
        meas, h = _gaussian_trial(2, n_t, n_p, sigma, seed=3, r_h=r_h)
        c_yy = meas.pilots.conj().T @ r_h @ meas.pilots + sigma**2 * np.eye(n_p)
        c_yh = meas.pilots.conj().T @ r_h
        oracle = meas.y @ np.linalg.solve(c_yy, c_yh)
        est = lmmse(meas, r_h)
        assert np.linalg.norm(est - oracle) <= 1e-9 * max(np.linalg.norm(oracle), 1e-12)

    def test_linear_in_observation(self):
        meas, _ = _gaussian_trial(4, 8, 5, 0.5, seed=4)
        ctx = LmmseContext.from_measurement(meas, np.eye(8))
        rng = make_rng(5)
        y1 = complex_gaussian(meas.y.shape, 1.0, rng)
        y2 = complex_gaussian(meas.y.shape, 1.0, rng)
        a, b = 1.5 - 0.5j, -2.0 + 1.0j
        lhs = ctx.apply(a * y1 + b * y2)
        rhs = a * ctx.apply(y1) + b * ctx.apply(y2)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)

    def test_dominates_least_squares_and_zero(self):
        # mean squared error over 200 realizations at alpha = 1
        n_trials, sigma = 200, 1.0
        mse_lmmse = mse_lsq = mse_zero = 0.0
        for s in range(n_trials):
            meas, h = _gaussian_trial(2, 6, 6, sigma, seed=100 + s)
            mse_lmmse += np.linalg.norm(lmmse(meas, np.eye(6)) - h) ** 2
            mse_lsq += np.linalg.norm(least_squares(meas) - h) ** 2
            mse_zero += np.linalg.norm(h) ** 2
        assert mse_lmmse <= mse_lsq
        assert mse_lmmse <= mse_zero

    def test_conditioning_warning(self):
        # rank-deficient R_H with nearly-noiseless pilots: cond blows past 1e12
        meas, _ = _gaussian_trial(2, 6, 4, 1e-8, seed=6)
        r_h = np.diag([1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).astype(complex)
        with pytest.warns(UserWarning, match="ill-conditioned"):
            lmmse(meas, r_h)


class TestLeastSquares:
    def test_noiseless_full_pilots_recovers(self):
        meas, h = _gaussian_trial(4, 8, 8, 0.0, seed=7)
        est = least_squares(meas)
        assert np.linalg.norm(est - h) <= 1e-10 * np.linalg.norm(h)

    def test_underdetermined_residual_orthogonality(self):
        # alpha < 1: the fit satisfies the normal equations (Y - HP) P^H = 0
        meas, _ = _gaussian_trial(4, 16, 10, 0.4, seed=8)
        est = least_squares(meas)
        residual = (meas.y - est @ meas.pilots) @ meas.pilots.conj().T
        assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(meas.y)

    def test_zero_observation_gives_zero(self):
        dims = SystemDims(3, 6, 4)
        pilots = generate_pilots(dims, make_rng(9))
        meas = Measurement(y=np.zeros((3, 4), dtype=complex), pilots=pilots, sigma_pilot=0.1)
        assert np.allclose(least_squares(meas), 0.0)


class TestSampleRowCovariance:
    def test_recovers_identity(self):
        samples = complex_gaussian((20000, 2, 6), 1.0, make_rng(10)).reshape(20000, 2, 6)
        emp = sample_row_covariance(samples)
        assert np.linalg.norm(emp - np.eye(6)) < 0.05
