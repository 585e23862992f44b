"""Tests for the data-fidelity models."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnp.core import ComplexImage, ImageTensor, make_rng, norm2
from pnp.exceptions import DomainError, ShapeMismatchError
from pnp.fidelity import (
    MriProblem,
    QisObservation,
    fft2c,
    mri_model,
    poisson_model,
    qis_initial_estimate,
    qis_model,
    quadratic_model,
    random_mask,
    simulate_mri,
    simulate_poisson,
    simulate_qis,
    zero_filled,
)
from pnp.oracles import (
    finite_difference_grad,
    gradient_descent_prox,
    poisson_prox_oracle,
    qis_prox_oracle,
    relative_error,
)

pytestmark = pytest.mark.unit


def scalar(value: float) -> ImageTensor:
    return ImageTensor(np.full((1, 1, 1), float(value)))


def qis_scalar(k0: float, k1: float, gain: float = 8.0, oversample: int = 8) -> QisObservation:
    return QisObservation(np.full((1, 1, 1), k0), np.full((1, 1, 1), k1), gain, oversample)


@pytest.fixture
def mri_problem():
    x_true = ImageTensor(make_rng(11).random((1, 8, 8)))
    return simulate_mri(x_true, random_mask(8, 8, 0.3, 5), 0.05, 5)


@pytest.fixture
def all_models(mri_problem):
    rng = make_rng(21)
    shape = (1, 8, 8)
    counts = ImageTensor(rng.integers(0, 5, shape).astype(float))
    obs = simulate_qis(ImageTensor(rng.uniform(0.2, 1.0, shape)), 8.0, 8, 3)
    return {
        "quadratic": quadratic_model(ImageTensor(rng.random(shape))),
        "poisson": poisson_model(counts),
        "qis": qis_model(obs),
        "mri": mri_model(mri_problem),
    }


class TestQuadratic:
    def test_prox_at_b_is_b(self):
        b = ImageTensor(make_rng(0).random((1, 3, 3)))
        np.testing.assert_allclose(quadratic_model(b).prox(1.0, b).data, b.data, atol=1e-15)

    def test_grad_vanishes_at_b(self):
        b = ImageTensor(make_rng(0).random((1, 3, 3)))
        assert norm2(quadratic_model(b).grad(b)) == 0.0

    def test_prox_of_zero(self):
        f = quadratic_model(ImageTensor.full(2.0, 1, 2, 2))
        np.testing.assert_allclose(f.prox(1.0, ImageTensor.zeros(1, 2, 2)).data, 1.0)

    def test_constants(self):
        f = quadratic_model(ImageTensor.zeros(1, 2, 2))
        assert f.mu == 1.0 and f.lip_grad == 1.0

    @pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0, 1.7, 3.0])
    def test_gradient_step_scales_distances_exactly(self, alpha):
        rng = make_rng(8)
        f = quadratic_model(ImageTensor(rng.random((1, 4, 4))))
        x, y = ImageTensor(rng.random((1, 4, 4))), ImageTensor(rng.random((1, 4, 4)))
        step = lambda v: v - f.grad(v) * alpha  # noqa: E731
        assert norm2(step(x) - step(y)) == pytest.approx(abs(1 - alpha) * norm2(x - y), rel=1e-12, abs=1e-15)


class TestPoisson:
    def test_prox_zero_counts_clips(self):
        np.testing.assert_allclose(poisson_model(scalar(0)).prox(1.0, scalar(1.0)).data, 0.0, atol=1e-15)

    def test_prox_golden_ratio(self):
        value = poisson_model(scalar(1)).prox(1.0, scalar(0.0)).data.item()
        assert value == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-14)
        assert abs(value - poisson_prox_oracle(1.0, 0.0, 1.0)) <= 1e-8

    def test_grad_vanishes_at_observation(self):
        y = ImageTensor(np.array([[[1.0, 2.0], [3.0, 7.0]]]))
        assert norm2(poisson_model(y).grad(y)) == 0.0

    def test_grad_zero_convention_and_domain(self):
        f = poisson_model(ImageTensor(np.array([[[2.0, 0.0]]])))
        np.testing.assert_array_equal(f.grad(ImageTensor(np.array([[[0.0, 0.0]]]))).data, [[[0.0, 0.0]]])
        with pytest.raises(DomainError):
            f.grad(ImageTensor(np.array([[[-0.1, 1.0]]])))

    def test_eval_three_cases(self):
        f = poisson_model(ImageTensor(np.array([[[1.0, 0.0]]])))
        assert f.eval(ImageTensor(np.array([[[-1.0, 1.0]]]))) == math.inf
        assert f.eval(ImageTensor(np.array([[[0.0, 1.0]]]))) == math.inf
        assert f.eval(ImageTensor(np.array([[[1.0, 0.0]]]))) == pytest.approx(1.0)

    def test_rejects_nonpositive_step_and_bad_counts(self):
        with pytest.raises(DomainError):
            poisson_model(scalar(1)).prox(0.0, scalar(1.0))
        with pytest.raises(DomainError):
            poisson_model(scalar(1.5))
        with pytest.raises(DomainError):
            poisson_model(scalar(-1))

    def test_no_constants(self):
        f = poisson_model(scalar(1))
        assert f.mu is None and f.lip_grad is None

    def test_prox_matches_golden_section_oracle(self):
        rng = make_rng(99)
        worst = 0.0
        for _ in range(1000):
            alpha, z, y = rng.uniform(0.05, 10.0), rng.uniform(-3.0, 5.0), float(rng.integers(0, 8))
            closed = poisson_model(scalar(y)).prox(alpha, scalar(z)).data.item()
            worst = max(worst, abs(closed - poisson_prox_oracle(alpha, z, y)))
        assert worst <= 1e-8

    def test_prox_is_stable_for_large_negative_inputs(self):
        value = poisson_model(scalar(3)).prox(1.0, scalar(-1e8)).data.item()
        assert value > 0
        assert value == pytest.approx(3e-8, rel=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 10.0), st.floats(-5.0, 5.0), st.floats(0.0, 3.0), st.integers(0, 10))
    def test_prox_monotone_and_nonnegative(self, alpha, z, dz, y):
        f = poisson_model(scalar(y))
        low = f.prox(alpha, scalar(z)).data.item()
        high = f.prox(alpha, scalar(z + dz)).data.item()
        assert low >= 0.0
        assert high >= low - 1e-12


class TestQis:
    def test_zero_ones_count_eval_and_grad(self):
        f = qis_model(qis_scalar(8, 0))
        assert f.eval(scalar(0.5)) == pytest.approx(4.0, abs=1e-14)
        assert f.grad(scalar(0.5)).data.item() == pytest.approx(8.0, abs=1e-14)

    def test_all_ones_grad_at_log_two(self):
        f = qis_model(qis_scalar(0, 8))
        assert f.grad(scalar(math.log(2.0))).data.item() == pytest.approx(-8.0, abs=1e-12)

    def test_observation_invariants(self):
        with pytest.raises(DomainError):
            qis_scalar(3, 4)
        with pytest.raises(DomainError):
            QisObservation(np.full((1, 1, 1), 8.0), np.zeros((1, 1, 1)), 0.0, 8)
        with pytest.raises(ShapeMismatchError):
            QisObservation(np.full((1, 1, 2), 8.0), np.zeros((1, 1, 1)), 8.0, 8)

    def test_domain(self):
        f = qis_model(qis_scalar(4, 4))
        assert f.eval(scalar(0.0)) == math.inf
        with pytest.raises(DomainError):
            f.grad(scalar(0.0))
        with pytest.raises(DomainError):
            f.prox(0.0, scalar(1.0))

    def test_prox_without_detections_is_shifted_clip(self):
        f = qis_model(qis_scalar(8, 0))
        assert f.prox(0.5, scalar(2.0)).data.item() == 0.0
        assert f.prox(0.1, scalar(2.0)).data.item() == pytest.approx(2.0 - 0.1 * 1.0 * 8.0, abs=1e-14)

    def test_prox_matches_golden_section_oracle(self):
        rng = make_rng(17)
        worst = 0.0
        for _ in range(100):
            oversample = int(rng.integers(1, 17))
            gain = rng.uniform(1.0, 16.0)
            ones = float(rng.integers(0, oversample + 1))
            alpha, z = rng.uniform(0.1, 10.0), rng.uniform(-1.0, 3.0)
            f = qis_model(qis_scalar(oversample - ones, ones, gain, oversample))
            closed = f.prox(alpha, scalar(z)).data.item()
            worst = max(worst, abs(closed - qis_prox_oracle(alpha, z, oversample - ones, ones, gain / oversample)))
        assert worst <= 1e-8

    def test_prox_is_vectorised(self):
        obs = simulate_qis(ImageTensor(make_rng(2).uniform(0.0, 1.0, (2, 5, 5))), 8.0, 8, 1)
        f = qis_model(obs)
        z = ImageTensor(make_rng(3).uniform(-0.5, 1.5, (2, 5, 5)))
        out = f.prox(1.0, z)
        for index in np.ndindex(z.shape):
            expected = qis_prox_oracle(1.0, z.data[index], obs.zeros_count[index], obs.ones_count[index], obs.rate)
            assert out.data[index] == pytest.approx(expected, abs=1e-8)

    def test_prox_resolves_rounding_level_input_changes(self):
        obs = simulate_qis(ImageTensor(make_rng(2).uniform(0.0, 1.0, (2, 5, 5))), 8.0, 8, 1)
        f = qis_model(obs)
        z = ImageTensor(make_rng(3).uniform(-0.5, 1.5, (2, 5, 5)))
        nudged = z + ImageTensor.full(1e-14, 2, 5, 5)
        # the prox is nonexpansive, so only rounding may add to ||z - nudged||
        assert norm2(f.prox(0.5, z) - f.prox(0.5, nudged)) <= norm2(nudged - z) + 1e-13

    def test_simulation_and_initial_estimate(self):
        x = ImageTensor(np.full((1, 16, 16), 0.5))
        obs = simulate_qis(x, 8.0, 8, 4)
        assert np.all(obs.zeros_count + obs.ones_count == 8)
        assert obs.shape == (1, 16, 16)
        assert 0.0 < obs.ones_count.mean() < 8.0
        np.testing.assert_allclose(qis_initial_estimate(obs).data, obs.ones_count / 8.0)


class TestMri:
    def test_full_mask_exact_data_is_fixed_point(self):
        x_true = ImageTensor(make_rng(4).random((1, 8, 8)))
        mask = np.ones((8, 8), dtype=bool)
        f = mri_model(MriProblem(mask=mask, y=ComplexImage(fft2c(x_true.data[0]))))
        np.testing.assert_allclose(f.prox(1.0, x_true).data, x_true.data, atol=1e-12)
        assert f.mu == 1.0 and f.lip_grad == 1.0

    def test_zero_step_is_identity(self, mri_problem):
        z = ImageTensor(make_rng(5).random((1, 8, 8)))
        np.testing.assert_allclose(mri_model(mri_problem).prox(0.0, z).data, z.data, atol=1e-14)

    def test_undersampled_constants(self, mri_problem):
        f = mri_model(mri_problem)
        assert f.mu == 0.0
        assert f.lip_grad == 1.0

    def test_prox_matches_gradient_descent_oracle(self):
        rng = make_rng(6)
        for seed in range(10):
            x_true = ImageTensor(rng.random((1, 8, 8)))
            f = mri_model(simulate_mri(x_true, random_mask(8, 8, 0.3, seed), 0.05, seed))
            z = ImageTensor(rng.random((1, 8, 8)))
            for alpha in (0.1, 1.0, 10.0):
                assert relative_error(f.prox(alpha, z).data, gradient_descent_prox(f, alpha, z).data) <= 1e-6

    def test_data_is_zero_off_mask(self, mri_problem):
        assert np.all(mri_problem.y.data[~mri_problem.mask] == 0)
        with pytest.raises(DomainError):
            MriProblem(mask=np.zeros((2, 2), dtype=bool), y=ComplexImage(np.ones((2, 2))))
        with pytest.raises(ShapeMismatchError):
            MriProblem(mask=np.ones((3, 3), dtype=bool), y=ComplexImage(np.ones((2, 2))))

    def test_zero_filled_equals_back_projection(self, mri_problem):
        f = mri_model(mri_problem)
        zero = zero_filled(mri_problem)
        np.testing.assert_allclose(f.grad(ImageTensor.zeros(1, 8, 8)).data, -zero.data, atol=1e-14)

    def test_shape_checked(self, mri_problem):
        with pytest.raises(ShapeMismatchError):
            mri_model(mri_problem).eval(ImageTensor.zeros(1, 4, 4))


class TestRandomMask:
    def test_full_rate(self):
        assert random_mask(6, 5, 1.0, 0).all()

    def test_count_and_dc(self):
        mask = random_mask(16, 16, 0.3, 3)
        assert mask.sum() == 77
        assert mask[0, 0]

    def test_deterministic(self):
        np.testing.assert_array_equal(random_mask(16, 16, 0.3, 8), random_mask(16, 16, 0.3, 8))
        assert not np.array_equal(random_mask(16, 16, 0.3, 8), random_mask(16, 16, 0.3, 9))

    def test_rejects_bad_rate(self):
        with pytest.raises(DomainError):
            random_mask(4, 4, 0.0, 0)
        with pytest.raises(DomainError):
            random_mask(4, 4, 1.5, 0)


class TestSharedProperties:
    @pytest.mark.parametrize("name", ["quadratic", "poisson", "qis", "mri"])
    def test_gradient_matches_finite_differences(self, all_models, name):
        f = all_models[name]
        x = ImageTensor(make_rng(31).uniform(0.5, 1.5, f.shape))
        assert relative_error(f.grad(x).data, finite_difference_grad(f.eval, x).data) <= 1e-5

    @pytest.mark.parametrize("name", ["quadratic", "poisson", "qis", "mri"])
    @pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
    def test_prox_beats_random_perturbations(self, all_models, name, alpha):
        f = all_models[name]
        rng = make_rng(41)
        z = ImageTensor(rng.uniform(-0.5, 1.5, f.shape))
        p = f.prox(alpha, z)
        best = f.prox_objective(alpha, z, p)
        perturbations = rng.standard_normal((10000,) + f.shape)
        scales = 10.0 ** rng.uniform(-6, -1, size=10000)
        for delta, scale in zip(perturbations, scales):
            candidate = ImageTensor(p.data + scale * delta)
            assert f.prox_objective(alpha, z, candidate) >= best - 1e-12 * (1.0 + abs(best))

    @pytest.mark.parametrize("name", ["quadratic", "poisson", "qis", "mri"])
    def test_prox_is_nonexpansive(self, all_models, name):
        f = all_models[name]
        rng = make_rng(51)
        for _ in range(200):
            z1 = ImageTensor(rng.uniform(-1.0, 2.0, f.shape))
            z2 = ImageTensor(rng.uniform(-1.0, 2.0, f.shape))
            assert norm2(f.prox(1.0, z1) - f.prox(1.0, z2)) <= norm2(z1 - z2) * (1 + 1e-12)

    def test_poisson_simulation_scales_with_peak(self):
        x = ImageTensor(np.full((1, 32, 32), 0.5))
        y = simulate_poisson(x, 10.0, 0)
        assert np.all(y.data >= 0)
        assert y.data.mean() == pytest.approx(5.0, rel=0.15)
        with pytest.raises(DomainError):
            simulate_poisson(x, 0.0, 0)
