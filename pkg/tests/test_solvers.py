"""Tests for the FBS, ADMM and DRS engines and the run loop."""
import numpy as np
import pytest

from pnp.cnn_train import make_phantom
from pnp.config import Method, PnPConfig
from pnp.core import ImageTensor, make_rng, norm2
from pnp.denoisers import Denoiser, IdentityDenoiser, blur_blend_denoiser, cnn_denoiser, orthogonal_residual_denoiser
from pnp.exceptions import NumericalFailure, ShapeMismatchError
from pnp.fidelity import (
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
from pnp.monitoring import RunMetric, metrics_collector
from pnp.solvers import (
    AdmmState,
    admm_step,
    admm_to_drs,
    drs_step,
    drs_step_full,
    drs_to_admm,
    fbs_step,
    fixed_point_gap,
    run,
)

pytestmark = pytest.mark.unit


class Exploding(Denoiser):
    def apply(self, x):
        return x * 1e200


def fidelity_cases():
    """(name, fidelity, init) on an 8x8 phantom for every fidelity kind."""
    truth = make_phantom(8, seed=1)
    counts = simulate_poisson(truth, 4.0, seed=1)
    obs = simulate_qis(truth, 8.0, 8, seed=1)
    problem = simulate_mri(truth, random_mask(8, 8, 0.4, seed=1), 0.02, seed=1)
    return [
        ("quadratic", quadratic_model(truth), ImageTensor.zeros(1, 8, 8)),
        ("poisson", poisson_model(counts), counts),
        ("qis", qis_model(obs), qis_initial_estimate(obs)),
        ("mri", mri_model(problem), zero_filled(problem)),
    ]


class TestSteps:
    def test_fbs_identity_unit_step_returns_b(self, quadratic_random, rng):
        x = ImageTensor(rng.random((1, 4, 4)))
        np.testing.assert_allclose(fbs_step(quadratic_random, IdentityDenoiser(), 1.0, x).data,
                                   quadratic_random.b.data, atol=1e-15)

    def test_fbs_fixed_point(self, quadratic_zero):
        x = ImageTensor.zeros(1, 4, 4)
        assert norm2(fbs_step(quadratic_zero, orthogonal_residual_denoiser(0.5), 0.5, x)) <= 1e-12

    def test_fbs_step_contracts(self, quadratic_random, pair_factory):
        d = orthogonal_residual_denoiser(0.5)
        for x1, x2 in pair_factory((1, 4, 4), 200):
            gap = norm2(fbs_step(quadratic_random, d, 0.5, x1) - fbs_step(quadratic_random, d, 0.5, x2))
            assert gap <= 0.75 * norm2(x1 - x2) * (1 + 1e-12)

    def test_admm_fixed_point_unchanged(self, quadratic_random):
        b = quadratic_random.b
        s = AdmmState(x=b, y=b, u=ImageTensor.zeros_like(b))
        nxt = admm_step(quadratic_random, IdentityDenoiser(), 0.7, s)
        for before, after in ((s.x, nxt.x), (s.y, nxt.y), (s.u, nxt.u)):
            assert norm2(after - before) <= 1e-12

    def test_admm_u_update_telescopes(self, quadratic_random, rng):
        s = AdmmState(*(ImageTensor(rng.random((1, 4, 4))) for _ in range(3)))
        nxt = admm_step(quadratic_random, orthogonal_residual_denoiser(0.3), 0.5, s)
        np.testing.assert_allclose((nxt.x - nxt.y).data, (nxt.u - s.u).data, atol=1e-14)

    def test_admm_state_shapes_checked(self):
        with pytest.raises(ShapeMismatchError):
            AdmmState(ImageTensor.zeros(1, 2, 2), ImageTensor.zeros(1, 2, 2), ImageTensor.zeros(1, 3, 3))

    def test_drs_identity_denoiser_reaches_b(self, quadratic_random):
        z = ImageTensor.zeros(1, 4, 4)
        for _ in range(200):
            z = drs_step(quadratic_random, IdentityDenoiser(), 1.0, z)
        np.testing.assert_allclose(quadratic_random.prox(1.0, z).data, quadratic_random.b.data, atol=1e-12)

    def test_drs_fixed_point(self, quadratic_zero):
        z = ImageTensor.zeros(1, 4, 4)
        assert norm2(drs_step(quadratic_zero, orthogonal_residual_denoiser(0.5), 2.0, z)) <= 1e-12

    def test_drs_step_contracts(self, quadratic_random, pair_factory):
        d = orthogonal_residual_denoiser(0.5)
        for z1, z2 in pair_factory((1, 4, 4), 200):
            gap = norm2(drs_step(quadratic_random, d, 2.0, z1) - drs_step(quadratic_random, d, 2.0, z2))
            assert gap <= 0.7 * norm2(z1 - z2) * (1 + 1e-12)

    def test_drs_operator_form_check(self, quadratic_random, rng):
        z = ImageTensor(rng.random((1, 4, 4)))
        z_next, x, x_half = drs_step_full(quadratic_random, orthogonal_residual_denoiser(0.5), 2.0, z, check=True)
        np.testing.assert_allclose(x_half.data, quadratic_random.prox(2.0, z).data)
        np.testing.assert_allclose(z_next.data, (z + x - x_half).data)


class TestAdmmDrsEquivalence:
    def test_zero_u_maps_to_y(self, rng):
        y = ImageTensor(rng.random((1, 3, 3)))
        s = AdmmState(x=y, y=y, u=ImageTensor.zeros_like(y))
        np.testing.assert_array_equal(admm_to_drs(s).data, y.data)

    def test_inverse_map(self, quadratic_random, rng):
        z = ImageTensor(rng.random((1, 4, 4)))
        s = drs_to_admm(quadratic_random, 0.5, z)
        np.testing.assert_allclose(admm_to_drs(s).data, z.data, atol=1e-15)
        np.testing.assert_allclose(s.y.data, quadratic_random.prox(0.5, z).data)

    def test_fixed_points_map_to_fixed_points(self, quadratic_random):
        d = orthogonal_residual_denoiser(0.5)
        cfg = PnPConfig(method=Method.DRS, alpha=2.0, tol=1e-14, max_iter=1000)
        z_star = run(quadratic_random, d, cfg, ImageTensor.zeros(1, 4, 4)).final_state
        s = drs_to_admm(quadratic_random, 2.0, z_star)
        assert fixed_point_gap(quadratic_random, d, Method.ADMM, 2.0, s) <= 1e-12

    @pytest.mark.parametrize("case", range(4), ids=["quadratic", "poisson", "qis", "mri"])
    @pytest.mark.parametrize("denoiser", ["orthogonal", "blur_blend", "cnn"])
    def test_traces_agree(self, case, denoiser, realsn_model):
        _, f, init = fidelity_cases()[case]
        d = {
            # mu = 0 for MRI; a small eps keeps that orbit from expanding
            "orthogonal": orthogonal_residual_denoiser(0.1),
            "blur_blend": blur_blend_denoiser(0.8, (1, 8, 8)),
            "cnn": cnn_denoiser(realsn_model),
        }[denoiser]
        alpha = 0.5
        s = admm_step(f, d, alpha, AdmmState(x=init, y=init, u=ImageTensor.zeros_like(init)))
        z = admm_to_drs(s)
        for _ in range(100):
            s = admm_step(f, d, alpha, s)
            z_next, x, _ = drs_step_full(f, d, alpha, z)
            assert norm2(admm_to_drs(s) - z_next) <= 1e-10 * (1 + norm2(z_next))
            assert norm2(s.x - x) <= 1e-10 * (1 + norm2(x))
            z = z_next


class TestRun:
    def test_quadratic_smoke_converges_fast(self, quadratic_random):
        cfg = PnPConfig(method=Method.ADMM, alpha=2.0, tol=1e-10, max_iter=500)
        trace = run(quadratic_random, orthogonal_residual_denoiser(0.5), cfg, ImageTensor.zeros(1, 4, 4))
        assert trace.converged
        assert trace.iterations < 100
        assert trace.final_residual <= 1e-10

    def test_start_at_fixed_point(self, quadratic_zero):
        cfg = PnPConfig(method=Method.FBS, alpha=0.5, tol=1e-12)
        trace = run(quadratic_zero, orthogonal_residual_denoiser(0.5), cfg, ImageTensor.zeros(1, 4, 4))
        assert trace.converged
        assert trace.iterations == 1
        assert trace.final_residual == 0.0

    @pytest.mark.parametrize("method", list(Method))
    def test_fixed_point_consistency(self, method, quadratic_random):
        d = orthogonal_residual_denoiser(0.5)
        tol = 1e-9
        cfg = PnPConfig(method=method, alpha=1.0, tol=tol, max_iter=2000)
        trace = run(quadratic_random, d, cfg, ImageTensor.zeros(1, 4, 4))
        assert trace.converged
        assert fixed_point_gap(quadratic_random, d, method, 1.0, trace.final_state) <= 2 * tol

    def test_admm_does_not_stop_on_warm_up_step(self, quadratic_random):
        # H = I leaves any start unchanged on the first ADMM step
        cfg = PnPConfig(method=Method.ADMM, alpha=1.0, tol=1e-9, max_iter=500)
        trace = run(quadratic_random, IdentityDenoiser(), cfg, ImageTensor.full(0.3, 1, 4, 4))
        assert trace.residuals[0] <= 1e-15
        assert trace.iterations > 1
        assert trace.converged
        assert fixed_point_gap(quadratic_random, IdentityDenoiser(), Method.ADMM, 1.0, trace.final_state) <= 2e-9
        assert norm2(trace.final - quadratic_random.b) <= 1e-8

    def test_admm_ratio_skips_warm_up_step(self, quadratic_random):
        cfg = PnPConfig(method=Method.ADMM, alpha=1.0, tol=1e-30, max_iter=5, record_every=1)
        trace = run(quadratic_random, orthogonal_residual_denoiser(0.5), cfg, ImageTensor.full(0.3, 1, 4, 4))
        assert trace.ratios()[0] is None
        assert trace.records[1].ratio is None
        assert trace.records[2].ratio == pytest.approx(trace.residuals[2] / trace.residuals[1])

    def test_admm_limit_satisfies_both_equations(self, quadratic_random):
        d = orthogonal_residual_denoiser(0.5)
        tol = 1e-10
        cfg = PnPConfig(method=Method.ADMM, alpha=2.0, tol=tol / 100, max_iter=2000)
        s = run(quadratic_random, d, cfg, ImageTensor.zeros(1, 4, 4)).final_state
        assert norm2(s.x - d.apply(s.x - s.u)) <= 2 * tol
        assert norm2(s.x - quadratic_random.prox(2.0, s.x + s.u)) <= 2 * tol

    def test_record_cadence(self, quadratic_random):
        cfg = PnPConfig(method=Method.FBS, alpha=0.5, tol=1e-30, max_iter=23, record_every=5)
        trace = run(quadratic_random, orthogonal_residual_denoiser(0.5), cfg, ImageTensor.zeros(1, 4, 4))
        assert [r.iteration for r in trace.records] == [1, 5, 10, 15, 20, 23]
        assert len(trace.residuals) == 23
        assert trace.records[0].ratio is None
        frame = trace.to_frame()
        assert list(frame.columns) == ["iteration", "displacement", "ratio", "residual", "psnr"]
        assert len(frame) == 6

    def test_ratios_follow_residuals(self, quadratic_random):
        cfg = PnPConfig(method=Method.FBS, alpha=0.5, tol=1e-30, max_iter=10)
        trace = run(quadratic_random, orthogonal_residual_denoiser(0.5), cfg, ImageTensor.zeros(1, 4, 4))
        ratios = trace.ratios()
        assert len(ratios) == 9
        assert ratios[3] == pytest.approx(trace.residuals[4] / trace.residuals[3])
        assert trace.records[4].ratio == pytest.approx(ratios[3])

    def test_admm_residual_on_drs_variable(self, quadratic_random):
        cfg = PnPConfig(method=Method.ADMM, alpha=1.0, tol=1e-30, max_iter=3)
        d = orthogonal_residual_denoiser(0.5)
        init = ImageTensor.zeros(1, 4, 4)
        trace = run(quadratic_random, d, cfg, init)
        s1 = admm_step(quadratic_random, d, 1.0, AdmmState(init, init, init))
        assert trace.residuals[0] == pytest.approx(norm2(admm_to_drs(s1) - init))

    def test_psnr_tracking(self, quadratic_random):
        truth = quadratic_random.b
        cfg = PnPConfig(method=Method.FBS, alpha=0.1, tol=1e-30, max_iter=120, record_every=10)
        trace = run(quadratic_random, IdentityDenoiser(), cfg, ImageTensor.zeros(1, 4, 4), ground_truth=truth)
        assert set(trace.psnr_checkpoints) == {50, 100}
        assert trace.initial_psnr < trace.best_psnr
        assert trace.final_psnr <= trace.best_psnr
        summary = trace.summary()
        assert summary["method"] == "FBS"
        assert set(summary["psnr_at"]) == {"50", "100"}

    def test_stored_iterates(self, quadratic_random):
        init = ImageTensor.zeros(1, 4, 4)
        cfg = PnPConfig(method=Method.DRS, alpha=2.0, tol=1e-30, max_iter=5, store_iterates=True)
        trace = run(quadratic_random, orthogonal_residual_denoiser(0.5), cfg, init)
        assert len(trace.iterates) == 6
        assert trace.iterates[0] is init

    def test_shape_mismatch(self, quadratic_random):
        with pytest.raises(ShapeMismatchError):
            run(quadratic_random, IdentityDenoiser(), PnPConfig(), ImageTensor.zeros(1, 5, 5))

    def test_non_finite_iterate_aborts_with_partial_trace(self, quadratic_random):
        cfg = PnPConfig(method=Method.FBS, alpha=0.5, tol=1e-30, max_iter=50)
        with pytest.raises(NumericalFailure) as info:
            run(quadratic_random, Exploding(), cfg, ImageTensor.full(1.0, 1, 4, 4))
        trace = info.value.partial
        assert trace.failed
        assert not trace.converged
        assert trace.final is not None

    def test_leaving_poisson_domain_aborts_with_partial_trace(self):
        f = poisson_model(ImageTensor.zeros(1, 4, 4))
        cfg = PnPConfig(method=Method.FBS, alpha=100.0, tol=1e-30, max_iter=10)
        with pytest.raises(NumericalFailure) as info:
            run(f, IdentityDenoiser(), cfg, ImageTensor.full(1.0, 1, 4, 4))
        trace = info.value.partial
        assert trace.failed
        assert trace.iterations == 1
        assert np.allclose(trace.final.data, -99.0)

    def test_records_run_metric(self, quadratic_random):
        run(quadratic_random, IdentityDenoiser(), PnPConfig(method=Method.FBS, alpha=1.0), ImageTensor.zeros(1, 4, 4))
        metrics = metrics_collector.get_metrics(RunMetric)
        assert len(metrics) == 1
        assert metrics[0]["method"] == "FBS"
