"""Provable plug-and-play image reconstruction."""
from pnp.core import ComplexImage, ImageTensor, inner, make_rng, norm2, psnr
from pnp.denoisers import (
    Denoiser,
    EpsEstimate,
    blur_blend_denoiser,
    cnn_denoiser,
    estimate_eps,
    iterate_pairs_from_trace,
    orthogonal_residual_denoiser,
)
from pnp.fidelity import (
    FidelityModel,
    MriProblem,
    QisObservation,
    mri_model,
    poisson_model,
    qis_model,
    quadratic_model,
    random_mask,
)
from pnp.solvers import AdmmState, IterTrace, admm_step, admm_to_drs, drs_step, drs_to_admm, fbs_step, run
from pnp.theory import TheoryBounds, averagedness_check, contraction_stats, theory_drs, theory_fbs

__version__ = "1.0.0"

__all__ = [
    "AdmmState",
    "ComplexImage",
    "Denoiser",
    "EpsEstimate",
    "FidelityModel",
    "ImageTensor",
    "IterTrace",
    "MriProblem",
    "QisObservation",
    "TheoryBounds",
    "admm_step",
    "admm_to_drs",
    "averagedness_check",
    "blur_blend_denoiser",
    "cnn_denoiser",
    "contraction_stats",
    "drs_step",
    "drs_to_admm",
    "estimate_eps",
    "fbs_step",
    "inner",
    "iterate_pairs_from_trace",
    "make_rng",
    "mri_model",
    "norm2",
    "orthogonal_residual_denoiser",
    "poisson_model",
    "psnr",
    "qis_model",
    "quadratic_model",
    "random_mask",
    "run",
    "theory_drs",
    "theory_fbs",
]
