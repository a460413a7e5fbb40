"""Existence and uniqueness certificates for best rank-R tensor approximations."""

__version__ = "0.1.0"

from .tensor import (
    FactorTriple,
    SeededRng,
    add_noise_at_snr,
    frobenius_norm,
    haar_orthogonal,
    khatri_rao,
    modal_product,
    outer3,
    random_rank_r,
    read_tensor,
    refold,
    snr_db,
    synthesize,
    unfold,
    write_tensor,
)
from .pencil import (
    Line,
    PencilDiagnosis,
    Spectrum,
    Verdict,
    char_poly_eval,
    chordal,
    factor_spectrum,
    jennrich_cpd,
    jennrich_pencil_cpd,
    matching_distance,
    pencil_spectrum,
    slice_mix_probe,
    spectral_variation,
)
from .compress import Compression, mlsvd_truncate, multilinear_rank, orthogonal_procrustes, procrustes_pair_compress
from .approx import best_rank1_hopm, cpd_als, spectral_norm_bounds
from .bounds import (
    BoundReport,
    CertifyOptions,
    CertVerdict,
    MeasuredCertificate,
    balance_factors,
    bauer_fike_sv_bound,
    certify_neighborhood,
    matching_distance_bound,
    mlsvd_existence_check,
    multi_pencil_epsilon,
    pencil_existence_epsilon,
)
