from .functions import (
    eval_Phi,
    eval_Psi,
    eval_V,
    eval_V_midpoint,
    eval_Vtilde,
    eval_Vtilde_split,
    log_psi_gap,
    phi_gradients,
    term_gradients,
)
from .planar import (
    build_planar_certificate,
    criterion_asymptote,
    criterion_ratio,
    damping_increasing_limit,
    localization_failures,
    near_segment_pairs,
    parallel_configurations,
    parallel_criterion_ratio,
)
from .serialize import CertificateFormatError, certificate_from_dict, certificate_to_dict, load_certificate, save_certificate
from .simple import select_simple_certificate, volatility_floor
from .types import InequalityCheck, PlanarCertificate, SimpleCertificate, VerificationReport
from .verify import attach_certificate, path_drift_volatility, verify_boundary_drift
