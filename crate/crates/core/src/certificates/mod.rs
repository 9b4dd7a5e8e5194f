//! Stability certificates and the precision guarantees derived from them.

mod asf;
mod certificate;
mod comparison;

pub use asf::{
    derive_asf, derive_reverse_asf, optimize_precision, to_max_form, AsfError, AsfParameters, CaseTag,
    FreeParameters, MaxFormParameters, PsiChoice, Timing, DELTA_SEARCH_SPAN, PSI_LATTICE_MAX, psi_lattice,
};
pub use certificate::{
    check_dwell, flow_mismatch_bound, inter_impulse_gain, verify_certificate, CertificateReport,
    IncrementalLyapunov, MaxNormDistance, StabilityCertificate, CERTIFICATE_TOLERANCE,
};
pub use comparison::ComparisonFunction;
