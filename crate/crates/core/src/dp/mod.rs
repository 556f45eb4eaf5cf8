//! Sanitisation at the trusted cellular provider: the Laplace mechanism and a
//! two-level adaptive-grid private spatial decomposition (PSD) of worker
//! locations.

mod laplace;
mod psd;

pub use laplace::{laplace_cdf, laplace_sample};
pub use psd::{build_psd, level2_granularity, BudgetSpend, GridCell, PrivacyBudget, Psd, PsdConfig};
