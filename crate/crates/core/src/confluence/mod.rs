//! Confluence criteria for the duplicated system.

pub mod criteria;
pub mod diagonal;
pub mod hormander;
pub mod metric;
pub mod nils;
pub mod one_dim;
pub mod probe;
pub mod pseudo_scale;

pub use metric::MetricS;
pub use nils::{nils, psi, ThetaFunction};
pub use pseudo_scale::{check_theta_conditions, pseudo_scale_eval, PseudoScale};
pub use one_dim::{scale_speed_1d, OneDimTheory};
pub use hormander::hormander_rank;
pub use probe::{pathwise_confluence_probe, PairProbe};
