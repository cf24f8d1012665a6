//! Checks of the information-theoretic and order-statistic claims behind the
//! algorithm, plus nearest-neighbor estimators for visitation clouds.

pub mod info;
pub mod knn;
pub mod order_stats;

pub use info::{
    check_decomposition, check_mi_symmetry, entropy, kl_divergence, variational_bound, Decomposition,
    DiscreteJoint, MiSymmetry, VariationalBound,
};
pub use knn::{
    estimate_policy_kl, knn_entropy, knn_kl_divergence, KlEstimate, PolicyKlReport, SampleCloud, DEFAULT_K,
};
pub use order_stats::{
    gaussian_min_of_two_mean, order_stat_max_cdf, order_stat_max_pdf, order_stat_min_cdf, order_stat_min_pdf,
    verify_order_statistics, BaseDistribution, BoundCheck, McEstimate, OrderStatReport,
};
