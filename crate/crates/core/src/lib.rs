//! Simulation and estimation library for passive order-flow price impact.

pub mod analytics;
pub mod error;
pub mod estimation;
pub mod hawkes;
pub mod impact;
pub mod kernels;
pub mod orderbook;
pub mod quadrature;
pub mod rng;
pub mod scaling;
pub mod specialfn;
pub mod stats;

pub use analytics::{
    asymptotic_shape, broker_evaluation, fit_power_law, instantaneous_impact, kappa_star_mc,
    shape_curve, BrokerEvaluation, BrokerRow, KappaStarEstimate, PowerLawFit, ShapeConfig,
    StrategyProfile,
};
pub use error::{Error, Result};
pub use estimation::{
    estimate_kappa_affine, estimate_kappa_const, estimate_kappa_noise, realized_variance,
    sampling_sensitivity, simulate_simplified_price, AffineKappaSqFit, SampledPrice, SamplingRow,
    VarianceSplit,
};
pub use hawkes::{simulate_hawkes, Baseline, EventStream, HawkesParams};
pub use impact::{impact_trajectory, market_impact_at, price_at, ImpactEstimate, MarketModel};
pub use kernels::{solve_psi, xi_exact, KernelSpec, PropagatorTable};
pub use orderbook::{
    simulate_book, simulate_coupled, BookPath, CoupledBookPath, KappaSpec, KappaVariant,
    MetaorderSchedule, QueueModel, Side,
};
pub use rng::{SeedTree, StreamPurpose};
pub use scaling::{
    forward_variance, limit_market_impact, limit_mi_on_path, linear_limit_mi,
    linear_limit_realized, participation_sweep, refinement_report, rescaling_consistency,
    simulate_y, simulate_y_with_increments, solve_queue_ode, LimitImpactConfig, LimitQueuePath,
    LinearImpact, ParticipationSweep, RefinementReport, RescalingConfig, RescalingMap,
    RescalingReport, RoughVolParams, RoughVolPath, YScheme,
};
pub use specialfn::{ml_cdf, ml_density, mittag_leffler, MittagLefflerLaw};
