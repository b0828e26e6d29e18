//! Boolean matrix factorization with rank selected by false-discovery
//! control.
//!
//! The pipeline relaxes the binary factors to `[0, 1]`, optimizes them with
//! alternating proximal gradient steps, rounds them by thresholding, and
//! keeps only tiles whose probability of arising from Bernoulli noise is
//! certified below the requested level. [`trust_pal`] repeats this with a
//! growing rank budget until the budget outruns the certified rank.

pub mod binmat;
pub mod bounds;
pub mod driver;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod palm;
pub mod ratings;
pub mod rounding;
pub mod synth;

pub use binmat::{boolean_product, residual_l1, BinaryMatrix, BitVector, FactorPairBinary, Tile};
pub use bounds::{
    coherence_tail_log, density_tail_log, log_binom, min_usage_curve, BoundCertificate,
    CertificateMethod, CurveMethod, CurveParams, CurvePoint, NoiseModel, PairCount,
};
pub use driver::{trust_pal, RunReport, RunStop, TrustConfig};
pub use error::{BmfError, Result};
pub use eval::{empirical_fdr, f_measure, wrong_rec_rate, EvalReport, FMeasureMode};
pub use experiment::{run_experiment, ExperimentResults, ExperimentSpec, GridCell};
pub use palm::{optimize, FactorPairRelaxed, OptimizeTrace};
pub use ratings::{binarize_ratings, Binarized, RatingsTable};
pub use rounding::{round_fdr, FdrFilter, FilterMethod, RoundingReport};
pub use synth::{plant, PlantedInstance, PlantedParams};
