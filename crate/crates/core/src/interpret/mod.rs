//! Measuring what individual motion directions do.

pub mod colorwheel;
pub mod extractor;
pub mod flow;
pub mod frechet;
pub mod studies;
pub mod table;

pub use colorwheel::{quantize_flow, quantize_masked, AngleBin, ColorwheelConfig, FlowQuantization};
pub use extractor::{FeatureExtractor, RandomProjection, ShapeClassifier};
pub use flow::{estimate_flow, BlockMatching, FlowEstimator, FlowField};
pub use frechet::{frechet_distance, FrechetResult};
pub use studies::{
    alpha_stats, deactivation_study, interpolate_appearance, region_motion, AlphaStats, DeactivationTable,
    RegionMask, RegionTable, StudyConfig,
};
