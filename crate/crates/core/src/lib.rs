//! Ray-tracing, channel estimation and network planning for THz in-cabin links.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, with `*32` variants for `f32`.

// `!(x > 0)` style checks are deliberate: they reject NaN along with the range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod format;
pub mod geometry;
pub mod hybrid;
pub mod materials;
pub mod num;
pub mod optimize;
pub mod planning;
pub mod raytrace;
pub mod scene;

pub use error::{Error, Result};
pub use materials::Polarization;
pub use num::{Real, SPEED_OF_LIGHT};

pub type Vec3 = geometry::Vec3<f64>;
pub type Vec3f32 = geometry::Vec3<f32>;
pub type Aabb = geometry::Aabb<f64>;
pub type Facet = scene::Facet<f64>;
pub type Material = scene::Material<f64>;
pub type MaterialDb = scene::MaterialDb<f64>;
pub type Scene = scene::Scene<f64>;
pub type Scene32 = scene::Scene<f32>;
pub type PathRecord = raytrace::PathRecord<f64>;
pub type PathRecord32 = raytrace::PathRecord<f32>;
pub type TraceConfig = raytrace::TraceConfig<f64>;
pub type HumanBox = raytrace::HumanBox<f64>;
pub type Band = channel::Band<f64>;
pub type AngleAxes = channel::AngleAxes<f64>;
pub type Mpc = channel::Mpc<f64>;
pub type MpcSet = channel::MpcSet<f64>;
pub type Cfr = channel::Cfr<f64>;
pub type AngleDelayGrid = channel::AngleDelayGrid<f64>;
pub type HybridModel = hybrid::HybridModel<f64>;
pub type PlanConfig = planning::PlanConfig<f64>;
pub type RxPopulation = planning::RxPopulation<f64>;
pub type CoverageMap = planning::CoverageMap<f64>;
pub type OptResult = optimize::OptResult<f64>;
