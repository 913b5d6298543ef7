//! Architecture descriptions, per-unit training plans, enclave memory
//! footprints and the analytic compute cost model.
//!
//! Canonical shapes: LeNet takes 1×28×28 with unpadded 5×5 kernels
//! (28→24→12→8→4, 800 features into FC500); AlexNet takes 3×32×32 with
//! unpadded 3×3 kernels (32→30→28→26, then a 16-window average pool to
//! 1×1); VGG9 uses padded 3×3 kernels and ends with 256×4×4 features.

mod cost;
mod memory;
mod model;
mod spec;

pub use cost::{cost_profile, CostProfile, UnitCost, BACKWARD_FACTOR};
pub use memory::{memory_breakdown, memory_usage, stack_memory, MemoryBreakdown};
pub(crate) use model::shapes_through;
pub use model::{
    build_model, classifier_for_layer, ModelSpec, TrainingPlan, Unit, ZooModel, NUM_CLASSES,
};
pub use spec::{parse_architecture, ArchOptions, LayerSpec};
