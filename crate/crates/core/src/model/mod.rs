//! Sub-model architecture and the composed concept, vanilla and black-box
//! networks.

pub mod batch;
pub mod blackbox;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod network;
pub mod params;
pub mod pgcbm;
pub mod posenc;
pub mod submodel;
pub mod vanilla;

pub use batch::Batch;
pub use blackbox::{blackbox_submodel, relative_gap, BLACKBOX};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ModelSettings, SubModelConfig};
pub use layers::{Ctx, Mode};
pub use params::{he_normal, ModelParams};
pub use pgcbm::{concept_submodel, prefix, PgcbmNet, PgcbmOutput, AGGREGATOR};
pub use posenc::sinusoidal_position_encoding;
pub use submodel::{InputLayout, SubModel, SubModelOutput};
pub use vanilla::VanillaNet;
pub use network::{ConceptNet, Network};
