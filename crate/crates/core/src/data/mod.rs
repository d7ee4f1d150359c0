//! Patch records, the synthetic generator, storage, normalization and splits.

mod field;
pub mod io;
pub mod norm;
pub mod process;
pub mod record;
pub mod split;
pub mod synth;

pub use io::{decode_dataset, encode_dataset, read_dataset, write_dataset, DatasetError};
pub use norm::{apply_normalization, compute_norm_stats, NormStats, NormalizedRecord};
pub use process::{parents, GeoBox, NoiseScales, ProcessSpec, SynthConfig};
pub use record::{Attribute, PatchRecord, RecordKind, INPUT_CHANNELS, OPTICAL_CHANNELS, SAR_CHANNELS};
pub use split::{split_id_ood, SplitCriteria, SplitSpec};
pub use synth::{footprint_area, generate_records, generate_synthetic};

/// Records with their split and training-split statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<PatchRecord>,
    pub norm: NormStats,
    pub split: SplitSpec,
}
