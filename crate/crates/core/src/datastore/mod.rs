//! On-disk matrices, manifests and splits shared by every analysis.

mod amx;
mod manifest;
mod split;

pub use amx::{
    impute_nan_columns, read_amx, read_matrix, write_amx, write_matrix, Amx, DTYPE_F32, MAGIC,
};
pub use manifest::{
    read_sidecar, sidecar_path, write_sidecar, CheckpointRef, Kind, Manifest, ManifestEntry,
    Sidecar, Split,
};
pub use split::{
    folds_from_partition, group_folds, row_group_folds, split_by_ratio, Fold, GroupFold, SplitSpec,
};
