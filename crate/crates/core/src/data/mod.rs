//! Ingestion, preprocessing, windowing and rolling splits.

mod frame;
mod splits;
mod standardize;
mod window;

pub use frame::{
    average_turbines, encode_direction, ingest_csv, join_on_grid, resample_linear, Channel,
    ChannelDecl, ChannelRole, TimeSeriesFrame,
};
pub(crate) use frame::parse_timestamp;
pub use splits::{make_rolling_splits, Split, SplitPlan, SplitSizes};
pub use standardize::{fit_standardizer, Standardizer};
pub use window::{build_supervised, FeatureLabel, Horizon, OffsetBase, SupervisedDataset, WindowSpec};
