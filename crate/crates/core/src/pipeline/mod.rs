//! End-to-end experiment: configuration, synthetic data, the rolling-origin
//! protocol and report files.

mod config;
mod experiment;
mod report;
mod synth;

pub use config::{
    geometric_grid, BahsicSettings, ChannelNames, CsvSource, DataSource, ExperimentConfig, Grid, KrrSettings,
    LassoSettings, NwpFile, PowerMode, PredictorSet, SelectionMethod, SelectionSettings, StepwiseSettings,
    TargetKind, TimeRange, SEED_ENV,
};
pub use experiment::{
    load_frame, run_experiment, run_on_frame, ExperimentReport, FitRecord, FitStage, HsicSelection, RunMode,
};
pub use report::{emit_report, write_frame_csv, write_importance_csv, ReportFormat};
pub use synth::{synth_generate, PowerSpec, SyntheticFarmSpec};

/// Derives an independent stream seed from a base seed and a path of tags.
pub fn mix_seed(base: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}
