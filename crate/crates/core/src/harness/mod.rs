//! Experiment harness: dataset ingestion, rate-distortion sweeps, and plot
//! emission.

pub mod dataset;
pub mod plot;
pub mod sweep;

pub use dataset::{
    generate_synthetic, ingest, synthetic_pair, synthetic_palette, synthetic_segmenter,
    DatasetManifest, Layout, ManifestEntry, SkippedFile, SyntheticConfig, SYNTHETIC_CLASSES,
};
pub use plot::{emit_plots, read_rows, PlotLayout};
pub use sweep::{run_sweep, write_csv, SweepConfig, SweepOutcome, SweepRow};
