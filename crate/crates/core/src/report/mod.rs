//! Figures, tables and the serialized run record.

mod canvas;
mod figures;
mod record;

pub use canvas::colormap;
pub use figures::{matrix_range, render_curves, render_heatmap, render_projection};
pub use record::{
    export_run, load_run, AttributionEntry, DatasetFingerprint, EmbeddingReport, ExportSummary, RunRecord,
};
