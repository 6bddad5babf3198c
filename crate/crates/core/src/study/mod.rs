//! Reader-study protocol: image selection by model-output percentile, the
//! pilot draw, annotations and detection statistics.

mod agreement;
mod plan;

pub use agreement::{
    compute_agreement, current_annotations, AgreementReport, AgreementRow, Annotation, StrategyTotals,
    MODEL_THRESHOLD, NONE, OTHER,
};
pub use plan::{
    pilot_plan, select_study_images, served_image_path, slot_picks, Phase, ScoredImages, SelectionBasis, Slot,
    StudyItem, StudyPlan, PILOT_SIZE,
};
