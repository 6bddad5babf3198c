use std::collections::BTreeMap;
use std::path::Path;

use maskaudit_core::study::{Phase, StudyPlan, NONE, OTHER};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};

/// Everything the service needs besides the images: the plans, the condition
/// list and the ground truth used for the agreement statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyBundle {
    pub class_names: Vec<String>,
    /// Present conditions per source image id.
    pub ground_truth: BTreeMap<String, Vec<String>>,
    pub plans: Vec<StudyPlan>,
    #[serde(default)]
    pub closed_phases: Vec<Phase>,
}

impl StudyBundle {
    pub fn plan(&self, phase: Phase) -> Option<&StudyPlan> {
        self.plans.iter().find(|p| p.phase == phase)
    }

    pub fn is_closed(&self, phase: Phase) -> bool {
        self.closed_phases.contains(&phase)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(StudyError::Invalid("bundle lists no conditions".into()));
        }
        if let Some(c) = self.class_names.iter().find(|c| *c == OTHER || *c == NONE) {
            return Err(StudyError::Invalid(format!("condition name `{c}` is reserved")));
        }
        let mut seen = std::collections::BTreeSet::new();
        for plan in &self.plans {
            if !seen.insert(plan.phase) {
                return Err(StudyError::Invalid(format!("duplicate plan for phase `{}`", plan.phase)));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for item in self.plans.iter().flat_map(|p| &p.items) {
            if !ids.insert(item.item_id.as_str()) {
                return Err(StudyError::Invalid(format!("duplicate item id `{}`", item.item_id)));
            }
            if item.image_path.is_empty() || Path::new(&item.image_path).is_absolute() || item.image_path.contains("..") {
                return Err(StudyError::Invalid(format!("item `{}` has an unsafe image path", item.item_id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| StudyError::io(path, e))?;
        let bundle: StudyBundle =
            serde_json::from_str(&text).map_err(|e| StudyError::Invalid(format!("{}: {e}", path.display())))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| StudyError::Invalid(e.to_string()))?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| StudyError::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| StudyError::io(path, e))
    }
}
