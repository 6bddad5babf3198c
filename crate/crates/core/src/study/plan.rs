use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_ops::MaskingStrategy;

pub const PILOT_SIZE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pilot,
    Main,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pilot => "pilot",
            Phase::Main => "main",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pilot" => Ok(Phase::Pilot),
            "main" => Ok(Phase::Main),
            other => Err(Error::InvalidArgument(format!("unknown phase `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    High,
    Median,
    Low,
}

/// Why an item was chosen; absent for pilot items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionBasis {
    pub condition: String,
    pub slot: Slot,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyItem {
    /// Opaque id; carries no strategy, condition or image information.
    pub item_id: String,
    pub image_id: String,
    pub strategy: MaskingStrategy,
    /// Served image, relative to the study image root.
    pub image_path: String,
    pub basis: Option<SelectionBasis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub phase: Phase,
    pub seed: u64,
    pub items: Vec<StudyItem>,
}

impl StudyPlan {
    pub fn item(&self, item_id: &str) -> Option<&StudyItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }
}

/// Per-image class probabilities of the model for one strategy, on that
/// strategy's test images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredImages {
    pub image_ids: Vec<String>,
    /// `probabilities[image][class]`
    pub probabilities: Vec<Vec<f64>>,
}

pub fn served_image_path(strategy: MaskingStrategy, image_id: &str) -> String {
    format!("{}/{}.png", strategy.as_str(), image_id)
}

/// Indices of the low, median (lower-middle) and high picks. Ties go to the
/// smaller image id.
pub fn slot_picks(ids: &[String], probs: &[f64]) -> [(Slot, usize); 3] {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then_with(|| ids[a].cmp(&ids[b])));
    let low = order[0];
    let median = order[(order.len() - 1) / 2];
    let top = probs[*order.last().expect("non-empty")];
    let high = order
        .iter()
        .copied()
        .filter(|&i| probs[i] == top)
        .min_by(|&a, &b| ids[a].cmp(&ids[b]))
        .expect("maximum exists");
    [(Slot::High, high), (Slot::Median, median), (Slot::Low, low)]
}

fn finalize(phase: Phase, seed: u64, mut items: Vec<StudyItem>) -> StudyPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    for (i, item) in items.iter_mut().enumerate() {
        item.item_id = format!("{}-{:03}", phase.as_str(), i + 1);
    }
    StudyPlan { phase, seed, items }
}

/// Main-phase plan: for every (condition, strategy), the highest, median and
/// lowest probability images; presentation order shuffled with `seed`.
pub fn select_study_images(
    predictions: &BTreeMap<MaskingStrategy, ScoredImages>,
    class_names: &[String],
    seed: u64,
) -> Result<StudyPlan> {
    if predictions.is_empty() || class_names.is_empty() {
        return Err(Error::InvalidArgument("study selection needs strategies and conditions".into()));
    }
    let mut items = Vec::new();
    for (k, condition) in class_names.iter().enumerate() {
        for (&strategy, scored) in predictions {
            let n = scored.image_ids.len();
            if scored.probabilities.len() != n {
                return Err(Error::shape(format!("{n} probability rows"), scored.probabilities.len()));
            }
            if n < 3 {
                return Err(Error::InsufficientImages {
                    condition: condition.clone(),
                    available: n,
                    required: 3,
                });
            }
            let probs = scored
                .probabilities
                .iter()
                .map(|row| {
                    row.get(k)
                        .copied()
                        .filter(|p| p.is_finite())
                        .ok_or_else(|| Error::ModelOutput(format!("missing or non-finite probability for {condition}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            for (slot, idx) in slot_picks(&scored.image_ids, &probs) {
                let image_id = scored.image_ids[idx].clone();
                items.push(StudyItem {
                    item_id: String::new(),
                    image_path: served_image_path(strategy, &image_id),
                    image_id,
                    strategy,
                    basis: Some(SelectionBasis {
                        condition: condition.clone(),
                        slot,
                        probability: probs[idx],
                    }),
                });
            }
        }
    }
    Ok(finalize(Phase::Main, seed, items))
}

/// Pilot plan: `PILOT_SIZE` training images drawn uniformly with `seed`,
/// shown unmasked.
pub fn pilot_plan(training_ids: &[String], seed: u64) -> Result<StudyPlan> {
    if training_ids.len() < PILOT_SIZE {
        return Err(Error::InsufficientImages {
            condition: "pilot".into(),
            available: training_ids.len(),
            required: PILOT_SIZE,
        });
    }
    let mut sorted: Vec<&String> = training_ids.iter().collect();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<&String> = sample(&mut rng, sorted.len(), PILOT_SIZE).into_iter().map(|i| sorted[i]).collect();
    let items = picks
        .into_iter()
        .map(|id| StudyItem {
            item_id: String::new(),
            image_id: id.clone(),
            strategy: MaskingStrategy::Full,
            image_path: served_image_path(MaskingStrategy::Full, id),
            basis: None,
        })
        .collect();
    Ok(finalize(Phase::Pilot, seed, items))
}
