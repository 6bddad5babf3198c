//! PadChest metadata and CheXmask mask-quality import and filtering.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::manifest::{DatasetManifest, Metadata, Projection, Sample, Sex, Task};
use crate::error::{Error, Result};
use crate::mask_ops::BinaryMask;

pub const CHEST_CLASSES: [&str; 5] = ["cardiomegaly", "pneumonia", "atelectasis", "pneumothorax", "effusion"];

/// Masks at or below this Dice RCA (mean) score are discarded.
pub const MASK_QUALITY_THRESHOLD: f64 = 0.7;

const EXCLUDED_LABEL_MARKERS: [&str; 3] = ["suboptimal study", "exclude", "unchanged"];

#[derive(Clone, Debug, PartialEq)]
pub struct ChestRecord {
    pub image_id: String,
    pub projection: String,
    /// Raw label cell; `None` when null.
    pub labels: Option<String>,
    pub birth_year: Option<i32>,
    pub sex: Option<String>,
    pub patient_id: Option<String>,
    pub mask_quality: Option<f64>,
    pub has_mask: bool,
}

impl ChestRecord {
    pub fn parsed_labels(&self) -> Vec<String> {
        parse_label_list(self.labels.as_deref().unwrap_or(""))
    }

    fn keep(&self) -> bool {
        if self.projection.trim().eq_ignore_ascii_case("L") {
            return false;
        }
        let labels = self.parsed_labels();
        if labels.is_empty() {
            return false;
        }
        if labels
            .iter()
            .any(|l| EXCLUDED_LABEL_MARKERS.iter().any(|m| l.contains(m)))
        {
            return false;
        }
        self.has_mask && self.mask_quality.is_some_and(|q| q > MASK_QUALITY_THRESHOLD)
    }
}

/// Parses PadChest label cells such as `['pleural effusion', 'cardiomegaly']`.
/// Null cells (`""`, `nan`, `[]`) give an empty list.
pub fn parse_label_list(cell: &str) -> Vec<String> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("none") {
        return Vec::new();
    }
    t.trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|s| s.trim().trim_matches(|c| c == '\'' || c == '"').trim().to_ascii_lowercase())
        .filter(|s| !s.is_empty() && s != "nan")
        .collect()
}

fn class_matches(class: &str, label: &str) -> bool {
    match class {
        "effusion" => label == "effusion" || label == "pleural effusion",
        _ => label == class,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChexmaskEntry {
    pub quality: f64,
    pub height: usize,
    pub width: usize,
    pub left_lung: String,
    pub right_lung: String,
}

impl ChexmaskEntry {
    /// Union of both lungs.
    pub fn lung_mask(&self) -> Result<BinaryMask> {
        let l = BinaryMask::from_rle(&self.left_lung, self.height, self.width)?;
        let r = BinaryMask::from_rle(&self.right_lung, self.height, self.width)?;
        l.union(&r)
    }
}

/// CheXmask CSV rows keyed by image id.
#[derive(Clone, Debug, Default)]
pub struct ChexmaskIndex {
    pub entries: HashMap<String, ChexmaskEntry>,
}

impl ChexmaskIndex {
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers()?.clone();
        let col = |n: &str| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Schema(format!("CheXmask CSV is missing column `{n}`")))
        };
        let (id, q, h, w, ll, rl) = (
            col("ImageID")?,
            col("Dice RCA (Mean)")?,
            col("Height")?,
            col("Width")?,
            col("Left Lung")?,
            col("Right Lung")?,
        );
        let mut entries = HashMap::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize, what: &str| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|_| {
                    Error::Schema(format!("CheXmask `{}`: invalid {what} `{}`", &rec[id], &rec[i]))
                })
            };
            entries.insert(
                rec[id].trim().to_string(),
                ChexmaskEntry {
                    quality: num(q, "Dice RCA (Mean)")?,
                    height: num(h, "Height")? as usize,
                    width: num(w, "Width")? as usize,
                    left_lung: rec[ll].to_string(),
                    right_lung: rec[rl].to_string(),
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    /// Writes `masks/<id>.png` under `root` for each requested id.
    pub fn write_masks<'a>(&self, root: &Path, ids: impl IntoIterator<Item = &'a str>) -> Result<usize> {
        let mut n = 0;
        for id in ids {
            let e = self.entries.get(id).ok_or_else(|| Error::MissingMask(id.to_string()))?;
            e.lung_mask()?.save_png(&root.join("masks").join(format!("{id}.png")))?;
            n += 1;
        }
        Ok(n)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChestMetadata {
    pub records: Vec<ChestRecord>,
}

impl ChestMetadata {
    /// Builds records from a PadChest-style table. `ImageID`, `Projection` and
    /// `Labels` are required; birth year, sex, patient id and the mask quality
    /// column are optional.
    pub fn from_table(headers: &[String], rows: &[Vec<String>]) -> Result<Self> {
        let col = |n: &str| headers.iter().position(|h| h == n);
        let required = |n: &str| col(n).ok_or_else(|| Error::Schema(format!("metadata is missing column `{n}`")));
        let (id, proj, labels) = (required("ImageID")?, required("Projection")?, required("Labels")?);
        let (birth, sex, pid, quality) = (
            col("PatientBirth"),
            col("PatientSex_DICOM"),
            col("PatientID"),
            col("Dice RCA (Mean)"),
        );
        let cell = |row: &Vec<String>, i: Option<usize>| -> Option<String> {
            i.and_then(|i| row.get(i))
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty() && !v.eq_ignore_ascii_case("nan") && !v.eq_ignore_ascii_case("none"))
        };
        let records = rows
            .iter()
            .map(|row| {
                let mask_quality = cell(row, quality).and_then(|v| v.parse::<f64>().ok());
                ChestRecord {
                    image_id: cell(row, Some(id)).unwrap_or_default(),
                    projection: cell(row, Some(proj)).unwrap_or_default(),
                    labels: cell(row, Some(labels)),
                    birth_year: cell(row, birth).and_then(|v| v.parse::<f64>().ok()).map(|y| y as i32),
                    sex: cell(row, sex),
                    patient_id: cell(row, pid),
                    mask_quality,
                    has_mask: mask_quality.is_some(),
                }
            })
            .collect();
        Ok(Self { records })
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Self::from_table(&headers, &rows)
    }

    pub fn read_padchest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    /// Sets mask availability and quality from CheXmask. Images without a
    /// CheXmask row are marked as having no mask.
    pub fn attach_chexmask(&mut self, index: &ChexmaskIndex) {
        for r in &mut self.records {
            match index.entries.get(&r.image_id) {
                Some(e) => {
                    r.has_mask = true;
                    r.mask_quality = Some(e.quality);
                }
                None => {
                    r.has_mask = false;
                    r.mask_quality = None;
                }
            }
        }
    }

    /// Drops lateral views, null or excluded label sets, and images without a
    /// mask of quality above the threshold.
    pub fn filter(&self) -> ChestMetadata {
        ChestMetadata {
            records: self.records.iter().filter(|r| r.keep()).cloned().collect(),
        }
    }

    pub fn to_manifest(&self, name: &str, class_names: &[&str]) -> Result<DatasetManifest> {
        let samples = self
            .records
            .iter()
            .map(|r| {
                let labels = r.parsed_labels();
                Sample {
                    image_id: r.image_id.clone(),
                    image_path: PathBuf::from("images").join(format!("{}.png", r.image_id)),
                    labels: class_names
                        .iter()
                        .map(|c| labels.iter().any(|l| class_matches(c, l)))
                        .collect(),
                    metadata: Metadata {
                        birth_year: r.birth_year,
                        sex: r.sex.as_deref().and_then(|s| s.parse::<Sex>().ok()),
                        projection: r.projection.parse::<Projection>().ok(),
                        patient_id: r.patient_id.clone(),
                    },
                    mask_path: r
                        .has_mask
                        .then(|| PathBuf::from("masks").join(format!("{}.png", r.image_id))),
                    mask_quality: r.mask_quality.map(|q| q.clamp(0.0, 1.0)),
                }
            })
            .collect();
        let task = if class_names.len() == 1 { Task::Binary } else { Task::MultiLabel };
        DatasetManifest::new(name, class_names.iter().map(|c| c.to_string()).collect(), samples, task)
    }
}

/// Filters PadChest metadata (with CheXmask quality attached) into a
/// five-class chest manifest.
pub fn filter_chest_manifest(raw: &ChestMetadata) -> Result<DatasetManifest> {
    raw.filter().to_manifest("padchest", &CHEST_CLASSES)
}
