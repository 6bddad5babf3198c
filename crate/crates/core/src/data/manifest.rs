use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Ok(Sex::Male),
            "F" | "FEMALE" => Ok(Sex::Female),
            other => Err(Error::Schema(format!("unknown sex `{other}`"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "M",
            Sex::Female => "F",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Projection {
    #[serde(rename = "PA")]
    Pa,
    #[serde(rename = "AP")]
    Ap,
}

impl FromStr for Projection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PA" => Ok(Projection::Pa),
            "AP" | "AP_HORIZONTAL" => Ok(Projection::Ap),
            other => Err(Error::Schema(format!("unknown projection `{other}`"))),
        }
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Projection::Pa => "PA",
            Projection::Ap => "AP",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub birth_year: Option<i32>,
    pub sex: Option<Sex>,
    pub projection: Option<Projection>,
    pub patient_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image_id: String,
    /// Relative to the dataset root.
    pub image_path: PathBuf,
    pub labels: Vec<bool>,
    pub metadata: Metadata,
    pub mask_path: Option<PathBuf>,
    /// Mask quality score (Dice RCA mean) in `[0, 1]`.
    pub mask_quality: Option<f64>,
}

impl Sample {
    pub fn is_positive(&self, class_index: usize) -> bool {
        self.labels[class_index]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    MultiLabel,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub task: Task,
}

const META_COLUMNS: [&str; 8] = [
    "image_id",
    "image_path",
    "mask_path",
    "mask_quality",
    "birth_year",
    "sex",
    "projection",
    "patient_id",
];

impl DatasetManifest {
    pub fn new(name: impl Into<String>, class_names: Vec<String>, samples: Vec<Sample>, task: Task) -> Result<Self> {
        let m = Self {
            name: name.into(),
            class_names,
            samples,
            task,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Schema("manifest has no class columns".into()));
        }
        if self.task == Task::Binary && self.class_names.len() != 1 {
            return Err(Error::Schema(format!(
                "binary task needs exactly one class column, found {}",
                self.class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.image_id.as_str()) {
                return Err(Error::Schema(format!("duplicate image_id `{}`", s.image_id)));
            }
            if s.labels.len() != self.class_names.len() {
                return Err(Error::Schema(format!(
                    "sample `{}` has {} labels, expected {}",
                    s.image_id,
                    s.labels.len(),
                    self.class_names.len()
                )));
            }
            if let Some(q) = s.mask_quality {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::Schema(format!(
                        "sample `{}` has mask quality {q} outside [0, 1]",
                        s.image_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn get(&self, image_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.image_id == image_id)
    }

    /// Samples whose id is in `ids`, in image-id order.
    pub fn subset<'a>(&'a self, ids: &[String]) -> Vec<&'a Sample> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let mut out: Vec<&Sample> = self
            .samples
            .iter()
            .filter(|s| wanted.contains(s.image_id.as_str()))
            .collect();
        out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        out
    }

    /// A new manifest restricted to `ids`.
    pub fn restricted(&self, ids: &[String]) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            samples: self.subset(ids).into_iter().cloned().collect(),
            task: self.task,
        }
    }

    pub fn positives(&self, class_index: usize) -> usize {
        self.samples.iter().filter(|s| s.labels[class_index]).count()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = META_COLUMNS.to_vec();
        header.extend(self.class_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for s in &self.samples {
            let opt = |v: Option<String>| v.unwrap_or_default();
            let mut row = vec![
                s.image_id.clone(),
                s.image_path.to_string_lossy().into_owned(),
                opt(s.mask_path.as_ref().map(|p| p.to_string_lossy().into_owned())),
                opt(s.mask_quality.map(|q| q.to_string())),
                opt(s.metadata.birth_year.map(|y| y.to_string())),
                opt(s.metadata.sex.map(|x| x.to_string())),
                opt(s.metadata.projection.map(|x| x.to_string())),
                opt(s.metadata.patient_id.clone()),
            ];
            row.extend(s.labels.iter().map(|&l| if l { "1" } else { "0" }.to_string()));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::mask_ops::write_bytes(path, self.to_csv_string()?.as_bytes())
    }

    /// Parses the manifest CSV layout: the fixed metadata columns followed by
    /// one 0/1 column per class. A single class column means a binary task.
    pub fn from_csv_str(name: &str, text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let col = |n: &str| headers.iter().position(|h| h == n);
        let id_col = col("image_id").ok_or_else(|| Error::Schema("missing column `image_id`".into()))?;
        let path_col = col("image_path").ok_or_else(|| Error::Schema("missing column `image_path`".into()))?;
        let class_cols: Vec<usize> = (0..headers.len())
            .filter(|&i| !META_COLUMNS.contains(&headers[i].as_str()))
            .collect();
        let class_names: Vec<String> = class_cols.iter().map(|&i| headers[i].clone()).collect();
        let task = if class_names.len() == 1 { Task::Binary } else { Task::MultiLabel };

        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let cell = |i: Option<usize>| -> Option<&str> {
                i.and_then(|i| rec.get(i)).map(str::trim).filter(|v| !v.is_empty())
            };
            let id = cell(Some(id_col)).ok_or_else(|| Error::Schema("empty image_id".into()))?;
            let parse_err = |what: &str, v: &str| Error::Schema(format!("sample `{id}`: invalid {what} `{v}`"));
            let labels = class_cols
                .iter()
                .map(|&i| match rec.get(i).map(str::trim) {
                    Some("1") => Ok(true),
                    Some("0") => Ok(false),
                    other => Err(parse_err("label", other.unwrap_or(""))),
                })
                .collect::<Result<Vec<_>>>()?;
            let mask_quality = cell(col("mask_quality"))
                .map(|v| v.parse::<f64>().map_err(|_| parse_err("mask_quality", v)))
                .transpose()?;
            let birth_year = cell(col("birth_year"))
                .map(|v| {
                    v.parse::<f64>()
                        .map(|y| y as i32)
                        .map_err(|_| parse_err("birth_year", v))
                })
                .transpose()?;
            samples.push(Sample {
                image_id: id.to_string(),
                image_path: PathBuf::from(cell(Some(path_col)).unwrap_or_default()),
                labels,
                metadata: Metadata {
                    birth_year,
                    sex: cell(col("sex")).map(str::parse).transpose()?,
                    projection: cell(col("projection")).map(str::parse).transpose()?,
                    patient_id: cell(col("patient_id")).map(str::to_string),
                },
                mask_path: cell(col("mask_path")).map(PathBuf::from),
                mask_quality,
            });
        }
        Self::new(name, class_names, samples, task)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Self::from_csv_str(&name, &text)
    }

    /// SHA-256 of the canonical CSV serialization.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_csv_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
