use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::figures::{render_curves, render_heatmap, render_projection};
use crate::attribution::AttributionMap;
use crate::embeddings::{projection_csv, CosineSummary, ProjectedPoint};
use crate::error::{Error, Result};
use crate::evaluation::{AucMatrix, CellComparison, DilationCurve, OodTable};
use crate::mask_ops::{write_bytes, MaskingStrategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub name: String,
    pub manifest_hash: String,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    /// Training strategy of the model whose embeddings were compared.
    pub model_strategy: MaskingStrategy,
    pub fold: usize,
    pub cosine: Vec<CosineSummary>,
    pub projection: Vec<ProjectedPoint>,
    /// Silhouette of FULL against each other strategy in the projection.
    pub silhouettes: BTreeMap<MaskingStrategy, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionEntry {
    pub image_id: String,
    pub model_strategy: MaskingStrategy,
    pub fold: usize,
    pub class_name: String,
    pub map: AttributionMap,
    /// Overlay PNG relative to the run directory, when one was rendered.
    pub overlay: Option<String>,
}

impl AttributionEntry {
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_f{}_{}",
            slug(&self.image_id),
            slug(self.model_strategy.as_str()),
            self.fold,
            slug(&self.class_name)
        )
    }
}

/// Everything a run produced; figures and tables render from it alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: serde_json::Value,
    pub datasets: Vec<DatasetFingerprint>,
    pub matrices: Vec<AucMatrix>,
    pub curves: Vec<DilationCurve>,
    pub comparisons: Vec<CellComparison>,
    pub ood: Vec<OodTable>,
    pub embeddings: Vec<EmbeddingReport>,
    pub attributions: Vec<AttributionEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub run_id: String,
    /// Paths relative to the run directory, sorted.
    pub artifacts: Vec<String>,
    /// Headline cells: class -> train strategy -> eval strategy -> mean AUC.
    pub matrices: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

pub(crate) fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn comparison_csv(c: &CellComparison) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "cell_a", "cell_b", "fold", "auc_a", "auc_b", "variance_diff", "z", "p_value"])?;
    let a = format!("{}->{}", c.cell_a.0, c.cell_a.1);
    let b = format!("{}->{}", c.cell_b.0, c.cell_b.1);
    for (fold, r) in c.folds.iter().enumerate() {
        let mut row = vec![c.class_name.clone(), a.clone(), b.clone(), fold.to_string()];
        match r {
            Some(r) => row.extend([r.auc_a, r.auc_b, r.variance_diff, r.z, r.p_value].map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&row)?;
    }
    finish_csv(w)
}

fn cosine_csv(rows: &[CosineSummary]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "class", "mean", "std", "n", "excluded"])?;
    for r in rows {
        w.write_record([
            r.strategy.as_str(),
            r.class_name.as_deref().unwrap_or("all"),
            &r.mean.to_string(),
            &r.std.to_string(),
            &r.n.to_string(),
            &r.excluded.to_string(),
        ])?;
    }
    finish_csv(w)
}

struct Writer<'a> {
    root: &'a Path,
    written: Vec<String>,
}

impl Writer<'_> {
    fn put(&mut self, rel: String, bytes: &[u8]) -> Result<()> {
        write_bytes(&self.root.join(&rel), bytes)?;
        self.written.push(rel);
        Ok(())
    }
}

/// Writes CSV tables, PNG figures and JSON under `out_dir/results/…`, with
/// `summary.json` and `run_record.json` at the root. Deterministic, so a
/// re-export of the same record rewrites identical bytes.
pub fn export_run(record: &RunRecord, out_dir: &Path) -> Result<ExportSummary> {
    let mut w = Writer {
        root: out_dir,
        written: Vec::new(),
    };
    let mut headline: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
    for m in &record.matrices {
        let stem = slug(&m.class_name);
        w.put(format!("results/matrices/{stem}.csv"), m.to_csv()?.as_bytes())?;
        w.put(format!("results/matrices/{stem}.png"), &render_heatmap(m, None)?)?;
        let entry = headline.entry(m.class_name.clone()).or_default();
        for (i, train) in m.strategies.iter().enumerate() {
            for (j, eval) in m.strategies.iter().enumerate() {
                entry
                    .entry(train.to_string())
                    .or_default()
                    .insert(eval.to_string(), m.cells[i][j].mean);
            }
        }
    }
    for t in &record.ood {
        w.put(format!("results/matrices/ood_{}.csv", slug(&t.dataset)), t.to_csv()?.as_bytes())?;
    }

    let mut groups: BTreeMap<(String, MaskingStrategy, MaskingStrategy), Vec<DilationCurve>> = BTreeMap::new();
    for c in &record.curves {
        let stem = format!(
            "{}_{}_{}_{}",
            slug(&c.class_name),
            slug(c.model_strategy.as_str()),
            slug(c.strategy.as_str()),
            c.subgroup.as_str()
        );
        w.put(format!("results/curves/{stem}.csv"), c.to_csv()?.as_bytes())?;
        groups
            .entry((c.class_name.clone(), c.model_strategy, c.strategy))
            .or_default()
            .push(c.clone());
    }
    for ((class, model, strategy), curves) in &groups {
        let stem = format!("{}_{}_{}", slug(class), slug(model.as_str()), slug(strategy.as_str()));
        w.put(format!("results/curves/{stem}.png"), &render_curves(curves)?)?;
    }

    for c in &record.comparisons {
        let stem = format!(
            "{}_{}-{}_vs_{}-{}",
            slug(&c.class_name),
            slug(c.cell_a.0.as_str()),
            slug(c.cell_a.1.as_str()),
            slug(c.cell_b.0.as_str()),
            slug(c.cell_b.1.as_str())
        );
        w.put(format!("results/delong/{stem}.csv"), &comparison_csv(c)?)?;
    }

    for e in &record.embeddings {
        let stem = format!("{}_f{}", slug(e.model_strategy.as_str()), e.fold);
        w.put(format!("results/embeddings/{stem}_cosine.csv"), &cosine_csv(&e.cosine)?)?;
        if !e.projection.is_empty() {
            w.put(format!("results/embeddings/{stem}_projection.csv"), projection_csv(&e.projection)?.as_bytes())?;
            w.put(format!("results/embeddings/{stem}_projection.png"), &render_projection(&e.projection)?)?;
        }
    }

    for a in &record.attributions {
        w.put(
            format!("results/attributions/{}.json", a.file_stem()),
            &serde_json::to_vec_pretty(&a.map)?,
        )?;
        if let Some(rel) = &a.overlay {
            if out_dir.join(rel).is_file() {
                w.written.push(rel.clone());
            }
        }
    }

    w.put("run_record.json".into(), &serde_json::to_vec_pretty(record)?)?;
    let mut artifacts = w.written;
    artifacts.push("summary.json".into());
    artifacts.sort();
    artifacts.dedup();
    let summary = ExportSummary {
        run_id: record.run_id.clone(),
        artifacts,
        matrices: headline,
    };
    write_bytes(&out_dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

pub fn load_run(out_dir: &Path) -> Result<RunRecord> {
    let path: PathBuf = out_dir.join("run_record.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
