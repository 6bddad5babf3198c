//! Experiment stages. Each reads what earlier stages left in the run
//! directory, so any stage can be rerun on its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use maskaudit_core::attribution::{kernel_shap, render_overlay, segment_superpixels, ModelScorer, ShapConfig};
use maskaudit_core::data::{
    generate_synthetic, split, DatasetManifest, DirectoryStore, EvalSet, FoldAssignment, SyntheticConfig, TagPolarity,
};
use maskaudit_core::embeddings::{cosine_table, extract_embeddings, project_2d, strategy_silhouette, TsneConfig};
use maskaudit_core::evaluation::{
    compare_cells, cross_masking_predictions, dilation_sweep, matrices_from_predictions, ood_evaluate, Predictions,
    SweepRequest,
};
use maskaudit_core::report::{export_run, load_run, AttributionEntry, DatasetFingerprint, EmbeddingReport, RunRecord};
use maskaudit_core::study::{pilot_plan, select_study_images, ScoredImages};
use maskaudit_core::training::{train, FoldData, TrainedModel};
use maskaudit_core::MaskingStrategy;
use maskaudit_study::StudyBundle;

use crate::config::{DatasetSection, ExperimentConfig};
use crate::error::{CliError, Result};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const SPLITS_FILE: &str = "splits.json";
pub const STUDY_BUNDLE: &str = "study/study.json";
const OOD_DIR: &str = "ood";

pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    jobs: usize,
}

impl Run {
    /// Creates the run directory and records the config snapshot; a run
    /// directory never mixes outputs of two different configs.
    pub fn open(cfg: ExperimentConfig, config_text: &str, jobs: usize) -> Result<Self> {
        let dir = cfg.output_root.clone();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let snapshot = dir.join(CONFIG_SNAPSHOT);
        if snapshot.exists() {
            let old = std::fs::read_to_string(&snapshot).map_err(|e| CliError::io(&snapshot, e))?;
            let same = match (ExperimentConfig::from_toml(&old), ExperimentConfig::from_toml(config_text)) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            };
            if !same {
                return Err(CliError::Config(vec![format!(
                    "{} was produced by a different config; use a new output_root",
                    dir.display()
                )]));
            }
        } else {
            std::fs::write(&snapshot, config_text).map_err(|e| CliError::io(&snapshot, e))?;
        }
        Ok(Self { cfg, dir, jobs: jobs.max(1) })
    }

    fn store(&self) -> DirectoryStore {
        DirectoryStore::new(&self.cfg.data_root)
    }

    fn manifest_path(&self) -> PathBuf {
        match &self.cfg.dataset {
            DatasetSection::Synthetic { .. } => self.cfg.data_root.join("manifest.csv"),
            DatasetSection::Manifest { manifest } => self.cfg.data_root.join(manifest),
        }
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let path = self.manifest_path();
        if !path.exists() {
            return Err(CliError::Prerequisite(format!(
                "no manifest at {}; run `generate` first",
                path.display()
            )));
        }
        Ok(DatasetManifest::read_csv(&path)?)
    }

    fn folds(&self) -> Result<FoldAssignment> {
        let path = self.dir.join(SPLITS_FILE);
        if !path.exists() {
            return Err(CliError::Prerequisite("no splits in the run directory; run `prepare` first".into()));
        }
        Ok(FoldAssignment::load(&path)?)
    }

    fn checkpoint(&self, strategy: MaskingStrategy, fold: usize) -> PathBuf {
        self.dir.join("models").join(format!("{}_f{fold}.json", strategy.as_str()))
    }

    fn model(&self, strategy: MaskingStrategy, fold: usize) -> Result<TrainedModel> {
        let path = self.checkpoint(strategy, fold);
        if !path.exists() {
            return Err(CliError::Prerequisite(format!(
                "missing checkpoint {}; run `train` first",
                path.display()
            )));
        }
        Ok(TrainedModel::load(&path)?)
    }

    fn models(&self, strategies: &[MaskingStrategy], k: usize) -> Result<Vec<TrainedModel>> {
        let mut out = Vec::new();
        for &s in strategies {
            for f in 0..k {
                out.push(self.model(s, f)?);
            }
        }
        Ok(out)
    }

    fn record(&self) -> Result<RunRecord> {
        let mut record = if self.dir.join("run_record.json").exists() {
            load_run(&self.dir)?
        } else {
            RunRecord {
                run_id: self.cfg.run_id.clone(),
                ..RunRecord::default()
            }
        };
        record.config = serde_json::to_value(&self.cfg).map_err(maskaudit_core::Error::from)?;
        let manifest = self.manifest()?;
        let seed = match &self.cfg.dataset {
            DatasetSection::Synthetic { synthetic } => Some(synthetic.seed),
            DatasetSection::Manifest { .. } => None,
        };
        record.datasets = vec![DatasetFingerprint {
            name: manifest.name.clone(),
            manifest_hash: manifest.fingerprint()?,
            seed,
        }];
        Ok(record)
    }

    fn save(&self, record: &RunRecord) -> Result<()> {
        let summary = export_run(record, &self.dir)?;
        log::info!("wrote {} artifacts under {}", summary.artifacts.len(), self.dir.display());
        Ok(())
    }

    fn ood_config(&self) -> Option<SyntheticConfig> {
        match (&self.cfg.dataset, &self.cfg.ood.manifest) {
            (DatasetSection::Synthetic { synthetic }, None) => Some(SyntheticConfig {
                n_samples: self.cfg.ood.n_samples,
                tag_polarity: match synthetic.tag_polarity {
                    TagPolarity::Positive => TagPolarity::Inverted,
                    TagPolarity::Inverted => TagPolarity::Positive,
                },
                seed: synthetic.seed.wrapping_add(1),
                id_prefix: "ood".into(),
                ..synthetic.clone()
            }),
            _ => None,
        }
    }

    // ------------------------------------------------------------ stages

    pub fn generate(&self) -> Result<()> {
        match &self.cfg.dataset {
            DatasetSection::Synthetic { synthetic } => {
                write_synthetic(synthetic, &self.cfg.data_root)?;
                if self.cfg.analysis.ood {
                    if let Some(ood) = self.ood_config() {
                        write_synthetic(&ood, &self.cfg.data_root.join(OOD_DIR))?;
                    }
                }
            }
            DatasetSection::Manifest { .. } => {
                let m = self.manifest()?;
                log::info!("manifest {} has {} samples; nothing to generate", m.name, m.len());
            }
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let folds = split(&manifest, &self.cfg.split_config())?;
        let path = self.dir.join(SPLITS_FILE);
        if path.exists() {
            if FoldAssignment::load(&path)? != folds {
                return Err(CliError::Prerequisite(format!(
                    "{} no longer matches the dataset; use a new output_root",
                    path.display()
                )));
            }
            log::info!("splits unchanged");
        } else {
            folds.save(&path)?;
        }
        log::info!(
            "{} test images, {} folds of {} training images",
            folds.test_ids.len(),
            folds.k(),
            folds.folds.first().map_or(0, |f| f.train_ids.len())
        );
        self.save(&self.record()?)
    }

    /// Trains every missing (strategy, fold) checkpoint, `jobs` at a time.
    pub fn train(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let folds = self.folds()?;
        let store = self.store();
        let units: Vec<(MaskingStrategy, usize)> = self
            .cfg
            .strategies
            .iter()
            .flat_map(|&s| (0..folds.k()).map(move |f| (s, f)))
            .filter(|&(s, f)| {
                let done = self.checkpoint(s, f).exists();
                if done {
                    log::info!("{s} fold {f}: checkpoint present, skipping");
                }
                !done
            })
            .collect();
        let base = self.cfg.train_config();
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<CliError>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..self.jobs.min(units.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= units.len() || failure.lock().expect("lock").is_some() {
                        break;
                    }
                    let (s, f) = units[i];
                    if let Err(e) = self.train_unit(&base, &store, &manifest, &folds, s, f) {
                        failure.lock().expect("lock").get_or_insert(e);
                    }
                });
            }
        });
        match failure.into_inner().expect("lock") {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn train_unit(
        &self,
        base: &maskaudit_core::training::TrainConfig,
        store: &DirectoryStore,
        manifest: &DatasetManifest,
        folds: &FoldAssignment,
        strategy: MaskingStrategy,
        f: usize,
    ) -> Result<()> {
        let pre = self.cfg.preprocess();
        let fold = &folds.folds[f];
        let train_set = EvalSet::load(store, manifest, &fold.train_ids, strategy, pre)?;
        let val_set = EvalSet::load(store, manifest, &fold.val_ids, strategy, pre)?;
        let cfg = maskaudit_core::training::TrainConfig {
            seed: base.seed.wrapping_add(f as u64),
            ..base.clone()
        };
        let model = train(
            &cfg,
            FoldData {
                train: &train_set,
                val: &val_set,
                class_names: &manifest.class_names,
            },
            strategy,
            f,
        )?;
        let path = self.checkpoint(strategy, f);
        // write then rename so an interrupted run never leaves a partial checkpoint
        let tmp = path.with_extension("json.partial");
        model.save(&tmp)?;
        write_file(&path.with_extension("history.csv"), model.history_csv()?.as_bytes())?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        log::info!(
            "{strategy} fold {f}: {} epochs, best epoch {}",
            model.history.len(),
            model.best_epoch
        );
        Ok(())
    }

    pub fn evaluate(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let folds = self.folds()?;
        let store = self.store();
        let pre = self.cfg.preprocess();
        let strategies = &self.cfg.strategies;
        let models = self.models(strategies, folds.k())?;
        let test_sets = strategies
            .iter()
            .map(|&s| Ok((s, EvalSet::load(&store, &manifest, &folds.test_ids, s, pre)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let predictions = cross_masking_predictions(&models, &test_sets, strategies, folds.k())?;
        let mut record = self.record()?;
        record.matrices = matrices_from_predictions(&predictions, &manifest.class_names, strategies, folds.k())?;
        for m in &record.matrices {
            for &s in strategies {
                let c = m.cell(s, s).expect("strategy evaluated");
                log::info!("{} ({s}, {s}): AUC {:.3} ± {:.3}", m.class_name, c.mean, c.std);
            }
        }

        record.comparisons.clear();
        if strategies.contains(&MaskingStrategy::Full) {
            let full = (MaskingStrategy::Full, MaskingStrategy::Full);
            for ci in 0..manifest.class_names.len() {
                for &s in strategies.iter().filter(|&&s| s != MaskingStrategy::Full) {
                    record
                        .comparisons
                        .push(compare_cells(&predictions, &manifest.class_names, ci, full, (s, s), folds.k())?);
                }
            }
        }

        record.ood.clear();
        if self.cfg.analysis.ood {
            let (root, path) = match &self.cfg.ood.manifest {
                Some(p) => (self.cfg.data_root.clone(), self.cfg.data_root.join(p)),
                None => {
                    let root = self.cfg.data_root.join(OOD_DIR);
                    (root.clone(), root.join("manifest.csv"))
                }
            };
            if !path.exists() {
                return Err(CliError::Prerequisite(format!(
                    "no OOD manifest at {}; run `generate` first",
                    path.display()
                )));
            }
            let ood_manifest = DatasetManifest::read_csv(&path)?;
            record
                .ood
                .push(ood_evaluate(&models, &DirectoryStore::new(root), &ood_manifest, pre)?);
        }

        if self.cfg.analysis.study {
            self.write_study(&manifest, &folds, &predictions, &test_sets)?;
        }
        self.save(&record)
    }

    /// Selects the reader-study images from each strategy's own test
    /// predictions (fold-averaged) and writes the served images and bundle.
    fn write_study(
        &self,
        manifest: &DatasetManifest,
        folds: &FoldAssignment,
        predictions: &BTreeMap<MaskingStrategy, Predictions>,
        test_sets: &BTreeMap<MaskingStrategy, EvalSet>,
    ) -> Result<()> {
        let mut scored = BTreeMap::new();
        for &s in &self.cfg.strategies {
            let p = &predictions[&s];
            let rows: Vec<&Vec<Vec<f64>>> = (0..folds.k()).filter_map(|f| p.by_model.get(&(s, f))).collect();
            let probabilities = (0..p.ids.len())
                .map(|i| {
                    (0..manifest.class_names.len())
                        .map(|c| rows.iter().map(|r| r[i][c]).sum::<f64>() / rows.len() as f64)
                        .collect()
                })
                .collect();
            scored.insert(
                s,
                ScoredImages {
                    image_ids: p.ids.clone(),
                    probabilities,
                },
            );
        }
        let seed = self.cfg.study_seed();
        let main = select_study_images(&scored, &manifest.class_names, seed)?;
        let pool: Vec<String> = folds
            .folds
            .first()
            .map(|f| f.train_ids.iter().chain(&f.val_ids).cloned().collect())
            .unwrap_or_default();
        let pilot = pilot_plan(&pool, seed)?;

        let study_dir = self.dir.join("study");
        for item in &main.items {
            let set = &test_sets[&item.strategy];
            let i = set.ids.iter().position(|id| *id == item.image_id).expect("selected from this set");
            set.images[i].save_png(&study_dir.join(&item.image_path))?;
        }
        let pilot_ids: Vec<String> = pilot.items.iter().map(|i| i.image_id.clone()).collect();
        let pilot_set = EvalSet::load(&self.store(), manifest, &pilot_ids, MaskingStrategy::Full, self.cfg.preprocess())?;
        for item in &pilot.items {
            let i = pilot_set.ids.iter().position(|id| *id == item.image_id).expect("loaded above");
            pilot_set.images[i].save_png(&study_dir.join(&item.image_path))?;
        }

        let ground_truth = main
            .items
            .iter()
            .chain(&pilot.items)
            .filter_map(|item| manifest.get(&item.image_id))
            .map(|s| {
                let present = manifest
                    .class_names
                    .iter()
                    .zip(&s.labels)
                    .filter(|(_, &l)| l)
                    .map(|(c, _)| c.clone())
                    .collect();
                (s.image_id.clone(), present)
            })
            .collect();
        let bundle = StudyBundle {
            class_names: manifest.class_names.clone(),
            ground_truth,
            plans: vec![pilot, main],
            closed_phases: vec![],
        };
        bundle.save(&self.dir.join(STUDY_BUNDLE))?;
        log::info!("study bundle with {} items at {}", bundle.plans.iter().map(|p| p.items.len()).sum::<usize>(), study_dir.display());
        Ok(())
    }

    pub fn sweep(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let folds = self.folds()?;
        let store = self.store();
        let test = manifest.subset(&folds.test_ids);
        let mut curves = Vec::new();
        for &s in &self.cfg.sweep.strategies {
            let models = self.models(&[s], folds.k())?;
            let refs: Vec<&TrainedModel> = models.iter().collect();
            for &subgroup in &self.cfg.sweep.subgroups {
                for ci in 0..manifest.class_names.len() {
                    let curve = dilation_sweep(
                        &refs,
                        &store,
                        &test,
                        &SweepRequest {
                            strategy: s,
                            factors: &self.cfg.dilation_factors,
                            subgroup,
                            class_index: ci,
                            preprocess: self.cfg.preprocess(),
                        },
                    )?;
                    log::info!(
                        "{s} {} {}: {}",
                        curve.class_name,
                        subgroup.as_str(),
                        curve.auc_mean.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
                    );
                    curves.push(curve);
                }
            }
        }
        let mut record = self.record()?;
        record.curves = curves;
        self.save(&record)
    }

    pub fn embed(&self) -> Result<()> {
        if !self.cfg.analysis.embeddings {
            log::warn!("embeddings are disabled in the config");
            return Ok(());
        }
        let e = &self.cfg.embeddings;
        let manifest = self.manifest()?;
        let folds = self.folds()?;
        let model = self.model(e.model_strategy, e.fold)?;
        let ids: Vec<String> = folds.test_ids.iter().take(e.max_images).cloned().collect();
        let mut order = vec![MaskingStrategy::Full];
        order.extend(self.cfg.strategies.iter().filter(|&&s| s != MaskingStrategy::Full));
        let sets = order
            .iter()
            .map(|&s| extract_embeddings(&model, &EvalSet::load(&self.store(), &manifest, &ids, s, self.cfg.preprocess())?, s))
            .collect::<maskaudit_core::Result<Vec<_>>>()?;
        let labels: Vec<Vec<bool>> = sets[0]
            .image_ids
            .iter()
            .map(|id| manifest.get(id).map(|s| s.labels.clone()).unwrap_or_default())
            .collect();
        let cosine = cosine_table(&sets[0], &sets[1..], &labels, &manifest.class_names)?;
        let projection = project_2d(
            &sets,
            &TsneConfig {
                perplexity: e.perplexity,
                ..TsneConfig::default()
            },
        )?;
        let mut silhouettes = BTreeMap::new();
        for &s in &order[1..] {
            let v = strategy_silhouette(&projection, MaskingStrategy::Full, s)?;
            log::info!("silhouette FULL vs {s}: {v:.3}");
            silhouettes.insert(s, v);
        }
        let mut record = self.record()?;
        record.embeddings = vec![EmbeddingReport {
            model_strategy: e.model_strategy,
            fold: e.fold,
            cosine,
            projection,
            silhouettes,
        }];
        self.save(&record)
    }

    pub fn attribute(&self) -> Result<()> {
        if !self.cfg.analysis.attribution {
            log::warn!("attribution is disabled in the config");
            return Ok(());
        }
        let a = &self.cfg.attribution;
        let manifest = self.manifest()?;
        let folds = self.folds()?;
        let size = self.cfg.image_size;
        let segments = segment_superpixels(size, size, a.segments)?;
        let mut entries = Vec::new();
        for &s in &a.model_strategies {
            let model = self.model(s, a.fold)?;
            for (ci, class_name) in manifest.class_names.iter().enumerate() {
                let ids: Vec<String> = folds
                    .test_ids
                    .iter()
                    .filter(|id| manifest.get(id).is_some_and(|x| x.labels[ci]))
                    .take(a.n_images)
                    .cloned()
                    .collect();
                let set = EvalSet::load(&self.store(), &manifest, &ids, s, self.cfg.preprocess())?;
                for (i, (id, img)) in set.ids.iter().zip(&set.images).enumerate() {
                    let map = kernel_shap(
                        &ModelScorer {
                            model: &model,
                            class_index: ci,
                        },
                        img,
                        &segments,
                        &ShapConfig {
                            n_evaluations: a.n_evaluations,
                            class_index: ci,
                            seed: self.cfg.seed.wrapping_add(i as u64),
                            ..ShapConfig::default()
                        },
                    )?;
                    let mut entry = AttributionEntry {
                        image_id: id.clone(),
                        model_strategy: s,
                        fold: a.fold,
                        class_name: class_name.clone(),
                        map,
                        overlay: None,
                    };
                    let rel = format!("results/attributions/{}.png", entry.file_stem());
                    render_overlay(img, &segments, &entry.map)?.save_png(&self.dir.join(&rel))?;
                    entry.overlay = Some(rel);
                    entries.push(entry);
                }
            }
        }
        let mut record = self.record()?;
        record.attributions = entries;
        self.save(&record)
    }

    pub fn report(&self) -> Result<()> {
        let record = self.record()?;
        self.save(&record)?;
        print_summary(&record);
        Ok(())
    }
}

fn write_synthetic(config: &SyntheticConfig, root: &Path) -> Result<()> {
    let data = generate_synthetic(config)?;
    let manifest_path = root.join("manifest.csv");
    if manifest_path.exists() && DatasetManifest::read_csv(&manifest_path)?.fingerprint()? == data.manifest.fingerprint()? {
        log::info!("{} already holds this dataset", root.display());
        return Ok(());
    }
    data.write(root)?;
    log::info!("wrote {} samples to {}", data.manifest.len(), root.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn print_summary(record: &RunRecord) {
    println!("run {}", record.run_id);
    for m in &record.matrices {
        println!("{} cross-masking AUC (rows: training strategy, columns: test strategy)", m.class_name);
        print!("{:>12}", "");
        for s in &m.strategies {
            print!(" {:>13}", s.as_str());
        }
        println!();
        for (r, s) in m.strategies.iter().enumerate() {
            print!("{:>12}", s.as_str());
            for c in &m.cells[r] {
                print!(" {:>6.3}±{:<6.3}", c.mean, c.std);
            }
            println!();
        }
    }
    for t in &record.ood {
        for row in &t.rows {
            println!(
                "OOD {} {} {}: AUC {:.3} ± {:.3}{}",
                t.dataset,
                row.strategy,
                row.class_name,
                row.auc.mean,
                row.auc.std,
                if row.starred { " *" } else { "" }
            );
        }
    }
    for e in &record.embeddings {
        for (s, v) in &e.silhouettes {
            println!("embedding silhouette FULL vs {s}: {v:.3}");
        }
    }
}
