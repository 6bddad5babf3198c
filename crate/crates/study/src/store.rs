//! Study state: the plans, pre-encoded images and the annotation log.
//!
//! Writes go through one writer thread that appends to a JSONL log and syncs
//! it before anything is acknowledged; reads never block on disk.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use maskaudit_core::study::{compute_agreement, AgreementReport, Annotation, Phase, StudyItem};
use maskaudit_core::Image;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use crate::bundle::StudyBundle;
use crate::error::{Result, StudyError};

pub const LOG_FILE: &str = "annotations.jsonl";

/// One line of the append-only log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub phase: Phase,
    pub annotation: Annotation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseProgress {
    pub done: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStatus {
    pub phase: Phase,
    pub done: usize,
    pub total: usize,
    pub closed: bool,
    pub unlocked: bool,
}

/// What the reader sees next: an opaque id and where to fetch the pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextItem {
    pub item_id: Option<String>,
    pub image_url: Option<String>,
    pub progress: PhaseProgress,
}

#[derive(Default)]
struct Ledger {
    entries: Vec<LogEntry>,
    /// (annotator, item) -> index of the current entry
    current: BTreeMap<(String, String), usize>,
}

impl Ledger {
    fn push(&mut self, entry: LogEntry) {
        let key = (entry.annotation.annotator_id.clone(), entry.annotation.item_id.clone());
        self.current.insert(key, self.entries.len());
        self.entries.push(entry);
    }

    fn has(&self, annotator: &str, item: &str) -> bool {
        self.current.contains_key(&(annotator.to_string(), item.to_string()))
    }
}

struct WriteRequest {
    phase: Phase,
    annotation: Annotation,
    reply: oneshot::Sender<Result<LogEntry>>,
}

pub struct Study {
    bundle: StudyBundle,
    items: HashMap<String, (Phase, usize)>,
    images: HashMap<String, Arc<[u8]>>,
    ledger: Arc<RwLock<Ledger>>,
    writer: mpsc::Sender<WriteRequest>,
    log_path: PathBuf,
}

impl Study {
    /// Loads every served image from `image_root`, replays the log in
    /// `data_root` and starts the writer thread.
    pub fn open(bundle: StudyBundle, image_root: &Path, data_root: &Path) -> Result<Self> {
        bundle.validate()?;
        let mut items = HashMap::new();
        let mut images = HashMap::new();
        for plan in &bundle.plans {
            for (i, item) in plan.items.iter().enumerate() {
                items.insert(item.item_id.clone(), (plan.phase, i));
                // re-encoding drops anything but pixels from the served file
                let img = Image::load(&image_root.join(&item.image_path))?;
                images.insert(item.item_id.clone(), Arc::from(img.to_png_bytes()?));
            }
        }

        std::fs::create_dir_all(data_root).map_err(|e| StudyError::io(data_root, e))?;
        let log_path = data_root.join(LOG_FILE);
        let ledger = Arc::new(RwLock::new(replay(&log_path)?));
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| StudyError::io(&log_path, e))?;

        let (tx, rx) = mpsc::channel(64);
        let next_seq = ledger.read().expect("ledger lock").entries.last().map_or(1, |e| e.seq + 1);
        let thread_ledger = Arc::clone(&ledger);
        let thread_path = log_path.clone();
        std::thread::Builder::new()
            .name("annotation-writer".into())
            .spawn(move || write_loop(rx, file, thread_path, thread_ledger, next_seq))
            .map_err(|e| StudyError::io(&log_path, e))?;

        Ok(Self {
            bundle,
            items,
            images,
            ledger,
            writer: tx,
            log_path,
        })
    }

    pub fn bundle(&self) -> &StudyBundle {
        &self.bundle
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    fn plan_items(&self, phase: Phase) -> Result<&[StudyItem]> {
        self.bundle
            .plan(phase)
            .map(|p| p.items.as_slice())
            .ok_or_else(|| StudyError::NotFound(format!("phase `{phase}`")))
    }

    fn done(&self, phase: Phase, annotator: &str) -> Result<PhaseProgress> {
        let items = self.plan_items(phase)?;
        let ledger = self.ledger.read().expect("ledger lock");
        let done = items.iter().filter(|i| ledger.has(annotator, &i.item_id)).count();
        Ok(PhaseProgress { done, total: items.len() })
    }

    /// The main phase opens for a reader once their pilot is complete (or
    /// the pilot has been closed).
    fn unlocked(&self, phase: Phase, annotator: &str) -> Result<bool> {
        if phase == Phase::Main && self.bundle.plan(Phase::Pilot).is_some() && !self.bundle.is_closed(Phase::Pilot) {
            let p = self.done(Phase::Pilot, annotator)?;
            return Ok(p.done == p.total);
        }
        Ok(true)
    }

    pub fn next(&self, phase: Phase, annotator: &str) -> Result<NextItem> {
        if annotator.trim().is_empty() {
            return Err(StudyError::Invalid("missing annotator id".into()));
        }
        let items = self.plan_items(phase)?;
        if self.bundle.is_closed(phase) {
            return Err(StudyError::PhaseClosed(phase.to_string()));
        }
        if !self.unlocked(phase, annotator)? {
            return Err(StudyError::PhaseLocked {
                phase: phase.to_string(),
                requires: Phase::Pilot.to_string(),
            });
        }
        let progress = self.done(phase, annotator)?;
        let ledger = self.ledger.read().expect("ledger lock");
        let next = items.iter().find(|i| !ledger.has(annotator, &i.item_id));
        Ok(NextItem {
            item_id: next.map(|i| i.item_id.clone()),
            image_url: next.map(|i| format!("/api/images/{}", i.item_id)),
            progress,
        })
    }

    pub fn image(&self, item_id: &str) -> Result<Arc<[u8]>> {
        self.images
            .get(item_id)
            .cloned()
            .ok_or_else(|| StudyError::NotFound(format!("item `{item_id}`")))
    }

    /// Persists the annotation and returns the stored record once it is on disk.
    pub async fn submit(&self, mut annotation: Annotation) -> Result<LogEntry> {
        let &(phase, _) = self
            .items
            .get(&annotation.item_id)
            .ok_or_else(|| StudyError::NotFound(format!("item `{}`", annotation.item_id)))?;
        if self.bundle.is_closed(phase) {
            return Err(StudyError::PhaseClosed(phase.to_string()));
        }
        annotation
            .validate(&self.bundle.class_names)
            .map_err(|e| StudyError::Invalid(e.to_string()))?;
        annotation.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let (reply, rx) = oneshot::channel();
        self.writer
            .send(WriteRequest { phase, annotation, reply })
            .await
            .map_err(|_| StudyError::WriterGone)?;
        rx.await.map_err(|_| StudyError::WriterGone)?
    }

    pub fn progress(&self, annotator: &str) -> Result<Vec<PhaseStatus>> {
        self.bundle
            .plans
            .iter()
            .map(|p| {
                let d = self.done(p.phase, annotator)?;
                Ok(PhaseStatus {
                    phase: p.phase,
                    done: d.done,
                    total: d.total,
                    closed: self.bundle.is_closed(p.phase),
                    unlocked: self.unlocked(p.phase, annotator)?,
                })
            })
            .collect()
    }

    /// Current annotations for `phase`, one per (annotator, item).
    pub fn annotations(&self, phase: Phase) -> Vec<Annotation> {
        let ledger = self.ledger.read().expect("ledger lock");
        let mut idx: Vec<usize> = ledger.current.values().copied().collect();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| &ledger.entries[i])
            .filter(|e| e.phase == phase)
            .map(|e| e.annotation.clone())
            .collect()
    }

    /// Every submission by `annotator` for `item_id`, oldest first.
    pub fn audit(&self, annotator: &str, item_id: &str) -> Vec<LogEntry> {
        let ledger = self.ledger.read().expect("ledger lock");
        ledger
            .entries
            .iter()
            .filter(|e| e.annotation.annotator_id == annotator && e.annotation.item_id == item_id)
            .cloned()
            .collect()
    }

    pub fn results(&self, phase: Phase) -> Result<AgreementReport> {
        let plan = self
            .bundle
            .plan(phase)
            .ok_or_else(|| StudyError::NotFound(format!("phase `{phase}`")))?;
        Ok(compute_agreement(
            &self.annotations(phase),
            &self.bundle.ground_truth,
            plan,
            &self.bundle.class_names,
        )?)
    }
}

fn replay(path: &Path) -> Result<Ledger> {
    let mut ledger = Ledger::default();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ledger),
        Err(e) => return Err(StudyError::io(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| StudyError::io(path, e))?;
    let last = lines.len();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEntry>(line) {
            Ok(entry) => ledger.push(entry),
            // a torn final line is an unacknowledged write
            Err(e) if i + 1 == last => log::warn!("{}: ignoring incomplete last line: {e}", path.display()),
            Err(e) => {
                return Err(StudyError::CorruptLog {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(ledger)
}

fn write_loop(
    mut rx: mpsc::Receiver<WriteRequest>,
    mut file: File,
    path: PathBuf,
    ledger: Arc<RwLock<Ledger>>,
    mut seq: u64,
) {
    while let Some(req) = rx.blocking_recv() {
        let entry = LogEntry {
            seq,
            phase: req.phase,
            annotation: req.annotation,
        };
        let result = append(&mut file, &path, &entry).map(|()| {
            ledger.write().expect("ledger lock").push(entry.clone());
            seq += 1;
            entry
        });
        // the client may have gone away; the record is stored regardless
        let _ = req.reply.send(result);
    }
}

fn append(file: &mut File, path: &Path, entry: &LogEntry) -> Result<()> {
    let mut line = serde_json::to_string(entry).map_err(|e| StudyError::Invalid(e.to_string()))?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| StudyError::io(path, e))?;
    file.sync_data().map_err(|e| StudyError::io(path, e))
}
