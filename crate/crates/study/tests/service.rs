use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use maskaudit_core::study::{
    compute_agreement, pilot_plan, select_study_images, Annotation, Phase, ScoredImages, StudyPlan,
};
use maskaudit_core::{Image, MaskingStrategy};
use maskaudit_study::{router, Study, StudyBundle, StudyError, LOG_FILE};
use serde_json::{json, Value};
use tower::ServiceExt;

fn gray(seed: usize) -> Image {
    let mut img = Image::zeros(1, 8, 8).unwrap();
    for (i, v) in img.pixels_mut().iter_mut().enumerate() {
        *v = ((i * 7 + seed * 13) % 255) as f32 / 255.0;
    }
    img
}

fn classes() -> Vec<String> {
    vec!["alpha".into(), "beta".into()]
}

fn fixture(root: &Path, closed: Vec<Phase>) -> StudyBundle {
    let ids: Vec<String> = (0..12).map(|i| format!("img{i:02}")).collect();
    let preds: BTreeMap<MaskingStrategy, ScoredImages> = MaskingStrategy::ALL
        .iter()
        .enumerate()
        .map(|(s, &strategy)| {
            let probabilities = (0..ids.len())
                .map(|i| vec![((i * 5 + s) % 12) as f64 / 12.0, ((i * 7 + 3 * s) % 12) as f64 / 12.0])
                .collect();
            (strategy, ScoredImages { image_ids: ids.clone(), probabilities })
        })
        .collect();
    let main = select_study_images(&preds, &classes(), 5).unwrap();
    let pilot = pilot_plan(&ids, 9).unwrap();
    for (n, item) in pilot.items.iter().chain(&main.items).enumerate() {
        let path = root.join(&item.image_path);
        if !path.exists() {
            gray(n).save_png(&path).unwrap();
        }
    }
    let ground_truth = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let present: Vec<String> = classes().into_iter().enumerate().filter(|(k, _)| (i + k) % 3 == 0).map(|(_, c)| c).collect();
            (id.clone(), present)
        })
        .collect();
    StudyBundle {
        class_names: classes(),
        ground_truth,
        plans: vec![pilot, main],
        closed_phases: closed,
    }
}

fn open(root: &Path, closed: Vec<Phase>) -> Arc<Study> {
    Arc::new(Study::open(fixture(root, closed), root, root).unwrap())
}

async fn call(study: &Arc<Study>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = router(Arc::clone(study)).oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(study: &Arc<Study>, uri: &str) -> (StatusCode, Value) {
    let (s, body) = call(study, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).unwrap())
}

async fn post(study: &Arc<Study>, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/annotations")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, body) = call(study, req).await;
    (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

fn annotation(item: &str, who: &str, sel: &[&str]) -> Value {
    json!({"item_id": item, "annotator_id": who, "selected_conditions": sel, "comment": "", "elapsed_seconds": 2.5})
}

fn plan(study: &Study, phase: Phase) -> StudyPlan {
    study.bundle().plan(phase).unwrap().clone()
}

#[tokio::test]
async fn served_items_carry_only_id_and_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let study = open(dir.path(), vec![]);
    let (s, next) = get_json(&study, "/api/study/pilot/next?annotator=r1").await;
    assert_eq!(s, StatusCode::OK);
    let keys: Vec<&String> = next.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["image_url", "item_id", "progress"]);
    assert_eq!(next["progress"], json!({"done": 0, "total": 10}));
    let id = next["item_id"].as_str().unwrap();
    assert_eq!(id, plan(&study, Phase::Pilot).items[0].item_id);

    let text = next.to_string();
    for item in plan(&study, Phase::Pilot).items.iter().chain(&plan(&study, Phase::Main).items) {
        assert!(!text.contains(&item.image_id));
        assert!(!text.contains(item.strategy.as_str()));
    }

    let url = next["image_url"].as_str().unwrap();
    let (s, png) = call(&study, Request::get(url).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");
    // only pixel chunks: IHDR, IDAT..., IEND
    let mut pos = 8;
    while pos < png.len() {
        let len = u32::from_be_bytes(png[pos..pos + 4].try_into().unwrap()) as usize;
        let kind = &png[pos + 4..pos + 8];
        assert!(matches!(kind, b"IHDR" | b"IDAT" | b"IEND"), "{}", String::from_utf8_lossy(kind));
        pos += 12 + len;
    }
    let served = image_from_png(&png);
    let source = Image::load(&dir.path().join(&plan(&study, Phase::Pilot).items[0].image_path)).unwrap();
    assert_eq!(served, source);

    let (s, _) = call(&study, Request::get("/api/images/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

fn image_from_png(bytes: &[u8]) -> Image {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.png");
    std::fs::write(&p, bytes).unwrap();
    Image::load(&p).unwrap()
}

#[tokio::test]
async fn submit_round_trips_and_resubmission_is_audited() {
    let dir = tempfile::tempdir().unwrap();
    let study = open(dir.path(), vec![]);
    let item = plan(&study, Phase::Main).items[3].item_id.clone();

    let (s, stored) = post(&study, annotation(&item, "r1", &["alpha", "other"])).await;
    assert_eq!(s, StatusCode::CREATED);
    let stored: Annotation = serde_json::from_value(stored).unwrap();
    assert!(!stored.timestamp.is_empty());
    assert_eq!(study.annotations(Phase::Main), vec![stored.clone()]);

    let (s, again) = post(&study, annotation(&item, "r1", &["none"])).await;
    assert_eq!(s, StatusCode::CREATED);
    let again: Annotation = serde_json::from_value(again).unwrap();
    assert_eq!(study.annotations(Phase::Main), vec![again.clone()]);
    let audit = study.audit("r1", &item);
    assert_eq!(audit.len(), 2);
    assert_eq!(audit[0].annotation, stored);
    assert_eq!(audit[1].annotation, again);

    // the log survives a restart
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 2);
    drop(study);
    let reopened = open(dir.path(), vec![]);
    assert_eq!(reopened.annotations(Phase::Main), vec![again]);
    assert_eq!(reopened.audit("r1", &item).len(), 2);
}

#[tokio::test]
async fn rejects_unknown_items_closed_phases_and_bad_selections() {
    let dir = tempfile::tempdir().unwrap();
    let study = open(dir.path(), vec![Phase::Pilot]);
    let (s, body) = post(&study, annotation("main-999", "r1", &["alpha"])).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{body}");

    let pilot_item = plan(&study, Phase::Pilot).items[0].item_id.clone();
    let (s, _) = post(&study, annotation(&pilot_item, "r1", &["alpha"])).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = get_json(&study, "/api/study/pilot/next?annotator=r1").await;
    assert_eq!(s, StatusCode::CONFLICT);

    let main_item = plan(&study, Phase::Main).items[0].item_id.clone();
    for bad in [&["none", "alpha"][..], &[][..], &["gamma"][..]] {
        let (s, _) = post(&study, annotation(&main_item, "r1", bad)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad:?}");
    }
    let (s, _) = get_json(&study, "/api/study/final/next?annotator=r1").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get_json(&study, "/api/progress").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(study.annotations(Phase::Main).is_empty());
    assert!(matches!(
        study.submit(serde_json::from_value(annotation("x", "r", &["none"])).unwrap()).await,
        Err(StudyError::NotFound(_))
    ));
}

#[tokio::test]
async fn pilot_completion_unlocks_main_phase() {
    let dir = tempfile::tempdir().unwrap();
    let study = open(dir.path(), vec![]);
    let (s, _) = get_json(&study, "/api/study/main/next?annotator=r1").await;
    assert_eq!(s, StatusCode::CONFLICT);

    for _ in 0..10 {
        let (_, next) = get_json(&study, "/api/study/pilot/next?annotator=r1").await;
        let item = next["item_id"].as_str().unwrap().to_string();
        let (s, _) = post(&study, annotation(&item, "r1", &["none"])).await;
        assert_eq!(s, StatusCode::CREATED);
    }
    let (_, done) = get_json(&study, "/api/study/pilot/next?annotator=r1").await;
    assert_eq!(done, json!({"item_id": null, "image_url": null, "progress": {"done": 10, "total": 10}}));

    let (_, progress) = get_json(&study, "/api/progress?annotator=r1").await;
    assert_eq!(progress[0], json!({"phase": "pilot", "done": 10, "total": 10, "closed": false, "unlocked": true}));
    assert_eq!(progress[1]["unlocked"], json!(true));
    assert_eq!(progress[1]["total"], json!(30));
    let (s, next) = get_json(&study, "/api/study/main/next?annotator=r1").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(next["item_id"].as_str().unwrap(), "main-001");

    // another reader is still locked out
    let (s, _) = get_json(&study, "/api/study/main/next?annotator=r2").await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_are_all_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let study = open(dir.path(), vec![]);
    let items: Vec<String> = plan(&study, Phase::Main).items.iter().map(|i| i.item_id.clone()).collect();
    let mut handles = Vec::new();
    for (n, item) in items.iter().enumerate() {
        for who in ["r1", "r2"] {
            let study = Arc::clone(&study);
            let body = annotation(item, who, if n % 2 == 0 { &["alpha"] } else { &["beta", "other"] });
            handles.push(tokio::spawn(async move { post(&study, body).await.0 }));
        }
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::CREATED);
    }
    assert_eq!(study.annotations(Phase::Main).len(), 60);

    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let seqs: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["seq"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, (1..=60).collect::<Vec<_>>());
    drop(study);
    assert_eq!(open(dir.path(), vec![]).annotations(Phase::Main).len(), 60);
}

#[tokio::test]
async fn results_match_direct_computation() {
    let dir = tempfile::tempdir().unwrap();
    let study = open(dir.path(), vec![]);
    for (n, item) in plan(&study, Phase::Main).items.iter().enumerate().take(20) {
        let sel: &[&str] = match n % 3 {
            0 => &["alpha"],
            1 => &["alpha", "beta"],
            _ => &["none"],
        };
        post(&study, annotation(&item.item_id, "r1", sel)).await;
    }
    let (s, body) = get_json(&study, "/api/results?phase=main").await;
    assert_eq!(s, StatusCode::OK);
    let expected = compute_agreement(
        &study.annotations(Phase::Main),
        &study.bundle().ground_truth,
        study.bundle().plan(Phase::Main).unwrap(),
        &classes(),
    )
    .unwrap();
    assert_eq!(body, serde_json::to_value(&expected).unwrap());
    let (_, default_phase) = get_json(&study, "/api/results").await;
    assert_eq!(default_phase, body);
}

#[tokio::test]
async fn torn_last_line_is_skipped_but_corruption_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let study = open(dir.path(), vec![]);
    let item = plan(&study, Phase::Main).items[0].item_id.clone();
    post(&study, annotation(&item, "r1", &["beta"])).await;
    drop(study);

    let log = dir.path().join(LOG_FILE);
    let good = std::fs::read_to_string(&log).unwrap();
    std::fs::write(&log, format!("{good}{{\"seq\":2,\"pha")).unwrap();
    assert_eq!(open(dir.path(), vec![]).annotations(Phase::Main).len(), 1);

    std::fs::write(&log, format!("garbage\n{good}")).unwrap();
    let err = Study::open(fixture(dir.path(), vec![]), dir.path(), dir.path()).err().unwrap();
    assert!(matches!(err, StudyError::CorruptLog { line: 1, .. }), "{err}");
}

#[test]
fn bundle_round_trips_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = fixture(dir.path(), vec![Phase::Pilot]);
    let path = dir.path().join("study.json");
    bundle.save(&path).unwrap();
    assert_eq!(StudyBundle::load(&path).unwrap(), bundle);

    let mut dup = bundle.clone();
    dup.plans.push(dup.plans[0].clone());
    assert!(dup.validate().is_err());
    let mut reserved = bundle;
    reserved.class_names.push("none".into());
    assert!(reserved.validate().is_err());
}
