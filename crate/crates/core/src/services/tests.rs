use super::*;
use crate::fixtures::bedroom_scene;

fn services(dir: &Path, mock: MockTransport) -> (Services, Arc<MockTransport>) {
    let mock = Arc::new(mock);
    let config = ServiceConfig {
        backoff: Duration::from_millis(1),
        ..ServiceConfig::default()
    };
    (Services::new(dir, mock.clone(), config).unwrap(), mock)
}

fn reference(s: &Services) -> PathBuf {
    s.generate_reference_image("a small bedroom", "modern").unwrap()
}

#[test]
fn strip_fence_handles_json_blocks() {
    assert_eq!(strip_fence("```json\n{\"a\": 1}\n```"), "{\"a\": 1}");
    assert_eq!(strip_fence("  [1] "), "[1]");
}

#[test]
fn file_stem_is_path_safe() {
    assert_eq!(file_stem("lamp/1 a"), "lamp_1_a");
}

#[test]
fn reference_image_requires_description() {
    let dir = tempfile::tempdir().unwrap();
    let (s, mock) = services(dir.path(), MockTransport::default());
    assert!(matches!(s.generate_reference_image("  ", "x"), Err(ServiceError::Precondition(_))));
    assert!(mock.requests().is_empty());
    let path = reference(&s);
    assert_eq!(fs::read(path).unwrap(), PLACEHOLDER_PNG);
}

#[test]
fn parse_scene_uses_reference_and_fills_description() {
    let dir = tempfile::tempdir().unwrap();
    let (s, mock) = services(dir.path(), MockTransport::default());
    let r = reference(&s);
    let scene = s.parse_scene_from_inputs("a small bedroom", "modern", &r).unwrap();
    assert_eq!(scene.items.len(), bedroom_scene().items.len());
    let req = mock.requests().into_iter().find(|r| r.kind == JobKind::SceneParse).unwrap();
    assert_eq!(req.attachments.len(), 1);
    assert!(req.system.unwrap().contains("SceneData"));
}

#[test]
fn parse_scene_missing_reference_is_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = services(dir.path(), MockTransport::default());
    let err = s.parse_scene_from_inputs("d", "s", &dir.path().join("nope.png")).unwrap_err();
    assert!(matches!(err, ServiceError::Precondition(_)));
}

#[test]
fn parse_scene_gets_one_corrective_retry() {
    let dir = tempfile::tempdir().unwrap();
    let good = crate::fixtures::BEDROOM_SCENE.to_string();
    let mock = MockTransport::default().on(
        JobKind::SceneParse,
        "",
        vec![MockReply::Text("not json".into()), MockReply::Text(good)],
    );
    let (s, mock) = services(dir.path(), mock);
    let r = reference(&s);
    s.parse_scene_from_inputs("d", "s", &r).unwrap();
    let parses: Vec<_> = mock.requests().into_iter().filter(|r| r.kind == JobKind::SceneParse).collect();
    assert_eq!(parses.len(), 2);
    assert!(parses[1].prompt.contains("could not be used"));
}

#[test]
fn parse_scene_gives_up_after_second_invalid_reply() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockTransport::default().on(JobKind::SceneParse, "", vec![MockReply::Text("{\"items\": 3}".into())]);
    let (s, mock) = services(dir.path(), mock);
    let r = reference(&s);
    match s.parse_scene_from_inputs("d", "s", &r) {
        Err(ServiceError::InvalidResponse { raw, .. }) => assert_eq!(raw, "{\"items\": 3}"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.requests().iter().filter(|r| r.kind == JobKind::SceneParse).count(), 2);
    assert_eq!(s.ledger().jobs["scene_parse"].status, JobStatus::Failed);
}

#[test]
fn retries_transport_failures_only() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockTransport::default().on(
        JobKind::ReferenceImage,
        "",
        vec![MockReply::Fail("503".into()), MockReply::Data(PLACEHOLDER_PNG.to_vec())],
    );
    let (s, _) = services(dir.path(), mock);
    reference(&s);
    assert_eq!(s.ledger().jobs["reference_image"].attempts, 2);

    let dir = tempfile::tempdir().unwrap();
    let mock = MockTransport::default().on(JobKind::ReferenceImage, "", vec![MockReply::Reject("400".into())]);
    let (s, mock) = services(dir.path(), mock);
    assert!(matches!(
        s.generate_reference_image("d", "s"),
        Err(ServiceError::Rejected(_))
    ));
    assert_eq!(mock.requests().len(), 1);

    let dir = tempfile::tempdir().unwrap();
    let mock = MockTransport::default().on(JobKind::ReferenceImage, "", vec![MockReply::Fail("down".into())]);
    let (s, mock) = services(dir.path(), mock);
    assert!(s.generate_reference_image("d", "s").unwrap_err().is_retriable());
    assert_eq!(mock.requests().len(), 3);
}

#[test]
fn object_images_respect_concurrency_bound() {
    let dir = tempfile::tempdir().unwrap();
    let mut mock = MockTransport::default();
    mock.delay = Duration::from_millis(20);
    let mock = Arc::new(mock);
    let config = ServiceConfig {
        max_inflight: 2,
        ..ServiceConfig::default()
    };
    let s = Services::new(dir.path(), mock.clone(), config).unwrap();
    let scene = bedroom_scene();
    let out = s.generate_object_images(&scene, None, "modern");
    assert_eq!(out.images.len(), scene.items.len());
    assert!(out.failed.is_empty());
    assert_eq!(mock.peak_inflight(), 2);
}

#[test]
fn object_image_failure_is_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let scene = bedroom_scene();
    let victim = scene.items[1].clone();
    let mock = MockTransport::default().on(JobKind::ObjectImage, victim.name.clone(), vec![MockReply::Reject("nsfw".into())]);
    let (s, _) = services(dir.path(), mock);
    let out = s.generate_object_images(&scene, None, "modern");
    assert_eq!(out.failed.keys().collect::<Vec<_>>(), vec![&victim.id]);
    assert_eq!(out.images.len(), scene.items.len() - 1);
}

#[test]
fn resume_skips_finished_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = bedroom_scene();
    {
        let (s, _) = services(dir.path(), MockTransport::default());
        s.generate_object_images(&scene, None, "modern");
    }
    let (s, mock) = services(dir.path(), MockTransport::default());
    s.generate_object_images(&scene, None, "modern");
    assert!(mock.requests().is_empty());
    assert_eq!(s.skipped(), scene.items.len());

    // a deleted output or changed input reruns that job only
    fs::remove_file(dir.path().join(IMAGES_DIR).join(format!("{}.png", file_stem(&scene.items[0].id)))).unwrap();
    let (s, mock) = services(dir.path(), MockTransport::default());
    s.generate_object_images(&scene, None, "modern");
    assert_eq!(mock.requests().len(), 1);
    let (s, mock) = services(dir.path(), MockTransport::default());
    s.generate_object_images(&scene, None, "rustic");
    assert_eq!(mock.requests().len(), scene.items.len());
    assert_eq!(s.skipped(), 0);
}

#[test]
fn prune_filters_to_input_subset() {
    let dir = tempfile::tempdir().unwrap();
    let files = vec!["bathtub.png".to_string(), "faucet.png".to_string()];
    let mock = MockTransport::default().on(
        JobKind::Prune,
        "",
        vec![MockReply::Text(r#"{"filenames": ["faucet.png", "ghost.png", "faucet.png"]}"#.into())],
    );
    let (s, _) = services(dir.path(), mock);
    let out = s.prune_redundant_images(&files).unwrap();
    assert_eq!(out.delete, vec!["faucet.png"]);
    assert_eq!(out.dropped, vec!["ghost.png"]);
    assert!(matches!(s.prune_redundant_images(&[]), Err(ServiceError::Precondition(_))));
}

#[test]
fn prune_schema_violation_is_retried() {
    let dir = tempfile::tempdir().unwrap();
    let files = vec!["a.png".to_string()];
    let mock = MockTransport::default().on(
        JobKind::Prune,
        "",
        vec![MockReply::Text(r#"{"files": []}"#.into()), MockReply::Text(r#"["a.png"]"#.into())],
    );
    let (s, _) = services(dir.path(), mock);
    assert_eq!(s.prune_redundant_images(&files).unwrap().delete, vec!["a.png"]);
}

#[test]
fn background_is_recorded_in_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = services(dir.path(), MockTransport::default());
    let mut scene = bedroom_scene();
    assert!(matches!(
        s.generate_background(&dir.path().join("missing.png"), &mut scene),
        Err(ServiceError::Precondition(_))
    ));
    let r = reference(&s);
    s.generate_background(&r, &mut scene).unwrap();
    assert_eq!(scene.background_ref.as_deref(), Some("images/background.png"));
}

#[test]
fn asset_is_measured_and_rescaled_by_height() {
    let dir = tempfile::tempdir().unwrap();
    let mut mock = MockTransport::default();
    mock.asset_scale = 0.5;
    let (s, _) = services(dir.path(), mock);
    let scene = bedroom_scene();
    let spec = &scene.items[0];
    let image = s.generate_object_image(spec, None, "modern", None).unwrap();
    let asset = s.generate_asset(&image, spec, None).unwrap();
    approx::assert_relative_eq!(asset.measured.z, spec.size.z * 0.5, epsilon = 1e-6);
    // uniform scaling of the asset leaves the spec unchanged
    approx::assert_relative_eq!(asset.spec.size.x, spec.size.x, epsilon = 1e-6);
    approx::assert_relative_eq!(asset.spec.size.z, spec.size.z, epsilon = 1e-6);
    assert!(dir.path().join(&asset.asset_ref).is_file());
    assert_eq!(asset.spec.asset_ref.as_deref(), Some(asset.asset_ref.as_str()));
}

#[test]
fn corrupt_asset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scene = bedroom_scene();
    let spec = &scene.items[0];
    let mock = MockTransport::default().on(JobKind::Asset3d, "", vec![MockReply::Data(b"garbage".to_vec())]);
    let (s, _) = services(dir.path(), mock);
    let image = s.generate_object_image(spec, None, "modern", None).unwrap();
    assert!(matches!(s.generate_asset(&image, spec, None), Err(ServiceError::Asset(_))));
    assert!(!dir.path().join(ASSETS_DIR).join(format!("{}.glb", file_stem(&spec.id))).exists());
}

#[test]
fn cassette_replays_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let tape = dir.path().join("tape");
    let scene = bedroom_scene();
    let run = |transport: Arc<dyn Transport>, root: &Path| {
        let s = Services::new(root, transport, ServiceConfig::default()).unwrap();
        let r = s.generate_reference_image("a small bedroom", "modern").unwrap();
        let parsed = s.parse_scene_from_inputs("a small bedroom", "modern", &r).unwrap();
        let imgs = s.generate_object_images(&parsed, Some(&r), "modern");
        s.generate_assets(&parsed, &imgs.images).assets.len()
    };
    let live = Arc::new(Cassette::record(&tape, Arc::new(MockTransport::default())));
    let n = run(live, &dir.path().join("a"));
    assert_eq!(n, scene.items.len());
    let replay = Arc::new(Cassette::replay(&tape));
    assert_eq!(run(replay.clone(), &dir.path().join("b")), n);
    assert_eq!(replay.replayed().values().sum::<usize>(), 2 + 2 * scene.items.len());
    assert!(Cassette::replay(dir.path().join("empty"))
        .send(&ServiceRequest::new(JobKind::Prune, "x"))
        .is_err());
}

#[test]
fn ledger_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = services(dir.path(), MockTransport::default());
    reference(&s);
    let loaded = JobLedger::load(&dir.path().join(LEDGER_FILE)).unwrap();
    assert_eq!(loaded, s.ledger());
    assert_eq!(loaded.done().count(), 1);
}
