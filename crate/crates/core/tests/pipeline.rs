use forge_core::flow::{policy_net_config, train_policy, Checkpoint, ContextEncoder, ContextSource, EncoderConfig, TrainConfig};
use forge_core::grounding::{generate_grounding_samples, synthetic_mask_records, GroundingConfig, TemplateCaptionProvider};
use forge_core::io::{jsonl, seed::SeedScheme, validate::validate_str};
use forge_core::planning::{generate_planning, AgentKind, PlanningConfig};
use forge_core::sim::eval::{eval_episode_start, CHUNK_LEN};
use forge_core::sim::{collect_demos, generate_indomain, TaskConfig, TaskKind};
use forge_core::spatial::{generate_spatial, random_scene, SceneGraph};

fn assert_valid(text: &str) {
    let report = validate_str(text, None);
    assert!(report.is_valid(), "{report:?}");
}

#[test]
fn generated_records_pass_validation() {
    let masks = synthetic_mask_records(1, 200);
    let g = generate_grounding_samples(&masks, &TemplateCaptionProvider, &GroundingConfig::default()).unwrap();
    assert_valid(std::str::from_utf8(&jsonl::to_bytes(&g.samples)).unwrap());

    let graphs: Vec<SceneGraph> = (0..30).map(|i| random_scene(2, i).try_into().unwrap()).collect();
    assert_valid(std::str::from_utf8(&jsonl::to_bytes(&generate_spatial(&graphs, 6, 2, 1))).unwrap());

    let cfg = PlanningConfig { agent: AgentKind::Random, episodes: 40, ..Default::default() };
    let p = generate_planning(&cfg).unwrap();
    assert_valid(std::str::from_utf8(&jsonl::to_bytes(&p.samples)).unwrap());
    assert_valid(std::str::from_utf8(&jsonl::to_bytes(&p.successful())).unwrap());

    let tc = TaskConfig::default();
    assert_valid(std::str::from_utf8(&jsonl::to_bytes(&collect_demos(TaskKind::Stack, &tc, 6, 3, 2))).unwrap());
    assert_valid(std::str::from_utf8(&jsonl::to_bytes(&generate_indomain(TaskKind::Reach, &tc, 3, 2, 3, 1))).unwrap());
}

#[test]
fn jsonl_round_trip_is_byte_exact() {
    let graphs: Vec<SceneGraph> = (0..10).map(|i| random_scene(4, i).try_into().unwrap()).collect();
    let bytes = jsonl::to_bytes(&generate_spatial(&graphs, 6, 4, 1));
    let text = std::str::from_utf8(&bytes).unwrap();
    let back: Vec<forge_core::spatial::SpatialQA> = jsonl::parse_str(text, "mem").unwrap();
    assert_eq!(jsonl::to_bytes(&back), bytes);
}

#[test]
fn checkpoint_reproduces_policy_actions() {
    let tc = TaskConfig::default();
    let demos = collect_demos(TaskKind::Reach, &tc, 4, 5, 1);
    let context = ContextSource::Encoder(ContextEncoder::random(EncoderConfig { seed: 5, ..Default::default() }));
    let net_cfg = policy_net_config(&context, CHUNK_LEN);
    let train = TrainConfig { lr: 1e-3, steps: 10, batch_size: 4, ..Default::default() };
    let (policy, _) = train_policy(&demos, context, net_cfg, &train).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    Checkpoint::from_policy(&policy).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().to_policy().unwrap();

    let (_, state) = eval_episode_start(TaskKind::Reach, &tc, 0, 0);
    let draw = |p: &forge_core::flow::FlowPolicy| p.sample_chunk(&state, &mut SeedScheme::new(1).rng("t", 0)).unwrap();
    assert_eq!(draw(&policy), draw(&loaded));

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"horizon\":4", "\"horizon\":5", 1)).unwrap();
    assert!(Checkpoint::load(&path).and_then(|c| c.to_policy()).is_err());
}
