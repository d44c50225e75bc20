use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use forge_core::experiment::{compare, run_matrix, RunReport};
use forge_core::flow::{
    loss_curve_csv, policy_net_config, train_policy_with, Checkpoint, ContextEncoder, ContextSource, EncoderConfig,
    TrainConfig,
};
use forge_core::grounding::{
    generate_indexed, synthetic_mask_records, GroundingConfig, MaskRecord, MaskRecordLine, Mix, PointMode,
    TemplateCaptionProvider, DEFAULT_QUALITY_THRESHOLD,
};
use forge_core::io::config::Config;
use forge_core::io::jsonl;
use forge_core::io::manifest::Manifest;
use forge_core::io::validate::validate;
use forge_core::planning::{generate_planning, AgentKind, PlanningConfig, DEFAULT_MAX_STEPS};
use forge_core::sim::eval::CHUNK_LEN;
use forge_core::sim::{
    collect_demos, eval_policy, generate_indomain, EpisodeRecord, ExpertPolicy, Policy, RandomPolicy, TaskKind,
};
use forge_core::spatial::{generate_spatial, random_scene, SceneGraph, SceneRecord};

use crate::args::*;
use crate::settings::{parse_init, parse_matrix, parse_task, Settings};
use crate::CliError;

pub fn dispatch(verb: Verb, command: Vec<String>) -> Result<(), CliError> {
    match verb {
        Verb::GenGrounding(a) => gen_grounding(a, command),
        Verb::GenSpatial(a) => gen_spatial(a, command),
        Verb::GenPlanning(a) => gen_planning(a, command),
        Verb::GenIndomain(a) => gen_indomain(a, command),
        Verb::CollectDemos(a) => collect(a, command),
        Verb::TrainPolicy(a) => train(a, command),
        Verb::EvalPolicy(a) => eval(a, command),
        Verb::Experiment(a) => experiment(a, command),
        Verb::Validate(a) => check(a),
    }
}

/// Accumulates emitted files into a manifest written beside them.
struct Run {
    manifest: Manifest,
    base: PathBuf,
    started: Instant,
}

impl Run {
    fn new(command: Vec<String>, seed: u64, settings: &Settings, base: &Path) -> Self {
        let mut manifest = Manifest::new(command, seed);
        manifest.config_hash = Some(settings.hash());
        Self { manifest, base: base.to_path_buf(), started: Instant::now() }
    }

    fn relative(&self, path: &Path) -> PathBuf {
        path.strip_prefix(&self.base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
    }

    fn jsonl<T: Serialize>(&mut self, path: &Path, records: &[T]) -> Result<(), CliError> {
        let bytes = jsonl::write(path, records)?;
        self.manifest.add_output(self.relative(path), &bytes);
        Ok(())
    }

    fn bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| forge_core::io::IoError::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| forge_core::io::IoError::io(path, e))?;
        self.manifest.add_output(self.relative(path), bytes);
        Ok(())
    }

    fn finish(mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.elapsed_ms = self.started.elapsed().as_millis() as u64;
        self.manifest.write(path)?;
        log::info!("wrote {} output(s); manifest {}", self.manifest.outputs.len(), path.display());
        Ok(())
    }
}

/// `dir/name.jsonl` -> `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn check_jobs(jobs: usize) -> Result<usize, CliError> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(jobs)
}

fn finish_file_run(run: Run, out: &Path) -> Result<(), CliError> {
    run.finish(&sibling(out, "manifest.json"))
}

fn gen_grounding(a: GenGrounding, command: Vec<String>) -> Result<(), CliError> {
    let jobs = check_jobs(a.common.jobs)?;
    let mut s = Settings::load("gen-grounding", a.common.config.as_deref())?;
    let seed = s.pick("seed", a.common.seed, 0)?;
    let threshold = s.pick("threshold", a.threshold, DEFAULT_QUALITY_THRESHOLD)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let mix = match s.pick_opt::<String>("mix", a.mix)? {
        Some(m) => m.parse::<Mix>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => Mix::default(),
    };
    let point_mode = match s.pick("point_mode", a.point_mode, "uniform".to_string())?.as_str() {
        "uniform" => PointMode::Uniform,
        "centroid" => PointMode::Centroid,
        other => return Err(CliError::Usage(format!("unknown point mode {other:?} (expected uniform, centroid)"))),
    };
    let limit = s.pick_opt("limit", a.limit)?;
    let records: Vec<MaskRecord> = match a.synthetic {
        Some(n) => {
            s.effective.set("synthetic", n.to_string());
            synthetic_mask_records(seed, n)
        }
        None => {
            let path = a.input.as_deref().expect("clap requires --in without --synthetic");
            let lines: Vec<MaskRecordLine> = jsonl::read(path)?;
            lines
                .into_iter()
                .enumerate()
                .map(|(i, l)| {
                    MaskRecord::try_from(l).map_err(|e| CliError::Invalid(format!("{}: record {}: {e}", path.display(), i + 1)))
                })
                .collect::<Result<_, _>>()?
        }
    };
    // Indices refer to input positions so that filtering does not reseed.
    let kept: Vec<(usize, &MaskRecord)> =
        records.iter().enumerate().filter(|(_, r)| r.quality_score >= threshold).collect();
    let cfg = GroundingConfig { seed, mix, point_mode, limit, jobs };
    let out = generate_indexed(&kept, &TemplateCaptionProvider, &cfg)?;
    let mut run = Run::new(command, seed, &s, &base_dir(&a.out));
    run.manifest.count("records_in", records.len() as u64);
    run.manifest.count("records_kept", kept.len() as u64);
    run.manifest.count("skipped_empty", out.skipped_empty as u64);
    run.manifest.count("samples", out.samples.len() as u64);
    run.jsonl(&a.out, &out.samples)?;
    finish_file_run(run, &a.out)
}

fn gen_spatial(a: GenSpatial, command: Vec<String>) -> Result<(), CliError> {
    let jobs = check_jobs(a.common.jobs)?;
    let mut s = Settings::load("gen-spatial", a.common.config.as_deref())?;
    let seed = s.pick("seed", a.common.seed, 0)?;
    let per_scene = s.pick("per_scene", a.per_scene, 6usize)?;
    let scenes: Vec<SceneRecord> = match a.synthetic {
        Some(n) => {
            s.effective.set("synthetic", n.to_string());
            (0..n as u64).map(|i| random_scene(seed, i)).collect()
        }
        None => jsonl::read(a.input.as_deref().expect("clap requires --in without --synthetic"))?,
    };
    let graphs: Vec<SceneGraph> = scenes
        .into_iter()
        .enumerate()
        .map(|(i, r)| SceneGraph::try_from(r).map_err(|e| CliError::Invalid(format!("scene {}: {e}", i + 1))))
        .collect::<Result<_, _>>()?;
    let qa = generate_spatial(&graphs, per_scene, seed, jobs);
    let mut run = Run::new(command, seed, &s, &base_dir(&a.out));
    run.manifest.count("scenes", graphs.len() as u64);
    run.manifest.count("samples", qa.len() as u64);
    run.jsonl(&a.out, &qa)?;
    finish_file_run(run, &a.out)
}

fn gen_planning(a: GenPlanning, command: Vec<String>) -> Result<(), CliError> {
    let jobs = check_jobs(a.common.jobs)?;
    if a.env != "toy" {
        return Err(CliError::Usage(format!("unknown env {:?} (only toy is available)", a.env)));
    }
    let mut s = Settings::load("gen-planning", a.common.config.as_deref())?;
    let d = PlanningConfig::default();
    let cfg = PlanningConfig {
        seed: s.pick("seed", a.common.seed, 0)?,
        agent: s.pick("agent", a.agent, "expert".to_string())?.parse::<AgentKind>()?,
        kind: parse_task(&s.pick("task", a.task, d.kind.to_string())?)?,
        episodes: s.pick("episodes", a.episodes, d.episodes)?,
        epsilon: s.pick("epsilon", a.epsilon, d.epsilon)?,
        max_steps: s.pick("max_steps", a.max_steps, DEFAULT_MAX_STEPS)?,
        task_cfg: s.task_config(a.task_config.as_deref())?,
        jobs,
    };
    if !(0.0..=1.0).contains(&cfg.epsilon) {
        return Err(CliError::Usage(format!("epsilon {} outside [0, 1]", cfg.epsilon)));
    }
    let out = generate_planning(&cfg)?;
    let kept = out.successful();
    let traj_path = a.trajectories.unwrap_or_else(|| sibling(&a.out, "trajectories.jsonl"));
    let mut run = Run::new(command, cfg.seed, &s, &base_dir(&a.out));
    run.manifest.count("episodes", out.trajectories.len() as u64);
    run.manifest.count("successful", kept.len() as u64);
    run.manifest.count("samples", out.samples.len() as u64);
    run.jsonl(&a.out, &out.samples)?;
    run.jsonl(&traj_path, &kept)?;
    finish_file_run(run, &a.out)
}

fn task_list(s: &str) -> Result<Vec<TaskKind>, CliError> {
    if s == "all" {
        Ok(TaskKind::ALL.to_vec())
    } else {
        Ok(vec![parse_task(s)?])
    }
}

fn gen_indomain(a: GenIndomain, command: Vec<String>) -> Result<(), CliError> {
    let jobs = check_jobs(a.common.jobs)?;
    let mut s = Settings::load("gen-indomain", a.common.config.as_deref())?;
    let seed = s.pick("seed", a.common.seed, 0)?;
    let kinds = task_list(&s.pick("task", a.task, "all".to_string())?)?;
    let episodes = s.pick("episodes", a.episodes, 100usize)?;
    let stride = s.pick("stride", a.stride, 2usize)?;
    if stride == 0 {
        return Err(CliError::Usage("stride must be at least 1".into()));
    }
    let task_cfg = s.task_config(a.task_config.as_deref())?;
    let qa: Vec<_> =
        kinds.iter().flat_map(|k| generate_indomain(*k, &task_cfg, episodes, stride, seed, jobs)).collect();
    let mut run = Run::new(command, seed, &s, &base_dir(&a.out));
    run.manifest.count("samples", qa.len() as u64);
    run.jsonl(&a.out, &qa)?;
    finish_file_run(run, &a.out)
}

fn collect(a: CollectDemos, command: Vec<String>) -> Result<(), CliError> {
    let jobs = check_jobs(a.common.jobs)?;
    let mut s = Settings::load("collect-demos", a.common.config.as_deref())?;
    let seed = s.pick("seed", a.common.seed, 0)?;
    let kind = parse_task(&s.pick("task", a.task, TaskKind::PickPlace.to_string())?)?;
    let episodes = s.pick("episodes", a.episodes, 240usize)?;
    let task_cfg = s.task_config(a.task_config.as_deref())?;
    let demos = collect_demos(kind, &task_cfg, episodes, seed, jobs);
    let mut run = Run::new(command, seed, &s, &base_dir(&a.out));
    run.manifest.count("episodes", demos.len() as u64);
    run.manifest.count("successful", demos.iter().filter(|d| d.success).count() as u64);
    run.jsonl(&a.out, &demos)?;
    finish_file_run(run, &a.out)
}

fn train(a: TrainPolicy, command: Vec<String>) -> Result<(), CliError> {
    check_jobs(a.common.jobs)?;
    let mut s = Settings::load("train-policy", a.common.config.as_deref())?;
    let d = TrainConfig::default();
    let seed = s.pick("seed", a.common.seed, 0)?;
    let cfg = TrainConfig {
        seed,
        steps: s.pick("steps", a.steps, d.steps)?,
        lr: s.pick("lr", a.lr, d.lr)?,
        batch_size: s.pick("batch_size", a.batch_size, d.batch_size)?,
        ..d
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let context = match s.pick("context", a.context, "entities".to_string())?.as_str() {
        "entities" => ContextSource::Entities,
        "encoder" => ContextSource::Encoder(ContextEncoder::random(EncoderConfig { seed, ..Default::default() })),
        other => return Err(CliError::Usage(format!("unknown context {other:?} (expected entities, encoder)"))),
    };
    let init = parse_init(&s.pick("init", a.init, "zero-head".to_string())?)?;
    let demos: Vec<EpisodeRecord> = jsonl::read(&a.demos)?;
    let mut net_cfg = policy_net_config(&context, CHUNK_LEN);
    net_cfg.init = init;
    net_cfg.seed = seed;
    let (policy, losses) = train_policy_with(&demos, context, net_cfg, &cfg, |step, _| {
        if step % 500 == 0 {
            log::info!("step {step}/{}", cfg.steps);
        }
    })?;
    let ckpt = Checkpoint::from_policy(&policy);
    let loss_path = a.loss_csv.unwrap_or_else(|| sibling(&a.out, "loss.csv"));
    let mut run = Run::new(command, seed, &s, &base_dir(&a.out));
    run.manifest.count("demos", demos.len() as u64);
    run.manifest.count("steps", cfg.steps as u64);
    run.bytes(&a.out, (ckpt.to_json() + "\n").as_bytes())?;
    run.bytes(&loss_path, loss_curve_csv(&losses).as_bytes())?;
    finish_file_run(run, &a.out)
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    policy: &'a str,
    task: TaskKind,
    seed: u64,
    episodes: usize,
    successes: usize,
    success_rate: f64,
    queries: usize,
    actions_executed: usize,
}

fn eval(a: EvalPolicy, command: Vec<String>) -> Result<(), CliError> {
    let jobs = check_jobs(a.common.jobs)?;
    let mut s = Settings::load("eval-policy", a.common.config.as_deref())?;
    let seed = s.pick("seed", a.common.seed, 0)?;
    let kind = parse_task(&s.pick("task", a.task, TaskKind::PickPlace.to_string())?)?;
    let episodes = s.pick("episodes", a.episodes, 240usize)?;
    let task_cfg = s.task_config(a.task_config.as_deref())?;
    let (name, policy): (String, Box<dyn Policy>) = match (&a.checkpoint, a.policy.as_deref()) {
        (Some(p), _) => (p.display().to_string(), Box::new(Checkpoint::load(p)?.to_policy()?)),
        (None, Some("expert")) => ("expert".into(), Box::new(ExpertPolicy { cfg: task_cfg.clone() })),
        (None, Some("random")) => ("random".into(), Box::new(RandomPolicy)),
        (None, other) => {
            return Err(CliError::Usage(format!("unknown policy {other:?} (expected expert, random)")));
        }
    };
    let r = eval_policy(policy.as_ref(), kind, &task_cfg, episodes, seed, jobs);
    println!("{name}: {}/{} successes ({:.3}) on {kind}", r.successes, r.episodes, r.success_rate);
    let summary = EvalSummary {
        policy: &name,
        task: kind,
        seed,
        episodes: r.episodes,
        successes: r.successes,
        success_rate: r.success_rate,
        queries: r.queries,
        actions_executed: r.actions_executed,
    };
    let mut run = Run::new(command, seed, &s, &base_dir(&a.out));
    run.manifest.count("episodes", r.episodes as u64);
    run.manifest.count("successes", r.successes as u64);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    run.bytes(&a.out, json.as_bytes())?;
    if let Some(p) = &a.episodes_out {
        run.jsonl(p, &r.records)?;
    }
    finish_file_run(run, &a.out)
}

fn cell_name(r: &RunReport) -> String {
    format!("{}-seed{}", r.variant, r.seed)
}

fn experiment(a: Experiment, command: Vec<String>) -> Result<(), CliError> {
    let jobs = check_jobs(a.jobs)?;
    let source = Config::load(&a.matrix)?;
    let mut m = parse_matrix(&source)?;
    m.cfg.jobs = jobs;
    log::info!("{} variant(s) x {} seed(s), config {}", m.variants.len(), m.seeds.len(), m.cfg.hash());
    let reports = run_matrix(&m.variants, &m.seeds, &m.cfg)?;
    let mut settings = Settings::load("experiment", None)?;
    settings.effective = source;
    let seed = m.seeds.first().copied().unwrap_or(0);
    let mut run = Run::new(command, seed, &settings, &a.out);
    run.manifest.config_hash = Some(m.cfg.hash());
    run.manifest.count("cells", reports.len() as u64);
    for r in &reports {
        let name = cell_name(r);
        let json = serde_json::to_string_pretty(r).expect("report serializes") + "\n";
        run.bytes(&a.out.join("cells").join(format!("{name}.json")), json.as_bytes())?;
        if !r.losses.is_empty() {
            run.bytes(&a.out.join("cells").join(format!("{name}-loss.csv")), loss_curve_csv(&r.losses).as_bytes())?;
        }
    }
    run.jsonl(&a.out.join("reports.jsonl"), &reports)?;
    let table = compare(&reports, m.cfg.theta);
    run.bytes(&a.out.join("summary.md"), table.to_markdown().as_bytes())?;
    run.bytes(&a.out.join("summary.csv"), table.to_csv().as_bytes())?;
    print!("{}", table.to_markdown());
    run.finish(&a.out.join("manifest.json"))
}

fn check(a: Validate) -> Result<(), CliError> {
    let report = validate(&a.file, a.schema.as_deref())?;
    for v in &report.violations {
        eprintln!("{}:{}: {}", a.file.display(), v.line, v.message);
    }
    println!("{}: {} record(s), {} violation(s)", a.file.display(), report.records, report.violations.len());
    if report.is_valid() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{} violation(s)", report.violations.len())))
    }
}
