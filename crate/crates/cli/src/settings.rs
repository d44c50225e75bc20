//! Resolution of effective settings: command-line flag, then the verb's
//! section of `--config`, then the file's top level, then the default.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use forge_core::experiment::{ExperimentConfig, VariantName};
use forge_core::flow::NetInit;
use forge_core::io::config::Config;
use forge_core::sim::{TaskConfig, TaskKind};

use crate::CliError;

pub struct Settings {
    file: Config,
    verb: String,
    /// Every resolved value; hashed into the manifest.
    pub effective: Config,
}

impl Settings {
    pub fn load(verb: &str, path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        Ok(Self { file, verb: verb.to_string(), effective: Config::default() })
    }

    fn lookup(&self, key: &str) -> Option<&str> {
        self.file.get(&format!("{}.{key}", self.verb)).or_else(|| self.file.get(key))
    }

    pub fn pick<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let v = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(s) => parse_value(key, s)?,
                None => default,
            },
        };
        self.effective.set(key, v.to_string());
        Ok(v)
    }

    pub fn pick_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.lookup(key).map(|s| parse_value(key, s)).transpose()?,
        };
        if let Some(v) = &v {
            self.effective.set(key, v.to_string());
        }
        Ok(v)
    }

    /// Simulator geometry from `--task-config`, else the `[task]` section.
    pub fn task_config(&mut self, path: Option<&Path>) -> Result<TaskConfig, CliError> {
        let cfg = match path {
            Some(p) => TaskConfig::from_config(&Config::load(p)?)?,
            None => TaskConfig::from_config(&self.file.section("task"))?,
        };
        let text = cfg.to_config_text();
        for (k, v) in text.lines().filter_map(|l| l.split_once(" = ")) {
            self.effective.set(&format!("task.{k}"), v);
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        self.effective.hash()
    }
}

fn parse_value<T: FromStr>(key: &str, s: &str) -> Result<T, CliError> {
    s.parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse {s:?}")))
}

pub fn parse_task(s: &str) -> Result<TaskKind, CliError> {
    s.parse().map_err(CliError::Usage)
}

pub fn parse_init(s: &str) -> Result<NetInit, CliError> {
    match s {
        "zero-head" | "zero_head" => Ok(NetInit::ZeroHead),
        "random-head" | "random_head" => Ok(NetInit::RandomHead),
        other => Err(CliError::Usage(format!("unknown init {other:?} (expected zero-head, random-head)"))),
    }
}

/// A parsed matrix file.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub variants: Vec<VariantName>,
    pub seeds: Vec<u64>,
    pub cfg: ExperimentConfig,
    pub source: Config,
}

/// Top-level keys `variants`, `seeds`, `task`, `demos`, `theta`, plus
/// `[train]`, `[eval]`, `[pretrain]`, `[encoder]`, `[corpus]` and `[task]`
/// sections. Anything not given keeps the experiment defaults.
pub fn parse_matrix(c: &Config) -> Result<Matrix, CliError> {
    let d = ExperimentConfig::default();
    let mut cfg = d.clone();
    let variants = c.get_list("variants");
    let variants: Vec<VariantName> = if variants.is_empty() {
        vec![VariantName::Random, VariantName::OutDomain, VariantName::InDomain]
    } else {
        variants.iter().map(|v| v.parse()).collect::<Result<_, _>>()?
    };
    let seeds = c.get_list("seeds");
    let seeds: Vec<u64> = if seeds.is_empty() {
        (1..=5).collect()
    } else {
        seeds.iter().map(|s| parse_value("seeds", s)).collect::<Result<_, _>>()?
    };
    if let Some(t) = c.get("task") {
        cfg.task = parse_task(t)?;
    }
    cfg.task_cfg = TaskConfig::from_config(&c.section("task"))?;
    cfg.demos = c.get_or("demos", d.demos)?;
    cfg.theta = c.get_or("theta", d.theta)?;

    let t = c.section("train");
    cfg.train.lr = t.get_or("lr", d.train.lr)?;
    cfg.train.steps = t.get_or("steps", d.train.steps)?;
    cfg.train.batch_size = t.get_or("batch_size", d.train.batch_size)?;
    cfg.train.weight_decay = t.get_or("weight_decay", d.train.weight_decay)?;
    if let Some(init) = t.get("init") {
        cfg.net_init = parse_init(init)?;
    }

    let e = c.section("eval");
    cfg.eval_every = e.get_or("every", d.eval_every)?;
    cfg.eval_episodes = e.get_or("episodes", d.eval_episodes)?;
    cfg.final_eval_episodes = e.get_or("final_episodes", d.final_eval_episodes)?;

    let p = c.section("pretrain");
    cfg.pretrain.steps = p.get_or("steps", d.pretrain.steps)?;
    cfg.pretrain.batch_size = p.get_or("batch_size", d.pretrain.batch_size)?;
    cfg.pretrain.lr = p.get_or("lr", d.pretrain.lr)?;
    cfg.pretrain.hidden = p.get_or("hidden", d.pretrain.hidden)?;

    let n = c.section("encoder");
    cfg.encoder.hidden = n.get_or("hidden", d.encoder.hidden)?;
    cfg.encoder.tokens = n.get_or("tokens", d.encoder.tokens)?;
    cfg.encoder.token_dim = n.get_or("token_dim", d.encoder.token_dim)?;

    let k = c.section("corpus");
    cfg.in_domain_episodes = k.get_or("in_domain_episodes", d.in_domain_episodes)?;
    cfg.out_domain_records = k.get_or("out_domain_records", d.out_domain_records)?;

    cfg.validate()?;
    Ok(Matrix { variants, seeds, cfg, source: c.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_sections_beat_top_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "seed = 1\nepisodes = 3\n[collect-demos]\nepisodes = 7\n").unwrap();
        let mut s = Settings::load("collect-demos", Some(&p)).unwrap();
        assert_eq!(s.pick("episodes", None, 0usize).unwrap(), 7);
        assert_eq!(s.pick("seed", None, 0u64).unwrap(), 1);
        assert_eq!(s.pick("seed", Some(9u64), 0).unwrap(), 9);
        assert_eq!(s.pick("missing", None, 4u32).unwrap(), 4);
        assert_eq!(s.effective.get("seed"), Some("9"));
    }

    #[test]
    fn bad_value_is_usage_error() {
        let mut s = Settings::load("x", None).unwrap();
        s.file.set("episodes", "many");
        assert!(matches!(s.pick("episodes", None, 0usize), Err(CliError::Usage(_))));
    }

    #[test]
    fn matrix_defaults_and_overrides() {
        let m = parse_matrix(&Config::parse("").unwrap()).unwrap();
        assert_eq!(m.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(m.cfg, ExperimentConfig::default());
        let c = Config::parse("variants = random, in_domain\nseeds = 3\ntask = reach\n[train]\nsteps = 10\n[task]\nmax_steps = 40\n")
            .unwrap();
        let m = parse_matrix(&c).unwrap();
        assert_eq!(m.variants, vec![VariantName::Random, VariantName::InDomain]);
        assert_eq!(m.seeds, vec![3]);
        assert_eq!(m.cfg.task, TaskKind::Reach);
        assert_eq!(m.cfg.train.steps, 10);
        assert_eq!(m.cfg.task_cfg.max_steps, 40);
        assert!(parse_matrix(&Config::parse("variants = vibes\n").unwrap()).is_err());
    }
}
