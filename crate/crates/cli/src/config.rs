//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [system]
//! kind = manipulator
//! delay = 0.5
//! ```
//!
//! Every key has a default; unknown sections and keys are errors. Lists are
//! comma separated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use delaycomp::closed_loop::{Coupling, LoopConfig};
use delaycomp::dataset::{DatasetSpec, NoiseMode};
use delaycomp::neural::{NnoConfig, Optimizer, TrainConfig};
use delaycomp::{LinearPlant, Manipulator, ManipulatorParams, System};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Linear,
    Manipulator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSection {
    pub kind: SystemKind,
    pub delay: f64,
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub x0: f64,
    pub amplitude: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub torque_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSection {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    /// Half-width of the initial-state spread for randomized runs.
    pub initial_spread: f64,
    pub epsilon: f64,
    pub coupling_iters: usize,
    pub coupling_tol: f64,
    pub divergence_threshold: f64,
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSection {
    pub delays: Vec<f64>,
    pub steps: Vec<f64>,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Width and depth of the random models timed when none is supplied.
    pub channels: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySection {
    pub c: Vec<f64>,
    pub seeds: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemSection,
    pub run: LoopSection,
    pub dataset: DatasetSpec,
    pub threads: usize,
    pub nno: NnoConfig,
    pub train: TrainConfig,
    pub bench: BenchSection,
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetSpec::desk_default();
        Self {
            system: SystemSection {
                kind: SystemKind::Manipulator,
                delay: 0.5,
                a: 1.0,
                b: 1.0,
                k: 2.0,
                x0: 1.0,
                amplitude: 0.1,
                alpha: vec![1.0, 1.0],
                beta: vec![1.0, 1.0],
                torque_limit: 50.0,
            },
            run: LoopSection {
                dt: 0.1,
                duration: 10.0,
                seed: 0,
                initial_spread: 0.05,
                epsilon: 0.0,
                coupling_iters: 20,
                coupling_tol: 1e-12,
                divergence_threshold: 1e6,
                trajectories: 25,
            },
            threads: 1,
            nno: NnoConfig::new(4, 2, 5, 64, 2),
            train: TrainConfig::default(),
            dataset,
            bench: BenchSection { delays: vec![0.1, 0.5, 1.0], steps: vec![0.1, 0.05, 0.01], repetitions: 1000, warmup: 20, seed: 0, channels: 16, layers: 2 },
            verify: VerifySection { c: vec![0.5, 1.0, 2.0], seeds: 10, epsilon: 0.05 },
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().or_else(|_| err(format!("{key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>().or_else(|_| err(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse::<u64>().or_else(|_| err(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|s| parse_f64(key, s.trim())).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn noise_mode_name(m: NoiseMode) -> &'static str {
    match m {
        NoiseMode::InitialCondition => "initial",
        NoiseMode::PredictorInjection => "injection",
        NoiseMode::Both => "both",
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).or_else(|e| err(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["system", "loop", "dataset", "nno", "train", "bench", "verify"].contains(&section.as_str()) {
                    return err(format!("line {}: unknown section [{section}]", i + 1));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected key = value", i + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return err(format!("line {}: key {key:?} outside any section", i + 1));
            }
            cfg.set(&section, key, value).map_err(|e| ConfigError(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), ConfigError> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match k {
            "system.kind" => {
                self.system.kind = match v {
                    "linear" => SystemKind::Linear,
                    "manipulator" => SystemKind::Manipulator,
                    _ => return err(format!("{k}: expected linear or manipulator, got {v:?}")),
                }
            }
            "system.delay" => self.system.delay = parse_f64(k, v)?,
            "system.a" => self.system.a = parse_f64(k, v)?,
            "system.b" => self.system.b = parse_f64(k, v)?,
            "system.k" => self.system.k = parse_f64(k, v)?,
            "system.x0" => self.system.x0 = parse_f64(k, v)?,
            "system.amplitude" => self.system.amplitude = parse_f64(k, v)?,
            "system.alpha" => self.system.alpha = parse_list(k, v)?,
            "system.beta" => self.system.beta = parse_list(k, v)?,
            "system.torque_limit" => self.system.torque_limit = parse_f64(k, v)?,

            "loop.dt" => self.run.dt = parse_f64(k, v)?,
            "loop.duration" => self.run.duration = parse_f64(k, v)?,
            "loop.seed" => self.run.seed = parse_u64(k, v)?,
            "loop.initial_spread" => self.run.initial_spread = parse_f64(k, v)?,
            "loop.epsilon" => self.run.epsilon = parse_f64(k, v)?,
            "loop.coupling_iters" => self.run.coupling_iters = parse_usize(k, v)?,
            "loop.coupling_tol" => self.run.coupling_tol = parse_f64(k, v)?,
            "loop.divergence_threshold" => self.run.divergence_threshold = parse_f64(k, v)?,
            "loop.trajectories" => self.run.trajectories = parse_usize(k, v)?,

            "dataset.trajectories" => self.dataset.trajectories = parse_usize(k, v)?,
            "dataset.length" => self.dataset.traj_length = parse_f64(k, v)?,
            "dataset.dt" => self.dataset.dt = parse_f64(k, v)?,
            "dataset.noise_mode" => {
                self.dataset.noise_mode = match v {
                    "initial" => NoiseMode::InitialCondition,
                    "injection" => NoiseMode::PredictorInjection,
                    "both" => NoiseMode::Both,
                    _ => return err(format!("{k}: expected initial, injection or both, got {v:?}")),
                }
            }
            "dataset.noise_lo" => self.dataset.noise_range.0 = parse_f64(k, v)?,
            "dataset.noise_hi" => self.dataset.noise_range.1 = parse_f64(k, v)?,
            "dataset.initial_lo" => self.dataset.initial_range.0 = parse_f64(k, v)?,
            "dataset.initial_hi" => self.dataset.initial_range.1 = parse_f64(k, v)?,
            "dataset.seed" => self.dataset.seed = parse_u64(k, v)?,
            "dataset.test_fraction" => self.dataset.test_fraction = parse_f64(k, v)?,
            "dataset.warmup_samples" => {
                self.dataset.warmup_samples = match v {
                    "true" => true,
                    "false" => false,
                    _ => return err(format!("{k}: expected true or false, got {v:?}")),
                }
            }
            "dataset.threads" => self.threads = parse_usize(k, v)?,

            "nno.channels" => self.nno.channels = parse_usize(k, v)?,
            "nno.layers" => self.nno.layers = parse_usize(k, v)?,

            "train.epochs" => self.train.epochs = parse_usize(k, v)?,
            "train.batch_size" => self.train.batch_size = parse_usize(k, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_f64(k, v)?,
            "train.weight_decay" => self.train.weight_decay = parse_f64(k, v)?,
            "train.lr_decay" => self.train.lr_decay = parse_f64(k, v)?,
            "train.seed" => self.train.seed = parse_u64(k, v)?,
            "train.optimizer" => {
                self.train.optimizer = match v {
                    "adamw" => Optimizer::adamw(),
                    "sgd" => Optimizer::Sgd,
                    _ => return err(format!("{k}: expected adamw or sgd, got {v:?}")),
                }
            }

            "bench.delays" => self.bench.delays = parse_list(k, v)?,
            "bench.steps" => self.bench.steps = parse_list(k, v)?,
            "bench.repetitions" => self.bench.repetitions = parse_usize(k, v)?,
            "bench.warmup" => self.bench.warmup = parse_usize(k, v)?,
            "bench.seed" => self.bench.seed = parse_u64(k, v)?,
            "bench.channels" => self.bench.channels = parse_usize(k, v)?,
            "bench.layers" => self.bench.layers = parse_usize(k, v)?,

            "verify.c" => self.verify.c = parse_list(k, v)?,
            "verify.seeds" => self.verify.seeds = parse_usize(k, v)?,
            "verify.epsilon" => self.verify.epsilon = parse_f64(k, v)?,
            _ => return err(format!("unknown key {key:?} in [{section}]")),
        }
        Ok(())
    }

    /// Derives the dependent fields and runs every module's validation.
    fn validate(&mut self) -> Result<(), ConfigError> {
        let s = &self.system;
        if s.alpha.len() != 2 || s.beta.len() != 2 {
            return err("system.alpha and system.beta take two values");
        }
        self.dataset.delay = s.delay;
        let (n, m) = match s.kind {
            SystemKind::Linear => (1, 1),
            SystemKind::Manipulator => (4, 2),
        };
        self.nno.n = n;
        self.nno.m = m;
        self.nno.steps = delaycomp::util::grid_steps(s.delay, self.dataset.dt)
            .ok_or_else(|| ConfigError("dataset.dt must divide system.delay".into()))?;
        self.build_system()?;
        self.dataset.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.nno.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.threads == 0 {
            return err("dataset.threads must be >= 1");
        }
        if !(self.run.epsilon >= 0.0 && self.verify.epsilon >= 0.0 && self.run.initial_spread >= 0.0) {
            return err("epsilon and initial_spread must be >= 0");
        }
        if self.verify.c.is_empty() || self.verify.c.iter().any(|c| !(*c >= 0.0)) {
            return err("verify.c must list nonnegative decay rates");
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<Box<dyn System + Send + Sync>, ConfigError> {
        let s = &self.system;
        let system: Box<dyn System + Send + Sync> = match s.kind {
            SystemKind::Linear => {
                let plant = LinearPlant::scalar(s.a, s.b, s.k, s.delay)
                    .with_delay(s.delay)
                    .and_then(|p| p.with_nominal_state(vec![s.x0]))
                    .map_err(|e| ConfigError(e.to_string()))?;
                Box::new(plant)
            }
            SystemKind::Manipulator => {
                let params = ManipulatorParams {
                    amplitude: s.amplitude,
                    alpha: [s.alpha[0], s.alpha[1]],
                    beta: [s.beta[0], s.beta[1]],
                    torque_min: [-s.torque_limit; 2],
                    torque_max: [s.torque_limit; 2],
                    ..ManipulatorParams::default()
                };
                Box::new(Manipulator::new(params, s.delay).map_err(|e| ConfigError(e.to_string()))?)
            }
        };
        Ok(system)
    }

    pub fn loop_config(&self, initial_state: Vec<f64>) -> LoopConfig {
        LoopConfig {
            coupling: Coupling { max_iters: self.run.coupling_iters, tol: self.run.coupling_tol },
            divergence_threshold: self.run.divergence_threshold,
            config_hash: Some(self.hash()),
            ..LoopConfig::new(self.run.dt, self.run.duration, initial_state)
        }
    }

    /// Every effective key with its value, sorted.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let s = &self.system;
        let r = &self.run;
        let d = &self.dataset;
        let t = &self.train;
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("system.kind", format!("{:?}", s.kind).to_lowercase());
        for (k, v) in [("delay", s.delay), ("a", s.a), ("b", s.b), ("k", s.k), ("x0", s.x0), ("amplitude", s.amplitude), ("torque_limit", s.torque_limit)] {
            put(&format!("system.{k}"), format!("{v:?}"));
        }
        put("system.alpha", fmt_list(&s.alpha));
        put("system.beta", fmt_list(&s.beta));
        for (k, v) in [("dt", r.dt), ("duration", r.duration), ("initial_spread", r.initial_spread), ("epsilon", r.epsilon), ("coupling_tol", r.coupling_tol), ("divergence_threshold", r.divergence_threshold)] {
            put(&format!("loop.{k}"), format!("{v:?}"));
        }
        put("loop.seed", r.seed.to_string());
        put("loop.coupling_iters", r.coupling_iters.to_string());
        put("loop.trajectories", r.trajectories.to_string());
        put("dataset.trajectories", d.trajectories.to_string());
        put("dataset.length", format!("{:?}", d.traj_length));
        put("dataset.dt", format!("{:?}", d.dt));
        put("dataset.noise_mode", noise_mode_name(d.noise_mode).into());
        put("dataset.noise_lo", format!("{:?}", d.noise_range.0));
        put("dataset.noise_hi", format!("{:?}", d.noise_range.1));
        put("dataset.initial_lo", format!("{:?}", d.initial_range.0));
        put("dataset.initial_hi", format!("{:?}", d.initial_range.1));
        put("dataset.seed", d.seed.to_string());
        put("dataset.test_fraction", format!("{:?}", d.test_fraction));
        put("dataset.warmup_samples", d.warmup_samples.to_string());
        put("nno.channels", self.nno.channels.to_string());
        put("nno.layers", self.nno.layers.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.learning_rate", format!("{:?}", t.learning_rate));
        put("train.weight_decay", format!("{:?}", t.weight_decay));
        put("train.lr_decay", format!("{:?}", t.lr_decay));
        put("train.seed", t.seed.to_string());
        put("train.optimizer", if t.optimizer == Optimizer::Sgd { "sgd" } else { "adamw" }.into());
        put("bench.delays", fmt_list(&self.bench.delays));
        put("bench.steps", fmt_list(&self.bench.steps));
        put("bench.repetitions", self.bench.repetitions.to_string());
        put("bench.warmup", self.bench.warmup.to_string());
        put("bench.seed", self.bench.seed.to_string());
        put("bench.channels", self.bench.channels.to_string());
        put("bench.layers", self.bench.layers.to_string());
        put("verify.c", fmt_list(&self.verify.c));
        put("verify.seeds", self.verify.seeds.to_string());
        put("verify.epsilon", format!("{:?}", self.verify.epsilon));
        // thread count never changes results, so it stays out of the hash
        map
    }

    /// SHA-256 over the canonical listing, hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
