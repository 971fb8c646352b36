//! Wall-clock timing of the numerical and neural predictors over a grid of
//! delays and step sizes.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

use crate::dynamics::System;
use crate::neural::{encode_input, nno_forward, NnoConfig, NnoModel};
use crate::predictor::{ControlHistory, PredictorError, SolverConfig, SuccessiveSolver};
use crate::util::{grid_steps, mean, median, std_dev, stream_rng};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid bench spec: {0}")]
    InvalidSpec(String),
    #[error("malformed report line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Neural(#[from] crate::neural::NnoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictorKind {
    /// One Picard sweep from the constant guess.
    SingleIteration,
    /// Picard iteration to the solver tolerance.
    FullConvergence,
    /// One neural operator forward pass, encoding excluded.
    NnoForward,
}

impl PredictorKind {
    pub const ALL: [Self; 3] = [Self::SingleIteration, Self::FullConvergence, Self::NnoForward];

    pub fn is_numerical(self) -> bool {
        self != Self::NnoForward
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SingleIteration => "single_iteration",
            Self::FullConvergence => "full_convergence",
            Self::NnoForward => "nno_forward",
        })
    }
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_iteration" => Ok(Self::SingleIteration),
            "full_convergence" => Ok(Self::FullConvergence),
            "nno_forward" => Ok(Self::NnoForward),
            other => Err(format!("unknown predictor kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub delays: Vec<f64>,
    pub steps: Vec<f64>,
    pub repetitions: usize,
    pub warmup: usize,
    pub kinds: Vec<PredictorKind>,
    pub solver: SolverConfig,
    /// Width of fresh random models used when no trained model fits a grid.
    pub channels: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            delays: vec![0.1, 0.5, 1.0],
            steps: vec![0.1, 0.05, 0.01],
            repetitions: 1000,
            warmup: 20,
            kinds: PredictorKind::ALL.to_vec(),
            solver: SolverConfig::default(),
            channels: 16,
            layers: 2,
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.delays.iter().chain(&self.steps).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(BenchError::InvalidSpec("delays and step sizes must be positive".into()));
        }
        for &d in &self.delays {
            for &dt in &self.steps {
                if grid_steps(d, dt).is_none() {
                    return Err(BenchError::InvalidSpec(format!("dt={dt} does not divide D={d}")));
                }
            }
        }
        if self.channels == 0 || self.layers == 0 {
            return Err(BenchError::InvalidSpec("channels and layers must be >= 1".into()));
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub delay: f64,
    pub dt: f64,
    pub grid_steps: usize,
    pub kind: PredictorKind,
    pub repetitions: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    /// `key=value` environment notes (CPU, build).
    pub environment: Vec<(String, String)>,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn cell(&self, delay: f64, dt: f64, kind: PredictorKind) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && (c.delay - delay).abs() < 1e-12 && (c.dt - dt).abs() < 1e-12)
    }

    /// Median latency of `kind` against `N`, averaging cells with equal `N`,
    /// sorted by `N`.
    pub fn median_by_steps(&self, kind: PredictorKind) -> Vec<(usize, f64)> {
        let mut groups: Vec<(usize, Vec<f64>)> = Vec::new();
        for c in self.cells.iter().filter(|c| c.kind == kind) {
            match groups.iter_mut().find(|(n, _)| *n == c.grid_steps) {
                Some((_, v)) => v.push(c.median_ms),
                None => groups.push((c.grid_steps, vec![c.median_ms])),
            }
        }
        let mut out: Vec<(usize, f64)> = groups.into_iter().map(|(n, v)| (n, mean(&v))).collect();
        out.sort_by_key(|(n, _)| *n);
        out
    }

    /// Whether the per-`N` medians of `kind` never decrease by more than
    /// `tolerance` (relative).
    pub fn is_monotone_in_steps(&self, kind: PredictorKind, tolerance: f64) -> bool {
        self.median_by_steps(kind).windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - tolerance))
    }
}

fn environment() -> Vec<(String, String)> {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).map(|l| l.split(':').nth(1).unwrap_or("").trim().to_string()))
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let build = format!("{} debug_assertions={} {}", env!("CARGO_PKG_VERSION"), cfg!(debug_assertions), std::env::consts::OS);
    vec![
        ("cpu".into(), cpu),
        ("build".into(), build.clone()),
        ("build_hash".into(), format!("{:08x}", crc32fast::hash(build.as_bytes()))),
    ]
}

/// Smooth random inputs: a state near the nominal one and a history around
/// the controller's output there.
fn bench_inputs(system: &dyn System, delay: f64, dt: f64, count: usize, seed: u64, cell: u64) -> Result<Vec<(Vec<f64>, ControlHistory)>, BenchError> {
    let mut rng = stream_rng(seed, cell);
    let nominal = system.nominal_state();
    let m = system.input_dim();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = nominal.iter().map(|v| v + rng.gen_range(-0.1..=0.1)).collect();
        let mut base = vec![0.0; m];
        system.control(&x, 0.0, &mut base);
        let amp: Vec<f64> = base.iter().map(|b| 0.1 * (1.0 + b.abs()) * rng.gen_range(-1.0..=1.0)).collect();
        let freq: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..=3.0)).collect();
        let hist = ControlHistory::from_fn(delay, dt, m, 0.0, |th| {
            (0..m).map(|i| base[i] + amp[i] * (freq[i] * th).sin()).collect()
        })?;
        out.push((x, hist));
    }
    Ok(out)
}

const DISTINCT_INPUTS: usize = 8;

/// Everything one `(D, dt)` cell needs, prepared before any timing.
struct Prepared {
    delay: f64,
    dt: f64,
    steps: usize,
    inputs: Vec<(Vec<f64>, ControlHistory)>,
    encoded: Vec<nalgebra::DMatrix<f64>>,
    model: NnoModel,
}

/// Times every requested predictor kind on every `(D, dt)` cell.
///
/// Repetitions are interleaved: each round times every cell and kind once,
/// so slow drifts of machine speed hit all cells alike. One repetition runs
/// every prepared input once and records the per-instance average.
///
/// `models` supplies trained networks; a cell without a model of matching
/// grid and dimensions gets a fresh random one (latency does not depend on
/// the weights). Zero repetitions produce an empty report.
pub fn run_bench(spec: &BenchSpec, system: &dyn System, models: &[NnoModel]) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport { environment: environment(), cells: Vec::new() };
    if spec.repetitions == 0 {
        return Ok(report);
    }
    let (n, m) = (system.state_dim(), system.input_dim());
    let mut cells = Vec::new();
    for &delay in &spec.delays {
        for &dt in &spec.steps {
            let steps = grid_steps(delay, dt).expect("validated");
            let inputs = bench_inputs(system, delay, dt, DISTINCT_INPUTS, spec.seed, cells.len() as u64)?;
            let model = match models.iter().find(|md| {
                let c = md.config();
                c.steps == steps && c.n == n && c.m == m
            }) {
                Some(md) => md.clone(),
                None => NnoModel::random(NnoConfig::new(n, m, steps, spec.channels, spec.layers), spec.seed)?,
            };
            let encoded = inputs.iter().map(|(x, h)| encode_input(x, h)).collect();
            cells.push(Prepared { delay, dt, steps, inputs, encoded, model });
        }
    }

    let mut solver = SuccessiveSolver::new();
    let mut once = |cell: &Prepared, kind: PredictorKind| -> Result<f64, BenchError> {
        let start = Instant::now();
        for (i, (x, h)) in cell.inputs.iter().enumerate() {
            match kind {
                PredictorKind::SingleIteration => {
                    std::hint::black_box(solver.single_iteration(system, x, h, spec.solver.quadrature));
                }
                PredictorKind::FullConvergence => {
                    std::hint::black_box(solver.solve(system, x, h, &spec.solver)?);
                }
                PredictorKind::NnoForward => {
                    std::hint::black_box(nno_forward(&cell.model, &cell.encoded[i])?);
                }
            }
        }
        Ok(start.elapsed().as_secs_f64() * 1e3 / cell.inputs.len() as f64)
    };
    for _ in 0..spec.warmup {
        for cell in &cells {
            for &kind in &spec.kinds {
                once(cell, kind)?;
            }
        }
    }
    let mut samples = vec![Vec::with_capacity(spec.repetitions); cells.len() * spec.kinds.len()];
    for _ in 0..spec.repetitions {
        for (c, cell) in cells.iter().enumerate() {
            for (k, &kind) in spec.kinds.iter().enumerate() {
                samples[c * spec.kinds.len() + k].push(once(cell, kind)?);
            }
        }
    }
    for (c, cell) in cells.iter().enumerate() {
        for (k, &kind) in spec.kinds.iter().enumerate() {
            let s = &samples[c * spec.kinds.len() + k];
            report.cells.push(BenchCell {
                delay: cell.delay,
                dt: cell.dt,
                grid_steps: cell.steps,
                kind,
                repetitions: s.len(),
                median_ms: median(s),
                mean_ms: mean(s),
                std_ms: std_dev(s),
            });
        }
    }
    Ok(report)
}

const HEADER: &str = "delay,dt,grid_steps,method,repetitions,median_ms,mean_ms,std_ms";

pub fn write_report_csv(report: &BenchReport, mut out: impl Write) -> std::io::Result<()> {
    for (k, v) in &report.environment {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{HEADER}")?;
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{:e},{:e}",
            c.delay, c.dt, c.grid_steps, c.kind, c.repetitions, c.median_ms, c.mean_ms, c.std_ms
        )?;
    }
    Ok(())
}

pub fn report_to_csv(report: &BenchReport, path: impl AsRef<std::path::Path>) -> Result<(), BenchError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_report_csv(report, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn parse_report_csv(input: impl BufRead) -> Result<BenchReport, BenchError> {
    let mut report = BenchReport::default();
    let mut saw_header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let bad = |msg: String| BenchError::Malformed { line: line_no, msg };
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                report.environment.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != HEADER {
                return Err(bad(format!("expected header {HEADER:?}")));
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        report.cells.push(BenchCell {
            delay: num(f[0])?,
            dt: num(f[1])?,
            grid_steps: int(f[2])?,
            kind: f[3].parse().map_err(bad)?,
            repetitions: int(f[4])?,
            median_ms: num(f[5])?,
            mean_ms: num(f[6])?,
            std_ms: num(f[7])?,
        });
    }
    if !saw_header {
        return Err(BenchError::Malformed { line: 0, msg: "missing header".into() });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Manipulator, ManipulatorParams};

    fn arm() -> Manipulator {
        Manipulator::new(ManipulatorParams::default(), 0.5).unwrap()
    }

    #[test]
    fn zero_repetitions_give_empty_report() {
        let spec = BenchSpec { repetitions: 0, ..BenchSpec::default() };
        let r = run_bench(&spec, &arm(), &[]).unwrap();
        assert!(r.cells.is_empty());
        assert!(!r.environment.is_empty());
    }

    #[test]
    fn non_dividing_step_is_rejected() {
        let spec = BenchSpec { delays: vec![0.5], steps: vec![0.3], ..BenchSpec::default() };
        assert!(matches!(spec.validate(), Err(BenchError::InvalidSpec(_))));
    }

    #[test]
    fn full_grid_csv_round_trip() {
        let spec = BenchSpec { repetitions: 3, warmup: 0, channels: 4, layers: 1, ..BenchSpec::default() };
        let r = run_bench(&spec, &arm(), &[]).unwrap();
        assert_eq!(r.cells.len(), 27);
        assert!(r.cells.iter().all(|c| c.repetitions == 3 && c.median_ms >= 0.0));
        let mut buf = Vec::new();
        write_report_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let data_rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
        assert_eq!(data_rows, 27);
        assert!(text.lines().any(|l| l == HEADER));
        let back = parse_report_csv(&buf[..]).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn steps_grouping_averages_equal_n() {
        let cell = |delay: f64, dt: f64, ms: f64| BenchCell {
            delay,
            dt,
            grid_steps: grid_steps(delay, dt).unwrap(),
            kind: PredictorKind::SingleIteration,
            repetitions: 1,
            median_ms: ms,
            mean_ms: ms,
            std_ms: 0.0,
        };
        let r = BenchReport { environment: vec![], cells: vec![cell(0.1, 0.01, 1.0), cell(1.0, 0.1, 3.0), cell(0.1, 0.1, 0.5)] };
        assert_eq!(r.median_by_steps(PredictorKind::SingleIteration), vec![(1, 0.5), (10, 2.0)]);
        assert!(r.is_monotone_in_steps(PredictorKind::SingleIteration, 0.0));
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(parse_report_csv(&b"nope\n"[..]).is_err());
        let text = format!("{HEADER}\n0.1,0.1,1,warp,1,1,1,0\n");
        assert!(matches!(parse_report_csv(text.as_bytes()), Err(BenchError::Malformed { line: 2, .. })));
    }
}
