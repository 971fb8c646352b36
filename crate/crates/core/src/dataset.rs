//! Supervised `(X(t), U[t-D, t]) → P` pairs from noisy closed-loop rollouts.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::closed_loop::{run_closed_loop_with, LoopConfig, LoopError, PredictorHandle};
use crate::dynamics::System;
use crate::predictor::{
    predict_successive, self_consistency_residual, ControlHistory, PredictorError, PredictorSolution, Quadrature,
    SolverConfig,
};
use crate::util::{grid_steps, stream_rng};

/// Samples per trajectory are taken at steps `N+1 … K-1` of a `K`-step rollout.
const FIRST_SAMPLE_OFFSET: usize = 1;
const MAX_NONCONVERGED_RATE: f64 = 0.01;
const TARGET_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("{failed} of {total} targets did not converge (rate {rate:.4} > 0.01)")]
    NonConvergence { failed: usize, total: usize, rate: f64 },
    #[error("trajectory {0} diverged")]
    Diverged(usize),
    #[error("unsupported dataset file: {0}")]
    VersionMismatch(String),
    #[error("dataset payload inconsistent with header: {0}")]
    Malformed(String),
    #[error("dataset checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Crc { stored: u32, computed: u32 },
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// `X(0)` = nominal + `Uniform(initial_range)`.
    InitialCondition,
    /// `Uniform(noise_range)` added to the prediction fed to κ at every step.
    PredictorInjection,
    Both,
}

impl NoiseMode {
    fn code(self) -> u8 {
        match self {
            Self::InitialCondition => 0,
            Self::PredictorInjection => 1,
            Self::Both => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Self::InitialCondition, Self::PredictorInjection, Self::Both].into_iter().find(|m| m.code() == c)
    }

    fn injects(self) -> bool {
        matches!(self, Self::PredictorInjection | Self::Both)
    }

    fn perturbs_initial(self) -> bool {
        matches!(self, Self::InitialCondition | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub trajectories: usize,
    /// Rollout length `T` (seconds).
    pub traj_length: f64,
    pub dt: f64,
    pub delay: f64,
    pub noise_mode: NoiseMode,
    /// Predictor-injection noise bounds.
    pub noise_range: (f64, f64),
    /// Initial-condition spread around the nominal state.
    pub initial_range: (f64, f64),
    pub seed: u64,
    /// Fraction of trajectories held out for testing.
    pub test_fraction: f64,
    /// Also emit samples while the initial input function is still in the
    /// window (`t < D`). Off by default.
    pub warmup_samples: bool,
}

impl DatasetSpec {
    /// 200 trajectories of 10 s at `dt = 0.1`, `D = 0.5`, injection noise ±0.05.
    pub fn desk_default() -> Self {
        Self {
            trajectories: 200,
            traj_length: 10.0,
            dt: 0.1,
            delay: 0.5,
            noise_mode: NoiseMode::PredictorInjection,
            noise_range: (-0.05, 0.05),
            initial_range: (-0.05, 0.05),
            seed: 0,
            test_fraction: 0.1,
            warmup_samples: false,
        }
    }

    /// `(N, K)`: grid steps per delay and per rollout.
    pub fn validate(&self) -> Result<(usize, usize), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.into()));
        let n = grid_steps(self.delay, self.dt);
        let k = grid_steps(self.traj_length, self.dt);
        let (Some(n), Some(k)) = (n, k) else {
            return bad("dt must divide both the delay and the trajectory length");
        };
        if self.trajectories == 0 {
            return bad("at least one trajectory is required");
        }
        for (name, (lo, hi)) in [("noise_range", self.noise_range), ("initial_range", self.initial_range)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(DatasetError::InvalidSpec(format!("{name} must satisfy lo <= hi")));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if k < self.first_sample_step(n) + 1 {
            return bad("trajectory too short to emit samples");
        }
        Ok((n, k))
    }

    fn first_sample_step(&self, n_delay: usize) -> usize {
        if self.warmup_samples {
            0
        } else {
            n_delay + FIRST_SAMPLE_OFFSET
        }
    }

    pub fn samples_per_trajectory(&self) -> Option<usize> {
        let (n, k) = self.validate().ok()?;
        Some(k - self.first_sample_step(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub hist: ControlHistory,
    /// Noise-free predictor from successive approximations at tol 1e-7.
    pub target: PredictorSolution,
    pub traj_id: usize,
    pub step_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub system: String,
    pub samples: Vec<Sample>,
    /// Sample indices; the split is by trajectory.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &Sample> {
        self.test.iter().map(|&i| &self.samples[i])
    }

    /// Reassigns train/test by trajectory with a seeded shuffle.
    pub fn resplit(&mut self, test_fraction: f64, seed: u64) {
        let (train, test) = split_by_trajectory(&self.samples, self.spec.trajectories, test_fraction, seed);
        self.train = train;
        self.test = test;
    }
}

fn split_by_trajectory(samples: &[Sample], trajectories: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..trajectories).collect();
    ids.shuffle(&mut stream_rng(seed, u64::MAX));
    let mut n_test = (trajectories as f64 * test_fraction).round() as usize;
    if test_fraction > 0.0 && trajectories >= 2 {
        n_test = n_test.clamp(1, trajectories - 1);
    }
    let mut is_test = vec![false; trajectories];
    ids[..n_test].iter().for_each(|&t| is_test[t] = true);
    (0..samples.len()).partition(|&i| !is_test[samples[i].traj_id])
}

/// Single-threaded [`generate_dataset_with`].
pub fn generate_dataset(spec: &DatasetSpec, system: &dyn System) -> Result<Dataset, DatasetError> {
    generate_dataset_with(spec, system, 1)
}

/// Rolls out `spec.trajectories` closed loops driven by the successive
/// predictor (optionally noise-injected) and records a sample at each step
/// after the history buffer has filled. Trajectory `i` draws from its own
/// seeded stream, so any thread count gives the same dataset.
pub fn generate_dataset_with(spec: &DatasetSpec, system: &dyn System, threads: usize) -> Result<Dataset, DatasetError> {
    let (n_delay, n_steps) = spec.validate()?;
    if (spec.delay - system.delay()).abs() > 1e-12 {
        return Err(DatasetError::InvalidSpec(format!(
            "spec delay {} differs from system delay {}",
            spec.delay,
            system.delay()
        )));
    }
    let threads = threads.clamp(1, spec.trajectories);
    let mut per_traj: Vec<Option<Result<(Vec<Sample>, usize), DatasetError>>> =
        (0..spec.trajectories).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = spec.trajectories.div_ceil(threads);
        for (c, slots) in per_traj.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(rollout(spec, system, c * chunk + j, n_delay, n_steps));
                }
            });
        }
    });

    let mut samples = Vec::new();
    let mut failed = 0;
    for r in per_traj {
        let (s, f) = r.expect("every trajectory slot filled")?;
        samples.extend(s);
        failed += f;
    }
    let total = samples.len();
    let rate = failed as f64 / total.max(1) as f64;
    if rate > MAX_NONCONVERGED_RATE {
        return Err(DatasetError::NonConvergence { failed, total, rate });
    }
    let (train, test) = split_by_trajectory(&samples, spec.trajectories, spec.test_fraction, spec.seed);
    Ok(Dataset { spec: spec.clone(), system: system.name().to_string(), samples, train, test })
}

fn rollout(
    spec: &DatasetSpec,
    system: &dyn System,
    traj: usize,
    n_delay: usize,
    n_steps: usize,
) -> Result<(Vec<Sample>, usize), DatasetError> {
    let mut rng = stream_rng(spec.seed, traj as u64);
    let mut x0 = system.nominal_state();
    if spec.noise_mode.perturbs_initial() {
        let (lo, hi) = spec.initial_range;
        let k = system.perturbed_channels().min(x0.len());
        if hi > lo {
            x0[..k].iter_mut().for_each(|v| *v += rng.gen_range(lo..hi));
        }
    }
    let noise_seed: u64 = rng.gen();
    let solver = SolverConfig { tol: TARGET_TOL, ..SolverConfig::default() };
    let base = PredictorHandle::Successive(solver);
    let handle = if spec.noise_mode.injects() {
        let (lo, hi) = spec.noise_range;
        PredictorHandle::Perturbed { inner: Box::new(base), lo, hi, seed: noise_seed }
    } else {
        base
    };
    let cfg = LoopConfig::new(spec.dt, spec.traj_length, x0);
    let first = spec.first_sample_step(n_delay);
    let mut samples = Vec::with_capacity(n_steps - first);
    let mut failed = 0;
    let rec = run_closed_loop_with(system, &handle, &cfg, |view| {
        if view.step < first || view.step >= n_steps {
            return Ok(());
        }
        let out = predict_successive(system, view.x, view.history, &solver)?;
        failed += usize::from(!out.converged);
        samples.push(Sample {
            x: view.x.to_vec(),
            hist: view.history.clone(),
            target: out.solution,
            traj_id: traj,
            step_id: view.step,
        });
        Ok(())
    })?;
    if rec.meta.diverged {
        return Err(DatasetError::Diverged(traj));
    }
    Ok((samples, failed))
}

/// Worst self-consistency residual over a seeded random subset of samples.
pub fn audit_targets(ds: &Dataset, system: &dyn System, fraction: f64, seed: u64) -> f64 {
    let count = ((ds.len() as f64 * fraction).ceil() as usize).clamp(1.min(ds.len()), ds.len());
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    idx[..count]
        .iter()
        .map(|&i| {
            let s = &ds.samples[i];
            self_consistency_residual(system, &s.x, &s.hist, &s.target, Quadrature::Trapezoid)
        })
        .fold(0.0, f64::max)
}

const MAGIC: &[u8; 4] = b"DSET";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8], DatasetError> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DatasetError::Malformed(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, k: usize) -> Result<Vec<f64>, DatasetError> {
        (0..k).map(|_| self.f64()).collect()
    }
}

/// `"DSET"`, version, spec header, packed samples, split, CRC32.
pub fn write_dataset(ds: &Dataset, mut out: impl Write) -> Result<(), DatasetError> {
    let s = &ds.spec;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(s.trajectories);
    w.f64s(&[s.traj_length, s.dt, s.delay]);
    w.0.push(s.noise_mode.code());
    w.0.push(u8::from(s.warmup_samples));
    w.f64s(&[s.noise_range.0, s.noise_range.1, s.initial_range.0, s.initial_range.1, s.test_fraction]);
    w.u64(s.seed);
    w.u32(ds.system.len());
    w.0.extend_from_slice(ds.system.as_bytes());
    let (n, m, steps) = ds
        .samples
        .first()
        .map_or((0, 0, 0), |x| (x.x.len(), x.hist.input_dim(), x.hist.steps()));
    w.u32(n);
    w.u32(m);
    w.u32(steps);
    w.u64(ds.samples.len() as u64);
    for sample in &ds.samples {
        w.u32(sample.traj_id);
        w.u32(sample.step_id);
        w.f64(sample.hist.t_now());
        w.f64s(&sample.x);
        w.f64s(sample.hist.as_flat());
        w.f64s(sample.target.as_flat());
    }
    for idx in [&ds.train, &ds.test] {
        w.u64(idx.len() as u64);
        idx.iter().for_each(|&i| w.u32(i));
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&w.0)?;
    Ok(())
}

pub fn read_dataset(mut input: impl Read) -> Result<Dataset, DatasetError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(DatasetError::VersionMismatch("bad magic".into()));
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body]);
    let mut r = Reader { bytes: &bytes[..body], pos: 4 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(DatasetError::VersionMismatch(format!("version {version}")));
    }
    if stored != computed {
        return Err(DatasetError::Crc { stored, computed });
    }
    let trajectories = r.u32()?;
    let (traj_length, dt, delay) = (r.f64()?, r.f64()?, r.f64()?);
    let mode = NoiseMode::from_code(r.u8()?).ok_or_else(|| DatasetError::Malformed("noise mode".into()))?;
    let warmup_samples = match r.u8()? {
        0 => false,
        1 => true,
        _ => return Err(DatasetError::Malformed("warmup flag".into())),
    };
    let v = r.f64s(5)?;
    let seed = r.u64()?;
    let name_len = r.u32()?;
    let system = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| DatasetError::Malformed("name".into()))?;
    let (n, m, steps) = (r.u32()?, r.u32()?, r.u32()?);
    let count = r.u64()? as usize;
    let spec = DatasetSpec {
        trajectories,
        traj_length,
        dt,
        delay,
        noise_mode: mode,
        noise_range: (v[0], v[1]),
        initial_range: (v[2], v[3]),
        seed,
        test_fraction: v[4],
        warmup_samples,
    };
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let traj_id = r.u32()?;
        let step_id = r.u32()?;
        let t_now = r.f64()?;
        let x = r.f64s(n)?;
        let hist = ControlHistory::new(delay, dt, m, r.f64s((steps + 1) * m)?, t_now)?;
        let target = PredictorSolution::new(dt, n, r.f64s((steps + 1) * n)?)?;
        samples.push(Sample { x, hist, target, traj_id, step_id });
    }
    let mut idx = || -> Result<Vec<usize>, DatasetError> {
        let len = r.u64()? as usize;
        (0..len)
            .map(|_| {
                let i = r.u32()?;
                if i < count { Ok(i) } else { Err(DatasetError::Malformed(format!("index {i} out of range"))) }
            })
            .collect()
    };
    let train = idx()?;
    let test = idx()?;
    if r.pos != body {
        return Err(DatasetError::Malformed("trailing bytes".into()));
    }
    Ok(Dataset { spec, system, samples, train, test })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// One row per (sample, grid point).
pub fn write_dataset_csv(ds: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    let Some(first) = ds.samples.first() else {
        return writeln!(out, "sample,traj_id,step_id,split,k,theta");
    };
    let (n, m) = (first.x.len(), first.hist.input_dim());
    writeln!(out, "# x: state at t; u: U(t+theta); p: target P(theta); split: 0 train, 1 test")?;
    let mut header = vec!["sample", "traj_id", "step_id", "split", "k", "theta"].join(",");
    (0..n).for_each(|i| header.push_str(&format!(",x{i}")));
    (0..m).for_each(|j| header.push_str(&format!(",u{j}")));
    (0..n).for_each(|i| header.push_str(&format!(",p{i}")));
    writeln!(out, "{header}")?;
    let mut split = vec![0u8; ds.len()];
    ds.test.iter().for_each(|&i| split[i] = 1);
    for (s, sample) in ds.samples.iter().enumerate() {
        let delay = sample.hist.delay();
        for k in 0..sample.hist.points() {
            let mut row = format!(
                "{s},{},{},{},{k},{}",
                sample.traj_id,
                sample.step_id,
                split[s],
                -delay + k as f64 * sample.hist.dt()
            );
            for v in sample.x.iter().chain(sample.hist.value(k)).chain(sample.target.value(k)) {
                row.push_str(&format!(",{v:e}"));
            }
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearPlant, Manipulator, ManipulatorParams};

    fn small_spec() -> DatasetSpec {
        DatasetSpec { trajectories: 3, traj_length: 2.0, ..DatasetSpec::desk_default() }
    }

    #[test]
    fn table_scale_sample_count() {
        let arm = Manipulator::new(ManipulatorParams::default(), 0.5).unwrap();
        let spec = DatasetSpec { trajectories: 2, ..DatasetSpec::desk_default() };
        assert_eq!(spec.samples_per_trajectory(), Some(94));
        let ds = generate_dataset(&spec, &arm).unwrap();
        assert_eq!(ds.len(), 2 * 94);
        assert_eq!(ds.train.len() + ds.test.len(), ds.len());
    }

    #[test]
    fn warmup_samples_cover_the_initial_window() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let spec = DatasetSpec { warmup_samples: true, ..small_spec() };
        assert_eq!(spec.samples_per_trajectory(), Some(20));
        let ds = generate_dataset(&spec, &plant).unwrap();
        let first = &ds.samples[0];
        assert_eq!(first.step_id, 0);
        // only the fresh endpoint can be nonzero at t = 0
        assert!(first.hist.as_flat()[..first.hist.steps()].iter().all(|u| *u == 0.0));
        let plain = generate_dataset(&small_spec(), &plant).unwrap();
        let tail: Vec<_> = ds.samples.iter().filter(|s| s.traj_id == 0 && s.step_id >= 6).collect();
        let base: Vec<_> = plain.samples.iter().filter(|s| s.traj_id == 0).collect();
        assert_eq!(tail, base);

        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        assert_eq!(read_dataset(bytes.as_slice()).unwrap(), ds);
    }

    #[test]
    fn targets_are_anchored_and_consistent() {
        let arm = Manipulator::new(ManipulatorParams::default(), 0.5).unwrap();
        let ds = generate_dataset(&small_spec(), &arm).unwrap();
        for s in &ds.samples {
            assert_eq!(s.target.value(0), &s.x[..]);
        }
        assert!(audit_targets(&ds, &arm, 1.0, 0) <= 1e-6);
    }

    #[test]
    fn same_seed_same_dataset_any_thread_count() {
        let arm = Manipulator::new(ManipulatorParams::default(), 0.5).unwrap();
        let a = generate_dataset(&small_spec(), &arm).unwrap();
        let b = generate_dataset_with(&small_spec(), &arm, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_injection_matches_noise_free_loop() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let zero = DatasetSpec { noise_range: (0.0, 0.0), trajectories: 1, ..small_spec() };
        let clean = DatasetSpec { noise_mode: NoiseMode::InitialCondition, initial_range: (0.0, 0.0), ..zero.clone() };
        let a = generate_dataset(&zero, &plant).unwrap();
        let b = generate_dataset(&clean, &plant).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn split_is_by_trajectory() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let spec = DatasetSpec { trajectories: 10, test_fraction: 0.3, ..small_spec() };
        let ds = generate_dataset(&spec, &plant).unwrap();
        let train_ids: std::collections::HashSet<_> = ds.train_samples().map(|s| s.traj_id).collect();
        let test_ids: std::collections::HashSet<_> = ds.test_samples().map(|s| s.traj_id).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        assert_eq!(test_ids.len(), 3);
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let ds = generate_dataset(&small_spec(), &plant).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, ds);
        let mid = buf.len() / 2;
        buf[mid] ^= 1;
        assert!(matches!(read_dataset(&buf[..]), Err(DatasetError::Crc { .. })));
        buf[0] = b'Z';
        assert!(matches!(read_dataset(&buf[..]), Err(DatasetError::VersionMismatch(_))));
    }

    #[test]
    fn csv_rows_per_grid_point() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let ds = generate_dataset(&small_spec(), &plant).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
        assert_eq!(rows, ds.len() * 6);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_grid = DatasetSpec { dt: 0.3, ..small_spec() };
        assert!(bad_grid.validate().is_err());
        let bad_noise = DatasetSpec { noise_range: (0.1, -0.1), ..small_spec() };
        assert!(bad_noise.validate().is_err());
    }
}
