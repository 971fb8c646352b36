use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use delaycomp::backstepping::{calibrate_slack, March, TargetTrajectory};
use delaycomp::bench::{run_bench, write_report_csv, BenchSpec, PredictorKind};
use delaycomp::closed_loop::{compute_metrics, run_closed_loop, sample_initial_state, write_record_csv, PredictorHandle, TrajectoryRecord};
use delaycomp::dataset::{generate_dataset_with, load_dataset, save_dataset, write_dataset_csv, Dataset};
use delaycomp::neural::{load_model, relative_l2, save_model, train_nno, NnoModel};
use delaycomp::util::stream_rng;
use delaycomp::System;

use crate::config::RunConfig;

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad config, missing file, or any other setup/runtime error: 1.
    Setup(String),
    /// A closed loop crossed the divergence threshold: 2.
    Diverged(String),
    /// Verification found bound violations: 3.
    Violations(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Setup(_) => 1,
            Self::Diverged(_) => 2,
            Self::Violations(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Setup(m) | Self::Diverged(m) | Self::Violations(m) => m,
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn setup<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Setup(format!("{context}: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(setup(&format!("cannot create {}", dir.display())))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(setup(&format!("cannot create {}", path.display())))?))
}

fn io(e: std::io::Error) -> Failure {
    Failure::Setup(format!("write failed: {e}"))
}

fn require(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Setup(format!("{what} not found: {}", path.display())))
    }
}

fn meta_lines(cfg: &RunConfig, seed: u64, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "# config_hash={}", cfg.hash())?;
    writeln!(out, "# seed={seed}")
}

/// Sidecar for binary artifacts, which have no room for comments.
fn write_sidecar(path: &Path, cfg: &RunConfig, seed: u64) -> CmdResult {
    let mut side = path.as_os_str().to_owned();
    side.push(".meta");
    let mut w = create(&PathBuf::from(side))?;
    writeln!(w, "config_hash={}", cfg.hash()).map_err(io)?;
    writeln!(w, "seed={seed}").map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_neural(path: &Path) -> Result<Arc<NnoModel>, Failure> {
    require(path, "model file")?;
    Ok(Arc::new(load_model(path).map_err(setup(&format!("cannot load model {}", path.display())))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictorChoice {
    Exact,
    Successive,
    Neural,
    /// The exact predictor plus bounded noise of size `verify.epsilon`.
    Perturbed,
}

fn build_handle(choice: PredictorChoice, model: Option<&Path>, cfg: &RunConfig, epsilon: f64, seed: u64) -> Result<PredictorHandle, Failure> {
    let base = match choice {
        PredictorChoice::Exact | PredictorChoice::Perturbed => PredictorHandle::exact(),
        PredictorChoice::Successive => PredictorHandle::successive(),
        PredictorChoice::Neural => {
            let path = model.ok_or_else(|| Failure::Setup("--predictor neural needs --model <path>".into()))?;
            let model = load_neural(path)?;
            let c = model.config();
            if c.n != cfg.nno.n || c.m != cfg.nno.m {
                return Err(Failure::Setup(format!("model is for n={}, m={}; system has n={}, m={}", c.n, c.m, cfg.nno.n, cfg.nno.m)));
            }
            PredictorHandle::Neural(model)
        }
    };
    let eps = if choice == PredictorChoice::Perturbed { cfg.verify.epsilon } else { epsilon };
    Ok(if eps > 0.0 { PredictorHandle::perturbed(base, eps, seed) } else { base })
}

fn run(system: &dyn System, handle: &PredictorHandle, cfg: &RunConfig, x0: Vec<f64>) -> Result<TrajectoryRecord, Failure> {
    run_closed_loop(system, handle, &cfg.loop_config(x0)).map_err(setup("closed loop failed"))
}

fn write_metrics(path: &Path, cfg: &RunConfig, record: &TrajectoryRecord) -> CmdResult {
    let m = compute_metrics(record);
    let mut w = create(path)?;
    writeln!(w, "config_hash={}", cfg.hash()).map_err(io)?;
    writeln!(w, "seed={}", cfg.run.seed).map_err(io)?;
    writeln!(w, "predictor={}", record.meta.predictor).map_err(io)?;
    writeln!(w, "diverged={}", record.meta.diverged).map_err(io)?;
    writeln!(w, "nonconverged_steps={}", record.meta.nonconverged_steps).map_err(io)?;
    writeln!(w, "summed_tracking={:e}", m.summed_tracking).map_err(io)?;
    writeln!(w, "mean_prediction={:e}", m.mean_prediction).map_err(io)?;
    writeln!(w, "summed_prediction={:e}", m.summed_prediction).map_err(io)?;
    writeln!(w, "asymptotic_residual={:e}", m.asymptotic_residual).map_err(io)?;
    writeln!(w, "plateau={:e}", m.plateau).map_err(io)?;
    writeln!(w, "max_state_norm={:e}", m.max_state_norm).map_err(io)?;
    w.flush().map_err(io)
}

pub fn simulate(cfg: &RunConfig, predictor: PredictorChoice, model: Option<&Path>, out: &Path) -> CmdResult {
    let system = cfg.build_system().map_err(setup("system"))?;
    let handle = build_handle(predictor, model, cfg, cfg.run.epsilon, cfg.run.seed)?;
    let x0 = system.nominal_state();
    let record = run(system.as_ref(), &handle, cfg, x0)?;
    let mut w = create(&out.join("trajectory.csv"))?;
    write_record_csv(&record, &mut w).map_err(io)?;
    w.flush().map_err(io)?;
    write_metrics(&out.join("metrics.txt"), cfg, &record)?;
    let m = compute_metrics(&record);
    println!("simulate: {} steps, plateau {:.3e}, mean prediction error {:.3e}", record.len(), m.plateau, m.mean_prediction);
    if record.meta.diverged {
        return Err(Failure::Diverged(format!("state exceeded {:e}", cfg.run.divergence_threshold)));
    }
    Ok(())
}

pub fn generate_data(cfg: &RunConfig, threads: usize, out: &Path, csv: Option<&Path>) -> CmdResult {
    let system = cfg.build_system().map_err(setup("system"))?;
    let ds = generate_dataset_with(&cfg.dataset, system.as_ref(), threads).map_err(|e| match e {
        delaycomp::dataset::DatasetError::Diverged(_) => Failure::Diverged(e.to_string()),
        other => Failure::Setup(format!("dataset generation failed: {other}")),
    })?;
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(setup("cannot create output directory"))?;
    }
    save_dataset(&ds, out).map_err(setup("cannot write dataset"))?;
    write_sidecar(out, cfg, cfg.dataset.seed)?;
    if let Some(csv) = csv {
        let mut w = create(csv)?;
        meta_lines(cfg, cfg.dataset.seed, &mut w).map_err(io)?;
        write_dataset_csv(&ds, &mut w).map_err(io)?;
        w.flush().map_err(io)?;
    }
    println!("generate-data: {} samples ({} train, {} test)", ds.len(), ds.train.len(), ds.test.len());
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    require(path, "dataset file")?;
    load_dataset(path).map_err(setup(&format!("cannot load dataset {}", path.display())))
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> CmdResult {
    let ds = load_data(data)?;
    let result = train_nno(&ds, &cfg.train, cfg.nno).map_err(setup("training failed"))?;
    let model_path = out.join("model.nno");
    std::fs::create_dir_all(out).map_err(setup("cannot create output directory"))?;
    save_model(&result.model, &model_path).map_err(setup("cannot write model"))?;
    write_sidecar(&model_path, cfg, cfg.train.seed)?;
    let mut w = create(&out.join("loss_history.csv"))?;
    meta_lines(cfg, cfg.train.seed, &mut w).map_err(io)?;
    writeln!(w, "epoch,train_l2,test_l2,learning_rate").map_err(io)?;
    for h in &result.history {
        writeln!(w, "{},{:e},{:e},{:e}", h.epoch, h.train, h.test, h.learning_rate).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let best = &result.history.get(result.best_epoch);
    println!(
        "train: {} epochs, best epoch {} (test {:.3e})",
        result.history.len(),
        result.best_epoch,
        best.map_or(f64::NAN, |h| h.test)
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, model: &Path, data: Option<&Path>, out: &Path) -> CmdResult {
    let net = load_neural(model)?;
    let (train_l2, test_l2) = match data {
        Some(path) => {
            let ds = load_data(path)?;
            let tr = relative_l2(&net, ds.train_samples()).map_err(setup("evaluation failed"))?;
            let te = if ds.test.is_empty() { f64::NAN } else { relative_l2(&net, ds.test_samples()).map_err(setup("evaluation failed"))? };
            (tr, te)
        }
        None => (f64::NAN, f64::NAN),
    };
    let system = cfg.build_system().map_err(setup("system"))?;
    let handle = PredictorHandle::Neural(net.clone());
    let mut w = create(&out.join("evaluate.csv"))?;
    meta_lines(cfg, cfg.run.seed, &mut w).map_err(io)?;
    writeln!(w, "row,train_l2,test_l2,tracking_error,prediction_error,plateau,diverged,param_count").map_err(io)?;
    let (mut tracking, mut prediction, mut worst_plateau, mut diverged) = (0.0, 0.0, 0.0_f64, 0usize);
    let trials = cfg.run.trajectories;
    for i in 0..trials {
        let x0 = sample_initial_state(system.as_ref(), &mut stream_rng(cfg.run.seed, i as u64), cfg.run.initial_spread);
        let record = run(system.as_ref(), &handle, cfg, x0)?;
        let m = compute_metrics(&record);
        tracking += m.summed_tracking;
        prediction += m.summed_prediction;
        worst_plateau = worst_plateau.max(m.plateau);
        diverged += record.meta.diverged as usize;
        writeln!(w, "{i},,,{:e},{:e},{:e},{},", m.summed_tracking, m.summed_prediction, m.plateau, record.meta.diverged).map_err(io)?;
    }
    let n = trials.max(1) as f64;
    writeln!(
        w,
        "summary,{:e},{:e},{:e},{:e},{:e},{},{}",
        train_l2,
        test_l2,
        tracking / n,
        prediction / n,
        worst_plateau,
        diverged,
        net.param_count()
    )
    .map_err(io)?;
    w.flush().map_err(io)?;
    println!(
        "evaluate: train {train_l2:.3e}, test {test_l2:.3e}, tracking {:.3e}, prediction {:.3e}, {} params",
        tracking / n,
        prediction / n,
        net.param_count()
    );
    if diverged > 0 {
        return Err(Failure::Diverged(format!("{diverged} of {trials} trajectories diverged")));
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig, models: &[PathBuf], out: &Path) -> CmdResult {
    let system = cfg.build_system().map_err(setup("system"))?;
    let models = models
        .iter()
        .map(|p| load_neural(p).map(|m| (*m).clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = BenchSpec {
        delays: cfg.bench.delays.clone(),
        steps: cfg.bench.steps.clone(),
        repetitions: cfg.bench.repetitions,
        warmup: cfg.bench.warmup,
        seed: cfg.bench.seed,
        channels: cfg.bench.channels,
        layers: cfg.bench.layers,
        ..BenchSpec::default()
    };
    let mut report = run_bench(&spec, system.as_ref(), &models).map_err(setup("bench failed"))?;
    report.environment.push(("config_hash".into(), cfg.hash()));
    report.environment.push(("seed".into(), cfg.bench.seed.to_string()));
    let mut w = create(&out.join("bench.csv"))?;
    write_report_csv(&report, &mut w).map_err(io)?;
    w.flush().map_err(io)?;
    for kind in PredictorKind::ALL {
        let series: Vec<String> = report.median_by_steps(kind).iter().map(|(n, ms)| format!("N={n}:{ms:.4}ms")).collect();
        println!("bench {kind}: {}", series.join(" "));
    }
    Ok(())
}

pub fn verify(cfg: &RunConfig, predictor: PredictorChoice, model: Option<&Path>, out: &Path) -> CmdResult {
    let system = cfg.build_system().map_err(setup("system"))?;
    let sys = system.as_ref();
    let mut margins = create(&out.join("iss_margins.csv"))?;
    meta_lines(cfg, cfg.run.seed, &mut margins).map_err(io)?;
    writeln!(margins, "trial,c,t,w_sup,bound,margin").map_err(io)?;
    let mut summary = create(&out.join("verify.txt"))?;
    writeln!(summary, "config_hash={}", cfg.hash()).map_err(io)?;
    writeln!(summary, "seed={}", cfg.run.seed).map_err(io)?;

    let mut total_violations = 0usize;
    let mut boundary_failures = 0usize;
    let mut per_c = vec![0usize; cfg.verify.c.len()];
    for trial in 0..cfg.verify.seeds {
        let x0 = sample_initial_state(sys, &mut stream_rng(cfg.run.seed, trial as u64), cfg.run.initial_spread);
        let exact = run(sys, &PredictorHandle::exact(), cfg, x0.clone())?;
        let slack = calibrate_slack(&exact, sys).map_err(setup("slack calibration failed"))?;
        let handle = build_handle(predictor, model, cfg, cfg.run.epsilon, cfg.run.seed.wrapping_add(trial as u64))?;
        let record = run(sys, &handle, cfg, x0)?;
        if record.meta.diverged {
            return Err(Failure::Diverged(format!("trial {trial} diverged")));
        }
        let traj = TargetTrajectory::from_record(&record, sys, March::default()).map_err(setup("target reconstruction failed"))?;
        let target = traj.target_report(slack);
        boundary_failures += (!target.pass) as usize;
        writeln!(
            summary,
            "trial{trial}.slack={slack:e} trial{trial}.max_boundary={:e} trial{trial}.boundary_residual={:e} trial{trial}.transport_residual={:e}",
            target.max_boundary, target.max_residual, target.transport_residual
        )
        .map_err(io)?;
        for (ci, &c) in cfg.verify.c.iter().enumerate() {
            let report = traj.iss_bound(c, slack);
            per_c[ci] += report.violations;
            total_violations += report.violations;
            for (k, margin) in report.margins().iter().enumerate() {
                writeln!(margins, "{trial},{c},{},{:e},{:e},{:e}", report.times[k], report.lhs[k], report.rhs[k], margin).map_err(io)?;
            }
        }
    }
    for (c, v) in cfg.verify.c.iter().zip(&per_c) {
        writeln!(summary, "violations.c={c}={v}").map_err(io)?;
    }
    writeln!(summary, "violations={total_violations}").map_err(io)?;
    writeln!(summary, "boundary_failures={boundary_failures}").map_err(io)?;
    margins.flush().map_err(io)?;
    summary.flush().map_err(io)?;
    println!("verify: {} trials, {total_violations} bound violations, {boundary_failures} boundary failures", cfg.verify.seeds);
    if total_violations + boundary_failures > 0 {
        return Err(Failure::Violations(format!("{total_violations} bound violations, {boundary_failures} boundary failures")));
    }
    Ok(())
}
