mod common;

use std::sync::Arc;

use common::*;
use delaycomp::backstepping::{calibrate_slack, check_iss_bound};
use delaycomp::closed_loop::{compute_metrics, run_closed_loop, LoopConfig, PredictorHandle};
use delaycomp::dataset::{audit_targets, generate_dataset, generate_dataset_with, load_dataset, save_dataset, DatasetSpec};
use delaycomp::neural::{load_model, relative_l2, save_model, train_nno, NnoConfig, TrainConfig};

fn small_spec() -> DatasetSpec {
    DatasetSpec { trajectories: 10, ..linear_dataset_spec() }
}

#[test]
fn data_to_model_to_loop() {
    let dir = tempfile::tempdir().unwrap();
    let plant = linear_plant();
    let ds = generate_dataset(&small_spec(), &plant).unwrap();
    assert_eq!(ds.len(), 10 * small_spec().samples_per_trajectory().unwrap());
    assert!(audit_targets(&ds, &plant, 0.5, 1) < 1e-6);

    save_dataset(&ds, dir.path().join("data.bin")).unwrap();
    let ds = load_dataset(dir.path().join("data.bin")).unwrap();

    let cfg = TrainConfig { epochs: 40, batch_size: 32, ..TrainConfig::default() };
    let out = train_nno(&ds, &cfg, NnoConfig::new(1, 1, 5, 16, 2)).unwrap();
    let first = out.history[0].test;
    let best = out.history[out.best_epoch].test;
    assert!(best < 0.5 * first, "{first} -> {best}");
    save_model(&out.model, dir.path().join("model.nno")).unwrap();
    let model = Arc::new(load_model(dir.path().join("model.nno")).unwrap());
    assert_eq!(relative_l2(&model, ds.test_samples()).unwrap(), relative_l2(&out.model, ds.test_samples()).unwrap());

    let lc = LoopConfig::new(0.1, 5.0, vec![1.2]);
    let exact = run_closed_loop(&plant, &PredictorHandle::exact(), &lc).unwrap();
    let neural = run_closed_loop(&plant, &PredictorHandle::Neural(model), &lc).unwrap();
    assert!(!neural.meta.diverged);
    let (me, mn) = (compute_metrics(&exact), compute_metrics(&neural));
    assert!(mn.max_state_norm < 10.0);
    assert!(mn.mean_prediction >= me.mean_prediction);

    let slack = calibrate_slack(&exact, &plant).unwrap();
    assert_eq!(check_iss_bound(&exact, &plant, 1.0, slack).unwrap().violations, 0);
}

#[test]
fn thread_count_does_not_change_the_dataset() {
    let plant = manipulator();
    let spec = DatasetSpec { trajectories: 5, traj_length: 2.0, ..manipulator_dataset_spec() };
    let one = generate_dataset_with(&spec, &plant, 1).unwrap();
    let three = generate_dataset_with(&spec, &plant, 3).unwrap();
    assert_eq!(one, three);
}
