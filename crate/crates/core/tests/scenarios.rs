use std::path::Path;

use shipgrid::run::{run_with_models, train_detector, TimeSeries};
use shipgrid::scenario::{load_scenario, parse_scenario, DetectorSource, ScenarioConfig};
use shipgrid::{compute_metrics, run_scenario};

fn shipped(name: &str) -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"));
    load_scenario(&path).unwrap()
}

fn at(ts: &TimeSeries, col: &str, t: f64) -> f64 {
    let i = ts.t().iter().position(|&x| x >= t - 1e-9).unwrap();
    ts.col(col)[i]
}

#[test]
fn nominal_has_no_attack_samples_and_converges() {
    let (ts, _) = run_scenario(&shipped("nominal")).unwrap();
    assert!(ts.col("attack_active").iter().all(|&a| a == 0.0));
    assert!(ts
        .col("inj_v_0")
        .iter()
        .chain(ts.col("inj_i_1"))
        .all(|&x| x == 0.0));
    for k in 0..2 {
        assert!((at(&ts, &format!("v_bar_{k}"), 30.0) - 12_000.0).abs() < 1.0);
    }
}

#[test]
fn drift_pushes_the_target_voltage_up() {
    let (ts, _) = run_scenario(&shipped("drift_v")).unwrap();
    let gap = |t| at(&ts, "v_bar_0", t) - at(&ts, "v_bar_1", t);
    assert!(gap(4.9).abs() < 1.0);
    assert!(gap(15.0) > 50.0);
    assert!(gap(29.0) > gap(15.0));
}

#[test]
fn shutdown_collapses_propulsion_power() {
    let (ts, _) = run_scenario(&shipped("shutdown_18p5")).unwrap();
    let before = at(&ts, "pmm_power", 18.4);
    assert!(before > 1e6);
    assert!(at(&ts, "pmm_power", 19.0) < 0.01 * before);
    assert_eq!(at(&ts, "v_ref_0", 18.5), 0.0);
    assert!(at(&ts, "v_ref_0", 18.4) > 11_000.0);
}

#[test]
fn detector_is_transparent_on_attack_free_runs() {
    let cfg = parse_scenario(
        "name = \"quiet\"\nduration = 6.0\nseed = 2\n[noise]\nvoltage = 0.5\ncurrent = 0.001\n\
         [[detector]]\nsignal = \"i_pu_0\"\nwindow = 10\nmax_epochs = 300\nstride = 5\n",
    )
    .unwrap();
    let (with, _) = run_scenario(&cfg).unwrap();
    let (without, _) = run_scenario(&cfg.dry_run()).unwrap();
    for name in without.names() {
        assert_eq!(with.col(name), without.col(name), "column {name}");
    }
    let m = compute_metrics(&with).unwrap();
    assert_eq!(m.false_positive_samples, 0);
    assert_eq!(m.detection_latency, None);
}

#[test]
fn reconstruction_off_only_flags() {
    let cfg = parse_scenario(
        "name = \"flag_only\"\nduration = 4.0\nseed = 4\n[noise]\nvoltage = 0.5\n\
         [[detector]]\nsignal = \"v_bar_0\"\nwindow = 10\nmax_epochs = 300\nstride = 5\nreconstruct = false\n\
         [[attack]]\nkind = \"drift\"\ntargets = [0]\nramp_rate = 1e5\nthreshold = 60.0\nstart = 3.0\n",
    )
    .unwrap();
    let setup = &cfg.detectors[0];
    let DetectorSource::Train(dcfg) = &setup.source else {
        unreachable!()
    };
    let model = match train_detector(&cfg, setup.signal, dcfg) {
        Ok(m) => m,
        Err(shipgrid::Error::Detector(shipgrid::detector::DetectorError::DidNotConverge {
            model, ..
        })) => *model,
        Err(e) => panic!("{e}"),
    };
    let (ts, _) = run_with_models(&cfg, vec![model]).unwrap();
    let value = ts.col("det_v_bar_0_value");
    let raw: Vec<f64> = ts
        .col("v_bar_0")
        .iter()
        .zip(ts.col("inj_v_0"))
        .map(|(v, i)| v + i)
        .collect();
    assert_eq!(value, raw.as_slice());
    let m = compute_metrics(&ts).unwrap();
    assert!(m.true_positive_samples > 0);
    assert!(m.detection_latency.unwrap() < 0.05);
}
