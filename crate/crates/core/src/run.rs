//! The simulation tick loop and its recorded time series.

use std::collections::VecDeque;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::attack::{self, AccessMatrix, AttackError, AttackKind, Channel};
use crate::control::{self, AgentState, ControlError, SecondaryControlState};
use crate::detector::{self, Decision, DetectorError, DetectorModel, TrainingSet};
use crate::plant::{self, PlantError, PlantState};
use crate::scenario::{DetectorSource, ScenarioConfig, SignalId};

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("injection of attack {index} ({kind}) breaks its stealth condition")]
    NotStealthy { index: usize, kind: AttackKind },
}

#[derive(Debug, Error)]
#[error("tick {tick} (t = {t} s): {source}")]
pub struct RunError {
    pub tick: usize,
    pub t: f64,
    #[source]
    pub source: StepError,
}

/// Column-oriented record of a run on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TimeSeries {
    fn with_columns(names: Vec<String>) -> Self {
        let columns = vec![Vec::new(); names.len()];
        Self { names, columns }
    }

    /// Builds a series from named columns of equal length.
    ///
    /// # Panics
    /// If the name and column counts differ or the columns are ragged.
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        assert_eq!(names.len(), columns.len(), "one name per column");
        if let Some(first) = columns.first() {
            assert!(columns.iter().all(|c| c.len() == first.len()), "ragged columns");
        }
        Self { names, columns }
    }

    fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        for (c, &v) in self.columns.iter_mut().zip(row) {
            c.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.columns[i])
    }

    /// Panicking lookup for columns the run always records.
    pub fn col(&self, name: &str) -> &[f64] {
        self.column(name)
            .unwrap_or_else(|| panic!("no column `{name}` in time series"))
    }

    pub fn t(&self) -> &[f64] {
        self.col("t")
    }

    /// Signals watched by a detector in this run.
    pub fn monitored(&self) -> Vec<String> {
        self.names
            .iter()
            .filter_map(|n| n.strip_prefix("det_")?.strip_suffix("_flag"))
            .map(str::to_string)
            .collect()
    }

    fn is_flag(name: &str) -> bool {
        name == "attack_active" || name.ends_with("_flag")
    }

    /// CSV with a header row. Floats use 17 significant digits so they
    /// round-trip exactly; flags are written as 0/1.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        let flags: Vec<bool> = self.names.iter().map(|n| Self::is_flag(n)).collect();
        let mut record = Vec::with_capacity(self.columns.len());
        for i in 0..self.len() {
            record.clear();
            for (c, &flag) in self.columns.iter().zip(&flags) {
                record.push(if flag {
                    format!("{}", c[i] as u8)
                } else {
                    format!("{:.16e}", c[i])
                });
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<(), crate::Error> {
        let io_err = |source| crate::Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| io_err(e.into()))
    }
}

/// Sliding-window detector guarding one controller-visible signal.
struct Monitor {
    signal: SignalId,
    model: DetectorModel,
    reconstruct: bool,
    window: VecDeque<f64>,
    buf: Vec<f64>,
}

impl Monitor {
    /// Returns `(visible value, anomaly flag, prediction)`. Until the window
    /// fills, samples pass through unclassified.
    fn observe(&mut self, raw: f64) -> Result<(f64, bool, f64), DetectorError> {
        let w = self.model.window();
        if self.window.len() < w {
            self.window.push_back(raw);
            return Ok((raw, false, raw));
        }
        self.buf.clear();
        self.buf.extend(self.window.iter());
        let pred = self.model.predict(&self.buf)?;
        let anomaly = self.model.classify(raw, pred) == Decision::Anomaly;
        let visible = if anomaly && self.reconstruct {
            self.model.reconstruct(&self.buf)?
        } else {
            raw
        };
        self.window.pop_front();
        self.window.push_back(visible);
        Ok((visible, anomaly, pred))
    }
}

/// Trains the detector for `signal` on an attack-free dry run of `cfg`.
pub fn train_detector(
    cfg: &ScenarioConfig,
    signal: SignalId,
    dcfg: &detector::DetectorConfig,
) -> Result<DetectorModel, crate::Error> {
    let (dry, _) = run_with_models(&cfg.dry_run(), Vec::new())?;
    let ts = build_training_set(&dry, signal, dcfg.window, dcfg.stride)?;
    Ok(detector::train(&ts, dcfg)?)
}

/// Sliding-window training samples from a recorded signal; refuses runs
/// containing attack samples.
pub fn build_training_set(
    ts: &TimeSeries,
    signal: SignalId,
    window: usize,
    stride: usize,
) -> Result<TrainingSet, DetectorError> {
    if ts.col("attack_active").iter().any(|&a| a != 0.0) {
        return Err(DetectorError::SeriesContainsAttack);
    }
    let series = ts.column(&signal.to_string()).ok_or(DetectorError::Empty)?;
    TrainingSet::from_series_strided(series, window, stride)
}

/// Runs a scenario, training or loading its detectors first.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(TimeSeries, Vec<DetectorModel>), crate::Error> {
    let mut models = Vec::new();
    for d in &cfg.detectors {
        let model = match &d.source {
            DetectorSource::Model(path) => DetectorModel::load(path)?,
            DetectorSource::Train(dcfg) => match train_detector(cfg, d.signal, dcfg) {
                Ok(m) => m,
                // A model that stopped short of the tolerance is still usable;
                // its radius reflects the residuals it actually achieved.
                Err(crate::Error::Detector(DetectorError::DidNotConverge { model, .. })) => *model,
                Err(e) => return Err(e),
            },
        };
        models.push(model);
    }
    run_with_models(cfg, models)
}

/// Runs a scenario with already-built detector models, one per entry of
/// `cfg.detectors` in order.
pub fn run_with_models(
    cfg: &ScenarioConfig,
    models: Vec<DetectorModel>,
) -> Result<(TimeSeries, Vec<DetectorModel>), crate::Error> {
    assert_eq!(models.len(), cfg.detectors.len(), "one model per detector");
    let n = cfg.n_agents();
    let dt = cfg.dt;
    let w: AccessMatrix = attack::access_matrix(&cfg.graph);
    let mut monitors: Vec<Monitor> = cfg
        .detectors
        .iter()
        .zip(models)
        .map(|(d, model)| Monitor {
            signal: d.signal,
            window: VecDeque::with_capacity(model.window() + 1),
            buf: Vec::with_capacity(model.window()),
            model,
            reconstruct: d.reconstruct,
        })
        .collect();

    let mut names = vec!["t".to_string()];
    for prefix in ["v", "v_bar", "i", "i_pu", "v_ref", "u_v", "u_i", "dv1", "dv2"] {
        names.extend((0..n).map(|k| format!("{prefix}_{k}")));
    }
    names.push("pmm_power".into());
    for prefix in ["inj_v", "inj_i"] {
        names.extend((0..n).map(|k| format!("{prefix}_{k}")));
    }
    names.push("attack_active".into());
    for m in &monitors {
        for suffix in ["flag", "value", "pred"] {
            names.push(format!("det_{}_{suffix}", m.signal));
        }
    }
    let mut series = TimeSeries::with_columns(names);

    let mut state =
        PlantState::equilibrium(&cfg.plant, &vec![cfg.v_ref; n]).map_err(|e| at(0, 0.0, e.into()))?;
    let mut ctrl = SecondaryControlState::new(n, cfg.v_ref, &cfg.gains);
    let mut integral = vec![0.0; n];
    let mut shutdown_latched = false;
    let mut shutdown_targets = vec![false; n];
    for spec in cfg.attacks.iter().filter(|a| a.kind == AttackKind::Shutdown) {
        for &k in &spec.target_agents {
            shutdown_targets[k] = true;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise = |std_dev: f64| {
        if std_dev > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            std_dev * z
        } else {
            0.0
        }
    };

    let steps = cfg.steps();
    let mut row = Vec::with_capacity(series.names.len());
    let mut visible = vec![AgentState::new(0.0, 0.0); n];
    let mut refs = vec![0.0; n];
    let (mut u_v, mut u_i, mut dv1, mut dv2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for tick in 0..=steps {
        let t = tick as f64 * dt;
        let fail = |e: StepError| at(tick, t, e);

        // (1) measurements
        let mut v_bar = vec![0.0; n];
        let mut i_meas = vec![0.0; n];
        for k in 0..n {
            v_bar[k] = state.v[k] + noise(cfg.noise.voltage) + integral[k];
            i_meas[k] = state.i_pu[k] + noise(cfg.noise.current);
        }

        // (2) attack taps on the exchanged values
        let mut inj = attack::Injection::zeros(n);
        for (index, spec) in cfg.attacks.iter().enumerate() {
            let one = attack::injection(t, spec, &w).map_err(|e| fail(e.into()))?;
            if spec.kind != AttackKind::Shutdown
                && !attack::is_stealthy(one.channel(spec.injected_channel()), spec, &w)
                    .map_err(|e| fail(e.into()))?
            {
                return Err(fail(StepError::NotStealthy {
                    index,
                    kind: spec.kind,
                }));
            }
            inj.add(&one);
        }
        for k in 0..n {
            visible[k] = AgentState {
                v_bar: v_bar[k] + inj.voltage[k],
                i_pu: i_meas[k] + inj.current[k],
                integral_u_v: integral[k],
            };
        }

        // (3) detector interposition
        let mut det_row = Vec::with_capacity(3 * monitors.len());
        for m in &mut monitors {
            let k = m.signal.agent;
            let raw = match m.signal.channel {
                Channel::Voltage => visible[k].v_bar,
                Channel::Current => visible[k].i_pu,
            };
            let (value, flag, pred) = m.observe(raw).map_err(|e| fail(e.into()))?;
            match m.signal.channel {
                Channel::Voltage => visible[k].v_bar = value,
                Channel::Current => visible[k].i_pu = value,
            }
            det_row.extend([f64::from(u8::from(flag)), value, pred]);
        }

        // (4) secondary control
        for k in 0..n {
            let (uv, ui) = control::control_input(k, &visible, &cfg.graph).map_err(|e| fail(e.into()))?;
            // The current loop acts on the Laplacian-oriented disagreement
            // (L I^pu)_k = -u^I_k so that sharing errors are driven to zero.
            let (d1, d2) = control::voltage_corrections(k, visible[k].v_bar, -ui, &mut ctrl, dt)
                .map_err(|e| fail(e.into()))?;
            u_v[k] = uv;
            u_i[k] = ui;
            dv1[k] = d1;
            dv2[k] = d2;
            refs[k] = control::local_reference(cfg.v_ref, d1, d2);
        }

        // Shutdown collapses the targets' references from the trigger on.
        if inj.shutdown {
            for k in (0..n).filter(|&k| shutdown_targets[k]) {
                refs[k] = 0.0;
            }
        }

        row.clear();
        row.push(t);
        row.extend(&state.v);
        row.extend(&v_bar);
        row.extend(&state.i);
        row.extend(&state.i_pu);
        row.extend(&refs);
        row.extend(&u_v);
        row.extend(&u_i);
        row.extend(&dv1);
        row.extend(&dv2);
        row.push(state.pmm_power);
        row.extend(&inj.voltage);
        row.extend(&inj.current);
        row.push(f64::from(u8::from(cfg.attacks.iter().any(|a| a.is_active(t)))));
        row.extend(&det_row);
        series.push_row(&row);

        if tick == steps {
            break;
        }

        // (5) observer integration and plant step
        for k in 0..n {
            integral[k] += u_v[k] * dt;
        }
        if inj.shutdown && !shutdown_latched {
            for sw in &cfg.plant.switches {
                state =
                    plant::apply_breaker(&state, &sw.id, false, &cfg.plant).map_err(|e| fail(e.into()))?;
            }
            shutdown_latched = true;
        }
        state = plant::step_plant(&state, &refs, &cfg.plant, dt).map_err(|e| fail(e.into()))?;
    }

    let models = monitors.into_iter().map(|m| m.model).collect();
    Ok((series, models))
}

fn at(tick: usize, t: f64, source: StepError) -> crate::Error {
    crate::Error::Run(RunError { tick, t, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    fn short(extra: &str) -> ScenarioConfig {
        parse_scenario(&format!("name = \"t\"\nduration = 1.0\n{extra}")).unwrap()
    }

    #[test]
    fn row_count_and_grid() {
        let (ts, _) = run_scenario(&short("")).unwrap();
        assert_eq!(ts.len(), 1001);
        let t = ts.t();
        assert_eq!(t[0], 0.0);
        assert_eq!(*t.last().unwrap(), 1.0);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 1e-3).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_run_has_two_rows() {
        let cfg = parse_scenario("name = \"t\"\nduration = 0.001\n").unwrap();
        let (ts, _) = run_scenario(&cfg).unwrap();
        assert_eq!(ts.t(), &[0.0, 0.001]);
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let (ts, _) = run_scenario(&short("")).unwrap();
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header, ts.names());
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        let v0: f64 = first[1].parse().unwrap();
        assert_eq!(v0.to_bits(), ts.col("v_0")[0].to_bits());
        assert_eq!(
            first[header.iter().position(|h| *h == "attack_active").unwrap()],
            "0"
        );
        assert_eq!(text.lines().count(), ts.len() + 1);
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let (ts, _) = run_scenario(&parse_scenario("name = \"t\"\nduration = 0.001\n").unwrap()).unwrap();
        let path = Path::new("/nonexistent-dir/x/out.csv");
        let err = ts.write_csv_file(path).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x/out.csv"), "{err}");
    }

    #[test]
    fn training_set_refuses_attacked_runs() {
        let cfg = short("[[attack]]\nkind = \"loadshare\"\nstep = 0.001\nstart = 0.5\n");
        let (ts, _) = run_scenario(&cfg).unwrap();
        let sig = "v_bar_0".parse().unwrap();
        assert!(matches!(
            build_training_set(&ts, sig, 10, 1),
            Err(DetectorError::SeriesContainsAttack)
        ));
        let (clean, _) = run_scenario(&cfg.dry_run()).unwrap();
        assert_eq!(build_training_set(&clean, sig, 10, 1).unwrap().len(), 1001 - 10);
    }

    #[test]
    fn stealth_violation_is_reported_with_tick() {
        let mut cfg = short("[[attack]]\nkind = \"drift\"\nramp_rate = 10.0\nstart = 0.2\n");
        cfg.attacks[0].threshold = 1.0;
        cfg.attacks[0].kind = AttackKind::LoadShare;
        cfg.attacks[0].step = 5.0;
        let err = run_scenario(&cfg).unwrap_err();
        assert!(
            matches!(err, crate::Error::Run(RunError { tick: 200, .. })),
            "{err}"
        );
    }
}
