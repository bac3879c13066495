//! Behavioural-analytics detector.
//!
//! A feed-forward network with two hidden layers predicts the next sample of
//! a monitored signal from a sliding window of its recent history. Samples
//! farther than `ρ` from the prediction are anomalies and are replaced by the
//! prediction before they reach the controller.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default `ρ` as a multiple of the largest training residual.
pub const RADIUS_RESIDUAL_FACTOR: f64 = 5.0;

/// Model files start with this tag followed by a little-endian u32 version.
pub const MODEL_MAGIC: &[u8; 8] = b"SHGRANN\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("series has {len} samples, need more than the window length {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("training series contains attack samples")]
    SeriesContainsAttack,
    #[error("training stopped after {epochs} epochs with MSE {mse:e} above tolerance {tolerance:e}")]
    DidNotConverge {
        model: Box<DetectorModel>,
        epochs: usize,
        mse: f64,
        tolerance: f64,
    },
    #[error("window has {got} samples, model expects {expected}")]
    WrongWindowLength { expected: usize, got: usize },
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - a * a,
            Self::Sigmoid => a * (1.0 - a),
        }
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(format!("unknown activation `{other}` (expected tanh or sigmoid)")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub window: usize,
    pub hidden: [usize; 2],
    pub activation: Activation,
    pub learning_rate: f64,
    /// Training stops once the normalised MSE is at or below this.
    pub mse_tolerance: f64,
    pub max_epochs: usize,
    /// Allowable deviation radius in channel units; `None` derives it from
    /// the training residuals.
    pub radius: Option<f64>,
    pub seed: u64,
    /// Use every `stride`-th window of the dry run for training.
    pub stride: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 20,
            hidden: [16, 16],
            activation: Activation::Tanh,
            learning_rate: 0.01,
            mse_tolerance: 1e-6,
            max_epochs: 10_000,
            radius: None,
            seed: 0,
            stride: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::InvalidConfig(m.into()));
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.mse_tolerance > 0.0) {
            return bad("mse_tolerance must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return bad("radius must be positive");
            }
        }
        Ok(())
    }
}

/// Maps windows into the network's working units and back.
///
/// The network sees the window's successive one-step increments, scaled by
/// their training RMS, and predicts the next increment in the same units.
/// `mean` and `scale` describe the training level and are kept for
/// reporting and the radius floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub scale: f64,
    pub step_scale: f64,
}

impl Normalization {
    /// Level mean/std and increment RMS of `values`; flat signals get unit
    /// scales.
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let floor = 1e-12 * mean.abs().max(1.0);
        let or_unit = |s: f64| if s > floor { s } else { 1.0 };
        let steps = values.len().saturating_sub(1).max(1) as f64;
        let step_ms = values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / steps;
        Self {
            mean,
            scale: or_unit(var.sqrt()),
            step_scale: or_unit(step_ms.sqrt()),
        }
    }

    pub fn features_into(&self, window: &[f64], out: &mut Vec<f64>) {
        out.extend(window.windows(2).map(|p| (p[1] - p[0]) / self.step_scale));
    }

    pub fn features(&self, window: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(window.len());
        self.features_into(window, &mut out);
        out
    }

    pub fn target(&self, window: &[f64], next: f64) -> f64 {
        (next - window[window.len() - 1]) / self.step_scale
    }

    pub fn prediction(&self, window: &[f64], y: f64) -> f64 {
        window[window.len() - 1] + y * self.step_scale
    }
}

/// Sliding-window samples from an attack-free run, in channel units.
///
/// With a stride above one only every `stride`-th window is used for
/// gradient descent; the residual bound is still taken over all windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    series: Vec<f64>,
    window: usize,
    stride: usize,
    pub normalization: Normalization,
}

impl TrainingSet {
    /// One sample per window position: `len - window` samples.
    pub fn from_series(series: &[f64], window: usize) -> Result<Self, DetectorError> {
        Self::from_series_strided(series, window, 1)
    }

    pub fn from_series_strided(series: &[f64], window: usize, stride: usize) -> Result<Self, DetectorError> {
        if window < 2 || series.len() <= window {
            return Err(DetectorError::SeriesTooShort {
                len: series.len(),
                window,
            });
        }
        Ok(Self {
            series: series.to_vec(),
            window,
            stride: stride.max(1),
            normalization: Normalization::fit(series),
        })
    }

    /// Number of training samples.
    pub fn len(&self) -> usize {
        (self.series.len() - self.window).div_ceil(self.stride)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Training sample `i`: a window and the value that followed it.
    pub fn sample(&self, i: usize) -> (&[f64], f64) {
        self.window_at(i * self.stride)
    }

    fn window_at(&self, start: usize) -> (&[f64], f64) {
        let end = start + self.window;
        (&self.series[start..end], self.series[end])
    }

    /// Every window of the series, regardless of stride.
    pub fn all_windows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        (0..self.series.len() - self.window).map(|s| self.window_at(s))
    }

    /// Network inputs and targets in working units.
    pub fn normalized(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.normalization;
        let mut x = Vec::with_capacity(self.len() * self.window);
        let mut t = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let (w, next) = self.sample(i);
            n.features_into(w, &mut x);
            t.push(n.target(w, next));
        }
        (x, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out × n_in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn random(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.n_in).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Two tanh/sigmoid hidden layers and a linear scalar output, anchored so
/// that an all-zero input (a flat window) always maps to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    activation: Activation,
    layers: [Dense; 3],
}

struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    /// Backpropagated error at the first hidden layer.
    d1: Vec<f64>,
}

impl Network {
    /// A seeded network for windows of `window` samples (`window - 1`
    /// increments in).
    pub fn random(window: usize, hidden: [usize; 2], activation: Activation, seed: u64) -> Self {
        assert!(window >= 2, "window must hold at least two samples");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = Dense::random(window - 1, hidden[0], &mut rng);
        let l2 = Dense::random(hidden[0], hidden[1], &mut rng);
        let l3 = Dense::random(hidden[1], 1, &mut rng);
        Self {
            activation,
            layers: [l1, l2, l3],
        }
    }

    pub fn window(&self) -> usize {
        self.layers[0].n_in + 1
    }

    fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn hidden(&self) -> [usize; 2] {
        [self.layers[0].n_out, self.layers[1].n_out]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Flattened parameters: per layer, weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    fn raw_into(&self, x: &[f64], act: &mut Activations) -> f64 {
        let [l1, l2, l3] = &self.layers;
        l1.affine(x, &mut act.h1);
        act.h1.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        l2.affine(&act.h1, &mut act.h2);
        act.h2.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        let mut y = [0.0];
        l3.affine(&act.h2, &mut y);
        y[0]
    }

    fn scratch(&self) -> Activations {
        let [h1, h2] = self.hidden();
        Activations {
            h1: vec![0.0; h1],
            h2: vec![0.0; h2],
            d1: vec![0.0; h1],
        }
    }

    fn origin(&self) -> f64 {
        self.raw_into(&vec![0.0; self.n_inputs()], &mut self.scratch())
    }

    /// Network output for one normalised window.
    pub fn forward(&self, x: &[f64]) -> f64 {
        self.raw_into(x, &mut self.scratch()) - self.origin()
    }

    /// Mean squared error over normalised samples.
    pub fn loss(&self, inputs: &[f64], targets: &[f64]) -> f64 {
        let y0 = self.origin();
        let mut act = self.scratch();
        let sum: f64 = inputs
            .chunks_exact(self.n_inputs())
            .zip(targets)
            .map(|(x, t)| {
                let e = self.raw_into(x, &mut act) - y0 - t;
                e * e
            })
            .sum();
        sum / targets.len() as f64
    }

    /// MSE and its gradient with respect to [`Network::params`], by
    /// backpropagation.
    pub fn loss_and_gradient(&self, inputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
        let y0 = self.origin();
        let mut grad = vec![0.0; self.n_params()];
        let mut act = self.scratch();
        let mut sse = 0.0;
        let mut e_sum = 0.0;
        for (x, &t) in inputs.chunks_exact(self.n_inputs()).zip(targets) {
            let e = self.raw_into(x, &mut act) - y0 - t;
            sse += e * e;
            e_sum += e;
            self.backprop(x, e, &mut act, &mut grad);
        }
        let zero = vec![0.0; self.n_inputs()];
        self.raw_into(&zero, &mut act);
        self.backprop(&zero, -e_sum, &mut act, &mut grad);
        let inv = 1.0 / targets.len() as f64;
        grad.iter_mut().for_each(|g| *g *= 2.0 * inv);
        (sse * inv, grad)
    }

    /// Adds `e · ∂raw(x)/∂θ` to `grad`; `act` must hold the activations for `x`.
    fn backprop(&self, x: &[f64], e: f64, act: &mut Activations, grad: &mut [f64]) {
        let [l1, l2, l3] = &self.layers;
        let (n0, n1, n2) = (l1.n_in, l1.n_out, l2.n_out);
        let (g1w, rest) = grad.split_at_mut(n1 * n0);
        let (g1b, rest) = rest.split_at_mut(n1);
        let (g2w, rest) = rest.split_at_mut(n2 * n1);
        let (g2b, rest) = rest.split_at_mut(n2);
        let (g3w, g3b) = rest.split_at_mut(n2);
        let d = |h: f64| self.activation.derivative_from_output(h);
        g3b[0] += e;
        let d1 = &mut act.d1;
        d1.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n2 {
            g3w[j] += e * act.h2[j];
            let dj = e * l3.weights[j] * d(act.h2[j]);
            g2b[j] += dj;
            let row = &l2.weights[j * n1..(j + 1) * n1];
            let grow = &mut g2w[j * n1..(j + 1) * n1];
            for i in 0..n1 {
                grow[i] += dj * act.h1[i];
                d1[i] += dj * row[i];
            }
        }
        for i in 0..n1 {
            let di = d1[i] * d(act.h1[i]);
            g1b[i] += di;
            for (g, &xv) in g1w[i * n0..(i + 1) * n0].iter_mut().zip(x) {
                *g += di * xv;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    network: Network,
    pub normalization: Normalization,
    /// Normalised MSE at the end of training.
    pub achieved_mse: f64,
    pub epochs: usize,
    /// Largest one-step prediction error on the training set (channel units).
    pub max_residual: f64,
    /// Allowable deviation radius `ρ` (channel units).
    pub radius: f64,
    /// Per-epoch MSE, recorded before each update. Not persisted.
    pub history: Vec<f64>,
}

impl DetectorModel {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn window(&self) -> usize {
        self.network.window()
    }

    pub fn converged(&self) -> bool {
        self.achieved_mse <= self.config.mse_tolerance
    }

    /// Builds a model around an existing network, deriving the residual
    /// bound and radius from `ts`.
    pub fn from_network(
        network: Network,
        ts: &TrainingSet,
        config: DetectorConfig,
    ) -> Result<Self, DetectorError> {
        if network.window() != ts.window() {
            return Err(DetectorError::WrongWindowLength {
                expected: network.window(),
                got: ts.window(),
            });
        }
        let (x, t) = ts.normalized();
        let achieved_mse = network.loss(&x, &t);
        let mut m = Self {
            config,
            network,
            normalization: ts.normalization,
            achieved_mse,
            epochs: 0,
            max_residual: 0.0,
            radius: 0.0,
            history: Vec::new(),
        };
        m.calibrate(ts)?;
        Ok(m)
    }

    fn calibrate(&mut self, ts: &TrainingSet) -> Result<(), DetectorError> {
        let mut worst: f64 = 0.0;
        for (x, t) in ts.all_windows() {
            worst = worst.max((self.predict(x)? - t).abs());
        }
        self.max_residual = worst;
        let floor = 1e-12 * self.normalization.mean.abs().max(1.0);
        self.radius = self
            .config
            .radius
            .unwrap_or((RADIUS_RESIDUAL_FACTOR * worst).max(floor));
        Ok(())
    }

    /// One-step-ahead prediction in channel units.
    pub fn predict(&self, window: &[f64]) -> Result<f64, DetectorError> {
        if window.len() != self.window() {
            return Err(DetectorError::WrongWindowLength {
                expected: self.window(),
                got: window.len(),
            });
        }
        let n = self.normalization;
        Ok(n.prediction(window, self.network.forward(&n.features(window))))
    }

    /// Replacement value for a rejected sample.
    pub fn reconstruct(&self, window: &[f64]) -> Result<f64, DetectorError> {
        self.predict(window)
    }

    pub fn classify(&self, x_in: f64, x_p: f64) -> Decision {
        classify(x_in, x_p, self.radius)
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        fs::write(path, self.to_bytes()).map_err(|source| DetectorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let bytes = fs::read(path).map_err(|source| DetectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Magic, version, UTF-8 `key=value` header, then the parameters as
    /// little-endian f64 in [`Network::params`] order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let header = format!(
            "window={}\nhidden={},{}\nactivation={}\nmean={}\nscale={}\nstep_scale={}\nachieved_mse={}\n\
             epochs={}\nseed={}\nmax_residual={}\nradius={}\nlearning_rate={}\n\
             mse_tolerance={}\nmax_epochs={}\nstride={}\nradius_override={}\n",
            self.window(),
            c.hidden[0],
            c.hidden[1],
            c.activation,
            self.normalization.mean,
            self.normalization.scale,
            self.normalization.step_scale,
            self.achieved_mse,
            self.epochs,
            c.seed,
            self.max_residual,
            self.radius,
            c.learning_rate,
            c.mse_tolerance,
            c.max_epochs,
            c.stride,
            c.radius.is_some(),
        );
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for p in self.network.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DetectorError> {
        let fmt_err = |m: String| DetectorError::Format(m);
        if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
            return Err(fmt_err("not a detector model (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| fmt_err("truncated header".into()))?;
        let header = std::str::from_utf8(body).map_err(|e| fmt_err(e.to_string()))?;
        let mut fields = std::collections::BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt_err(format!("bad header line `{line}`")))?;
            fields.insert(k, v);
        }
        fn get<T: FromStr>(
            fields: &std::collections::BTreeMap<&str, &str>,
            key: &str,
        ) -> Result<T, DetectorError> {
            fields
                .get(key)
                .ok_or_else(|| DetectorError::Format(format!("missing header field `{key}`")))?
                .parse()
                .map_err(|_| DetectorError::Format(format!("bad value for `{key}`")))
        }
        let window: usize = get(&fields, "window")?;
        let hidden_s: String = get(&fields, "hidden")?;
        let hidden: Vec<usize> = hidden_s
            .split(',')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| fmt_err("bad hidden widths".into()))?;
        let hidden: [usize; 2] = hidden
            .try_into()
            .map_err(|_| fmt_err("exactly two hidden widths required".into()))?;
        let activation: Activation = fields
            .get("activation")
            .ok_or_else(|| fmt_err("missing activation".into()))?
            .parse()
            .map_err(fmt_err)?;
        let radius: f64 = get(&fields, "radius")?;
        let radius_override: bool = get(&fields, "radius_override")?;
        let config = DetectorConfig {
            window,
            hidden,
            activation,
            learning_rate: get(&fields, "learning_rate")?,
            mse_tolerance: get(&fields, "mse_tolerance")?,
            max_epochs: get(&fields, "max_epochs")?,
            radius: radius_override.then_some(radius),
            seed: get(&fields, "seed")?,
            stride: get(&fields, "stride")?,
        };
        let mut network = Network::random(window, hidden, activation, 0);
        let params = &bytes[16 + hlen..];
        if params.len() != network.n_params() * 8 {
            return Err(fmt_err(format!(
                "expected {} parameter bytes, found {}",
                network.n_params() * 8,
                params.len()
            )));
        }
        let p: Vec<f64> = params
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(fmt_err("non-finite parameter".into()));
        }
        network.set_params(&p);
        let normalization = Normalization {
            mean: get(&fields, "mean")?,
            scale: get(&fields, "scale")?,
            step_scale: get(&fields, "step_scale")?,
        };
        if !(normalization.scale > 0.0 && normalization.step_scale > 0.0) {
            return Err(fmt_err("normalization scale must be positive".into()));
        }
        Ok(Self {
            config,
            network,
            normalization,
            achieved_mse: get(&fields, "achieved_mse")?,
            epochs: get(&fields, "epochs")?,
            max_residual: get(&fields, "max_residual")?,
            radius,
            history: Vec::new(),
        })
    }
}

/// Full-batch gradient descent on the normalised MSE until it reaches the
/// configured tolerance or `max_epochs` runs out. A non-converged model is
/// still returned inside [`DetectorError::DidNotConverge`].
pub fn train(ts: &TrainingSet, cfg: &DetectorConfig) -> Result<DetectorModel, DetectorError> {
    cfg.validate()?;
    if ts.window() != cfg.window {
        return Err(DetectorError::WrongWindowLength {
            expected: cfg.window,
            got: ts.window(),
        });
    }
    let network = Network::random(cfg.window, cfg.hidden, cfg.activation, cfg.seed);
    train_from(network, ts, cfg)
}

/// As [`train`], starting from the given network instead of a seeded one.
pub fn train_from(
    mut network: Network,
    ts: &TrainingSet,
    cfg: &DetectorConfig,
) -> Result<DetectorModel, DetectorError> {
    if ts.is_empty() {
        return Err(DetectorError::Empty);
    }
    let (x, t) = ts.normalized();
    let mut params = network.params();
    let mut history = Vec::new();
    let mut mse = f64::INFINITY;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        let (loss, grad) = network.loss_and_gradient(&x, &t);
        mse = loss;
        history.push(loss);
        if loss <= cfg.mse_tolerance {
            break;
        }
        params
            .iter_mut()
            .zip(&grad)
            .for_each(|(p, g)| *p -= cfg.learning_rate * g);
        network.set_params(&params);
        epochs += 1;
    }
    if epochs == cfg.max_epochs {
        mse = network.loss(&x, &t);
    }
    let mut model = DetectorModel::from_network(network, ts, cfg.clone())?;
    model.achieved_mse = mse;
    model.epochs = epochs;
    model.history = history;
    if mse <= cfg.mse_tolerance {
        Ok(model)
    } else {
        Err(DetectorError::DidNotConverge {
            model: Box::new(model),
            epochs,
            mse,
            tolerance: cfg.mse_tolerance,
        })
    }
}

/// `(1/S) Σ (p_i - o_i)²`.
pub fn mse(predictions: &[f64], observations: &[f64]) -> Result<f64, DetectorError> {
    if predictions.len() != observations.len() {
        return Err(DetectorError::SizeMismatch(predictions.len(), observations.len()));
    }
    if predictions.is_empty() {
        return Err(DetectorError::Empty);
    }
    let sum: f64 = predictions
        .iter()
        .zip(observations)
        .map(|(p, o)| (p - o) * (p - o))
        .sum();
    Ok(sum / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Normal,
    Anomaly,
}

/// `Normal` iff `|x_in - x_p| <= ρ`; the boundary counts as normal.
pub fn classify(x_in: f64, x_p: f64, radius: f64) -> Decision {
    if (x_in - x_p).abs() <= radius {
        Decision::Normal
    } else {
        Decision::Anomaly
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_set_sizes() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(TrainingSet::from_series(&s, 10).unwrap().len(), 90);
        assert!(matches!(
            TrainingSet::from_series(&s[..5], 10),
            Err(DetectorError::SeriesTooShort { len: 5, window: 10 })
        ));
        assert_eq!(TrainingSet::from_series_strided(&s, 10, 4).unwrap().len(), 23);
        let ts = TrainingSet::from_series(&s, 10).unwrap();
        let (x, t) = ts.sample(3);
        assert_eq!(x, &s[3..13]);
        assert_eq!(t, 13.0);
    }

    #[test]
    fn constant_series_normalises_to_zero() {
        let ts = TrainingSet::from_series(&[12_000.0; 50], 5).unwrap();
        let (x, t) = ts.normalized();
        assert!(t.iter().chain(&x).all(|&v| v == 0.0));
        assert_eq!(ts.normalization.scale, 1.0);
        assert_eq!(ts.normalization.step_scale, 1.0);
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2.0);
        assert_eq!(mse(&[3.0], &[0.0]).unwrap(), 9.0);
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(DetectorError::SizeMismatch(1, 2))
        ));
        assert!(matches!(mse(&[], &[]), Err(DetectorError::Empty)));
    }

    #[test]
    fn classification_boundary() {
        assert_eq!(classify(5.0, 5.0, 1.0), Decision::Normal);
        assert_eq!(classify(12_030.0, 12_000.0, 30.0), Decision::Normal);
        assert_eq!(classify(12_050.0, 12_000.0, 30.0), Decision::Anomaly);
    }

    #[test]
    fn single_sample_reproduced_exactly() {
        let ts = TrainingSet::from_series(&[7.0; 4], 3).unwrap();
        assert_eq!(ts.len(), 1);
        let cfg = DetectorConfig {
            window: 3,
            ..DetectorConfig::default()
        };
        let m = train(&ts, &cfg).unwrap();
        assert_eq!(m.achieved_mse, 0.0);
        assert_eq!(m.predict(&[7.0; 3]).unwrap(), 7.0);
    }

    #[test]
    fn wrong_window_length() {
        let ts = TrainingSet::from_series(&[1.0; 30], 4).unwrap();
        let cfg = DetectorConfig {
            window: 4,
            ..DetectorConfig::default()
        };
        let m = train(&ts, &cfg).unwrap();
        for len in [3, 5] {
            assert!(matches!(
                m.predict(&vec![1.0; len]),
                Err(DetectorError::WrongWindowLength { expected: 4, got }) if got == len
            ));
        }
    }

    #[test]
    fn bad_model_bytes() {
        assert!(matches!(
            DetectorModel::from_bytes(b"garbage"),
            Err(DetectorError::Format(_))
        ));
        let ts = TrainingSet::from_series(&[1.0; 30], 4).unwrap();
        let cfg = DetectorConfig {
            window: 4,
            hidden: [3, 2],
            ..DetectorConfig::default()
        };
        let bytes = train(&ts, &cfg).unwrap().to_bytes();
        assert!(DetectorModel::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(DetectorModel::from_bytes(&wrong_version).is_err());
    }

    #[test]
    fn constant_signal_is_learned_for_any_seed() {
        let ts = TrainingSet::from_series(&[12_000.0; 200], 20).unwrap();
        for seed in [0, 1, 42] {
            let cfg = DetectorConfig {
                seed,
                ..DetectorConfig::default()
            };
            let m = train(&ts, &cfg).unwrap();
            assert!(m.epochs <= 100);
            assert!((m.predict(&[12_000.0; 20]).unwrap() - 12_000.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_sinusoid_fits() {
        let wave: Vec<f64> = (0..500).map(|i| (i as f64 * 0.1).sin()).collect();
        let ts = TrainingSet::from_series(&wave, 20).unwrap();
        let cfg = DetectorConfig {
            max_epochs: 5000,
            mse_tolerance: 1e-4,
            ..DetectorConfig::default()
        };
        let m = train(&ts, &cfg).unwrap();
        assert!(m.achieved_mse <= 1e-4, "{}", m.achieved_mse);
        let w = &wave[100..120];
        assert_eq!(m.predict(w).unwrap().to_bits(), m.predict(w).unwrap().to_bits());
    }

    #[test]
    fn seeded_training_is_bit_reproducible() {
        let wave: Vec<f64> = (0..200)
            .map(|i| (i as f64 * 0.3).cos() * 40.0 + 12_000.0)
            .collect();
        let ts = TrainingSet::from_series(&wave, 8).unwrap();
        let cfg = DetectorConfig {
            window: 8,
            max_epochs: 30,
            mse_tolerance: 1e-12,
            seed: 5,
            ..DetectorConfig::default()
        };
        let run = || match train(&ts, &cfg) {
            Err(DetectorError::DidNotConverge { model, .. }) => *model,
            other => panic!("expected a partial model, got {other:?}"),
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for activation in [Activation::Tanh, Activation::Sigmoid] {
            let net = Network::random(5, [4, 3], activation, 7);
            let x: Vec<f64> = (0..4 * 6).map(|i| ((i * 5 % 9) as f64 - 4.0) / 2.0).collect();
            let t = [0.5, -1.0, 0.2, 0.0, 1.5, -0.3];
            let (_, grad) = net.loss_and_gradient(&x, &t);
            let p = net.params();
            for i in 0..p.len() {
                let at = |d: f64| {
                    let mut q = p.clone();
                    q[i] += d;
                    let mut n = net.clone();
                    n.set_params(&q);
                    n.loss(&x, &t)
                };
                let fd = (at(1e-6) - at(-1e-6)) / 2e-6;
                let scale = fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(
                    (fd - grad[i]).abs() / scale <= 1e-5,
                    "param {i}: {fd} vs {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn flat_window_predicts_no_change() {
        let net = Network::random(6, [5, 5], Activation::Tanh, 3);
        assert_eq!(net.forward(&[0.0; 5]), 0.0);
    }

    #[test]
    fn model_round_trips_through_bytes() {
        let wave: Vec<f64> = (0..120).map(|i| (i as f64 * 0.2).sin()).collect();
        let ts = TrainingSet::from_series_strided(&wave, 6, 2).unwrap();
        let cfg = DetectorConfig {
            window: 6,
            hidden: [4, 3],
            activation: Activation::Sigmoid,
            max_epochs: 20,
            radius: Some(0.25),
            ..DetectorConfig::default()
        };
        let m = match train(&ts, &cfg) {
            Ok(m) => m,
            Err(DetectorError::DidNotConverge { model, .. }) => *model,
            Err(e) => panic!("{e}"),
        };
        let back = DetectorModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.radius, 0.25);
        assert_eq!(back.network(), m.network());
        assert_eq!(back.predict(&wave[..6]).unwrap(), m.predict(&wave[..6]).unwrap());
    }
}
