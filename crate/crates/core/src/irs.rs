//! Trainable IRS layer, fixed channel layer and the assembled end-to-end
//! model.
//!
//! In the interleaved real domain the IRS acts on each cell pair `(a, b)`
//! with the rotation `[[cos p, -sin p], [sin p, cos p]]`, i.e. the complex
//! product `(a + jb) e^{jp}`. Training runs
//! IRS layer -> fixed channel -> additive noise -> regressor, applied row-wise
//! to each snapshot. At test time the physical channel has already applied
//! the first two stages, so received signals go straight to the regressor.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{noise_std, ChannelModel, InterleavedSignal, PhaseVector, C64};
use crate::dataset::{denormalize_label, LabeledSet, TrainingDataset, DEFAULT_SNR_SET_DB};
use crate::error::{Error, Result};
use crate::geometry::{DoA, SceneGeometry};
use crate::nn::{
    mse_grad, mse_loss, read_floats, write_floats, AdamState, Gradients, MlpRegressor,
    OptimizerKind,
};
use crate::rng::substream;

fn check_pairs(x_len: usize, phi_len: usize) -> Result<()> {
    if x_len % 2 != 0 {
        return Err(Error::OddLength(x_len));
    }
    if x_len != 2 * phi_len {
        return Err(Error::shape("IRS layer input", 2 * phi_len, x_len));
    }
    Ok(())
}

/// Rotate every interleaved pair of `x` by the matching phase.
pub fn irs_forward(x: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    check_pairs(x.len(), phi.len())?;
    let mut z = vec![0.0; x.len()];
    rotate_into(x, phi, &mut z);
    Ok(z)
}

fn rotate_into(x: &[f64], phi: &[f64], z: &mut [f64]) {
    for (i, &p) in phi.iter().enumerate() {
        let (s, c) = p.sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        z[2 * i] = a * c - b * s;
        z[2 * i + 1] = a * s + b * c;
    }
}

/// Gradients with respect to the phases and the input, given `dE/dz`.
pub fn irs_backward(x: &[f64], phi: &[f64], dz: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pairs(x.len(), phi.len())?;
    if dz.len() != x.len() {
        return Err(Error::shape("IRS output gradient", x.len(), dz.len()));
    }
    let mut dphi = vec![0.0; phi.len()];
    let mut dx = vec![0.0; x.len()];
    accumulate_backward(x, phi, dz, &mut dphi, &mut dx);
    Ok((dphi, dx))
}

fn accumulate_backward(x: &[f64], phi: &[f64], dz: &[f64], dphi: &mut [f64], dx: &mut [f64]) {
    for (i, &p) in phi.iter().enumerate() {
        let (s, c) = p.sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        let (g0, g1) = (dz[2 * i], dz[2 * i + 1]);
        // d z0 / dp = -a sin - b cos,  d z1 / dp = a cos - b sin
        dphi[i] += g0 * (-a * s - b * c) + g1 * (a * c - b * s);
        // W^T dz
        dx[2 * i] = c * g0 + s * g1;
        dx[2 * i + 1] = -s * g0 + c * g1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrsLayer {
    /// Unwrapped during training; wrapped only on export.
    pub phi: Vec<f64>,
}

impl IrsLayer {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("IRS phases must be finite".into()));
        }
        Ok(Self { phi })
    }

    /// Uniform on `[-pi, pi)`.
    pub fn random<R: Rng + ?Sized>(cells: usize, rng: &mut R) -> Self {
        Self {
            phi: (0..cells).map(|_| rng.random_range(-PI..PI)).collect(),
        }
    }

    pub fn cells(&self) -> usize {
        self.phi.len()
    }

    /// Row-wise forward on `rows x 2 M^R`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_pairs(x.ncols(), self.phi.len())?;
        let mut z = Array2::zeros(x.dim());
        for (xr, mut zr) in x.rows().into_iter().zip(z.rows_mut()) {
            let xs = xr.to_vec();
            rotate_into(&xs, &self.phi, zr.as_slice_mut().expect("standard layout"));
        }
        Ok(z)
    }

    /// Phase gradient summed over rows, and the input gradient per row.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dz: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        check_pairs(x.ncols(), self.phi.len())?;
        if dz.dim() != x.dim() {
            return Err(Error::shape("IRS output gradient", x.len(), dz.len()));
        }
        let mut dphi = vec![0.0; self.phi.len()];
        let mut dx = Array2::zeros(x.dim());
        for ((xr, gr), mut dr) in x.rows().into_iter().zip(dz.rows()).zip(dx.rows_mut()) {
            accumulate_backward(
                &xr.to_vec(),
                &self.phi,
                &gr.to_vec(),
                &mut dphi,
                dr.as_slice_mut().expect("standard layout"),
            );
        }
        Ok((dphi, dx))
    }

    /// Phases wrapped to `[-pi, pi)`.
    pub fn export_phases(&self) -> PhaseVector {
        PhaseVector::new(self.phi.clone()).expect("finite phases")
    }
}

/// Non-trainable real expansion of `H ⊙ A` (`2 M^A x 2 M^R`).
#[derive(Debug, Clone, PartialEq)]
pub struct FixedChannelLayer {
    w_real: Array2<f64>,
}

impl FixedChannelLayer {
    pub fn from_channel(channel: &ChannelModel) -> Self {
        Self {
            w_real: channel.real_expansion(),
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w_real
    }

    pub fn input_len(&self) -> usize {
        self.w_real.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.w_real.nrows()
    }

    /// Row-wise `W z`.
    pub fn forward(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.input_len() {
            return Err(Error::shape(
                "fixed channel input",
                self.input_len(),
                z.ncols(),
            ));
        }
        Ok(z.dot(&self.w_real.t()))
    }

    /// Row-wise `W^T g`. The layer has no parameters.
    pub fn backward(&self, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        if g.ncols() != self.output_len() {
            return Err(Error::shape(
                "fixed channel output gradient",
                self.output_len(),
                g.ncols(),
            ));
        }
        Ok(g.dot(&self.w_real))
    }
}

/// Reshape `B x (L w)` to `(B L) x w` and back.
fn split_snapshots(x: ArrayView2<f64>, snapshots: usize) -> Result<Array2<f64>> {
    let (b, n) = x.dim();
    if n % snapshots != 0 {
        return Err(Error::shape(
            "snapshot-major input",
            format!("multiple of {snapshots}"),
            n,
        ));
    }
    x.to_owned()
        .into_shape_with_order((b * snapshots, n / snapshots))
        .map_err(|e| Error::shape("snapshot reshape", b * n, e.to_string()))
}

fn join_snapshots(x: Array2<f64>, snapshots: usize) -> Array2<f64> {
    let (r, w) = x.dim();
    x.into_shape_with_order((r / snapshots, snapshots * w))
        .expect("row count is a multiple of the snapshot count")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndModel {
    geometry: SceneGeometry,
    received_power: f64,
    snapshots: usize,
    pub irs: IrsLayer,
    channel: FixedChannelLayer,
    pub regressor: MlpRegressor,
}

/// Loss and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub phi: Vec<f64>,
    pub regressor: Gradients,
}

impl EndToEndModel {
    /// Random IRS phases and a freshly initialized FC regressor.
    pub fn new<R: Rng + ?Sized>(
        geometry: &SceneGeometry,
        snapshots: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let channel = ChannelModel::new(geometry)?;
        let irs = IrsLayer::random(channel.num_cells(), rng);
        let regressor = MlpRegressor::fc((snapshots, 2 * channel.num_elements()), rng);
        Self::from_parts(&channel, snapshots, irs, regressor)
    }

    pub fn from_parts(
        channel: &ChannelModel,
        snapshots: usize,
        irs: IrsLayer,
        regressor: MlpRegressor,
    ) -> Result<Self> {
        if snapshots == 0 {
            return Err(Error::Config("snapshot count must be positive".into()));
        }
        if irs.cells() != channel.num_cells() {
            return Err(Error::shape("IRS phases", channel.num_cells(), irs.cells()));
        }
        let expected = (snapshots, 2 * channel.num_elements());
        if regressor.input_shape() != expected || regressor.output_len() != 2 {
            return Err(Error::shape(
                "regressor input",
                format!("{expected:?} -> 2"),
                format!("{:?}", regressor.input_shape()),
            ));
        }
        Ok(Self {
            geometry: channel.geometry().clone(),
            received_power: channel.received_power(),
            snapshots,
            irs,
            channel: FixedChannelLayer::from_channel(channel),
            regressor,
        })
    }

    pub fn geometry(&self) -> &SceneGeometry {
        &self.geometry
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn channel_layer(&self) -> &FixedChannelLayer {
        &self.channel
    }

    pub fn num_elements(&self) -> usize {
        self.channel.output_len() / 2
    }

    pub fn num_cells(&self) -> usize {
        self.irs.cells()
    }

    /// Regressor parameters plus one phase per IRS cell.
    pub fn parameter_count(&self) -> usize {
        self.regressor.parameter_count() + self.irs.cells()
    }

    /// Noiseless array observation of a batch of IRS-side inputs
    /// (`B x L 2M^R` -> `B x L 2M^A`).
    pub fn observe(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let xr = split_snapshots(x, self.snapshots)?;
        let u = self.channel.forward(self.irs.forward(xr.view())?.view())?;
        Ok(join_snapshots(u, self.snapshots))
    }

    /// Training-path loss and gradients. `noise` is added after the channel;
    /// dropout is active when `rng` is supplied.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        labels: ArrayView2<f64>,
        noise: Option<ArrayView2<f64>>,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<BatchGradients> {
        let xr = split_snapshots(x, self.snapshots)?;
        let z = self.irs.forward(xr.view())?;
        let mut v = join_snapshots(self.channel.forward(z.view())?, self.snapshots);
        if let Some(n) = noise {
            if n.dim() != v.dim() {
                return Err(Error::shape("noise", v.len(), n.len()));
            }
            v += &n;
        }
        let cache = self.regressor.forward(v.view(), rng)?;
        let out = cache.output();
        if labels.dim() != out.dim() {
            return Err(Error::shape("labels", out.len(), labels.len()));
        }
        let labels = labels.as_standard_layout();
        let out_s = out.as_slice().expect("standard layout");
        let lab_s = labels.as_slice().expect("standard layout");
        let loss = mse_loss(out_s, lab_s)?;
        let g = Array2::from_shape_vec(out.dim(), mse_grad(out_s, lab_s)?).expect("same shape");
        let regressor = self.regressor.backward(&cache, g.view())?;
        let dv = split_snapshots(regressor.input.view(), self.snapshots)?;
        let dz = self.channel.backward(dv.view())?;
        let (phi, _) = self.irs.backward(xr.view(), dz.view())?;
        Ok(BatchGradients {
            loss,
            phi,
            regressor,
        })
    }

    /// Inference loss on IRS-side inputs with the given noise.
    pub fn evaluate_loss(
        &self,
        x: ArrayView2<f64>,
        labels: ArrayView2<f64>,
        noise: Option<ArrayView2<f64>>,
    ) -> Result<f64> {
        let mut v = self.observe(x)?;
        if let Some(n) = noise {
            v += &n;
        }
        let out = self.regressor.predict(v.view())?;
        let labels = labels.as_standard_layout();
        mse_loss(
            out.as_slice().expect("standard layout"),
            labels.as_slice().expect("standard layout"),
        )
    }

    /// Regressor outputs for received signals already flattened to
    /// `B x L 2M^A` (snapshot-major interleaved).
    pub fn predict_batch(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.regressor.predict(y)
    }

    /// DoA estimate from a received `M^A x L` signal.
    pub fn predict_doa(&self, y: ArrayView2<C64>) -> Result<DoA> {
        if y.dim() != (self.num_elements(), self.snapshots) {
            return Err(Error::shape(
                "received signal",
                format!("{}x{}", self.num_elements(), self.snapshots),
                format!("{}x{}", y.nrows(), y.ncols()),
            ));
        }
        let flat = InterleavedSignal::from_complex(y).flatten();
        let x = Array2::from_shape_vec((1, flat.len()), flat).expect("one row");
        let out = self.regressor.predict(x.view())?;
        Ok(output_to_doa(out[[0, 0]], out[[0, 1]]))
    }

    pub fn export_phases(&self) -> PhaseVector {
        self.irs.export_phases()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("irs-doa-e2e 1\n");
        let _ = writeln!(
            s,
            "geometry {}",
            serde_json::to_string(&self.geometry).expect("geometry serializes")
        );
        let _ = writeln!(s, "received_power {:?}", self.received_power);
        let _ = writeln!(s, "snapshots {}", self.snapshots);
        let _ = writeln!(s, "phases {}", self.irs.cells());
        write_floats(&mut s, &self.irs.phi);
        s.push_str(&self.regressor.to_text());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |r: &str| Error::format("model", r.to_string());
        let mut parts = text.splitn(6, '\n');
        let mut next = || parts.next().ok_or_else(|| err("truncated header"));
        if next()? != "irs-doa-e2e 1" {
            return Err(err("unrecognized header"));
        }
        let geometry: SceneGeometry = serde_json::from_str(
            next()?
                .strip_prefix("geometry ")
                .ok_or_else(|| err("missing geometry"))?,
        )
        .map_err(|e| Error::format("model", e.to_string()))?;
        let power: f64 = next()?
            .strip_prefix("received_power ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("missing received power"))?;
        let snapshots: usize = next()?
            .strip_prefix("snapshots ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("missing snapshots"))?;
        let cells: usize = next()?
            .strip_prefix("phases ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("missing phase count"))?;
        let rest = next()?;
        let (phase_line, regressor_text) = rest
            .split_once('\n')
            .ok_or_else(|| err("missing regressor"))?;
        let phi = read_floats(phase_line)?;
        if phi.len() != cells {
            return Err(Error::shape("serialized phases", cells, phi.len()));
        }
        let channel = ChannelModel::with_power(&geometry, power)?;
        Self::from_parts(
            &channel,
            snapshots,
            IrsLayer::new(phi)?,
            MlpRegressor::from_text(regressor_text)?,
        )
    }

    /// Model artifact plus a sidecar with one wrapped phase per line.
    pub fn save(&self, model_path: &Path, phases_path: &Path) -> Result<()> {
        std::fs::write(model_path, self.to_text()).map_err(|e| Error::io(model_path, e))?;
        std::fs::write(phases_path, phases_to_text(&self.export_phases()))
            .map_err(|e| Error::io(phases_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| e.at_path(path))
    }
}

/// `theta = 90 o_1`, `phi = 180 o_2`.
pub fn output_to_doa(o1: f64, o2: f64) -> DoA {
    denormalize_label([o1.clamp(0.0, 1.0), o2.clamp(0.0, 1.0)])
        .expect("clamped label lies in the field of view")
}

/// One phase in radians per line.
pub fn phases_to_text(phases: &PhaseVector) -> String {
    phases
        .as_slice()
        .iter()
        .map(|p| format!("{p:?}\n"))
        .collect()
}

pub fn phases_from_text(text: &str) -> Result<PhaseVector> {
    let values: Result<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse()
                .map_err(|_| Error::format("phases", format!("bad value '{l}'")))
        })
        .collect();
    PhaseVector::new(values?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub enabled: bool,
    pub factor: f64,
    pub patience: usize,
    pub min_learning_rate: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            factor: 0.5,
            patience: 5,
            min_learning_rate: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub lr_schedule: LrSchedule,
    pub snr_set_db: Vec<f64>,
    pub seed: u64,
    /// Keep the IRS phases at their initialization.
    pub freeze_irs: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.015,
            optimizer: OptimizerKind::Adam,
            lr_schedule: LrSchedule::default(),
            snr_set_db: DEFAULT_SNR_SET_DB.to_vec(),
            seed: 0,
            freeze_irs: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if self.snr_set_db.is_empty() || self.snr_set_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(
                "training SNR set must hold finite values".into(),
            ));
        }
        let s = &self.lr_schedule;
        if !(s.factor > 0.0 && s.factor <= 1.0) || !(s.min_learning_rate >= 0.0) {
            return Err(Error::Config("invalid learning-rate schedule".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,learning_rate\n");
        let _ = writeln!(s, "0,,{:e},", self.initial_val_loss);
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e}",
                r.epoch, r.train_loss, r.val_loss, r.learning_rate
            );
        }
        s
    }

    pub fn final_val_loss(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_val_loss, |r| r.val_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: EndToEndModel,
    pub curve: LearningCurve,
}

/// Per-row AWGN with each row's SNR drawn from `snr_set`.
pub fn sample_training_noise<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    snr_set: &[f64],
    received_power: f64,
    num_elements: usize,
    snapshots: usize,
    rng: &mut R,
) -> Array2<f64> {
    let mut n = Array2::zeros((rows, cols));
    for mut row in n.rows_mut() {
        let snr = snr_set[rng.random_range(0..snr_set.len())];
        let std = noise_std(snr, received_power, num_elements, snapshots);
        row.mapv_inplace(|_| std * rng.sample::<f64, _>(StandardNormal));
    }
    n
}

/// Train a fresh model whose initialization is drawn from `cfg.seed`.
pub fn train_end_to_end(
    data: &TrainingDataset,
    geometry: &SceneGeometry,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    let model = EndToEndModel::new(
        geometry,
        data.train.snapshots(),
        &mut substream(cfg.seed, "init", 0),
    )?;
    train_model(model, data, cfg)
}

/// Continue training `model` on `data`.
pub fn train_model(
    mut model: EndToEndModel,
    data: &TrainingDataset,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if data.geometry_hash != model.geometry.content_hash() {
        return Err(Error::Training(
            "dataset was generated for a different geometry".into(),
        ));
    }
    if data.train.snapshots() != model.snapshots || data.train.width() != 2 * model.num_cells() {
        return Err(Error::shape(
            "training inputs",
            format!("{} x {}", model.snapshots, 2 * model.num_cells()),
            format!("{} x {}", data.train.snapshots(), data.train.width()),
        ));
    }
    let noise_for = |set: &LabeledSet, rng: &mut crate::rng::Rng| {
        sample_training_noise(
            set.len(),
            model.snapshots * 2 * model.num_elements(),
            &cfg.snr_set_db,
            model.received_power,
            model.num_elements(),
            model.snapshots,
            rng,
        )
    };
    let val_noise = if data.validation.is_empty() {
        None
    } else {
        Some(noise_for(
            &data.validation,
            &mut substream(cfg.seed, "validation-noise", 0),
        ))
    };
    let validate = |m: &EndToEndModel| -> Result<f64> {
        match &val_noise {
            Some(n) => m.evaluate_loss(
                data.validation.inputs().view(),
                data.validation.labels().view(),
                Some(n.view()),
            ),
            None => Ok(f64::NAN),
        }
    };

    let mut curve = LearningCurve {
        initial_val_loss: validate(&model)?,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut opt = AdamState::new(cfg.optimizer, cfg.learning_rate);
    let mut best = curve.initial_val_loss;
    let mut wait = 0;
    let n = data.train.len();
    let width = model.snapshots * 2 * model.num_elements();

    for epoch in 1..=cfg.epochs {
        let mut rng = substream(cfg.seed, "epoch", epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (k, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.train.inputs().select(Axis(0), idx);
            let y = data.train.labels().select(Axis(0), idx);
            let noise = sample_training_noise(
                idx.len(),
                width,
                &cfg.snr_set_db,
                model.received_power,
                model.num_elements(),
                model.snapshots,
                &mut rng,
            );
            let g =
                model.loss_and_gradients(x.view(), y.view(), Some(noise.view()), Some(&mut rng))?;
            if !g.loss.is_finite()
                || !g.phi.iter().all(|v| v.is_finite())
                || !g.regressor.is_finite()
            {
                return Err(Error::Training(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {k}"
                )));
            }
            total += g.loss * idx.len() as f64;
            let mut grads: Vec<&[f64]> = Vec::new();
            let mut params: Vec<&mut [f64]> = Vec::new();
            if !cfg.freeze_irs {
                grads.push(&g.phi);
                params.push(&mut model.irs.phi);
            }
            grads.extend(g.regressor.slices());
            params.extend(model.regressor.params_mut());
            opt.step(&mut params, &grads)?;
        }
        let val_loss = validate(&model)?;
        curve.epochs.push(EpochRecord {
            epoch,
            train_loss: total / n as f64,
            val_loss,
            learning_rate: opt.learning_rate,
        });
        if cfg.lr_schedule.enabled && !val_loss.is_nan() {
            if val_loss < best {
                best = val_loss;
                wait = 0;
            } else {
                wait += 1;
                if wait >= cfg.lr_schedule.patience {
                    opt.learning_rate = (opt.learning_rate * cfg.lr_schedule.factor)
                        .max(cfg.lr_schedule.min_learning_rate);
                    wait = 0;
                }
            }
        }
    }
    Ok(TrainingOutcome { model, curve })
}
