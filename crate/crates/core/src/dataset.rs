//! Training inputs observed at the IRS cells and received-signal test sets.
//!
//! A training row is the interleaved IRS observation `a_rt(theta, phi) s_l`
//! for each snapshot `l`, laid out snapshot-major (`L x 2 M^R` flattened).
//! Noise is not part of the stored inputs; it is drawn inside the training
//! forward pass.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    awgn_complex_with, interleave, received_signal, ChannelModel, PhaseVector, SourceSignal, C64,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{DoA, SceneGeometry, PHI_MAX_DEG, THETA_MAX_DEG};
use crate::nn::{read_floats, write_floats};
use crate::rng::substream;

pub const DEFAULT_SNR_SET_DB: [f64; 5] = [-20.0, -10.0, 0.0, 10.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    /// Test examples per SNR value.
    pub n_test: usize,
    pub validation_fraction: f64,
    /// Training angle grid step in degrees.
    pub resolution_deg: f64,
    pub snr_set_db: Vec<f64>,
    pub snapshots: usize,
    pub seed: u64,
    /// Draw training angles from the grid rather than continuously.
    pub grid_restricted: bool,
    /// Snap test angles to the training grid.
    pub snap_test_to_grid: bool,
    /// Per-snapshot source phase rotation in radians.
    pub source_rotation: f64,
    /// Draw the source's initial phase per example; zero otherwise.
    pub random_initial_phase: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 25_000,
            n_test: 1_000,
            validation_fraction: 0.2,
            resolution_deg: 0.5,
            snr_set_db: DEFAULT_SNR_SET_DB.to_vec(),
            snapshots: 10,
            seed: 0,
            grid_restricted: true,
            snap_test_to_grid: false,
            source_rotation: 0.0,
            random_initial_phase: true,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.n_test < 1 || self.snapshots < 1 {
            return Err(Error::Config(
                "dataset counts must be positive (n_train >= 2)".into(),
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(
                "validation fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.resolution_deg > 0.0) {
            return Err(Error::Config("angle resolution must be positive".into()));
        }
        if self.snr_set_db.is_empty() || self.snr_set_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("SNR set must be nonempty".into()));
        }
        if !self.source_rotation.is_finite() {
            return Err(Error::Config("source rotation must be finite".into()));
        }
        Ok(())
    }

    fn grid_count(&self, max: f64) -> usize {
        (max / self.resolution_deg + 1e-9).floor() as usize + 1
    }

    fn snap(&self, v: f64, max: f64) -> f64 {
        ((v / self.resolution_deg).round() * self.resolution_deg).clamp(0.0, max)
    }
}

/// `(theta / 90, phi / 180)`.
pub fn normalize_label(doa: DoA) -> [f64; 2] {
    [doa.theta() / THETA_MAX_DEG, doa.phi() / PHI_MAX_DEG]
}

pub fn denormalize_label(label: [f64; 2]) -> Result<DoA> {
    if !label.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(Error::OutOfFov {
            theta: label[0] * THETA_MAX_DEG,
            phi: label[1] * PHI_MAX_DEG,
        });
    }
    DoA::new(label[0] * THETA_MAX_DEG, label[1] * PHI_MAX_DEG)
}

/// Inputs and normalized labels, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    snapshots: usize,
    inputs: Array2<f64>,
    labels: Array2<f64>,
}

impl LabeledSet {
    pub fn new(snapshots: usize, inputs: Array2<f64>, labels: Array2<f64>) -> Result<Self> {
        if labels.ncols() != 2 {
            return Err(Error::shape("label columns", 2, labels.ncols()));
        }
        if inputs.nrows() != labels.nrows() {
            return Err(Error::shape("label rows", inputs.nrows(), labels.nrows()));
        }
        if snapshots == 0 || inputs.ncols() % (2 * snapshots) != 0 {
            return Err(Error::shape(
                "input width",
                format!("multiple of {}", 2 * snapshots),
                inputs.ncols(),
            ));
        }
        if labels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("labels must lie in [0, 1]".into()));
        }
        Ok(Self {
            snapshots,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    /// Interleaved width of one snapshot (`2 M`).
    pub fn width(&self) -> usize {
        self.inputs.ncols() / self.snapshots
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn example(&self, i: usize) -> (ArrayView1<'_, f64>, [f64; 2]) {
        (
            self.inputs.row(i),
            [self.labels[[i, 0]], self.labels[[i, 1]]],
        )
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            snapshots: self.snapshots,
            inputs: self.inputs.select(ndarray::Axis(0), idx),
            labels: self.labels.select(ndarray::Axis(0), idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub geometry_hash: String,
    pub config: DatasetConfig,
    pub train: LabeledSet,
    pub validation: LabeledSet,
}

fn training_angle<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> DoA {
    if cfg.grid_restricted {
        let i = rng.random_range(0..cfg.grid_count(THETA_MAX_DEG));
        let j = rng.random_range(0..cfg.grid_count(PHI_MAX_DEG));
        DoA::clamped(i as f64 * cfg.resolution_deg, j as f64 * cfg.resolution_deg)
    } else {
        continuous_angle(rng)
    }
}

fn continuous_angle<R: Rng + ?Sized>(rng: &mut R) -> DoA {
    DoA::clamped(
        rng.random_range(0.0..=THETA_MAX_DEG),
        rng.random_range(0.0..=PHI_MAX_DEG),
    )
}

fn random_source<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> SourceSignal {
    let psi = rng.random_range(-PI..PI);
    let psi = if cfg.random_initial_phase { psi } else { 0.0 };
    SourceSignal::exponential(cfg.snapshots, cfg.source_rotation, psi)
        .expect("validated snapshot count")
}

/// Interleaved IRS observation `a_rt s_l` for every snapshot.
pub fn irs_observation(channel: &ChannelModel, doa: DoA, source: &SourceSignal) -> Vec<f64> {
    let rt = channel.steering_rt(doa);
    let mut row = Vec::with_capacity(2 * rt.len() * source.snapshots());
    for &s in source.samples() {
        let r: Vec<C64> = rt.iter().map(|a| a * s).collect();
        row.extend(interleave(&r));
    }
    row
}

pub fn generate_training_set(geom: &SceneGeometry, cfg: &DatasetConfig) -> Result<TrainingDataset> {
    generate_training_set_with(geom, cfg, Execution::default())
}

pub fn generate_training_set_with(
    geom: &SceneGeometry,
    cfg: &DatasetConfig,
    exec: Execution,
) -> Result<TrainingDataset> {
    cfg.validate()?;
    let channel = ChannelModel::new(geom)?;
    let n = cfg.n_train;
    let rows = exec.map(n, |i| {
        let mut rng = substream(cfg.seed, "train-example", i as u64);
        let doa = training_angle(cfg, &mut rng);
        let source = random_source(cfg, &mut rng);
        (
            irs_observation(&channel, doa, &source),
            normalize_label(doa),
        )
    });
    let width = 2 * channel.num_cells() * cfg.snapshots;
    let mut inputs = Array2::zeros((n, width));
    let mut labels = Array2::zeros((n, 2));
    for (i, (x, y)) in rows.into_iter().enumerate() {
        inputs.row_mut(i).assign(&ArrayView1::from(&x));
        labels[[i, 0]] = y[0];
        labels[[i, 1]] = y[1];
    }
    let all = LabeledSet::new(cfg.snapshots, inputs, labels)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(cfg.seed, "split", 0));
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let (mut val_idx, mut train_idx) = (val_idx.to_vec(), train_idx.to_vec());
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(TrainingDataset {
        geometry_hash: geom.content_hash(),
        config: cfg.clone(),
        train: all.select(&train_idx),
        validation: all.select(&val_idx),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub doa: DoA,
    /// `M^A x L` received signal.
    pub y: Array2<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    /// `f64::INFINITY` for noiseless data.
    pub snr_db: f64,
    pub snapshots: usize,
    pub cases: Vec<TestCase>,
}

/// One test collection per SNR in `cfg.snr_set_db`.
pub fn generate_test_set(
    channel: &ChannelModel,
    cfg: &DatasetConfig,
    phases: &PhaseVector,
) -> Result<Vec<TestSet>> {
    cfg.snr_set_db
        .iter()
        .map(|&snr| generate_test_set_at(channel, cfg, phases, snr, Execution::default()))
        .collect()
}

/// Test collection at one SNR. An infinite SNR gives noiseless signals.
/// Draws depend only on the seed, the SNR and the example index.
pub fn generate_test_set_at(
    channel: &ChannelModel,
    cfg: &DatasetConfig,
    phases: &PhaseVector,
    snr_db: f64,
    exec: Execution,
) -> Result<TestSet> {
    cfg.validate()?;
    channel.check_phases(phases)?;
    let mapping = channel.phased_mapping(phases)?;
    let tag = format!("test-example/{snr_db}");
    let m_a = channel.num_elements();
    let cases = exec.map(cfg.n_test, |k| {
        let mut rng = substream(cfg.seed, &tag, k as u64);
        let mut doa = continuous_angle(&mut rng);
        if cfg.snap_test_to_grid {
            doa = DoA::clamped(
                cfg.snap(doa.theta(), THETA_MAX_DEG),
                cfg.snap(doa.phi(), PHI_MAX_DEG),
            );
        }
        let source = random_source(cfg, &mut rng);
        let a = mapping.dot(&channel.steering_rt(doa));
        let noise = snr_db.is_finite().then(|| {
            awgn_complex_with(
                snr_db,
                channel.received_power(),
                m_a,
                cfg.snapshots,
                &mut rng,
            )
        });
        let y = received_signal(a.view(), source.samples(), noise.as_ref().map(|n| n.view()))
            .expect("consistent shapes");
        TestCase { doa, y }
    });
    Ok(TestSet {
        snr_db,
        snapshots: cfg.snapshots,
        cases,
    })
}

const DATASET_HEADER: &str = "# irs-doa dataset 1";

/// Columnar text: a header with the geometry hash and configuration, then
/// one row per example `split label_theta label_phi x_0 ... x_{n-1}`.
pub fn dataset_to_text(ds: &TrainingDataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{DATASET_HEADER}");
    let _ = writeln!(s, "# geometry_hash {}", ds.geometry_hash);
    let _ = writeln!(
        s,
        "# config {}",
        serde_json::to_string(&ds.config).expect("config serializes")
    );
    let _ = writeln!(
        s,
        "# snapshots {} width {}",
        ds.train.snapshots(),
        ds.train.inputs().ncols()
    );
    let _ = writeln!(s, "# columns split label_theta label_phi input...");
    for (name, set) in [("train", &ds.train), ("validation", &ds.validation)] {
        for i in 0..set.len() {
            let mut row = vec![set.labels[[i, 0]], set.labels[[i, 1]]];
            row.extend(set.inputs.row(i).iter());
            s.push_str(name);
            s.push(' ');
            write_floats(&mut s, &row);
        }
    }
    s
}

/// Parse a dataset and check it was generated for `geom`.
pub fn dataset_from_text(text: &str, geom: &SceneGeometry) -> Result<TrainingDataset> {
    let err = |r: String| Error::format("dataset", r);
    let mut lines = text.lines();
    if lines.next() != Some(DATASET_HEADER) {
        return Err(err("unrecognized header".into()));
    }
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| err(format!("missing {key}")))?;
        line.strip_prefix(&format!("# {key} "))
            .map(str::to_owned)
            .ok_or_else(|| err(format!("expected '{key}' header")))
    };
    let hash = header("geometry_hash")?;
    if hash != geom.content_hash() {
        return Err(err(format!(
            "geometry hash {hash} does not match {}",
            geom.content_hash()
        )));
    }
    let config: DatasetConfig =
        serde_json::from_str(&header("config")?).map_err(|e| err(e.to_string()))?;
    let dims: Vec<usize> = header("snapshots")?
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if dims.len() != 2 {
        return Err(err("bad snapshots line".into()));
    }
    let (snapshots, width) = (dims[0], dims[1]);
    header("columns")?;
    let mut parts: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    for line in lines {
        let (name, rest) = line
            .split_once(' ')
            .ok_or_else(|| err("empty row".into()))?;
        let slot = match name {
            "train" => 0,
            "validation" => 1,
            _ => return Err(err(format!("unknown split '{name}'"))),
        };
        let values = read_floats(rest)?;
        if values.len() != width + 2 {
            return Err(Error::shape("dataset row", width + 2, values.len()));
        }
        parts[slot].1.extend_from_slice(&values[..2]);
        parts[slot].0.extend_from_slice(&values[2..]);
    }
    let build = |(x, y): (Vec<f64>, Vec<f64>)| -> Result<LabeledSet> {
        let n = y.len() / 2;
        LabeledSet::new(
            snapshots,
            Array2::from_shape_vec((n, width), x).map_err(|e| err(e.to_string()))?,
            Array2::from_shape_vec((n, 2), y).map_err(|e| err(e.to_string()))?,
        )
    };
    let [train, validation] = parts;
    Ok(TrainingDataset {
        geometry_hash: hash,
        config,
        train: build(train)?,
        validation: build(validation)?,
    })
}

pub fn save_dataset(ds: &TrainingDataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_text(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, geom: &SceneGeometry) -> Result<TrainingDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_text(&text, geom).map_err(|e| e.at_path(path))
}
