//! Small dense network with hand-written backpropagation.
//!
//! Batches are row-major: one sample per row. A model keeps a version counter
//! that changes whenever its parameters are handed out mutably, so a
//! [`ForwardCache`] taken before an update cannot be used for backward.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights =
            Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-limit..limit));
        Self {
            weights,
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn check(&self) -> Result<()> {
        if self.biases.len() != self.outputs() {
            return Err(Error::shape(
                "dense biases",
                self.outputs(),
                self.biases.len(),
            ));
        }
        if self
            .weights
            .iter()
            .chain(self.biases.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Training("non-finite dense parameter".into()));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.biases;
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate })
    }

    /// Inverted-dropout mask: each entry is 0 or `1 / (1 - rate)`.
    pub fn mask(&self, rows: usize, cols: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        Array2::from_shape_simple_fn((rows, cols), || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Dropout(DropoutSpec),
}

/// Hidden widths and activations of the FC regressor, with the dropout that
/// follows each hidden layer.
pub const FC_HIDDEN: [(usize, f64); 3] = [(86, 0.25), (48, 0.25), (32, 0.5)];

#[derive(Debug, Clone, PartialEq)]
pub struct MlpRegressor {
    /// `(L, 2 M^R)`; flattened row-major to the first layer's width.
    input_shape: (usize, usize),
    layers: Vec<Layer>,
    version: u64,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer, plus the final output last.
    values: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("cache holds the input at least")
    }
}

/// Per dense layer gradients, in layer order, plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dense: Vec<(Array2<f64>, Array1<f64>)>,
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.dense
            .iter()
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl MlpRegressor {
    pub fn new(input_shape: (usize, usize), layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_shape.0 * input_shape.1;
        if width == 0 {
            return Err(Error::Config("empty regressor input".into()));
        }
        for layer in &layers {
            if let Layer::Dense(d) = layer {
                d.check()?;
                if d.inputs() != width {
                    return Err(Error::shape("dense layer inputs", width, d.inputs()));
                }
                width = d.outputs();
            }
        }
        Ok(Self {
            input_shape,
            layers,
            version: 0,
        })
    }

    /// Flatten -> Dense(86, tanh) -> Dropout(.25) -> Dense(48, tanh) ->
    /// Dropout(.25) -> Dense(32, tanh) -> Dropout(.5) -> Dense(2, sigmoid).
    pub fn fc<R: Rng + ?Sized>(input_shape: (usize, usize), rng: &mut R) -> Self {
        let mut width = input_shape.0 * input_shape.1;
        let mut layers = Vec::new();
        for (units, rate) in FC_HIDDEN {
            layers.push(Layer::Dense(DenseLayer::glorot(
                width,
                units,
                Activation::Tanh,
                rng,
            )));
            layers.push(Layer::Dropout(DropoutSpec { rate }));
            width = units;
        }
        layers.push(Layer::Dense(DenseLayer::glorot(
            width,
            2,
            Activation::Sigmoid,
            rng,
        )));
        Self::new(input_shape, layers).expect("fc shapes are consistent")
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }

    pub fn output_len(&self) -> usize {
        self.dense_layers()
            .last()
            .map_or(self.input_len(), |d| d.outputs())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Dropout(_) => None,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.dense_layers().map(DenseLayer::parameter_count).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable parameter slices in the order of [`Gradients::slices`].
    /// Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some(d),
                Layer::Dropout(_) => None,
            })
            .flat_map(|d| {
                [
                    d.weights.as_slice_mut().expect("standard layout"),
                    d.biases.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.dense_layers()
            .flat_map(|d| {
                [
                    d.weights.as_slice().expect("standard layout"),
                    d.biases.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Forward pass on a batch `B x input_len`. Dropout is active only when
    /// an rng is supplied.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardCache> {
        if x.ncols() != self.input_len() {
            return Err(Error::shape(
                "regressor input width",
                self.input_len(),
                x.ncols(),
            ));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut masks = Vec::with_capacity(self.layers.len());
        values.push(x.to_owned());
        for layer in &self.layers {
            let input = values.last().expect("nonempty");
            let (out, mask) = match layer {
                Layer::Dense(d) => (d.forward(input.view()), None),
                Layer::Dropout(spec) => match rng.as_deref_mut() {
                    Some(r) if spec.rate > 0.0 => {
                        let m = spec.mask(input.nrows(), input.ncols(), r);
                        (input * &m, Some(m))
                    }
                    _ => (input.clone(), None),
                },
            };
            values.push(out);
            masks.push(mask);
        }
        Ok(ForwardCache {
            version: self.version,
            values,
            masks,
        })
    }

    /// Inference-mode prediction.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, None)?.values.pop().expect("nonempty"))
    }

    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Result<Gradients> {
        if cache.version != self.version || cache.values.len() != self.layers.len() + 1 {
            return Err(Error::Training("forward cache is stale".into()));
        }
        let out = cache.output();
        if d_out.dim() != out.dim() {
            return Err(Error::shape("output gradient", out.len(), d_out.len()));
        }
        let mut delta = d_out.to_owned();
        let mut dense = Vec::new();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            match layer {
                Layer::Dense(d) => {
                    let y = &cache.values[k + 1];
                    let act = d.activation;
                    ndarray::Zip::from(&mut delta)
                        .and(y)
                        .for_each(|g, &yv| *g *= act.derivative_from_output(yv));
                    let x = &cache.values[k];
                    let dw = delta.t().dot(x);
                    let db = delta.sum_axis(Axis(0));
                    delta = delta.dot(&d.weights);
                    dense.push((dw, db));
                }
                Layer::Dropout(_) => {
                    if let Some(m) = &cache.masks[k] {
                        delta *= m;
                    }
                }
            }
        }
        dense.reverse();
        Ok(Gradients {
            dense,
            input: delta,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("irs-doa-mlp 1\n");
        let _ = writeln!(s, "input {} {}", self.input_shape.0, self.input_shape.1);
        let _ = writeln!(s, "layers {}", self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let _ = writeln!(
                        s,
                        "dense {} {} {}",
                        d.inputs(),
                        d.outputs(),
                        d.activation.name()
                    );
                }
                Layer::Dropout(spec) => {
                    let _ = writeln!(s, "dropout {}", spec.rate);
                }
            }
        }
        for p in self.params() {
            write_floats(&mut s, p);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| parse_err(format!("missing {what}")))
        };
        if next("header")?.trim() != "irs-doa-mlp 1" {
            return Err(parse_err("unrecognized header".into()));
        }
        let input = fields(next("input line")?, "input", 2)?;
        let input_shape = (parse_usize(input[0])?, parse_usize(input[1])?);
        let count = parse_usize(fields(next("layer count")?, "layers", 1)?[0])?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next("layer")?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("dense") => {
                    let f: Vec<&str> = it.collect();
                    if f.len() != 3 {
                        return Err(parse_err(format!("bad dense line '{line}'")));
                    }
                    let act = Activation::parse(f[2])
                        .ok_or_else(|| parse_err(format!("unknown activation '{}'", f[2])))?;
                    layers.push(Layer::Dense(DenseLayer::zeros(
                        parse_usize(f[0])?,
                        parse_usize(f[1])?,
                        act,
                    )));
                }
                Some("dropout") => {
                    let rate = it
                        .next()
                        .ok_or_else(|| parse_err("dropout rate missing".into()))?;
                    layers.push(Layer::Dropout(DropoutSpec::new(parse_f64(rate)?)?));
                }
                _ => return Err(parse_err(format!("bad layer line '{line}'"))),
            }
        }
        let mut model = Self {
            input_shape,
            layers,
            version: 0,
        };
        for p in model.params_mut() {
            let values = read_floats(next("parameter line")?)?;
            if values.len() != p.len() {
                return Err(Error::shape(
                    "serialized parameter block",
                    p.len(),
                    values.len(),
                ));
            }
            p.copy_from_slice(&values);
        }
        model.version = 0;
        Self::new(model.input_shape, model.layers)
    }
}

/// Round-trip exact float line.
pub(crate) fn write_floats(s: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s.push('\n');
}

pub(crate) fn read_floats(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace().map(parse_f64).collect()
}

fn fields<'a>(line: &'a str, key: &str, n: usize) -> Result<Vec<&'a str>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(parse_err(format!("expected '{key}' line")));
    }
    let f: Vec<&str> = it.collect();
    if f.len() != n {
        return Err(parse_err(format!("'{key}' line needs {n} fields")));
    }
    Ok(f)
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(format!("bad integer '{s}'")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| parse_err(format!("bad float '{s}'")))
}

fn parse_err(reason: String) -> Error {
    Error::format("model", reason)
}

/// Mean squared error over all entries.
pub fn mse_loss(z: &[f64], target: &[f64]) -> Result<f64> {
    if z.len() != target.len() {
        return Err(Error::shape("mse target", z.len(), target.len()));
    }
    if z.is_empty() {
        return Err(Error::Degenerate("empty mse input".into()));
    }
    Ok(z.iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / z.len() as f64)
}

/// `2 (z - target) / n`.
pub fn mse_grad(z: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if z.len() != target.len() {
        return Err(Error::shape("mse target", z.len(), target.len()));
    }
    let n = z.len() as f64;
    Ok(z.iter()
        .zip(target)
        .map(|(a, b)| 2.0 * (a - b) / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    timestep: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            timestep: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    /// One update over parallel lists of parameter and gradient blocks.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer blocks", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::shape("optimizer block", p.len(), g.len()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Training(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.timestep += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.timestep as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * gi;
                        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn fd_check(model: &mut MlpRegressor, x: &Array2<f64>, t: &Array2<f64>) {
        let loss = |m: &MlpRegressor| {
            let y = m.predict(x.view()).unwrap();
            mse_loss(y.as_slice().unwrap(), t.as_slice().unwrap()).unwrap()
        };
        let cache = model.forward(x.view(), None).unwrap();
        let g = mse_grad(cache.output().as_slice().unwrap(), t.as_slice().unwrap()).unwrap();
        let g = Array2::from_shape_vec(t.dim(), g).unwrap();
        let grads = model.backward(&cache, g.view()).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let h = 1e-6;
        for (b, block) in analytic.iter().enumerate() {
            for i in (0..block.len()).step_by(1 + block.len() / 40) {
                let orig = model.params()[b][i];
                model.params_mut()[b][i] = orig + h;
                let up = loss(model);
                model.params_mut()[b][i] = orig - h;
                let down = loss(model);
                model.params_mut()[b][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (block[i] - fd).abs() / fd.abs().max(1.0);
                assert!(
                    err <= 1e-6,
                    "block {b} index {i}: analytic {} fd {fd}",
                    block[i]
                );
            }
        }
        // input gradient
        for j in (0..x.ncols()).step_by(7) {
            let mut xp = x.clone();
            xp[[0, j]] += h;
            let mut xm = x.clone();
            xm[[0, j]] -= h;
            let lp = mse_loss(
                model.predict(xp.view()).unwrap().as_slice().unwrap(),
                t.as_slice().unwrap(),
            )
            .unwrap();
            let lm = mse_loss(
                model.predict(xm.view()).unwrap().as_slice().unwrap(),
                t.as_slice().unwrap(),
            )
            .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((grads.input[[0, j]] - fd).abs() / fd.abs().max(1.0) <= 1e-6);
        }
    }

    #[test]
    fn fc_parameter_count() {
        let mut r = rng::seeded(0);
        let m = MlpRegressor::fc((10, 50), &mut r);
        assert_eq!(m.parameter_count(), 43_086 + 4_176 + 1_568 + 66);
        assert_eq!(m.parameter_count(), 48_896);
        assert_eq!(
            DenseLayer::zeros(32, 2, Activation::Sigmoid).parameter_count(),
            66
        );
        assert_eq!(m.output_len(), 2);
    }

    #[test]
    fn zero_model_outputs_half() {
        let mut r = rng::seeded(1);
        let mut m = MlpRegressor::fc((2, 4), &mut r);
        for p in m.params_mut() {
            p.fill(0.0);
        }
        let x = Array2::from_shape_fn((3, 8), |(i, j)| (i * j) as f64 - 2.0);
        let y = m.predict(x.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn inference_is_deterministic_and_bounded() {
        let mut r = rng::seeded(2);
        let m = MlpRegressor::fc((10, 50), &mut r);
        let x = Array2::from_shape_simple_fn((4, 500), || r.random_range(-3.0..3.0));
        let a = m.predict(x.view()).unwrap();
        let b = m.predict(x.view()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(m.predict(Array2::zeros((1, 499)).view()).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut r = rng::seeded(3);
        let m = MlpRegressor::fc((2, 6), &mut r);
        let x = Array2::from_shape_simple_fn((5, 12), || r.random_range(-1.0..1.0));
        let c = m.forward(x.view(), Some(&mut r)).unwrap();
        let g = m.backward(&c, Array2::zeros((5, 2)).view()).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_closed_form() {
        let mut r = rng::seeded(4);
        let d = DenseLayer::glorot(3, 2, Activation::Linear, &mut r);
        let w = d.weights.clone();
        let m = MlpRegressor::new((1, 3), vec![Layer::Dense(d)]).unwrap();
        let x = Array2::from_shape_vec((1, 3), vec![0.3, -1.2, 2.0]).unwrap();
        let t = [0.5, -0.25];
        let c = m.forward(x.view(), None).unwrap();
        // E = 1/2 ||Wx - t||^2  ->  dE/dy = Wx - t
        let resid = Array2::from_shape_fn((1, 2), |(_, i)| c.output()[[0, i]] - t[i]);
        let g = m.backward(&c, resid.view()).unwrap();
        let wx = w.dot(&x.row(0));
        for i in 0..2 {
            for j in 0..3 {
                assert_relative_eq!(
                    g.dense[0].0[[i, j]],
                    (wx[i] - t[i]) * x[[0, j]],
                    max_relative = 1e-14
                );
            }
        }
    }

    #[test]
    fn full_fc_gradients_match_finite_differences() {
        let mut r = rng::seeded(5);
        let mut m = MlpRegressor::fc((3, 8), &mut r);
        let x = Array2::from_shape_simple_fn((4, 24), || r.random_range(-1.0..1.0));
        let t = Array2::from_shape_simple_fn((4, 2), || r.random_range(0.0..1.0));
        fd_check(&mut m, &x, &t);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut r = rng::seeded(6);
        let mut m = MlpRegressor::fc((1, 4), &mut r);
        let x = Array2::ones((1, 4));
        let c = m.forward(x.view(), None).unwrap();
        m.params_mut()[0][0] += 0.1;
        assert!(m.backward(&c, Array2::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let spec = DropoutSpec::new(0.25).unwrap();
        let mut r = rng::seeded(7);
        let mask = spec.mask(100_000, 1, &mut r);
        let activation = 0.7;
        let mean = mask.iter().map(|m| m * activation).sum::<f64>() / 1e5;
        assert!((mean / activation - 1.0).abs() < 0.01);
        assert!(DropoutSpec::new(1.0).is_err());
    }

    #[test]
    fn dropout_masks_vary_in_training() {
        let mut r = rng::seeded(8);
        let m = MlpRegressor::fc((1, 10), &mut r);
        let x = Array2::from_shape_simple_fn((2, 10), || r.random_range(-1.0..1.0));
        let a = m.forward(x.view(), Some(&mut r)).unwrap().output().clone();
        let b = m.forward(x.view(), Some(&mut r)).unwrap().output().clone();
        assert_ne!(a, b);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert_eq!(mse_grad(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(mse_loss(&[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(mse_grad(&[1.0], &[0.0]).unwrap(), vec![2.0]);
        assert!(mse_loss(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut r = rng::seeded(9);
        let z: Vec<f64> = (0..7).map(|_| r.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..7).map(|_| r.random_range(-2.0..2.0)).collect();
        let g = mse_grad(&z, &t).unwrap();
        let h = 1e-5;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (mse_loss(&zp, &t).unwrap() - mse_loss(&zm, &t).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-8);
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = vec![0.3, -1.0, 2.0];
        let before = p.clone();
        let mut opt = AdamState::new(OptimizerKind::Adam, 0.015);
        for _ in 0..5 {
            opt.step(&mut [p.as_mut_slice()], &[&[0.0, 0.0, 0.0]])
                .unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.timestep(), 5);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, 1.0, 1.0];
        let g = [0.5, -3.0, 1e-3];
        let mut opt = AdamState::new(OptimizerKind::Adam, 0.015);
        opt.step(&mut [p.as_mut_slice()], &[&g]).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // mhat = g, vhat = g^2  ->  step = lr * g / (|g| + eps)
            let expected = 1.0 - 0.015 * gi / (gi.abs() + 1e-8);
            assert_relative_eq!(*pi, expected, max_relative = 1e-14);
            assert_relative_eq!((1.0 - pi).abs(), 0.015, max_relative = 1e-4);
        }
    }

    #[test]
    fn sgd_is_literal_descent() {
        let mut p = vec![1.0, -2.0];
        let mut opt = AdamState::new(OptimizerKind::Sgd, 0.1);
        opt.step(&mut [p.as_mut_slice()], &[&[0.5, 0.25]]).unwrap();
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
        assert!(opt.step(&mut [p.as_mut_slice()], &[&[0.5]]).is_err());
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut r = rng::seeded(10);
        let m = MlpRegressor::fc((10, 50), &mut r);
        let back = MlpRegressor::from_text(&m.to_text()).unwrap();
        assert_eq!(back.layers(), m.layers());
        assert_eq!(back.input_shape(), m.input_shape());
        assert!(MlpRegressor::from_text("irs-doa-mlp 2\n").is_err());
        let truncated: String = m
            .to_text()
            .lines()
            .take(9)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(MlpRegressor::from_text(&truncated).is_err());
    }

    proptest! {
        #[test]
        fn activation_derivative_identities(x in -20.0f64..20.0) {
            let t = x.tanh();
            let h = 1e-6;
            prop_assert!((Activation::Tanh.derivative_from_output(t) - (1.0 - t * t)).abs() == 0.0);
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
            let fd = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            prop_assert!((Activation::Sigmoid.derivative_from_output(s) - fd).abs() < 1e-9);
            let fd = ((x + h).tanh() - (x - h).tanh()) / (2.0 * h);
            prop_assert!((Activation::Tanh.derivative_from_output(t) - fd).abs() < 1e-9);
        }
    }
}
