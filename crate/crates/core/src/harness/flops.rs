//! Per-sample FLOPs of each estimator, evaluated from closed-form counts.
//!
//! Neural counts are `2 x MACs` for one sample and are reported after dividing
//! by the inference batch size. ML counts use
//! 8 real FLOPs per complex multiply-accumulate.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsParams {
    pub m_a: usize,
    pub m_r: usize,
    pub snapshots: usize,
    pub g_theta: usize,
    pub g_phi: usize,
    /// Riemannian iterations of the CRLB design.
    pub iterations: usize,
    pub batch: usize,
    pub fc_units: Vec<usize>,
    pub cnn_filters: Vec<usize>,
    pub cnn_kernel: usize,
    pub cnn_dense: Vec<usize>,
    pub gru_units: Vec<usize>,
    pub proposed_filters: Vec<usize>,
    pub proposed_kernels: Vec<usize>,
    pub proposed_dense: Vec<usize>,
}

impl Default for FlopsParams {
    fn default() -> Self {
        Self {
            m_a: 25,
            m_r: 25,
            snapshots: 10,
            g_theta: 181,
            g_phi: 361,
            iterations: 100,
            batch: 64,
            fc_units: vec![86, 48, 32, 2],
            cnn_filters: vec![24, 64, 96, 64, 24],
            cnn_kernel: 3,
            cnn_dense: vec![32, 2],
            gru_units: vec![64, 32],
            proposed_filters: vec![64, 32],
            proposed_kernels: vec![5, 3],
            proposed_dense: vec![64, 32, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsRow {
    pub method: &'static str,
    pub flops_per_sample: f64,
    pub formula: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub rows: Vec<FlopsRow>,
}

impl FlopsReport {
    pub fn get(&self, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .map(|r| r.flops_per_sample)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,flops_per_sample,formula\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.4e},\"{}\"\n",
                r.method, r.flops_per_sample, r.formula
            ));
        }
        s
    }
}

/// `2 sum D_i N_i` with `D_1 = input` and `D_{i+1} = N_i`.
fn dense_flops(input: usize, units: &[usize]) -> usize {
    let mut d = input;
    let mut total = 0;
    for &n in units {
        total += 2 * d * n;
        d = n;
    }
    total
}

/// `2 sum D_j F_j K_j C_in` for stacked valid-padding Conv1D layers over
/// `length` steps. Returns the FLOPs and the final (length, channels).
fn conv_flops(
    mut length: usize,
    mut channels: usize,
    filters: &[usize],
    kernels: &[usize],
) -> (usize, usize, usize) {
    let mut total = 0;
    for (&f, &k) in filters.iter().zip(kernels) {
        length = length.saturating_sub(k - 1);
        total += 2 * length * f * k * channels;
        channels = f;
    }
    (total, length, channels)
}

/// `2 sum T U (3U + I)` for stacked GRUs.
fn gru_flops(steps: usize, mut input: usize, units: &[usize]) -> usize {
    let mut total = 0;
    for &u in units {
        total += 2 * steps * u * (3 * u + input);
        input = u;
    }
    total
}

pub fn flops_report(p: &FlopsParams) -> FlopsReport {
    let (ma, mr, l) = (p.m_a as f64, p.m_r as f64, p.snapshots as f64);
    let grid = (p.g_theta * p.g_phi) as f64;
    let cmac = 8.0;
    // covariance, then per grid point composite steering, quadratic form and norm
    let search = cmac * (ma * ma * l + grid * (ma * mr + ma * ma + 2.0 * ma));
    let ml_crlb = search + cmac * p.iterations as f64 * ma * mr;
    let ml_snr = search + cmac * ma * mr;

    let features = 2 * p.m_a;
    let batch = p.batch as f64;
    let fc = dense_flops(p.snapshots * features, &p.fc_units) as f64 / batch;

    // channels = snapshots, steps = interleaved features
    let cnn_kernels = vec![p.cnn_kernel; p.cnn_filters.len()];
    let (conv, _, channels) = conv_flops(features, p.snapshots, &p.cnn_filters, &cnn_kernels);
    let cnn = (conv + dense_flops(channels, &p.cnn_dense)) as f64 / batch;

    // GRU branch over snapshots, Conv1D branch as in the CNN; pooled outputs concatenated
    let gru = gru_flops(p.snapshots, features, &p.gru_units);
    let (conv, _, channels) = conv_flops(
        features,
        p.snapshots,
        &p.proposed_filters,
        &p.proposed_kernels,
    );
    let merged = channels + p.gru_units.last().copied().unwrap_or(0);
    let proposed = (gru + conv + dense_flops(merged, &p.proposed_dense)) as f64 / batch;

    FlopsReport {
        rows: vec![
            FlopsRow {
                method: "ml-crlb-min",
                flops_per_sample: ml_crlb,
                formula: "O(M_A^2 L + G_theta G_phi M_A^2 + I M_A M_R)",
            },
            FlopsRow {
                method: "ml-snr-max",
                flops_per_sample: ml_snr,
                formula: "O(M_A^2 L + G_theta G_phi M_A^2 + M_A M_R)",
            },
            FlopsRow {
                method: "fc",
                flops_per_sample: fc,
                formula: "O(sum_i D_i N_i 2)",
            },
            FlopsRow {
                method: "cnn",
                flops_per_sample: cnn,
                formula: "O(sum_j D_j F_j K_j C_j,in 2 + sum_i D_i N_i 2)",
            },
            FlopsRow {
                method: "proposed",
                flops_per_sample: proposed,
                formula: "O(sum_k T_k U_k (3 U_k + I_k) 2 + sum_j D_j F_j K_j C_j,in 2 + sum_i D_i N_i 2)",
            },
        ],
    }
}
