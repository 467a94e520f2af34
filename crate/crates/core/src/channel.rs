//! Complex channel model: array-IRS steering and amplitude matrices, the
//! IRS-source steering vector, the composite steering vector seen at the
//! array, received snapshots, AWGN, and the complex/interleaved-real
//! conversions used by the learning path.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{self, DoA, Point3, SceneGeometry};
use crate::rng;

pub type C64 = Complex64;

/// Wrap an angle to `[-pi, pi)`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = x - two_pi * ((x + PI) / two_pi).floor();
    // floor can land exactly on the upper edge through rounding
    if w >= PI {
        w - two_pi
    } else {
        w
    }
}

/// IRS phase shifts in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    phases: Vec<f64>,
}

impl PhaseVector {
    /// Wraps every phase into the canonical range.
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("IRS phases must be finite".into()));
        }
        Ok(Self {
            phases: phases.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            phases: vec![0.0; n],
        }
    }

    /// Uniform on `[-pi, pi)`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self {
            phases: (0..n).map(|_| rng.random_range(-PI..PI)).collect(),
        }
    }

    /// Phases of a (nonzero) complex vector; magnitudes are discarded.
    pub fn from_omega(omega: &[C64]) -> Self {
        Self {
            phases: omega.iter().map(|w| wrap_phase(w.arg())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.phases
    }

    /// Reflective steering vector `exp(j*phase)`.
    pub fn omega(&self) -> Array1<C64> {
        self.phases
            .iter()
            .map(|&p| C64::from_polar(1.0, p))
            .collect()
    }

    /// Every phase shifted by `c` radians (global rotation of omega).
    pub fn rotated(&self, c: f64) -> Self {
        Self {
            phases: self.phases.iter().map(|p| wrap_phase(p + c)).collect(),
        }
    }
}

/// Entry `(m, n)` is `exp(-j 2 pi r_mn / lambda)`.
pub fn steering_matrix_ar(geom: &SceneGeometry) -> Result<Array2<C64>> {
    let dist = geometry::pairwise_distances(geom)?;
    let k = 2.0 * PI / geom.wavelength;
    Ok(Array2::from_shape_fn((dist.rows, dist.cols), |(m, n)| {
        C64::from_polar(1.0, -k * dist.get(m, n))
    }))
}

/// Entry `n` is `exp(+j 2 pi r_n / lambda)` with `r_n` the cell path difference.
pub fn steering_vector_rt(geom: &SceneGeometry, doa: DoA) -> Array1<C64> {
    let cells = geometry::irs_relative_positions(geom);
    rt_steering_from_cells(&cells, geom.wavelength, doa)
}

pub(crate) fn rt_steering_from_cells(cells: &[Point3], wavelength: f64, doa: DoA) -> Array1<C64> {
    let k = 2.0 * PI / wavelength;
    cells
        .iter()
        .map(|&c| C64::from_polar(1.0, k * geometry::path_diff_rt(c, doa)))
        .collect()
}

/// Near-field amplitude `sqrt(P_r / (4 pi r^2))` per element-cell pair.
pub fn amplitude_matrix(geom: &SceneGeometry, received_power: f64) -> Result<Array2<f64>> {
    let dist = geometry::pairwise_distances(geom)?;
    Ok(Array2::from_shape_fn((dist.rows, dist.cols), |(m, n)| {
        let r = dist.get(m, n);
        (received_power / (4.0 * PI * r * r)).sqrt()
    }))
}

/// Channel objects that depend only on geometry, built once.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    geometry: SceneGeometry,
    steering_ar: Array2<C64>,
    amplitude_ar: Array2<f64>,
    /// `H ⊙ A`.
    combined: Array2<C64>,
    cells: Vec<Point3>,
    received_power: f64,
}

/// Received power at the array; normalized.
pub const DEFAULT_RECEIVED_POWER: f64 = 1.0;

impl ChannelModel {
    pub fn new(geom: &SceneGeometry) -> Result<Self> {
        Self::with_power(geom, DEFAULT_RECEIVED_POWER)
    }

    pub fn with_power(geom: &SceneGeometry, received_power: f64) -> Result<Self> {
        geom.validate()?;
        if !(received_power > 0.0) {
            return Err(Error::Config("received power must be positive".into()));
        }
        let steering_ar = steering_matrix_ar(geom)?;
        let amplitude_ar = amplitude_matrix(geom, received_power)?;
        let combined = &steering_ar * &amplitude_ar.mapv(|h| C64::new(h, 0.0));
        Ok(Self {
            geometry: geom.clone(),
            steering_ar,
            amplitude_ar,
            combined,
            cells: geometry::irs_relative_positions(geom),
            received_power,
        })
    }

    pub fn geometry(&self) -> &SceneGeometry {
        &self.geometry
    }

    pub fn num_elements(&self) -> usize {
        self.combined.nrows()
    }

    pub fn num_cells(&self) -> usize {
        self.combined.ncols()
    }

    pub fn steering_ar(&self) -> &Array2<C64> {
        &self.steering_ar
    }

    pub fn amplitude_ar(&self) -> &Array2<f64> {
        &self.amplitude_ar
    }

    /// The fixed array-IRS mapping `H ⊙ A`.
    pub fn combined(&self) -> &Array2<C64> {
        &self.combined
    }

    pub fn received_power(&self) -> f64 {
        self.received_power
    }

    /// IRS cell positions relative to the reference cell.
    pub fn cells(&self) -> &[Point3] {
        &self.cells
    }

    pub fn steering_rt(&self, doa: DoA) -> Array1<C64> {
        rt_steering_from_cells(&self.cells, self.geometry.wavelength, doa)
    }

    /// `(H ⊙ A) diag(omega)`, the per-trial mapping from IRS observations to
    /// array outputs.
    pub fn phased_mapping(&self, phases: &PhaseVector) -> Result<Array2<C64>> {
        self.check_phases(phases)?;
        let omega = phases.omega();
        Ok(&self.combined * &omega.view().insert_axis(Axis(0)))
    }

    pub(crate) fn check_phases(&self, phases: &PhaseVector) -> Result<()> {
        if phases.len() != self.num_cells() {
            return Err(Error::shape("IRS phases", self.num_cells(), phases.len()));
        }
        Ok(())
    }

    /// Real `2M^A x 2M^R` expansion of `H ⊙ A` acting on interleaved vectors.
    ///
    /// Block `(m, n)` is `[[re, -im], [im, re]]` of the complex entry.
    pub fn real_expansion(&self) -> Array2<f64> {
        let (ma, mr) = self.combined.dim();
        let mut w = Array2::zeros((2 * ma, 2 * mr));
        for ((m, n), c) in self.combined.indexed_iter() {
            w[[2 * m, 2 * n]] = c.re;
            w[[2 * m, 2 * n + 1]] = -c.im;
            w[[2 * m + 1, 2 * n]] = c.im;
            w[[2 * m + 1, 2 * n + 1]] = c.re;
        }
        w
    }
}

/// `a_r = (H ⊙ A) diag(omega) a_rt`.
pub fn composite_steering(
    channel: &ChannelModel,
    phases: &PhaseVector,
    doa: DoA,
) -> Result<Array1<C64>> {
    channel.check_phases(phases)?;
    let rt = channel.steering_rt(doa);
    let weighted = &rt * &phases.omega();
    Ok(channel.combined.dot(&weighted))
}

/// Source samples `s_l`, unit modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSignal {
    samples: Vec<C64>,
}

impl SourceSignal {
    /// `s_l = exp(j (rotation * l + initial_phase))`.
    pub fn exponential(snapshots: usize, rotation: f64, initial_phase: f64) -> Result<Self> {
        if snapshots == 0 {
            return Err(Error::Config("at least one snapshot is required".into()));
        }
        Ok(Self {
            samples: (0..snapshots)
                .map(|l| C64::from_polar(1.0, rotation * l as f64 + initial_phase))
                .collect(),
        })
    }

    /// Constant `exp(j initial_phase)` over all snapshots.
    pub fn constant(snapshots: usize, initial_phase: f64) -> Result<Self> {
        Self::exponential(snapshots, 0.0, initial_phase)
    }

    /// Accepts any samples whose modulus is one to within 1e-12.
    pub fn from_samples(samples: Vec<C64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("at least one snapshot is required".into()));
        }
        if samples.iter().any(|s| (s.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Config(
                "source samples must have unit modulus".into(),
            ));
        }
        Ok(Self { samples })
    }

    pub fn snapshots(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    /// `E|s|^2`, identically one for unit-modulus samples.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// `Y = a_r s + N`, shape `M^A x L`.
pub fn received_signal(
    a_r: ArrayView1<C64>,
    s: &[C64],
    noise: Option<ArrayView2<C64>>,
) -> Result<Array2<C64>> {
    let mut y = Array2::from_shape_fn((a_r.len(), s.len()), |(m, l)| a_r[m] * s[l]);
    if let Some(n) = noise {
        if n.dim() != y.dim() {
            return Err(Error::shape(
                "noise matrix",
                format!("{:?}", y.dim()),
                format!("{:?}", n.dim()),
            ));
        }
        y += &n;
    }
    Ok(y)
}

pub fn snr_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Per-real-component noise standard deviation `sqrt(P_r / (2 M^A L SNR))`.
pub fn noise_std(snr_db: f64, received_power: f64, m_a: usize, l: usize) -> f64 {
    (received_power / (2.0 * m_a as f64 * l as f64 * snr_linear(snr_db))).sqrt()
}

/// Complex noise variance used by the CRLB: twice the per-component variance.
pub fn complex_noise_variance(snr_db: f64, received_power: f64, m_a: usize, l: usize) -> f64 {
    received_power / (m_a as f64 * l as f64 * snr_linear(snr_db))
}

/// Real AWGN matrix `2M^A x L` from an explicit generator.
pub fn awgn_real_with<R: Rng + ?Sized>(
    snr_db: f64,
    received_power: f64,
    m_a: usize,
    l: usize,
    rng: &mut R,
) -> Array2<f64> {
    let sd = noise_std(snr_db, received_power, m_a, l);
    Array2::from_shape_simple_fn((2 * m_a, l), || {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// Real AWGN matrix `2M^A x L`, deterministic in `seed`.
pub fn awgn_real(snr_db: f64, received_power: f64, m_a: usize, l: usize, seed: u64) -> Array2<f64> {
    awgn_real_with(
        snr_db,
        received_power,
        m_a,
        l,
        &mut rng::substream(seed, "awgn", 0),
    )
}

/// Complex AWGN `M^A x L` with the same per-component variance as
/// [`awgn_real`]. An infinite SNR yields exact zeros.
pub fn awgn_complex_with<R: Rng + ?Sized>(
    snr_db: f64,
    received_power: f64,
    m_a: usize,
    l: usize,
    rng: &mut R,
) -> Array2<C64> {
    let sd = noise_std(snr_db, received_power, m_a, l);
    Array2::from_shape_simple_fn((m_a, l), || {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(sd * re, sd * im)
    })
}

/// `[a1+jb1, a2+jb2, ...] -> [a1, b1, a2, b2, ...]`.
pub fn interleave(x: &[C64]) -> Vec<f64> {
    x.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn deinterleave(x: &[f64]) -> Result<Vec<C64>> {
    if x.len() % 2 != 0 {
        return Err(Error::OddLength(x.len()));
    }
    Ok(x.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
}

/// Real snapshot matrix, `L x 2M`; each row interleaves one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSignal {
    data: Array2<f64>,
}

impl InterleavedSignal {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() % 2 != 0 {
            return Err(Error::OddLength(data.ncols()));
        }
        Ok(Self { data })
    }

    /// From a complex `M x L` matrix (columns are snapshots).
    pub fn from_complex(y: ArrayView2<C64>) -> Self {
        let (m, l) = y.dim();
        let data = Array2::from_shape_fn((l, 2 * m), |(row, col)| {
            let c = y[[col / 2, row]];
            if col % 2 == 0 {
                c.re
            } else {
                c.im
            }
        });
        Self { data }
    }

    /// Back to the complex `M x L` layout.
    pub fn to_complex(&self) -> Array2<C64> {
        let (l, two_m) = self.data.dim();
        Array2::from_shape_fn((two_m / 2, l), |(m, row)| {
            C64::new(self.data[[row, 2 * m]], self.data[[row, 2 * m + 1]])
        })
    }

    pub fn snapshots(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Row-major flattening, the regressor's input layout.
    pub fn flatten(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn preset_channel() -> ChannelModel {
        ChannelModel::new(&SceneGeometry::preset()).unwrap()
    }

    #[test]
    fn wrapping() {
        assert_abs_diff_eq!(wrap_phase(2.0 * PI + 0.1), 0.1, epsilon = 1e-12);
        assert_eq!(wrap_phase(PI), -PI);
        assert_eq!(wrap_phase(-PI), -PI);
        assert_abs_diff_eq!(wrap_phase(-3.0 * PI - 0.2), PI - 0.2, epsilon = 1e-12);
    }

    #[test]
    fn steering_ar_phase_examples() {
        // r = lambda -> 1 ; r = lambda / 2 -> -1
        let mut g = SceneGeometry::preset();
        g.m_a_y = 1;
        g.m_a_z = 1;
        g.m_r_x = 1;
        g.m_r_y = 1;
        g.array_offset = [0.0, g.wavelength, 0.0];
        let a = steering_matrix_ar(&g).unwrap();
        assert_abs_diff_eq!(a[[0, 0]].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[[0, 0]].im, 0.0, epsilon = 1e-12);
        g.array_offset = [0.0, g.wavelength / 2.0, 0.0];
        let a = steering_matrix_ar(&g).unwrap();
        assert_abs_diff_eq!(a[[0, 0]].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[[0, 0]].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_ar_matches_distances() {
        let g = SceneGeometry::preset();
        let a = steering_matrix_ar(&g).unwrap();
        let d = geometry::pairwise_distances(&g).unwrap();
        for ((m, n), c) in a.indexed_iter() {
            assert_abs_diff_eq!(c.norm(), 1.0, epsilon = 1e-15);
            let expected = C64::from_polar(1.0, -2.0 * PI / g.wavelength * d.get(m, n));
            assert_abs_diff_eq!((c - expected).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn steering_rt_examples() {
        let g = SceneGeometry::preset();
        let v = steering_vector_rt(&g, DoA::new(90.0, 17.0).unwrap());
        for c in v.iter() {
            assert_abs_diff_eq!((c - C64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        }
        let doa = DoA::new(30.0, 45.0).unwrap();
        let v = steering_vector_rt(&g, doa);
        assert_eq!(v[0], C64::new(1.0, 0.0));
        let cells = geometry::irs_positions(&g);
        for (n, c) in v.iter().enumerate() {
            let r = cells[n][0] * 30f64.to_radians().cos() * 45f64.to_radians().sin()
                + cells[n][1] * 30f64.to_radians().cos() * 45f64.to_radians().cos();
            let expected = C64::from_polar(1.0, 2.0 * PI * r / g.wavelength);
            assert_abs_diff_eq!((c - expected).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn amplitude_examples() {
        let mut g = SceneGeometry::preset();
        g.m_a_y = 1;
        g.m_a_z = 1;
        g.m_r_x = 1;
        g.m_r_y = 1;
        g.array_offset = [0.0, 1.0, 0.0];
        let h1 = amplitude_matrix(&g, 1.0).unwrap()[[0, 0]];
        assert_abs_diff_eq!(h1, 0.2820948, epsilon = 1e-7);
        g.array_offset = [0.0, 2.0, 0.0];
        let h2 = amplitude_matrix(&g, 1.0).unwrap()[[0, 0]];
        assert_abs_diff_eq!(h2 * h2, h1 * h1 / 4.0, epsilon = 1e-15);

        g.array_offset = [0.0; 3];
        assert!(amplitude_matrix(&g, 1.0).is_err());
    }

    #[test]
    fn preset_amplitude_bounds() {
        let g = SceneGeometry::preset();
        let h = amplitude_matrix(&g, 1.0).unwrap();
        let d = geometry::pairwise_distances(&g).unwrap();
        let hi = 1.0 / (4.0 * PI * d.min() * d.min()).sqrt();
        let lo = 1.0 / (4.0 * PI * d.max() * d.max()).sqrt();
        // closest pair is the reference element to the nearest cell
        let upper = 1.0 / (4.0 * PI * (2f64.sqrt() - 0.6 * 2f64.sqrt()).powi(2)).sqrt();
        for &v in h.iter() {
            assert!(v > 0.0 && v < upper);
            assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }

    #[test]
    fn composite_scalar_chain() {
        let mut g = SceneGeometry::preset();
        g.m_a_y = 1;
        g.m_a_z = 1;
        g.m_r_x = 1;
        g.m_r_y = 1;
        let ch = ChannelModel::new(&g).unwrap();
        let a =
            composite_steering(&ch, &PhaseVector::zeros(1), DoA::new(20.0, 20.0).unwrap()).unwrap();
        assert_abs_diff_eq!((a[0] - ch.combined()[[0, 0]]).norm(), 0.0, epsilon = 1e-15);
        assert!(
            composite_steering(&ch, &PhaseVector::zeros(2), DoA::new(0.0, 0.0).unwrap()).is_err()
        );
    }

    #[test]
    fn composite_matches_double_loop() {
        let g = SceneGeometry::preset();
        let ch = preset_channel();
        let mut r = rng::seeded(3);
        let phases = PhaseVector::random(25, &mut r);
        let doa = DoA::new(30.0, 45.0).unwrap();
        let a = composite_steering(&ch, &phases, doa).unwrap();
        let d = geometry::pairwise_distances(&g).unwrap();
        let cells = geometry::irs_relative_positions(&g);
        let k = 2.0 * PI / g.wavelength;
        for m in 0..25 {
            let mut acc = C64::new(0.0, 0.0);
            for n in 0..25 {
                let r_ar = d.get(m, n);
                let h = (1.0 / (4.0 * PI * r_ar * r_ar)).sqrt();
                let r_rt = geometry::path_diff_rt(cells[n], doa);
                acc += h
                    * C64::from_polar(1.0, -k * r_ar)
                    * C64::from_polar(1.0, phases.as_slice()[n])
                    * C64::from_polar(1.0, k * r_rt);
            }
            assert_abs_diff_eq!((a[m] - acc).norm(), 0.0, epsilon = 1e-12);
        }
        // zero phases reduce to (H ⊙ A) a_rt
        let a0 = composite_steering(&ch, &PhaseVector::zeros(25), doa).unwrap();
        let direct = ch.combined().dot(&ch.steering_rt(doa));
        for (x, y) in a0.iter().zip(direct.iter()) {
            assert_abs_diff_eq!((x - y).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn global_rotation_rotates_composite() {
        let ch = preset_channel();
        let mut r = rng::seeded(5);
        let phases = PhaseVector::random(25, &mut r);
        let doa = DoA::new(40.0, 120.0).unwrap();
        let a = composite_steering(&ch, &phases, doa).unwrap();
        let b = composite_steering(&ch, &phases.rotated(0.7), doa).unwrap();
        let rot = C64::from_polar(1.0, 0.7);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!((x * rot - y).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn received_signal_examples() {
        let a = Array1::from(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.3)]);
        let s = SourceSignal::constant(3, 0.0).unwrap();
        let y = received_signal(a.view(), s.samples(), None).unwrap();
        for col in y.columns() {
            assert_eq!(col, a);
        }
        let n = Array2::from_elem((2, 3), C64::new(0.1, -0.2));
        let zero = vec![C64::new(0.0, 0.0); 3];
        assert_eq!(received_signal(a.view(), &zero, Some(n.view())).unwrap(), n);
        let bad = Array2::from_elem((3, 3), C64::new(0.0, 0.0));
        assert!(received_signal(a.view(), s.samples(), Some(bad.view())).is_err());
    }

    #[test]
    fn noiseless_received_signal_is_rank_one() {
        let ch = preset_channel();
        let mut r = rng::seeded(9);
        for _ in 0..5 {
            let phases = PhaseVector::random(25, &mut r);
            let doa = DoA::new(r.random_range(0.0..90.0), r.random_range(0.0..180.0)).unwrap();
            let a = composite_steering(&ch, &phases, doa).unwrap();
            let s = SourceSignal::exponential(6, 0.3, r.random_range(-PI..PI)).unwrap();
            let y = received_signal(a.view(), s.samples(), None).unwrap();
            // every 2x2 minor of a rank-one matrix vanishes
            let scale = y.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
            for i in 0..25 {
                for j in (i + 1)..25 {
                    for k in 0..6 {
                        for l in (k + 1)..6 {
                            let minor = y[[i, k]] * y[[j, l]] - y[[i, l]] * y[[j, k]];
                            assert!(minor.norm() <= 1e-12 * scale);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn received_signal_is_linear_in_source() {
        let a = Array1::from(vec![C64::new(0.3, 2.0), C64::new(-1.5, 0.3)]);
        let s1 = vec![C64::new(1.0, 0.5), C64::new(-0.2, 0.1)];
        let s2 = vec![C64::new(0.0, -1.0), C64::new(0.7, 0.7)];
        let sum: Vec<_> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        let y = received_signal(a.view(), &sum, None).unwrap();
        let y12 = received_signal(a.view(), &s1, None).unwrap()
            + received_signal(a.view(), &s2, None).unwrap();
        for (p, q) in y.iter().zip(y12.iter()) {
            assert_abs_diff_eq!((p - q).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn awgn_scale_and_determinism() {
        let a = awgn_real(0.0, 1.0, 25, 10, 42);
        let b = awgn_real(0.0, 1.0, 25, 10, 42);
        assert_eq!(a.dim(), (50, 10));
        assert_eq!(a, b);
        let quiet = awgn_real(f64::INFINITY, 1.0, 25, 10, 42);
        assert!(quiet.iter().all(|&v| v == 0.0));
        let high = awgn_real(300.0, 1.0, 25, 10, 42);
        assert!(high.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn awgn_empirical_variance() {
        // 10^6 draws via a wide matrix
        let snr_db = 3.0;
        let (ma, l) = (25, 20_000);
        let n = awgn_real(snr_db, 1.0, ma, l, 11);
        assert_eq!(n.len(), 1_000_000);
        let mean = n.mean().unwrap();
        let var = n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.len() as f64;
        let expected = 1.0 / (2.0 * ma as f64 * l as f64 * snr_linear(snr_db));
        assert!(
            (var / expected - 1.0).abs() < 0.01,
            "var {var} expected {expected}"
        );
    }

    #[test]
    fn interleave_examples() {
        let x = [C64::new(1.0, 2.0), C64::new(3.0, -4.0)];
        assert_eq!(interleave(&x), vec![1.0, 2.0, 3.0, -4.0]);
        let real = [C64::new(1.5, 0.0), C64::new(-2.0, 0.0)];
        let v = interleave(&real);
        assert!(v.iter().skip(1).step_by(2).all(|&b| b == 0.0));
        assert!(matches!(
            deinterleave(&[1.0, 2.0, 3.0]),
            Err(Error::OddLength(3))
        ));
    }

    #[test]
    fn interleaved_signal_layout() {
        let y = Array2::from_shape_fn((3, 2), |(m, l)| C64::new(m as f64, l as f64 + 10.0));
        let sig = InterleavedSignal::from_complex(y.view());
        assert_eq!(sig.data().dim(), (2, 6));
        assert_eq!(
            sig.data().row(1).to_vec(),
            vec![0.0, 11.0, 1.0, 11.0, 2.0, 11.0]
        );
        assert_eq!(sig.to_complex(), y);
        assert!(InterleavedSignal::new(Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn real_expansion_matches_complex_product() {
        let ch = preset_channel();
        let w = ch.real_expansion();
        let mut r = rng::seeded(1);
        let v: Array1<C64> = (0..25)
            .map(|_| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let real = w.dot(&Array1::from(interleave(v.as_slice().unwrap())));
        let back = deinterleave(real.as_slice().unwrap()).unwrap();
        let direct = ch.combined().dot(&v);
        let scale = direct.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (a, b) in back.iter().zip(direct.iter()) {
            assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn source_signal_contract() {
        let s = SourceSignal::exponential(4, 0.2, 1.0).unwrap();
        assert_eq!(s.snapshots(), 4);
        assert_abs_diff_eq!(s.power(), 1.0, epsilon = 1e-15);
        assert!(SourceSignal::constant(0, 0.0).is_err());
        assert!(SourceSignal::from_samples(vec![C64::new(2.0, 0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn interleave_round_trips(v in proptest::collection::vec((-1e6..1e6f64, -1e6..1e6f64), 0..40)) {
            let x: Vec<C64> = v.into_iter().map(|(a, b)| C64::new(a, b)).collect();
            prop_assert_eq!(deinterleave(&interleave(&x)).unwrap(), x);
        }

        #[test]
        fn wrapped_phases_in_range(x in -1e4..1e4f64) {
            let w = wrap_phase(x);
            prop_assert!((-PI..PI).contains(&w));
            let k = ((x - w) / (2.0 * PI)).round();
            prop_assert!((x - w - 2.0 * PI * k).abs() < 1e-9);
        }
    }
}
