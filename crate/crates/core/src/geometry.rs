//! Scene geometry: the planar receive array (yz-parallel plane), the IRS
//! (xy-parallel plane), and the path-length quantities derived from them.
//!
//! Angles cross the API in degrees. `theta` is the elevation of the incoming
//! wavefront above the IRS plane, `phi` the azimuth measured from the y-axis.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Free-space propagation speed used by the presets, m/s.
///
/// Rounded to 3e8 so that a 1 GHz carrier has a wavelength of exactly 0.3 m.
pub const PROPAGATION_SPEED: f64 = 3.0e8;

/// Carrier frequency of the default preset, Hz.
pub const PRESET_FREQUENCY_HZ: f64 = 1.0e9;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGeometry {
    /// Array elements along y.
    pub m_a_y: usize,
    /// Array elements along z.
    pub m_a_z: usize,
    /// IRS cells along x.
    pub m_r_x: usize,
    /// IRS cells along y.
    pub m_r_y: usize,
    pub d_a_y: f64,
    pub d_a_z: f64,
    pub d_r_x: f64,
    pub d_r_y: f64,
    pub wavelength: f64,
    /// Position of the array's reference element (index 0).
    pub array_offset: Point3,
    /// Position of the IRS reference cell (index 0).
    pub irs_offset: Point3,
    /// IRS-to-source distance. Only used to check the far-field assumption.
    pub source_range: f64,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self::preset()
    }
}

impl SceneGeometry {
    /// 5x5 array at half-wavelength spacing, 5x5 IRS at quarter-wavelength
    /// spacing, 1 GHz carrier, IRS at the origin and the array one meter
    /// along y and z, source 10 m away.
    pub fn preset() -> Self {
        let wavelength = PROPAGATION_SPEED / PRESET_FREQUENCY_HZ;
        Self {
            m_a_y: 5,
            m_a_z: 5,
            m_r_x: 5,
            m_r_y: 5,
            d_a_y: wavelength / 2.0,
            d_a_z: wavelength / 2.0,
            d_r_x: wavelength / 4.0,
            d_r_y: wavelength / 4.0,
            wavelength,
            array_offset: [0.0, 1.0, 1.0],
            irs_offset: [0.0, 0.0, 0.0],
            source_range: 10.0,
        }
    }

    /// Total number of array elements.
    pub fn num_elements(&self) -> usize {
        self.m_a_y * self.m_a_z
    }

    /// Total number of IRS cells.
    pub fn num_cells(&self) -> usize {
        self.m_r_x * self.m_r_y
    }

    /// Largest array dimension, used for the far-field check.
    pub fn array_aperture(&self) -> f64 {
        let dy = (self.m_a_y.saturating_sub(1)) as f64 * self.d_a_y;
        let dz = (self.m_a_z.saturating_sub(1)) as f64 * self.d_a_z;
        dy.max(dz)
    }

    pub fn far_field_distance(&self) -> f64 {
        let d = self.array_aperture();
        2.0 * d * d / self.wavelength
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.m_a_y, self.m_a_z, self.m_r_x, self.m_r_y];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Geometry("element counts must be at least 1".into()));
        }
        let spacings = [self.d_a_y, self.d_a_z, self.d_r_x, self.d_r_y];
        if spacings.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Geometry(
                "spacings must be positive and finite".into(),
            ));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::Geometry("wavelength must be positive".into()));
        }
        if self
            .array_offset
            .iter()
            .chain(self.irs_offset.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Geometry("offsets must be finite".into()));
        }
        if !(self.source_range > self.far_field_distance()) {
            return Err(Error::Geometry(format!(
                "source range {} m is inside the far-field distance {:.4} m",
                self.source_range,
                self.far_field_distance()
            )));
        }
        Ok(())
    }

    /// Short content hash used to tie datasets and models to a geometry.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("geometry serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Direction of arrival in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoA {
    theta: f64,
    phi: f64,
}

pub const THETA_MAX_DEG: f64 = 90.0;
pub const PHI_MAX_DEG: f64 = 180.0;

impl DoA {
    /// Checked constructor; the field of view is `[0, 90] x [0, 180]` degrees.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=THETA_MAX_DEG).contains(&theta) || !(0.0..=PHI_MAX_DEG).contains(&phi) {
            return Err(Error::OutOfFov { theta, phi });
        }
        Ok(Self { theta, phi })
    }

    /// Clamp arbitrary angles into the field of view.
    pub fn clamped(theta: f64, phi: f64) -> Self {
        Self {
            theta: theta.clamp(0.0, THETA_MAX_DEG),
            phi: phi.clamp(0.0, PHI_MAX_DEG),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn theta_rad(&self) -> f64 {
        self.theta.to_radians()
    }

    pub fn phi_rad(&self) -> f64 {
        self.phi.to_radians()
    }
}

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Array element positions, `m = i_z * m_a_y + i_y`.
pub fn upa_positions(geom: &SceneGeometry) -> Vec<Point3> {
    upa_relative_positions(geom)
        .into_iter()
        .map(|p| add(geom.array_offset, p))
        .collect()
}

/// Array element positions relative to the reference element.
pub fn upa_relative_positions(geom: &SceneGeometry) -> Vec<Point3> {
    let mut out = Vec::with_capacity(geom.num_elements());
    for iz in 0..geom.m_a_z {
        for iy in 0..geom.m_a_y {
            out.push([0.0, iy as f64 * geom.d_a_y, iz as f64 * geom.d_a_z]);
        }
    }
    out
}

/// IRS cell positions, `n = i_y * m_r_x + i_x`.
pub fn irs_positions(geom: &SceneGeometry) -> Vec<Point3> {
    irs_relative_positions(geom)
        .into_iter()
        .map(|p| add(geom.irs_offset, p))
        .collect()
}

/// IRS cell positions relative to the reference cell.
pub fn irs_relative_positions(geom: &SceneGeometry) -> Vec<Point3> {
    let mut out = Vec::with_capacity(geom.num_cells());
    for iy in 0..geom.m_r_y {
        for ix in 0..geom.m_r_x {
            out.push([ix as f64 * geom.d_r_x, iy as f64 * geom.d_r_y, 0.0]);
        }
    }
    out
}

/// Row-major `num_elements x num_cells` matrix of element-to-cell distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.cols + n]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub fn pairwise_distances(geom: &SceneGeometry) -> Result<DistanceMatrix> {
    let upa = upa_positions(geom);
    let irs = irs_positions(geom);
    let mut data = Vec::with_capacity(upa.len() * irs.len());
    for (m, pa) in upa.iter().enumerate() {
        for (n, pr) in irs.iter().enumerate() {
            let r = distance(*pa, *pr);
            if !(r > 0.0) {
                return Err(Error::Geometry(format!(
                    "array element {m} coincides with IRS cell {n}"
                )));
            }
            data.push(r);
        }
    }
    Ok(DistanceMatrix {
        rows: upa.len(),
        cols: irs.len(),
        data,
    })
}

/// Source-to-cell path difference for a cell at `cell` (relative to the IRS
/// reference cell).
pub fn path_diff_rt(cell: Point3, doa: DoA) -> f64 {
    let ct = doa.theta_rad().cos();
    let (sp, cp) = doa.phi_rad().sin_cos();
    cell[0] * ct * sp + cell[1] * ct * cp
}

/// Path difference for an array element at `element` (relative to the array
/// reference element).
pub fn path_diff_at(element: Point3, doa: DoA) -> f64 {
    let (st, ct) = doa.theta_rad().sin_cos();
    let cp = doa.phi_rad().cos();
    element[1] * ct * cp + element[2] * st
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small(m_a_y: usize, m_a_z: usize, m_r_x: usize, m_r_y: usize) -> SceneGeometry {
        SceneGeometry {
            m_a_y,
            m_a_z,
            m_r_x,
            m_r_y,
            d_a_y: 0.15,
            d_a_z: 0.15,
            d_r_x: 0.075,
            d_r_y: 0.075,
            ..SceneGeometry::preset()
        }
    }

    #[test]
    fn single_element_sits_at_offset() {
        let g = small(1, 1, 1, 1);
        assert_eq!(upa_positions(&g), vec![[0.0, 1.0, 1.0]]);
        assert_eq!(irs_positions(&g), vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn two_element_enumeration() {
        let g = small(2, 1, 2, 1);
        assert_eq!(upa_positions(&g), vec![[0.0, 1.0, 1.0], [0.0, 1.15, 1.0]]);
        assert_eq!(irs_positions(&g), vec![[0.0, 0.0, 0.0], [0.075, 0.0, 0.0]]);
    }

    #[test]
    fn preset_spans() {
        let g = SceneGeometry::preset();
        g.validate().unwrap();
        assert_eq!(g.wavelength, 0.3);
        let upa = upa_positions(&g);
        assert_eq!(upa.len(), 25);
        assert!(upa.iter().all(|p| p[0] == 0.0));
        let (ymin, ymax) = upa
            .iter()
            .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p[1]), a.1.max(p[1])));
        let (zmin, zmax) = upa
            .iter()
            .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p[2]), a.1.max(p[2])));
        assert_abs_diff_eq!(ymax - ymin, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(zmax - zmin, 0.6, epsilon = 1e-12);

        let irs = irs_positions(&g);
        assert_eq!(irs.len(), 25);
        assert!(irs.iter().all(|p| p[2] == 0.0));
        let xmax = irs.iter().map(|p| p[0]).fold(0.0, f64::max);
        let ymax = irs.iter().map(|p| p[1]).fold(0.0, f64::max);
        assert_abs_diff_eq!(xmax, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(ymax, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn distance_examples() {
        assert_abs_diff_eq!(
            distance([0.0, 1.0, 1.0], [0.0; 3]),
            2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(distance([0.0, 0.0, 3.0], [4.0, 0.0, 0.0]), 5.0);
    }

    #[test]
    fn coincident_element_rejected() {
        let mut g = small(1, 1, 1, 1);
        g.array_offset = [0.0; 3];
        assert!(matches!(pairwise_distances(&g), Err(Error::Geometry(_))));
    }

    #[test]
    fn preset_distances_symmetric_under_reflection() {
        // Mirror both grids through the plane x = 0 and recompute by brute force.
        let g = SceneGeometry::preset();
        let dist = pairwise_distances(&g).unwrap();
        let mirror = |p: &Point3| [-p[0], p[1], p[2]];
        let upa: Vec<_> = upa_positions(&g).iter().map(mirror).collect();
        let irs: Vec<_> = irs_positions(&g).iter().map(mirror).collect();
        for (m, pa) in upa.iter().enumerate() {
            for (n, pr) in irs.iter().enumerate() {
                assert_eq!(dist.get(m, n), distance(*pa, *pr));
            }
        }
    }

    #[test]
    fn path_diff_examples() {
        let d = DoA::new(90.0, 33.0).unwrap();
        assert_abs_diff_eq!(path_diff_rt([0.2, 0.1, 0.0], d), 0.0, epsilon = 1e-16);
        let d = DoA::new(0.0, 90.0).unwrap();
        assert_abs_diff_eq!(path_diff_rt([0.075, 0.0, 0.0], d), 0.075, epsilon = 1e-15);
        let d = DoA::new(30.0, 45.0).unwrap();
        assert_abs_diff_eq!(
            path_diff_rt([0.075, 0.075, 0.0], d),
            0.0918559,
            epsilon = 1e-6
        );

        assert_eq!(path_diff_at([0.0; 3], DoA::new(12.0, 7.0).unwrap()), 0.0);
        let d = DoA::new(90.0, 0.0).unwrap();
        assert_abs_diff_eq!(path_diff_at([0.0, 0.0, 0.15], d), 0.15, epsilon = 1e-15);
        let d = DoA::new(45.0, 60.0).unwrap();
        assert_abs_diff_eq!(
            path_diff_at([0.0, 0.15, 0.15], d),
            0.1590990,
            epsilon = 1e-6
        );
    }

    #[test]
    fn invalid_geometries() {
        let mut g = SceneGeometry::preset();
        g.m_a_y = 0;
        assert!(g.validate().is_err());
        let mut g = SceneGeometry::preset();
        g.d_r_x = -1.0;
        assert!(g.validate().is_err());
        let mut g = SceneGeometry::preset();
        g.source_range = 1.0;
        assert!(g.validate().is_err());
        assert!(DoA::new(91.0, 0.0).is_err());
        assert!(DoA::new(0.0, -0.1).is_err());
    }

    #[test]
    fn enumeration_is_stable() {
        let g = SceneGeometry::preset();
        assert_eq!(upa_positions(&g), upa_positions(&g));
        assert_eq!(
            pairwise_distances(&g).unwrap(),
            pairwise_distances(&g).unwrap()
        );
    }

    fn doa_strategy() -> impl Strategy<Value = DoA> {
        (0.0..=90.0f64, 0.0..=180.0f64).prop_map(|(t, p)| DoA::new(t, p).unwrap())
    }

    proptest! {
        #[test]
        fn path_diffs_are_linear(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                                 alpha in -5.0..5.0f64, doa in doa_strategy()) {
            let p = [x, y, z];
            let q = [alpha * x, alpha * y, alpha * z];
            prop_assert!((path_diff_rt(q, doa) - alpha * path_diff_rt(p, doa)).abs() < 1e-12);
            prop_assert!((path_diff_at(q, doa) - alpha * path_diff_at(p, doa)).abs() < 1e-12);
        }

        #[test]
        fn path_diff_rt_bounded(x in -1.0..1.0f64, y in -1.0..1.0f64, doa in doa_strategy()) {
            let bound = (x * x + y * y).sqrt();
            prop_assert!(path_diff_rt([x, y, 0.0], doa).abs() <= bound + 1e-12);
        }

        #[test]
        fn distances_obey_triangle_inequality(px in -2.0..2.0f64, py in -2.0..2.0f64, pz in -2.0..2.0f64) {
            let g = SceneGeometry::preset();
            let dist = pairwise_distances(&g).unwrap();
            let upa = upa_positions(&g);
            let irs = irs_positions(&g);
            let p = [px, py, pz];
            for (m, a) in upa.iter().enumerate().step_by(3) {
                for (n, r) in irs.iter().enumerate().step_by(3) {
                    prop_assert!(dist.get(m, n) <= distance(*a, p) + distance(p, *r) + 1e-12);
                }
            }
        }
    }
}
