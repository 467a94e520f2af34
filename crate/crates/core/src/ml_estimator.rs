//! Deterministic-source maximum-likelihood DoA estimation by exhaustive 2-D
//! grid search.
//!
//! For a single steering vector `a` the bracketed matrix of the ML criterion
//! is 1x1, and its only eigenvalue is `||Y^H a||^2 / (a^H a)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, PhaseVector, C64};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::DoA;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchGrid {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub step: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            theta_min: 0.0,
            theta_max: 90.0,
            phi_min: 0.0,
            phi_max: 180.0,
            step: 0.5,
        }
    }
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Config("grid step must be positive".into()));
        }
        if self.theta_min > self.theta_max || self.phi_min > self.phi_max {
            return Err(Error::Config("grid minimum exceeds maximum".into()));
        }
        DoA::new(self.theta_min, self.phi_min)?;
        DoA::new(self.theta_max, self.phi_max)?;
        Ok(())
    }

    fn count(min: f64, max: f64, step: f64) -> usize {
        ((max - min) / step + 1e-9).floor() as usize + 1
    }

    /// Number of theta points, endpoints inclusive.
    pub fn theta_count(&self) -> usize {
        Self::count(self.theta_min, self.theta_max, self.step)
    }

    pub fn phi_count(&self) -> usize {
        Self::count(self.phi_min, self.phi_max, self.step)
    }

    pub fn len(&self) -> usize {
        self.theta_count() * self.phi_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta_at(&self, i: usize) -> f64 {
        (self.theta_min + i as f64 * self.step).min(self.theta_max)
    }

    pub fn phi_at(&self, j: usize) -> f64 {
        (self.phi_min + j as f64 * self.step).min(self.phi_max)
    }

    /// Grid point with flat index `k = i * phi_count + j`.
    pub fn point(&self, k: usize) -> DoA {
        let np = self.phi_count();
        DoA::clamped(self.theta_at(k / np), self.phi_at(k % np))
    }

    /// Index of the grid point nearest to `doa` along each axis.
    pub fn nearest(&self, doa: DoA) -> (usize, usize) {
        let snap = |v: f64, min: f64, n: usize| {
            (((v - min) / self.step).round().max(0.0) as usize).min(n - 1)
        };
        (
            snap(doa.theta(), self.theta_min, self.theta_count()),
            snap(doa.phi(), self.phi_min, self.phi_count()),
        )
    }
}

/// `||Y^H a||^2 / (a^H a)`.
pub fn ml_objective(y: ArrayView2<C64>, a: ArrayView1<C64>) -> Result<f64> {
    if y.nrows() != a.len() {
        return Err(Error::shape("ml objective", a.len(), y.nrows()));
    }
    let aa: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    if aa == 0.0 {
        return Err(Error::Degenerate("zero steering vector".into()));
    }
    Ok(projected_energy(y, a) / aa)
}

fn projected_energy(y: ArrayView2<C64>, a: ArrayView1<C64>) -> f64 {
    y.columns()
        .into_iter()
        .map(|col| {
            let p: C64 = col
                .iter()
                .zip(a.iter())
                .map(|(yi, ai)| yi.conj() * ai)
                .sum();
            p.norm_sqr()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub doa: DoA,
    pub objective: f64,
    pub theta_index: usize,
    pub phi_index: usize,
    /// `theta_count x phi_count` objective values when requested.
    pub surface: Option<Array2<f64>>,
}

impl GridSearchResult {
    /// CSV `theta,phi,objective` of the surface, if it was kept.
    pub fn surface_csv(&self, grid: &SearchGrid) -> Option<String> {
        let s = self.surface.as_ref()?;
        let mut out = String::from("theta,phi,objective\n");
        for ((i, j), v) in s.indexed_iter() {
            out.push_str(&format!(
                "{},{},{:e}\n",
                grid.theta_at(i),
                grid.phi_at(j),
                v
            ));
        }
        Some(out)
    }
}

/// Best so far: value and flat index. Larger value wins, then lower index.
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    match a.0.partial_cmp(&b.0) {
        Some(std::cmp::Ordering::Greater) => a,
        Some(std::cmp::Ordering::Less) => b,
        _ if a.0.is_nan() && !b.0.is_nan() => b,
        _ if b.0.is_nan() && !a.0.is_nan() => a,
        _ => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

fn finish(grid: &SearchGrid, best: (f64, usize), surface: Option<Vec<f64>>) -> GridSearchResult {
    let np = grid.phi_count();
    let k = best.1;
    GridSearchResult {
        doa: grid.point(k),
        objective: best.0,
        theta_index: k / np,
        phi_index: k % np,
        surface: surface
            .map(|v| Array2::from_shape_vec((grid.theta_count(), np), v).expect("grid shape")),
    }
}

/// Exhaustive search, recomputing the composite steering vector per point.
pub fn ml_grid_search(
    y: ArrayView2<C64>,
    channel: &ChannelModel,
    phases: &PhaseVector,
    grid: &SearchGrid,
) -> Result<GridSearchResult> {
    ml_grid_search_with(y, channel, phases, grid, Execution::default(), false)
}

pub fn ml_grid_search_with(
    y: ArrayView2<C64>,
    channel: &ChannelModel,
    phases: &PhaseVector,
    grid: &SearchGrid,
    exec: Execution,
    keep_surface: bool,
) -> Result<GridSearchResult> {
    grid.validate()?;
    if y.nrows() != channel.num_elements() {
        return Err(Error::shape(
            "received signal rows",
            channel.num_elements(),
            y.nrows(),
        ));
    }
    let mapping = channel.phased_mapping(phases)?;
    let eval = |k: usize| {
        let rt = channel.steering_rt(grid.point(k));
        let a = mapping.dot(&rt);
        let aa: f64 = a.iter().map(|x| x.norm_sqr()).sum();
        projected_energy(y, a.view()) / aa
    };
    search(grid, exec, keep_surface, eval)
}

fn search<F>(
    grid: &SearchGrid,
    exec: Execution,
    keep_surface: bool,
    eval: F,
) -> Result<GridSearchResult>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let n = grid.len();
    if keep_surface {
        let values = exec.map(n, eval);
        let best = values
            .iter()
            .enumerate()
            .fold((f64::NEG_INFINITY, usize::MAX), |acc, (k, &v)| {
                better(acc, (v, k))
            });
        Ok(finish(grid, best, Some(values)))
    } else {
        let best = exec.map_reduce(n, (f64::NEG_INFINITY, usize::MAX), |k| (eval(k), k), better);
        Ok(finish(grid, best, None))
    }
}

/// IRS-source steering vectors for every grid point. Independent of the IRS
/// phases, so one cache serves every trial on a geometry.
#[derive(Debug, Clone)]
pub struct SteeringCache {
    grid: SearchGrid,
    /// `grid.len() x M^R`.
    rt: Array2<C64>,
}

impl SteeringCache {
    pub fn new(channel: &ChannelModel, grid: &SearchGrid) -> Result<Self> {
        grid.validate()?;
        let n = grid.len();
        let m_r = channel.num_cells();
        let rows = Execution::default().map(n, |k| channel.steering_rt(grid.point(k)));
        let mut rt = Array2::zeros((n, m_r));
        for (k, row) in rows.into_iter().enumerate() {
            rt.row_mut(k).assign(&row);
        }
        Ok(Self {
            grid: grid.clone(),
            rt,
        })
    }

    pub fn grid(&self) -> &SearchGrid {
        &self.grid
    }

    /// Composite steering vectors for fixed phases, normalized to unit norm.
    pub fn composite(
        &self,
        channel: &ChannelModel,
        phases: &PhaseVector,
    ) -> Result<CompositeCache> {
        let mapping = channel.phased_mapping(phases)?;
        // a_k = mapping * rt_k  for every row k  ->  A = RT * mapping^T
        let mut a = self.rt.dot(&mapping.t());
        for mut row in a.rows_mut() {
            let norm = row.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            row.mapv_inplace(|x| x / norm);
        }
        Ok(CompositeCache {
            grid: self.grid.clone(),
            steering: a,
        })
    }
}

/// Unit-norm composite steering vectors for one phase configuration,
/// `grid.len() x M^A` (about `G_theta G_phi M^A` complex values).
#[derive(Debug, Clone)]
pub struct CompositeCache {
    grid: SearchGrid,
    steering: Array2<C64>,
}

impl CompositeCache {
    pub fn new(channel: &ChannelModel, phases: &PhaseVector, grid: &SearchGrid) -> Result<Self> {
        SteeringCache::new(channel, grid)?.composite(channel, phases)
    }

    pub fn grid(&self) -> &SearchGrid {
        &self.grid
    }

    pub fn search(
        &self,
        y: ArrayView2<C64>,
        exec: Execution,
        keep_surface: bool,
    ) -> Result<GridSearchResult> {
        if y.nrows() != self.steering.ncols() {
            return Err(Error::shape(
                "received signal rows",
                self.steering.ncols(),
                y.nrows(),
            ));
        }
        // ||Y^H a||^2 = ||a^T conj(Y)||^2 ; conj(Y) once, then one dot per snapshot
        let yc = y.mapv(|c| c.conj());
        let steering = &self.steering;
        let eval = |k: usize| {
            let a = steering.row(k);
            yc.columns()
                .into_iter()
                .map(|col| {
                    let p: C64 = col.iter().zip(a.iter()).map(|(u, v)| u * v).sum();
                    p.norm_sqr()
                })
                .sum::<f64>()
        };
        search(&self.grid, exec, keep_surface, eval)
    }
}

/// Estimate with a cached steering table.
pub fn ml_grid_search_cached(
    y: ArrayView2<C64>,
    cache: &CompositeCache,
) -> Result<GridSearchResult> {
    cache.search(y, Execution::default(), false)
}

/// Continuous objective maximum near a grid result, by a fine local search
/// with step `fine_step` over `± span` degrees. Diagnostic use.
pub fn refine_locally(
    y: ArrayView2<C64>,
    channel: &ChannelModel,
    phases: &PhaseVector,
    around: DoA,
    span: f64,
    fine_step: f64,
) -> Result<GridSearchResult> {
    let grid = SearchGrid {
        theta_min: (around.theta() - span).max(0.0),
        theta_max: (around.theta() + span).min(90.0),
        phi_min: (around.phi() - span).max(0.0),
        phi_max: (around.phi() + span).min(180.0),
        step: fine_step,
    };
    ml_grid_search_with(y, channel, phases, &grid, Execution::default(), false)
}

/// Objective at one DoA, used by tests and the diagnostics.
pub fn objective_at(
    y: ArrayView2<C64>,
    channel: &ChannelModel,
    phases: &PhaseVector,
    doa: DoA,
) -> Result<f64> {
    let a: Array1<C64> = crate::channel::composite_steering(channel, phases, doa)?;
    ml_objective(y, a.view())
}
