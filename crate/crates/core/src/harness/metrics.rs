//! Error metrics and evaluation reports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::DoA;

/// `sqrt(sum((dtheta^2 + dphi^2)) / (2 C))` in degrees, no wrapping.
pub fn rmse(estimates: &[DoA], truths: &[DoA]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::shape("rmse inputs", truths.len(), estimates.len()));
    }
    if estimates.is_empty() {
        return Err(Error::Degenerate("rmse of an empty sequence".into()));
    }
    let sum: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e.theta() - t.theta()).powi(2) + (e.phi() - t.phi()).powi(2))
        .sum();
    Ok((sum / (2.0 * estimates.len() as f64)).sqrt())
}

/// Mean absolute error per angle, `(theta, phi)`.
pub fn mean_abs_errors(estimates: &[DoA], truths: &[DoA]) -> Result<(f64, f64)> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::shape("error inputs", truths.len(), estimates.len()));
    }
    let n = estimates.len() as f64;
    let (t, p) = estimates
        .iter()
        .zip(truths)
        .fold((0.0, 0.0), |(t, p), (e, r)| {
            (
                t + (e.theta() - r.theta()).abs(),
                p + (e.phi() - r.phi()).abs(),
            )
        });
    Ok((t / n, p / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterRecord {
    pub true_theta: f64,
    pub true_phi: f64,
    pub pred_theta: f64,
    pub pred_phi: f64,
}

impl ScatterRecord {
    pub fn new(truth: DoA, estimate: DoA) -> Self {
        Self {
            true_theta: truth.theta(),
            true_phi: truth.phi(),
            pred_theta: estimate.theta(),
            pred_phi: estimate.phi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: String,
    pub snr_db: f64,
    pub snapshots: usize,
    pub rmse_deg: f64,
    pub mae_theta_deg: f64,
    pub mae_phi_deg: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSet {
    pub method: String,
    pub snr_db: f64,
    pub snapshots: usize,
    pub records: Vec<ScatterRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub scatter: Vec<ScatterSet>,
    /// `(method, diagnostic)` for methods that could not be evaluated.
    pub failures: Vec<(String, String)>,
}

impl EvalReport {
    pub fn row(&self, method: &str, snr_db: f64, snapshots: usize) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.snr_db == snr_db && r.snapshots == snapshots)
    }

    /// Add a row computed from raw estimates, keeping the records when asked.
    pub fn record(
        &mut self,
        method: &str,
        snr_db: f64,
        snapshots: usize,
        estimates: &[DoA],
        truths: &[DoA],
        keep: bool,
    ) -> Result<()> {
        let (mae_theta_deg, mae_phi_deg) = mean_abs_errors(estimates, truths)?;
        self.rows.push(EvalRow {
            method: method.to_string(),
            snr_db,
            snapshots,
            rmse_deg: rmse(estimates, truths)?,
            mae_theta_deg,
            mae_phi_deg,
            trials: estimates.len(),
        });
        if keep {
            self.scatter.push(ScatterSet {
                method: method.to_string(),
                snr_db,
                snapshots,
                records: truths
                    .iter()
                    .zip(estimates)
                    .map(|(&t, &e)| ScatterRecord::new(t, e))
                    .collect(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn d(t: f64, p: f64) -> DoA {
        DoA::new(t, p).unwrap()
    }

    #[test]
    fn rmse_examples() {
        let truths = [d(10.0, 20.0), d(30.0, 40.0)];
        assert_eq!(rmse(&truths, &truths).unwrap(), 0.0);
        let v = rmse(&[d(13.0, 24.0)], &[d(10.0, 20.0)]).unwrap();
        assert!((v - (25.0f64 / 2.0).sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&truths[..1], &truths).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_computation() {
        let mut r = rng::seeded(1);
        let truths: Vec<DoA> = (0..500)
            .map(|_| d(r.random_range(0.0..90.0), r.random_range(0.0..180.0)))
            .collect();
        let est: Vec<DoA> = (0..500)
            .map(|_| d(r.random_range(0.0..90.0), r.random_range(0.0..180.0)))
            .collect();
        let theta_sq: Vec<f64> = est
            .iter()
            .zip(&truths)
            .map(|(e, t)| (e.theta() - t.theta()).powi(2))
            .collect();
        let phi_sq: Vec<f64> = est
            .iter()
            .zip(&truths)
            .map(|(e, t)| (e.phi() - t.phi()).powi(2))
            .collect();
        let mean_theta = theta_sq.iter().sum::<f64>() / 500.0;
        let mean_phi = phi_sq.iter().sum::<f64>() / 500.0;
        let naive = ((mean_theta + mean_phi) / 2.0).sqrt();
        assert!((rmse(&est, &truths).unwrap() - naive).abs() < 1e-12 * naive);
    }

    #[test]
    fn report_rows_and_scatter() {
        let mut rep = EvalReport::default();
        let truths = [d(10.0, 20.0), d(30.0, 40.0)];
        let est = [d(11.0, 20.0), d(30.0, 38.0)];
        rep.record("m", 0.0, 10, &est, &truths, true).unwrap();
        let row = rep.row("m", 0.0, 10).unwrap();
        assert_eq!(row.trials, 2);
        assert_eq!((row.mae_theta_deg, row.mae_phi_deg), (0.5, 1.0));
        assert_eq!(rep.scatter[0].records.len(), 2);
        assert!(rep.row("m", 10.0, 10).is_none());
    }
}
