//! Monte Carlo evaluation of the ML baselines and the learned estimators.
//!
//! ML trial protocol: estimate under uniform random phases, design phases at
//! that coarse estimate, then estimate again from a fresh observation under
//! the designed phases. Both ML methods in a trial share the first stage.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::Rng;

use crate::channel::{
    awgn_complex_with, complex_noise_variance, received_signal, ChannelModel, PhaseVector,
    SourceSignal,
};
use crate::dataset::{
    generate_test_set_at, generate_training_set_with, DatasetConfig, TrainingDataset,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{DoA, PHI_MAX_DEG, THETA_MAX_DEG};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::metrics::{EvalReport, ScatterSet};
use crate::irs::{train_end_to_end, LearningCurve, TrainingConfig, TrainingOutcome};
use crate::ml_estimator::{CompositeCache, SteeringCache};
use crate::phase_design::{optimize_phases_crlb, snr_max_phases};
use crate::rng::substream;

/// Shared state of one experiment: the channel, the grid steering table and
/// every model trained so far (keyed by snapshot count and frozen flag).
pub struct Experiment {
    cfg: ExperimentConfig,
    channel: ChannelModel,
    exec: Execution,
    steering: OnceLock<SteeringCache>,
    models: BTreeMap<(usize, bool), TrainingOutcome>,
    verbose: bool,
}

/// Estimates of one ML trial per requested method.
struct MlTrial {
    truth: DoA,
    estimates: Vec<Result<DoA>>,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.seeded();
        Ok(Self {
            channel: ChannelModel::new(&cfg.geometry)?,
            cfg,
            exec: Execution::default(),
            steering: OnceLock::new(),
            models: BTreeMap::new(),
            verbose: false,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn steering(&self) -> Result<&SteeringCache> {
        if self.steering.get().is_none() {
            let cache = SteeringCache::new(&self.channel, &self.cfg.grid)?;
            let _ = self.steering.set(cache);
        }
        Ok(self.steering.get().expect("initialized above"))
    }

    fn dataset_config(&self, snapshots: usize) -> DatasetConfig {
        DatasetConfig {
            snapshots,
            n_test: self.cfg.eval.trials,
            ..self.cfg.dataset.clone()
        }
    }

    /// Training data for `snapshots`.
    pub fn training_data(&self, snapshots: usize) -> Result<TrainingDataset> {
        generate_training_set_with(
            &self.cfg.geometry,
            &self.dataset_config(snapshots),
            self.exec,
        )
    }

    /// Train (or reuse) the model for `snapshots`.
    pub fn trained(&mut self, snapshots: usize, frozen_irs: bool) -> Result<&TrainingOutcome> {
        if !self.models.contains_key(&(snapshots, frozen_irs)) {
            self.log(format!("training L={snapshots} frozen_irs={frozen_irs}"));
            let data = self.training_data(snapshots)?;
            let tcfg = TrainingConfig {
                freeze_irs: frozen_irs,
                ..self.cfg.training.clone()
            };
            let out = train_end_to_end(&data, &self.cfg.geometry, &tcfg)?;
            self.log(format!(
                "  val loss {:.5} -> {:.5}",
                out.curve.initial_val_loss,
                out.curve.final_val_loss()
            ));
            self.models.insert((snapshots, frozen_irs), out);
        }
        Ok(&self.models[&(snapshots, frozen_irs)])
    }

    /// Model trained earlier in this experiment, if any.
    pub fn model(&self, snapshots: usize, frozen_irs: bool) -> Option<&TrainingOutcome> {
        self.models.get(&(snapshots, frozen_irs))
    }

    /// Learning curves of every trained model, labelled `method` and `L`.
    pub fn learning_curves(&self) -> Vec<(Method, usize, &LearningCurve)> {
        self.models
            .iter()
            .map(|(&(l, frozen), out)| {
                let m = if frozen {
                    Method::LearnedFcFrozenIrs
                } else {
                    Method::LearnedFc
                };
                (m, l, &out.curve)
            })
            .collect()
    }

    fn effective_snr(&self, snr_db: f64) -> f64 {
        if self.cfg.eval.noiseless {
            f64::INFINITY
        } else {
            snr_db
        }
    }

    fn learned_estimates(
        &mut self,
        method: Method,
        snr_db: f64,
        snapshots: usize,
    ) -> Result<(Vec<DoA>, Vec<DoA>)> {
        let frozen = method == Method::LearnedFcFrozenIrs;
        let exec = self.exec;
        let dcfg = self.dataset_config(snapshots);
        let snr = self.effective_snr(snr_db);
        let model = self.trained(snapshots, frozen)?.model.clone();
        let set = generate_test_set_at(&self.channel, &dcfg, &model.export_phases(), snr, exec)?;
        let truths: Vec<DoA> = set.cases.iter().map(|c| c.doa).collect();
        let estimates: Result<Vec<DoA>> = exec
            .map(set.cases.len(), |k| {
                model.predict_doa(set.cases[k].y.view())
            })
            .into_iter()
            .collect();
        Ok((estimates?, truths))
    }

    fn ml_trial(
        &self,
        methods: &[Method],
        snr_db: f64,
        snapshots: usize,
        k: usize,
    ) -> Result<MlTrial> {
        let cfg = &self.cfg;
        let steering = self.steering()?;
        let power = self.channel.received_power();
        let m_a = self.channel.num_elements();
        let mut rng = substream(
            cfg.seed,
            &format!("ml-trial/{snr_db}/{snapshots}"),
            k as u64,
        );
        let truth = DoA::clamped(
            rng.random_range(0.0..=THETA_MAX_DEG),
            rng.random_range(0.0..=PHI_MAX_DEG),
        );
        let psi = rng.random_range(-PI..PI);
        let psi = if cfg.dataset.random_initial_phase {
            psi
        } else {
            0.0
        };
        let source = SourceSignal::exponential(snapshots, cfg.dataset.source_rotation, psi)?;
        let observe = |phases: &PhaseVector, rng: &mut crate::rng::Rng| -> Result<_> {
            let a = self
                .channel
                .phased_mapping(phases)?
                .dot(&self.channel.steering_rt(truth));
            let noise = snr_db
                .is_finite()
                .then(|| awgn_complex_with(snr_db, power, m_a, snapshots, rng));
            received_signal(a.view(), source.samples(), noise.as_ref().map(|n| n.view()))
        };
        let search = |phases: &PhaseVector, y: &ndarray::Array2<_>| -> Result<DoA> {
            let cache: CompositeCache = steering.composite(&self.channel, phases)?;
            Ok(cache.search(y.view(), Execution::Sequential, false)?.doa)
        };

        let random = PhaseVector::random(self.channel.num_cells(), &mut rng);
        let coarse = search(&random, &observe(&random, &mut rng)?)?;

        let sigma_n2 = if snr_db.is_finite() {
            complex_noise_variance(snr_db, power, m_a, snapshots)
        } else {
            1.0
        };
        let estimates = methods
            .iter()
            .map(|&m| {
                let phases = match m {
                    Method::MlSnrMax => snr_max_phases(&cfg.geometry, coarse)?,
                    Method::MlCrlbMin => {
                        // the bound is infinite at both poles; design one grid step inside
                        let theta = coarse
                            .theta()
                            .clamp(cfg.grid.step, THETA_MAX_DEG - cfg.grid.step);
                        let at = DoA::clamped(theta, coarse.phi());
                        let mut pd = cfg.eval.phase_design.clone();
                        pd.seed = substream(cfg.seed, "crlb-seed", k as u64).random();
                        optimize_phases_crlb(&self.channel, at, source.power(), sigma_n2, &pd)?
                            .phases
                    }
                    _ => return Err(Error::Config(format!("{} is not an ML method", m.name()))),
                };
                let mut fine = substream(
                    cfg.seed,
                    &format!("ml-fine/{}/{snr_db}/{snapshots}", m.name()),
                    k as u64,
                );
                search(&phases, &observe(&phases, &mut fine)?)
            })
            .collect();
        Ok(MlTrial { truth, estimates })
    }

    fn evaluate_point(
        &mut self,
        report: &mut EvalReport,
        snr_db: f64,
        snapshots: usize,
        keep: bool,
    ) {
        let methods = self.cfg.eval.methods.clone();
        let ml: Vec<Method> = methods
            .iter()
            .copied()
            .filter(|m| !m.is_learned())
            .collect();
        let trials = self.cfg.eval.trials;
        if !ml.is_empty() {
            self.log(format!("ML trials snr={snr_db} L={snapshots}"));
            let snr = self.effective_snr(snr_db);
            let outcomes = self
                .exec
                .map(trials, |k| self.ml_trial(&ml, snr, snapshots, k));
            for (i, &m) in ml.iter().enumerate() {
                let mut truths = Vec::with_capacity(trials);
                let mut est = Vec::with_capacity(trials);
                let mut err = None;
                for o in &outcomes {
                    match o {
                        Ok(t) => match &t.estimates[i] {
                            Ok(d) => {
                                truths.push(t.truth);
                                est.push(*d);
                            }
                            Err(e) => err = Some(e.to_string()),
                        },
                        Err(e) => err = Some(e.to_string()),
                    }
                }
                match err {
                    Some(e) => report.failures.push((m.name().to_string(), e)),
                    None => {
                        if let Err(e) =
                            report.record(m.name(), snr_db, snapshots, &est, &truths, keep)
                        {
                            report.failures.push((m.name().to_string(), e.to_string()));
                        }
                    }
                }
            }
        }
        for m in methods.into_iter().filter(|m| m.is_learned()) {
            let result = self
                .learned_estimates(m, snr_db, snapshots)
                .and_then(|(est, truths)| {
                    report.record(m.name(), snr_db, snapshots, &est, &truths, keep)
                });
            if let Err(e) = result {
                report.failures.push((m.name().to_string(), e.to_string()));
            }
        }
    }

    /// RMSE for every method and SNR at the configured snapshot count.
    pub fn run_rmse_vs_snr(&mut self) -> EvalReport {
        let mut report = EvalReport::default();
        let l = self.cfg.dataset.snapshots;
        for snr in self.cfg.eval.snr_set_db.clone() {
            self.evaluate_point(&mut report, snr, l, false);
        }
        report
    }

    /// RMSE for every method and snapshot count at the sweep SNR. Learned
    /// models are trained per snapshot count.
    pub fn run_rmse_vs_snapshots(&mut self) -> EvalReport {
        let mut report = EvalReport::default();
        let snr = self.cfg.eval.snapshot_sweep_snr_db;
        for l in self.cfg.eval.snapshot_sweep.clone() {
            self.evaluate_point(&mut report, snr, l, false);
        }
        report
    }

    /// Per-trial records at the scatter SNR.
    pub fn run_scatter(&mut self) -> EvalReport {
        let mut report = EvalReport::default();
        let (snr, l) = (self.cfg.eval.scatter_snr_db, self.cfg.dataset.snapshots);
        self.evaluate_point(&mut report, snr, l, true);
        report
    }
}

/// Comment line identifying the run that produced an output file.
pub fn provenance_header(cfg: &ExperimentConfig) -> String {
    format!("# seed={} config={}\n", cfg.seed, cfg.content_hash())
}

fn fmt_snr(snr: f64) -> String {
    if snr.is_finite() {
        format!("{snr}")
    } else {
        "inf".into()
    }
}

pub fn rmse_vs_snr_csv(cfg: &ExperimentConfig, report: &EvalReport) -> String {
    let mut s = provenance_header(cfg);
    s.push_str("method,snr_db,rmse_deg,trials,mae_theta_deg,mae_phi_deg\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{:.6},{:.6}",
            r.method,
            fmt_snr(r.snr_db),
            r.rmse_deg,
            r.trials,
            r.mae_theta_deg,
            r.mae_phi_deg
        );
    }
    s
}

pub fn rmse_vs_snapshots_csv(cfg: &ExperimentConfig, report: &EvalReport) -> String {
    let mut s = provenance_header(cfg);
    s.push_str("method,snapshots,snr_db,rmse_deg,trials,mae_theta_deg,mae_phi_deg\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{:.6},{:.6}",
            r.method,
            r.snapshots,
            fmt_snr(r.snr_db),
            r.rmse_deg,
            r.trials,
            r.mae_theta_deg,
            r.mae_phi_deg
        );
    }
    s
}

pub fn failures_csv(cfg: &ExperimentConfig, report: &EvalReport) -> Option<String> {
    if report.failures.is_empty() {
        return None;
    }
    let mut s = provenance_header(cfg);
    s.push_str("method,diagnostic\n");
    for (m, e) in &report.failures {
        let _ = writeln!(s, "{m},\"{}\"", e.replace('"', "'"));
    }
    Some(s)
}

/// Scatter and absolute-error files per method: `(file name, contents)`.
pub fn export_scatter(cfg: &ExperimentConfig, report: &EvalReport) -> Vec<(String, String)> {
    let mut files = Vec::new();
    for set in &report.scatter {
        files.push((format!("scatter_{}.csv", set.method), scatter_csv(cfg, set)));
        files.push((
            format!("abs_error_{}.csv", set.method),
            abs_error_csv(cfg, set),
        ));
    }
    files
}

fn scatter_csv(cfg: &ExperimentConfig, set: &ScatterSet) -> String {
    let mut recs = set.records.clone();
    recs.sort_by(|a, b| {
        a.true_theta
            .total_cmp(&b.true_theta)
            .then(a.pred_theta.total_cmp(&b.pred_theta))
    });
    let mut s = provenance_header(cfg);
    let _ = writeln!(
        s,
        "# snr_db={} snapshots={}",
        fmt_snr(set.snr_db),
        set.snapshots
    );
    s.push_str("true_theta,pred_theta,abs_error\n");
    for r in recs {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{:.6}",
            r.true_theta,
            r.pred_theta,
            (r.pred_theta - r.true_theta).abs()
        );
    }
    s
}

fn abs_error_csv(cfg: &ExperimentConfig, set: &ScatterSet) -> String {
    let mut s = provenance_header(cfg);
    let _ = writeln!(
        s,
        "# snr_db={} snapshots={}",
        fmt_snr(set.snr_db),
        set.snapshots
    );
    s.push_str("angle,true_deg,abs_error_deg\n");
    let mut theta: Vec<(f64, f64)> = set
        .records
        .iter()
        .map(|r| (r.true_theta, (r.pred_theta - r.true_theta).abs()))
        .collect();
    let mut phi: Vec<(f64, f64)> = set
        .records
        .iter()
        .map(|r| (r.true_phi, (r.pred_phi - r.true_phi).abs()))
        .collect();
    for (name, v) in [("theta", &mut theta), ("phi", &mut phi)] {
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (t, e) in v.iter() {
            let _ = writeln!(s, "{name},{t:.6},{e:.6}");
        }
    }
    s
}

pub fn learning_curve_csv(cfg: &ExperimentConfig, curve: &LearningCurve) -> String {
    let mut s = provenance_header(cfg);
    s.push_str(&curve.to_csv());
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::ScatterRecord;
    use crate::ml_estimator::SearchGrid;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.grid = SearchGrid {
            step: 2.0,
            ..Default::default()
        };
        cfg.eval.trials = 3;
        cfg.eval.snr_set_db = vec![-10.0, 20.0];
        cfg.eval.methods = vec![Method::MlSnrMax, Method::MlCrlbMin];
        cfg.eval.phase_design.max_iterations = 5;
        cfg
    }

    #[test]
    fn report_has_one_row_per_method_and_snr() {
        let mut exp = Experiment::new(&tiny()).unwrap();
        let rep = exp.run_rmse_vs_snr();
        assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        assert_eq!(rep.rows.len(), 4);
        assert!(rep.rows.iter().all(|r| r.trials == 3 && r.rmse_deg >= 0.0));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let a = Experiment::new(&tiny())
            .unwrap()
            .with_execution(Execution::Parallel)
            .run_rmse_vs_snr();
        let b = Experiment::new(&tiny())
            .unwrap()
            .with_execution(Execution::Sequential)
            .run_rmse_vs_snr();
        assert_eq!(a, b);
    }

    #[test]
    fn scatter_errors_recompute() {
        let cfg = tiny();
        let set = ScatterSet {
            method: "x".into(),
            snr_db: 0.0,
            snapshots: 10,
            records: vec![
                ScatterRecord {
                    true_theta: 40.0,
                    true_phi: 10.0,
                    pred_theta: 42.5,
                    pred_phi: 9.0,
                },
                ScatterRecord {
                    true_theta: 10.0,
                    true_phi: 100.0,
                    pred_theta: 10.0,
                    pred_phi: 100.0,
                },
            ],
        };
        let rep = EvalReport {
            scatter: vec![set],
            ..Default::default()
        };
        let files = export_scatter(&cfg, &rep);
        assert_eq!(files[0].0, "scatter_x.csv");
        let rows: Vec<&str> = files[0]
            .1
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .collect();
        assert_eq!(
            rows,
            vec![
                "10.000000,10.000000,0.000000",
                "40.000000,42.500000,2.500000"
            ]
        );
        assert!(files[1].1.contains("phi,10.000000,1.000000"));
    }
}
