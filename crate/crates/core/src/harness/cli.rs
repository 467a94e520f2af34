//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;

use crate::channel::{
    awgn_complex_with, complex_noise_variance, received_signal, ChannelModel, PhaseVector,
    SourceSignal,
};
use crate::dataset::{generate_training_set_with, load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::DoA;
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::experiments::{
    export_scatter, failures_csv, learning_curve_csv, provenance_header, rmse_vs_snapshots_csv,
    rmse_vs_snr_csv, Experiment,
};
use crate::harness::flops::{flops_report, FlopsParams};
use crate::harness::metrics::EvalReport;
use crate::harness::plot::plot_directory;
use crate::irs::{phases_from_text, phases_to_text, train_end_to_end, EndToEndModel};
use crate::ml_estimator::CompositeCache;
use crate::phase_design::{crlb, optimize_phases_crlb, snr_max_phases};
use crate::rng::substream;

#[derive(Debug, Parser)]
#[command(
    name = "irs-doa",
    version,
    about = "IRS-assisted DoA estimation experiments"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configuration and the IRSDOA_OUTPUT_DIR environment variable.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Laptop-scale preset: 100 trials, 5,000 training examples, 20 epochs.
    #[arg(long, global = true)]
    desk: bool,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a training dataset.
    GenData {
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long, default_value = "dataset.txt")]
        out: PathBuf,
    },
    /// Train the end-to-end IRS model.
    Train {
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Keep the IRS phases at their random initialization.
        #[arg(long)]
        freeze_irs: bool,
        /// Dataset produced by gen-data; generated on the fly when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Design IRS phases for a coarse DoA.
    DesignPhases {
        method: DesignMethod,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        snr_db: f64,
    },
    /// Simulate one observation and estimate its DoA.
    Estimate {
        method: EstimateMethod,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        snr_db: f64,
        /// Phase file for the ML estimator; uniform random phases when absent.
        #[arg(long)]
        phases: Option<PathBuf>,
        /// Model file for the learned estimator (default: <output-dir>/model.txt).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Monte Carlo evaluation.
    Eval {
        kind: EvalKind,
        /// Comma-separated subset of ml-snr-max, ml-crlb-min, learned-fc, learned-fc-frozen-irs.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        trials: Option<usize>,
        /// Evaluate without noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Per-sample FLOPs of every estimator.
    Flops,
    /// CRLB of both angles for a phase configuration.
    Crlb {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        snr_db: f64,
        #[arg(long)]
        phases: Option<PathBuf>,
    },
    /// Render SVG figures for the CSV files in the output directory.
    Plot {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DesignMethod {
    SnrMax,
    CrlbMin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimateMethod {
    Ml,
    Learned,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalKind {
    RmseVsSnr,
    RmseVsSnapshots,
    Scatter,
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    exec: Execution,
    verbose: bool,
}

impl Ctx {
    fn write(&self, name: impl AsRef<Path>, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        if self.verbose {
            eprintln!("wrote {}", path.display());
        }
        Ok(path)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() || p.exists() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }
}

/// Run the CLI on `argv` (including the program name) and return the exit status.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            1
        }
    }
}

fn build_context(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.desk {
        cfg.apply_desk();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.output_dir.is_some() {
        cfg.output_dir = cli.output_dir.clone();
    }
    cfg.validate()?;
    let cfg = cfg.seeded();
    Ok(Ctx {
        out: cfg.resolved_output_dir(),
        cfg,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        verbose: cli.verbose > 0,
    })
}

fn parse_doa(theta: f64, phi: f64) -> Result<DoA> {
    DoA::new(theta, phi)
}

fn load_phases(path: &Path) -> Result<PhaseVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    phases_from_text(&text).map_err(|e| e.at_path(path))
}

fn run(cli: Cli) -> Result<()> {
    let ctx = build_context(&cli)?;
    let cfg = &ctx.cfg;
    match cli.command {
        Command::GenData { snapshots, out } => {
            let mut dcfg = cfg.dataset.clone();
            if let Some(l) = snapshots {
                dcfg.snapshots = l;
            }
            let ds = generate_training_set_with(&cfg.geometry, &dcfg, ctx.exec)?;
            std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
            let path = ctx.out.join(out);
            save_dataset(&ds, &path)?;
            println!(
                "{} training, {} validation examples -> {}",
                ds.train.len(),
                ds.validation.len(),
                path.display()
            );
        }
        Command::Train {
            snapshots,
            epochs,
            learning_rate,
            freeze_irs,
            data,
        } => {
            let mut tcfg = cfg.training.clone();
            tcfg.freeze_irs |= freeze_irs;
            if let Some(e) = epochs {
                tcfg.epochs = e;
            }
            if let Some(lr) = learning_rate {
                tcfg.learning_rate = lr;
            }
            let ds = match data {
                Some(p) => load_dataset(&ctx.resolve(&p), &cfg.geometry)?,
                None => {
                    let mut dcfg = cfg.dataset.clone();
                    if let Some(l) = snapshots {
                        dcfg.snapshots = l;
                    }
                    generate_training_set_with(&cfg.geometry, &dcfg, ctx.exec)?
                }
            };
            let outcome = train_end_to_end(&ds, &cfg.geometry, &tcfg)?;
            std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
            outcome
                .model
                .save(&ctx.out.join("model.txt"), &ctx.out.join("phases.txt"))?;
            ctx.write(
                "learning_curve.csv",
                &learning_curve_csv(cfg, &outcome.curve),
            )?;
            println!(
                "trained {} epochs: val loss {:.6} -> {:.6}",
                outcome.curve.epochs.len(),
                outcome.curve.initial_val_loss,
                outcome.curve.final_val_loss()
            );
        }
        Command::DesignPhases {
            method,
            theta,
            phi,
            snr_db,
        } => {
            let doa = parse_doa(theta, phi)?;
            let channel = ChannelModel::new(&cfg.geometry)?;
            let (name, phases) = match method {
                DesignMethod::SnrMax => ("snr-max", snr_max_phases(&cfg.geometry, doa)?),
                DesignMethod::CrlbMin => {
                    let n2 = complex_noise_variance(
                        snr_db,
                        channel.received_power(),
                        channel.num_elements(),
                        cfg.dataset.snapshots,
                    );
                    let out = optimize_phases_crlb(&channel, doa, 1.0, n2, &cfg.eval.phase_design)?;
                    ctx.write(
                        "crlb_trace.csv",
                        &format!("{}{}", provenance_header(cfg), out.trace_csv()),
                    )?;
                    ("crlb-min", out.phases)
                }
            };
            let path = ctx.write(format!("phases_{name}.txt"), &phases_to_text(&phases))?;
            println!("{}", path.display());
        }
        Command::Estimate {
            method,
            theta,
            phi,
            snr_db,
            phases,
            model,
        } => {
            let doa = parse_doa(theta, phi)?;
            let channel = ChannelModel::new(&cfg.geometry)?;
            let mut rng = substream(cfg.seed, "estimate", 0);
            let learned = match method {
                EstimateMethod::Learned => {
                    let p = model
                        .map(|m| ctx.resolve(&m))
                        .unwrap_or_else(|| ctx.out.join("model.txt"));
                    Some(EndToEndModel::load(&p)?)
                }
                EstimateMethod::Ml => None,
            };
            let (phases, l) = match &learned {
                Some(m) => (m.export_phases(), m.snapshots()),
                None => match phases {
                    Some(p) => (load_phases(&ctx.resolve(&p))?, cfg.dataset.snapshots),
                    None => (
                        PhaseVector::random(channel.num_cells(), &mut rng),
                        cfg.dataset.snapshots,
                    ),
                },
            };
            let psi = if cfg.dataset.random_initial_phase {
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
            } else {
                0.0
            };
            let source = SourceSignal::exponential(l, cfg.dataset.source_rotation, psi)?;
            let a = channel
                .phased_mapping(&phases)?
                .dot(&channel.steering_rt(doa));
            let noise = awgn_complex_with(
                snr_db,
                channel.received_power(),
                channel.num_elements(),
                l,
                &mut rng,
            );
            let y = received_signal(a.view(), source.samples(), Some(noise.view()))?;
            let est = match &learned {
                Some(m) => m.predict_doa(y.view())?,
                None => {
                    CompositeCache::new(&channel, &phases, &cfg.grid)?
                        .search(y.view(), ctx.exec, false)?
                        .doa
                }
            };
            let csv = format!(
                "{}true_theta,true_phi,est_theta,est_phi\n{:.6},{:.6},{:.6},{:.6}\n",
                provenance_header(cfg),
                doa.theta(),
                doa.phi(),
                est.theta(),
                est.phi()
            );
            ctx.write("estimate.csv", &csv)?;
            println!("theta {:.4} phi {:.4}", est.theta(), est.phi());
        }
        Command::Eval {
            kind,
            methods,
            trials,
            noiseless,
        } => {
            let mut ecfg = cfg.clone();
            if let Some(ms) = methods {
                ecfg.eval.methods = ms
                    .iter()
                    .map(|m| {
                        Method::parse(m).ok_or_else(|| Error::Config(format!("unknown method {m}")))
                    })
                    .collect::<Result<_>>()?;
            }
            if let Some(c) = trials {
                ecfg.eval.trials = c;
            }
            ecfg.eval.noiseless |= noiseless;
            run_eval(&ctx, &ecfg, kind)?;
        }
        Command::Flops => {
            let report = flops_report(&flops_params(cfg));
            for r in &report.rows {
                println!(
                    "{:<12} {:>12.4e}  {}",
                    r.method, r.flops_per_sample, r.formula
                );
            }
            ctx.write(
                "flops.csv",
                &format!("{}{}", provenance_header(cfg), report.to_csv()),
            )?;
        }
        Command::Crlb {
            theta,
            phi,
            snr_db,
            phases,
        } => {
            let doa = parse_doa(theta, phi)?;
            let channel = ChannelModel::new(&cfg.geometry)?;
            let phases = match phases {
                Some(p) => load_phases(&ctx.resolve(&p))?,
                None => PhaseVector::random(
                    channel.num_cells(),
                    &mut substream(cfg.seed, "crlb-phases", 0),
                ),
            };
            let n2 = complex_noise_variance(
                snr_db,
                channel.received_power(),
                channel.num_elements(),
                cfg.dataset.snapshots,
            );
            let v = crlb(&channel, &phases, doa, 1.0, n2)?;
            let csv = format!(
                "{}theta,phi,snr_db,crlb_theta,crlb_phi,theta_degenerate,phi_degenerate\n{},{},{},{:e},{:e},{},{}\n",
                provenance_header(cfg),
                doa.theta(),
                doa.phi(),
                snr_db,
                v.theta,
                v.phi,
                v.theta_degenerate(),
                v.phi_degenerate()
            );
            ctx.write("crlb.csv", &csv)?;
            println!("crlb_theta {:e} crlb_phi {:e}", v.theta, v.phi);
        }
        Command::Plot { dir } => {
            let dir = dir.unwrap_or_else(|| ctx.out.clone());
            for p in plot_directory(&dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn flops_params(cfg: &ExperimentConfig) -> FlopsParams {
    FlopsParams {
        m_a: cfg.geometry.num_elements(),
        m_r: cfg.geometry.num_cells(),
        snapshots: cfg.dataset.snapshots,
        g_theta: cfg.grid.theta_count(),
        g_phi: cfg.grid.phi_count(),
        iterations: cfg.eval.phase_design.max_iterations,
        ..FlopsParams::default()
    }
}

fn run_eval(ctx: &Ctx, cfg: &ExperimentConfig, kind: EvalKind) -> Result<()> {
    let mut exp = Experiment::new(cfg)?
        .with_execution(ctx.exec)
        .verbose(ctx.verbose);
    let report: EvalReport = match kind {
        EvalKind::RmseVsSnr => {
            let r = exp.run_rmse_vs_snr();
            ctx.write("rmse_vs_snr.csv", &rmse_vs_snr_csv(cfg, &r))?;
            r
        }
        EvalKind::RmseVsSnapshots => {
            let r = exp.run_rmse_vs_snapshots();
            ctx.write("rmse_vs_snapshots.csv", &rmse_vs_snapshots_csv(cfg, &r))?;
            r
        }
        EvalKind::Scatter => {
            let r = exp.run_scatter();
            for (name, body) in export_scatter(cfg, &r) {
                ctx.write(name, &body)?;
            }
            r
        }
    };
    for r in &report.rows {
        println!(
            "{:<22} L={:<3} snr={:<6} rmse {:.4}",
            r.method, r.snapshots, r.snr_db, r.rmse_deg
        );
    }
    let main_l = cfg.dataset.snapshots;
    for (method, l, curve) in exp.learning_curves() {
        let name = if method == Method::LearnedFc && l == main_l {
            "learning_curve.csv".to_string()
        } else {
            format!("learning_curve_{}_L{l}.csv", method.name())
        };
        ctx.write(name, &learning_curve_csv(cfg, curve))?;
    }
    for frozen in [false, true] {
        if let Some(out) = exp.model(main_l, frozen) {
            let m = if frozen {
                Method::LearnedFcFrozenIrs
            } else {
                Method::LearnedFc
            };
            ctx.write(
                format!("phases_{}.txt", m.name()),
                &phases_to_text(&out.model.export_phases()),
            )?;
        }
    }
    if let Some(f) = failures_csv(cfg, &report) {
        ctx.write("failures.csv", &f)?;
        return Err(Error::Training(format!(
            "{} method evaluation(s) failed; see failures.csv",
            report.failures.len()
        )));
    }
    Ok(())
}
