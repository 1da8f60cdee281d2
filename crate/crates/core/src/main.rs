use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tslab::harness::{
    check_fig1, check_fig2, fig1_config, fig2_config, hardness_report, read_ensemble, run_figure,
    separation_train_config, teacher_energies, write_ensemble, write_trace, Check, ExperimentConfig,
};
use tslab::meanfield::{run_particles, sample_truncated_init, SgParams};
use tslab::model::{sample_dataset, sample_teacher, Activation, TeacherMode};
use tslab::reduction::{closed_form_regressor, fit_least_squares, residual_labels};
use tslab::spectrum::{decompose_loss, hermite_coeffs, DEFAULT_K_MAX};
use tslab::trainer::{run_two_stage, run_with, GradientMode};
use tslab::model::init_student;
use tslab::{Error, Result, TrainConfig};

#[derive(Parser)]
#[command(name = "tslab", version, about = "Teacher-student training and loss-decomposition laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-stage truncated gradient descent; writes train_trace.csv and ensemble.csv.
    Train(Common),
    /// Per-order loss breakdown of a saved ensemble against the configured teacher.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Ensemble file written by `train`.
        #[arg(long)]
        ensemble: PathBuf,
    },
    /// Particle dynamics from a truncated Gaussian initialization.
    Meanfield(Common),
    /// ReLU-teacher reduction: least squares, residual labels, abs-teacher training.
    Reduce(Common),
    /// Hadamard-block instance, Fourier mass and baseline comparison.
    Hardness(Common),
    /// Canned d=30, m=100 run; checks the fast/slow order thresholds.
    Fig1(Common),
    /// Canned d=30, m=60 run; checks that orders 2, 4, 6 stay unlearned.
    Fig2(Common),
}

/// Flags shared by every subcommand. Each overrides the config-file key of
/// the same name (dashes become underscores).
#[derive(Args, Debug, Default)]
struct Common {
    /// Config file with `key = value` lines and `[subcommand]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    n_samples: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    teacher_mode: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    lambda0: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long, visible_alias = "t1")]
    t1_iters: Option<String>,
    #[arg(long, visible_alias = "t2")]
    t2_iters: Option<String>,
    #[arg(long)]
    j_max: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    seed_teacher: Option<String>,
    #[arg(long)]
    seed_data: Option<String>,
    #[arg(long)]
    seed_init: Option<String>,
    #[arg(long)]
    gradient_mode: Option<String>,
    #[arg(long)]
    learner_activation: Option<String>,
    #[arg(long)]
    threshold_factor: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    q_collections: Option<String>,
    #[arg(long)]
    n_features: Option<String>,
    /// Comma-separated ridge values.
    #[arg(long)]
    ridge: Option<String>,
    #[arg(long)]
    n_mc: Option<String>,
}

impl Common {
    fn load(&self, section: &str) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, section)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("d", &self.d),
            ("m", &self.m),
            ("n_samples", &self.n_samples),
            ("kappa", &self.kappa),
            ("teacher_mode", &self.teacher_mode),
            ("eta", &self.eta),
            ("lambda0", &self.lambda0),
            ("lambda1", &self.lambda1),
            ("t1_iters", &self.t1_iters),
            ("t2_iters", &self.t2_iters),
            ("j_max", &self.j_max),
            ("log_every", &self.log_every),
            ("seed_teacher", &self.seed_teacher),
            ("seed_data", &self.seed_data),
            ("seed_init", &self.seed_init),
            ("gradient_mode", &self.gradient_mode),
            ("learner_activation", &self.learner_activation),
            ("threshold_factor", &self.threshold_factor),
            ("r", &self.r),
            ("q_collections", &self.q_collections),
            ("n_features", &self.n_features),
            ("ridge", &self.ridge),
            ("n_mc", &self.n_mc),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v.clone())?;
            }
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(&self.out)
    }
}

fn report(checks: &[Check]) -> bool {
    for c in checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.pass)
}

fn train(c: &Common) -> Result<bool> {
    let cfg = c.load("train")?.train_config(TrainConfig::default())?;
    let out = run_two_stage(&cfg)?;
    let dir = c.out_dir()?;
    write_trace(&out.trace, &dir.join("train_trace.csv"))?;
    write_ensemble(&out.ensemble, &dir.join("ensemble.csv"))?;
    if let Some(r) = out.trace.last() {
        println!(
            "iter {} loss {:.6e} L0 {:.3e} L2 {:.3e} L4 {:.3e} L6 {:.3e}",
            r.iter, r.emp_loss, r.l0, r.l2, r.l4, r.l6
        );
    }
    Ok(true)
}

fn decompose(c: &Common, ensemble: &Path) -> Result<bool> {
    let cfg = c.load("decompose")?;
    let ens = read_ensemble(ensemble)?;
    let d = cfg.get_or("d", ens.dim())?;
    let teacher = sample_teacher(
        d,
        cfg.get_or("kappa", 1.0)?,
        cfg.get_or("teacher_mode", TeacherMode::Identity)?,
        cfg.get_or("seed_teacher", 0)?,
    )?;
    let table = hermite_coeffs(DEFAULT_K_MAX)?;
    let br = decompose_loss(&ens, &teacher, cfg.get_or("j_max", 12)?, &table)?;
    println!("order,loss,teacher_energy");
    for ((k, l), e) in br.orders.iter().zip(&br.per_order).zip(&br.teacher_energy) {
        println!("{k},{l:.16e},{e:.16e}");
    }
    println!("tail_bound,{:.16e}", br.tail_bound);
    println!("total,{:.16e}", br.total);
    Ok(true)
}

fn meanfield(c: &Common) -> Result<bool> {
    let cfg = c.load("meanfield")?;
    let d = cfg.get_or("d", 20)?;
    let teacher = sample_teacher(
        d,
        cfg.get_or("kappa", 1.0)?,
        cfg.get_or("teacher_mode", TeacherMode::Identity)?,
        cfg.get_or("seed_teacher", 0)?,
    )?;
    let count = cfg.get_or("m", 200)?;
    let act = cfg.get_or("learner_activation", Activation::Abs)?;
    let init = sample_truncated_init(d, teacher.a().view(), count, &SgParams::default(), act, cfg.get_or("seed_init", 2)?)?;
    println!("acceptance rate {:.4} over {} draws", init.acceptance_rate, init.draws);
    let table = hermite_coeffs(DEFAULT_K_MAX)?;
    let (_, trace, diags) = run_particles(
        init.cloud,
        &teacher,
        cfg.get_or("eta", 0.5)?,
        cfg.get_or("lambda0", (d as f64).powi(-4))?,
        cfg.get_or("t1_iters", 1000)?,
        cfg.get_or("j_max", 12)?,
        cfg.get_or("log_every", 50)?,
        &table,
    )?;
    write_trace(&trace, &c.out_dir()?.join("meanfield_trace.csv"))?;
    if let (Some(r), Some(g)) = (trace.last(), diags.last()) {
        println!(
            "step {} loss {:.6e} delta {:.3e} delta+ {:.3e} delta- {:.3e} large-mass {:.3}",
            r.iter, r.emp_loss, g.delta, g.delta_plus, g.delta_minus, g.large_mass
        );
    }
    Ok(true)
}

fn reduce(c: &Common) -> Result<bool> {
    let base = TrainConfig {
        n_samples: 100_000,
        ..TrainConfig::default()
    };
    let cfg = c.load("reduce")?.train_config(base)?;
    let abs = sample_teacher(cfg.d, cfg.kappa, cfg.teacher_mode, cfg.seed_teacher)?;
    let relu = abs.with_activation(Activation::Relu);
    let data = sample_dataset(&relu, cfg.n_samples, cfg.seed_data)?;
    let fitted = fit_least_squares(&data)?;
    let exact = closed_form_regressor(&relu)?;
    println!("|z - z*| = {:.6e}", (&fitted.z - &exact.z).mapv(|v| v * v).sum().sqrt());
    let residual = residual_labels(&data, &fitted)?;
    let train_cfg = TrainConfig {
        gradient_mode: GradientMode::Empirical,
        ..cfg.clone()
    };
    let init = init_student(train_cfg.d, train_cfg.m, train_cfg.learner_activation, train_cfg.seed_init)?;
    let (trace, _) = run_with(&train_cfg, &abs, Some(&residual), init)?;
    write_trace(&trace, &c.out_dir()?.join("reduce_trace.csv"))?;
    if let Some(r) = trace.last() {
        println!("iter {} residual-label loss {:.6e}", r.iter, r.emp_loss);
    }
    Ok(true)
}

fn hardness(c: &Common) -> Result<bool> {
    let cfg = c.load("hardness")?;
    let mut train = cfg.train_config(separation_train_config())?;
    train.d = cfg.get_or("d", 16)?;
    let r = cfg.get_or("r", 4)?;
    let q = cfg.get_or("q_collections", 1)?;
    let n_features = cfg.get_or("n_features", 512)?;
    let ridges = cfg.get_list("ridge")?.unwrap_or_else(|| vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]);
    let n_mc = cfg.get_or("n_mc", 100_000)?;
    let rep = hardness_report(train.d, r, q, train.seed_teacher, 1000, Some((&train, n_features, &ridges, n_mc)))?;
    println!(
        "orthonormality error {:.3e}, rejection rate {:.3}, block mass {:.6e}, positive fraction {:.3}",
        rep.orthonormality_error, rep.rejection_rate, rep.mass, rep.positive_fraction
    );
    let sep = rep.separation.expect("separation requested");
    let dir = c.out_dir()?;
    let mut w = csv::Writer::from_path(dir.join("hardness.csv")).map_err(|e| Error::Config(e.to_string()))?;
    let rows = std::iter::once(["model".to_string(), "ridge".into(), "n_features".into(), "train_loss".into(), "population_loss".into(), "stderr".into()])
        .chain(sep.baselines.iter().map(|b| {
            [
                b.kind.to_string(),
                format!("{:.16e}", b.ridge),
                b.n_features.to_string(),
                format!("{:.16e}", b.train_loss),
                format!("{:.16e}", b.population_loss.mean),
                format!("{:.16e}", b.population_loss.stderr),
            ]
        }))
        .chain(std::iter::once([
            "network".to_string(),
            "0".into(),
            train.m.to_string(),
            format!("{:.16e}", sep.network_trace.last().map(|t| t.emp_loss).unwrap_or(f64::NAN)),
            format!("{:.16e}", sep.network.mean),
            format!("{:.16e}", sep.network.stderr),
        ]));
    for row in rows {
        w.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: dir.join("hardness.csv"),
        source: e,
    })?;
    write_trace(&sep.network_trace, &dir.join("hardness_network_trace.csv"))?;
    println!(
        "best baseline {:.6e}, network {:.6e}, ratio {:.3}",
        sep.best_baseline.mean, sep.network.mean, sep.ratio
    );
    Ok(sep.network.mean < sep.best_baseline.mean)
}

fn figure(c: &Common, name: &str) -> Result<bool> {
    let base = if name == "fig1" { fig1_config() } else { fig2_config() };
    let cfg = c.load(name)?.train_config(base)?;
    let run = run_figure(&cfg)?;
    run.write(c.out_dir()?, name)?;
    let table = hermite_coeffs(DEFAULT_K_MAX)?;
    debug_assert_eq!(teacher_energies(&run.teacher, cfg.j_max, &table)?, run.energies);
    let checks = if name == "fig1" { check_fig1(&run) } else { check_fig2(&run) };
    Ok(report(&checks))
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Decompose { common, ensemble } => decompose(common, ensemble),
        Command::Meanfield(c) => meanfield(c),
        Command::Reduce(c) => reduce(c),
        Command::Hardness(c) => hardness(c),
        Command::Fig1(c) => figure(c, "fig1"),
        Command::Fig2(c) => figure(c, "fig2"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric_abort() { 2 } else { 1 })
        }
    }
}
