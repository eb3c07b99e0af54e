//! `phdmd`: generate training data, identify port-Hamiltonian or
//! unstructured models, evaluate them, and run preset experiments.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phdmd_core::experiment::{self, ExperimentConfig, Method, PRESETS};
use phdmd_core::io;
use phdmd_core::linalg::Mat;
use phdmd_core::simulate::{read_trajectory_csv, write_trajectory_csv};
use phdmd_core::Error;

#[derive(Parser)]
#[command(name = "phdmd", version, about = "Port-Hamiltonian dynamic mode decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Overrides the noise seed of the configuration
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the reference model on the training and test inputs
    Generate(Common),
    /// Identify a model from training data
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "phdmd", value_parser = parse_method)]
        method: Method,
        /// Training trajectory CSV; regenerated from the config when omitted
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare an identified model with the reference on the test input
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory or manifest of the identified model
        #[arg(long)]
        model: PathBuf,
    },
    /// Run a full experiment from a preset name or a config file
    Experiment {
        /// One of msd-siso, msd-noisy, msd-mimo-reduction
        #[arg(conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

const BASIS_FILE: &str = "basis.mtx";

fn load(config: &Path, seed: Option<u64>) -> phdmd_core::Result<ExperimentConfig> {
    let mut cfg = experiment::load_config(config)?;
    apply_seed(&mut cfg, seed);
    Ok(cfg)
}

fn apply_seed(cfg: &mut ExperimentConfig, seed: Option<u64>) {
    if let (Some(seed), Some(noise)) = (seed, cfg.noise.as_mut()) {
        noise.seed = seed;
    }
}

fn create_dir(dir: &Path) -> phdmd_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn generate(c: &Common) -> phdmd_core::Result<()> {
    let cfg = load(&c.config, c.seed)?;
    let reference = experiment::reference_model(&cfg)?;
    let data = experiment::generate(&cfg, &reference)?;
    create_dir(&c.out)?;
    write_trajectory_csv(&data.train, &c.out.join("train.csv"))?;
    write_trajectory_csv(&data.clean, &c.out.join("train_clean.csv"))?;
    write_trajectory_csv(&data.test, &c.out.join("test_reference.csv"))?;
    println!(
        "wrote {} training and {} test samples to {}",
        data.train.n_samples(),
        data.test.n_samples(),
        c.out.display()
    );
    Ok(())
}

fn identify(c: &Common, method: Method, data: Option<&Path>) -> phdmd_core::Result<()> {
    let cfg = load(&c.config, c.seed)?;
    let reference = experiment::reference_model(&cfg)?;
    let train = match data {
        Some(path) => read_trajectory_csv(path)?,
        None => experiment::generate(&cfg, &reference)?.train,
    };
    let id = experiment::identify(
        method,
        &reference,
        &train,
        cfg.reduction,
        &cfg.solver,
        cfg.truncation_tol,
    )?;
    create_dir(&c.out)?;
    let model_dir = c.out.join("model");
    let manifest = experiment::save_model(&id.model, &model_dir)?;
    if let Some(phi) = &id.phi {
        io::write_mtx(&model_dir.join(BASIS_FILE), phi)?;
    }
    let stability = experiment::stability(&id.model)?;
    let summary = serde_json::json!({
        "method": method,
        "manifest": manifest,
        "stability": stability,
        "fit": id.fit,
        "iterations": id.report.as_ref().map(|r| r.iterations),
        "termination": id.report.as_ref().map(|r| r.termination),
    });
    experiment::write_json(&summary, &c.out.join("identify.json"))?;
    if let Some(report) = &id.report {
        experiment::write_json(report, &c.out.join("solver_report.json"))?;
    }
    let kind = if stability.discrete {
        "spectral radius"
    } else {
        "spectral abscissa"
    };
    println!("{}: model written to {}", method.name(), manifest.display());
    if let Some(fit) = &id.fit {
        println!(
            "  f = {:.3e}, f_T = {:.3e} (initial {:.3e}, {:.3e})",
            fit.f_final, fit.f_t_final, fit.f_init, fit.f_t_init
        );
    }
    println!(
        "  {kind} {:.6e}{}",
        stability.value,
        if stability.stable { "" } else { " (UNSTABLE)" }
    );
    Ok(())
}

fn evaluate(c: &Common, model_path: &Path) -> phdmd_core::Result<()> {
    let cfg = load(&c.config, c.seed)?;
    let reference = experiment::reference_model(&cfg)?;
    let identified = io::load_model(model_path)?;
    let dir = if model_path.is_dir() {
        model_path.to_path_buf()
    } else {
        model_path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let basis_path = dir.join(BASIS_FILE);
    let phi: Option<Mat> = if basis_path.exists() {
        Some(io::read_mtx(&basis_path)?)
    } else {
        None
    };
    let test = experiment::simulate_phase(&reference, &cfg.test)?;
    let (eval, traj) = experiment::evaluate(
        &reference,
        &identified,
        phi.as_ref(),
        &cfg.test,
        &test,
        &cfg.omega(),
    )?;
    create_dir(&c.out)?;
    experiment::write_json(&eval, &c.out.join("metrics.json"))?;
    write_trajectory_csv(&traj, &c.out.join("test.csv"))?;
    experiment::write_error_csv(&test, &traj, &eval.output_error, &c.out.join("error.csv"))?;
    println!(
        "rel L2 error {:.3e}, rel Linf error {:.3e}",
        eval.output_error.rel_l2, eval.output_error.rel_linf
    );
    if let Some(t) = &eval.transfer {
        println!(
            "sampled H-inf error {:.3e} (relative {:.3e}), sampled H2 error {:.3e} (relative {:.3e})",
            t.h_inf_sampled, t.rel_h_inf_sampled, t.h2_sampled, t.rel_h2_sampled
        );
    }
    Ok(())
}

fn run_experiment(
    preset: Option<&str>,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> phdmd_core::Result<()> {
    let mut cfg = match (preset, config) {
        (_, Some(path)) => experiment::load_config(path)?,
        (Some(name), None) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Config(format!(
                "give a preset ({}) or --config",
                PRESETS.join(", ")
            )))
        }
    };
    apply_seed(&mut cfg, seed);
    let summary = experiment::write_experiment(&cfg, out)?;
    for m in &summary.methods {
        let e = &m.evaluation;
        let fit = m
            .fit
            .as_ref()
            .map(|f| format!(" f={:.2e} f_T={:.2e}", f.f_final, f.f_t_final))
            .unwrap_or_default();
        println!(
            "{:>6}: n={} relL2={:.3e} stable={}{}",
            m.method.name(),
            m.n_states,
            e.output_error.rel_l2,
            e.stability.stable,
            fit
        );
    }
    if !summary.sweep.is_empty() {
        println!("{} sweep points written to {}", summary.sweep.len(), out.join("sweep.csv").display());
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => generate(c),
        Command::Identify {
            common,
            method,
            data,
        } => identify(common, *method, data.as_deref()),
        Command::Evaluate { common, model } => evaluate(common, model),
        Command::Experiment {
            preset,
            config,
            out,
            seed,
        } => run_experiment(preset.as_deref(), config.as_deref(), out, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
