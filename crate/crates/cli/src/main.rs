//! `pfa`: exemplar generation, scene synthesis, refinement runs and metric
//! reports for the one-shot pose refinement engine.
//!
//! Exit codes: 0 success, 2 configuration or malformed input, 3 I/O error,
//! 4 mesh mismatch between artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfa_core::exemplar::{generate_exemplar_set, save_set};
use pfa_core::harness::{
    load_records_dir, run_sweep, synth_scenes, write_eval, write_report, Experiment,
    ExperimentConfig, HarnessError, MetricRow, SceneManifest,
};

#[derive(Parser)]
#[command(
    name = "pfa",
    version,
    about = "One-shot 6D pose refinement by exemplar flow aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an exemplar set and write it to disk
    GenExemplars(GenExemplars),
    /// Draw trial scenes (ground truth, occluders, jittered initial pose)
    SynthScenes(SynthScenes),
    /// Refine every trial of a manifest and write records and a report
    Refine(Refine),
    /// Compute metric tables and accuracy curves from records
    Eval(Eval),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML); flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Args)]
struct GenExemplars {
    #[command(flatten)]
    config: ConfigArg,
    /// PLY or OBJ mesh in meters; the built-in test object when omitted
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// rendering depth in meters
    #[arg(long)]
    zbar: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthScenes {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    occluders: Option<usize>,
    /// rotation jitter bound, degrees
    #[arg(long)]
    max_rot: Option<f64>,
    /// reprojection jitter bound, pixels
    #[arg(long)]
    max_reproj: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Refine {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// exemplar set written by gen-exemplars; rendered in memory when omitted
    #[arg(long)]
    exemplars: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// number of exemplars per trial (overrides any sweep in the config)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    /// directory of records_n*.json files, or one records file
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenExemplars(a) => gen_exemplars(a),
        Command::SynthScenes(a) => synth(a),
        Command::Refine(a) => refine(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn gen_exemplars(a: GenExemplars) -> Result<(), HarnessError> {
    let mut cfg = a.config.load()?;
    cfg.mesh = a.mesh.or(cfg.mesh);
    if let Some(v) = a.count {
        cfg.exemplars.count = v;
    }
    if let Some(v) = a.zbar {
        cfg.exemplars.z_bar = v;
    }
    if let Some(v) = a.seed {
        cfg.exemplars.seed = v;
    }
    cfg.validate()?;
    cfg.validate_paths()?;
    let mesh = cfg.load_mesh()?;
    let e = &cfg.exemplars;
    let k_r = cfg.exemplar_intrinsics(&mesh)?;
    let name = cfg
        .mesh
        .as_deref()
        .and_then(Path::file_stem)
        .and_then(|s| s.to_str())
        .unwrap_or("test-object");
    let set = generate_exemplar_set(&mesh, e.count, e.z_bar, &k_r, e.seed)?.with_object_name(name);
    save_set(&set, &a.out)?;
    let size = std::fs::metadata(&a.out).map(|m| m.len()).unwrap_or(0);
    println!(
        "wrote {} exemplars to {} ({size} bytes, z_bar {} m, focal {:.2} px, mesh {})",
        set.len(),
        a.out.display(),
        set.z_bar(),
        k_r.fx(),
        set.mesh_hash()
    );
    Ok(())
}

fn synth(a: SynthScenes) -> Result<(), HarnessError> {
    let mut cfg = a.config.load()?;
    cfg.mesh = a.mesh.or(cfg.mesh);
    if let Some(v) = a.trials {
        cfg.scene.trials = v;
    }
    if let Some(v) = a.seed {
        cfg.scene.seed = v;
    }
    if let Some(v) = a.occluders {
        cfg.scene.occluders = v;
    }
    if let Some(v) = a.max_rot {
        cfg.jitter.max_rot = v;
    }
    if let Some(v) = a.max_reproj {
        cfg.jitter.max_reproj = v;
    }
    cfg.validate()?;
    cfg.validate_paths()?;
    let mesh = cfg.load_mesh()?;
    let manifest = synth_scenes(&cfg, &mesh)?;
    std::fs::write(&a.out, manifest.to_json()).map_err(|e| HarnessError::Io {
        path: a.out.clone(),
        source: e,
    })?;
    println!(
        "wrote {} trial scenes to {}",
        manifest.trials.len(),
        a.out.display()
    );
    Ok(())
}

fn print_rows(rows: &[MetricRow]) {
    println!(
        "{:>4} {:>8} {:>7} {:>8} {:>8} {:>8} {:>8} {:>12}",
        "N", "stage", "failed", "ADD-.1d", "ADD-.5d", "AUC", "AUC-S", "median rot"
    );
    for r in rows {
        println!(
            "{:>4} {:>8} {:>7} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>12}",
            r.n_exemplars,
            r.stage,
            r.failures,
            r.add_01d,
            r.add_05d,
            r.auc_add,
            r.auc_add_s,
            r.median_rotation_err
                .map_or("-".to_string(), |v| format!("{v:.4}°"))
        );
    }
}

fn refine(a: Refine) -> Result<(), HarnessError> {
    let mut cfg = a.config.load()?;
    cfg.mesh = a.mesh.or(cfg.mesh);
    cfg.exemplars.path = a.exemplars.or(cfg.exemplars.path);
    if let Some(n) = a.n {
        cfg.refine.n_exemplars = n;
        cfg.refine.sweep_n = None;
    }
    cfg.validate()?;
    cfg.validate_paths()?;
    let mesh = cfg.load_mesh()?;
    let manifest = SceneManifest::load(&a.manifest)?;
    manifest.check_mesh(&mesh)?;
    if cfg.exemplars.path.is_none() {
        eprintln!("rendering {} exemplars in memory", cfg.exemplars.count);
    }
    let exemplars = cfg.exemplar_set(&mesh)?;
    let exp = Experiment::new(cfg, mesh, exemplars, manifest)?;
    let files = run_sweep(&exp)?;
    write_report(&a.out, &files)?;
    print_rows(&pfa_core::harness::evaluate_records(&files));
    println!("records and report written to {}", a.out.display());
    Ok(())
}

fn eval(a: Eval) -> Result<(), HarnessError> {
    let files = load_records_dir(&a.records)?;
    let rows = write_eval(&a.out, &files)?;
    print_rows(&rows);
    println!("metrics and curves written to {}", a.out.display());
    Ok(())
}
