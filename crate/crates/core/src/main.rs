use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use apmimo::autoprecoder::{train, Checkpoint, CheckpointConfig};
use apmimo::baselines::{train_dpd, DpdModel};
use apmimo::complexity::{summary, sweep_csv};
use apmimo::config::{write_output, ExperimentConfig};
use apmimo::evaluation::{fnv1a_hex, run_sweep, Scheme, SweepModels};
use apmimo::precoding::{fit_mp_coefficients, MpCoefficients, PrecoderKind};
use apmimo::rng::{stream_rng, Stream};
use apmimo::{Error, Result};

#[derive(Parser)]
#[command(name = "apmimo", version, about = "Massive MU-MIMO autoprecoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (checkpoints for `train`/`dpd-train`, results otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo evaluation.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one autoprecoder per configured back-off.
    Train(Common),
    /// Monte-Carlo SER sweep over schemes, SNR and back-off.
    EvalSer {
        #[command(flatten)]
        common: Common,
        /// Directory holding `ap_ibo*.ckpt` / `dpd_ibo*.dpd` (default: paths.checkpoint_dir).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Matrix-polynomial coefficients written by `fit-mp`; overrides the checkpoint's table.
        #[arg(long)]
        mu: Option<PathBuf>,
    },
    /// Real-multiplication counts versus coherence length.
    Complexity(Common),
    /// Fit matrix-polynomial precoder coefficients.
    FitMp(Common),
    /// Train one predistorter per configured back-off.
    DpdTrain(Common),
    /// Write a checkpoint's learned constellation as CSV.
    ExportConstellation {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => cmd_train(&c),
        Command::EvalSer { common, checkpoints, mu } => cmd_eval(&common, checkpoints, mu),
        Command::Complexity(c) => cmd_complexity(&c),
        Command::FitMp(c) => cmd_fit_mp(&c),
        Command::DpdTrain(c) => cmd_dpd_train(&c),
        Command::ExportConstellation { checkpoint, out } => cmd_export(&checkpoint, out),
    }
}

struct Session {
    config: ExperimentConfig,
    resolved: String,
    hash: String,
}

impl Session {
    fn open(c: &Common) -> Result<Self> {
        let config = ExperimentConfig::load(&c.config, c.seed)?;
        let resolved = config.resolved_toml();
        let hash = fnv1a_hex(resolved.as_bytes());
        if let Some(n) = c.workers {
            if n == 0 {
                return Err(Error::Config("--workers must be positive".into()));
            }
            // Fails only if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(Self { config, resolved, hash })
    }

    fn echo_config(&self, dir: &Path) -> Result<()> {
        write_output(dir, "resolved_config.toml", &self.resolved)?;
        Ok(())
    }
}

fn checkpoint_name(ibo: f64) -> String {
    format!("ap_ibo{ibo}.ckpt")
}

fn dpd_name(ibo: f64) -> String {
    format!("dpd_ibo{ibo}.dpd")
}

fn fit_mu(config: &ExperimentConfig) -> Result<MpCoefficients> {
    let s = &config.system;
    let mut rng = stream_rng(
        config.seed,
        Stream::MpFit,
        &[s.users as u64, s.antennas as u64, config.mp.order as u64],
    );
    fit_mp_coefficients(
        s.users,
        s.antennas,
        config.mp.order,
        config.mp.fit_channels,
        config.mp.objective,
        &mut rng,
    )
}

fn cmd_train(c: &Common) -> Result<()> {
    let session = Session::open(c)?;
    let config = &session.config;
    let dir = c.out.clone().unwrap_or_else(|| config.paths.checkpoint_dir.clone());
    session.echo_config(&dir)?;
    let pa = config.pa.setup()?;
    let mu = fit_mu(config)?;
    for &ibo in &config.pa.ibo_db {
        let start = Instant::now();
        let tc = config.train_config(ibo);
        let in_loop = (tc.linear_precoder == PrecoderKind::Mp).then_some(mu.mu.as_slice());
        let outcome = train(&tc, &pa, in_loop)?;
        let ckpt = Checkpoint::from_outcome(
            &outcome,
            CheckpointConfig {
                train: tc,
                pa: pa.params,
                p_sat: pa.p_sat,
                p_t: pa.p_t,
            },
            vec![mu.clone()],
        );
        let path = dir.join(checkpoint_name(ibo));
        ckpt.save(&path)?;
        if let Some(w) = &outcome.warning {
            eprintln!("warning (ibo {ibo} dB): {w}");
        }
        eprintln!(
            "trained ibo {ibo} dB: {} steps, loss {:.4} -> {:.4}, {:.1} s -> {}",
            outcome.steps,
            outcome.initial_loss,
            outcome.final_loss,
            start.elapsed().as_secs_f64(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_dpd_train(c: &Common) -> Result<()> {
    let session = Session::open(c)?;
    let config = &session.config;
    let dir = c.out.clone().unwrap_or_else(|| config.paths.checkpoint_dir.clone());
    session.echo_config(&dir)?;
    let pa = config.pa.setup()?;
    for &ibo in &config.pa.ibo_db {
        let start = Instant::now();
        let model = train_dpd(&pa, ibo, config.system.antennas, &config.dpd)?;
        let path = dir.join(dpd_name(ibo));
        model.save(&path, &config.dpd)?;
        eprintln!(
            "trained dpd ibo {ibo} dB: relative rmse {:.4}, {:.1} s -> {}",
            model.metadata().train_relative_rmse,
            start.elapsed().as_secs_f64(),
            path.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct MuFile {
    config_hash: String,
    seed: u64,
    objective: apmimo::precoding::MpObjective,
    fit_channels: usize,
    #[serde(flatten)]
    coefficients: MpCoefficients,
}

fn cmd_fit_mp(c: &Common) -> Result<()> {
    let session = Session::open(c)?;
    let config = &session.config;
    let dir = c.out.clone().unwrap_or_else(|| config.paths.output_dir.clone());
    session.echo_config(&dir)?;
    let start = Instant::now();
    let coefficients = fit_mu(config)?;
    let mut csv = String::from("j,mu\n");
    for (j, m) in coefficients.mu.iter().enumerate() {
        csv.push_str(&format!("{j},{m:e}\n"));
    }
    write_output(&dir, "mp_coefficients.csv", &csv)?;
    let file = MuFile {
        config_hash: session.hash.clone(),
        seed: config.seed,
        objective: config.mp.objective,
        fit_channels: config.mp.fit_channels,
        coefficients,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    let path = write_output(&dir, "mp_coefficients.json", &(json + "\n"))?;
    eprintln!("fitted mu in {:.2} s -> {}", start.elapsed().as_secs_f64(), path.display());
    Ok(())
}

fn read_mu(path: &Path, config: &ExperimentConfig) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let c: MpCoefficients =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let s = &config.system;
    if (c.users, c.antennas, c.order) != (s.users, s.antennas, config.mp.order) {
        return Err(Error::Config(format!(
            "{}: coefficients fitted for M_r={} M_t={} J={}, configuration has M_r={} M_t={} J={}",
            path.display(),
            c.users,
            c.antennas,
            c.order,
            s.users,
            s.antennas,
            config.mp.order
        )));
    }
    Ok(c.mu)
}

fn cmd_eval(c: &Common, checkpoints: Option<PathBuf>, mu: Option<PathBuf>) -> Result<()> {
    let session = Session::open(c)?;
    let config = &session.config;
    let dir = c.out.clone().unwrap_or_else(|| config.paths.output_dir.clone());
    let ckpt_dir = checkpoints.unwrap_or_else(|| config.paths.checkpoint_dir.clone());
    let spec = config.sweep_spec();
    let system = config.system_spec()?;
    let mut models = SweepModels::default();
    let wants = |f: fn(&Scheme) -> bool| spec.schemes.iter().any(f);
    for &ibo in &spec.ibo_db {
        if wants(Scheme::is_autoprecoder) {
            let path = ckpt_dir.join(checkpoint_name(ibo));
            let ckpt = Checkpoint::load(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            models.autoprecoders.push((ibo, Arc::new(ckpt)));
        }
        if wants(|s| *s == Scheme::ZfDpd) {
            let path = ckpt_dir.join(dpd_name(ibo));
            let dpd = DpdModel::load(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            models.dpds.push((ibo, Arc::new(dpd)));
        }
    }
    if let Some(path) = mu {
        models.mu = Some(read_mu(&path, config)?);
    }
    let start = Instant::now();
    let result = run_sweep(&spec, &system, &models)?;
    session.echo_config(&dir)?;
    write_output(&dir, "ser.csv", &result.csv())?;
    let meta = serde_json::to_string_pretty(&result.metadata(&spec, &session.hash))
        .map_err(|e| Error::Format(e.to_string()))?;
    let path = write_output(&dir, "ser.json", &(meta + "\n"))?;
    eprintln!(
        "evaluated {} points in {:.1} s -> {}",
        result.records.len(),
        start.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}

fn cmd_complexity(c: &Common) -> Result<()> {
    let session = Session::open(c)?;
    let config = &session.config;
    let dir = c.out.clone().unwrap_or_else(|| config.paths.output_dir.clone());
    session.echo_config(&dir)?;
    let [lo, hi] = config.complexity.tau;
    let taus: Vec<u64> = (lo..=hi).collect();
    let presets = config.complexity_presets();
    for (name, p) in &presets {
        write_output(&dir, &format!("complexity_{name}.csv"), &sweep_csv(p, &taus)?)?;
    }
    let refs: Vec<(&str, _)> = presets.iter().map(|(n, p)| (n.as_str(), *p)).collect();
    let text = summary(&refs)?;
    write_output(&dir, "complexity_summary.txt", &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_export(checkpoint: &Path, out: Option<PathBuf>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let csv = ckpt.constellation_csv();
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
            }
            std::fs::write(&path, csv).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
