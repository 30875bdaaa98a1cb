use clap::{Parser, Subcommand, ValueEnum};
use itrans::experiments::{
    chord_integral, envelope, fit_exponent, read_records, run_ballistic_sweep, run_eta_scaling, run_singlescatter_sweep,
    write_records, ExperimentConfig, PerturbationKind, StabilityRecord,
};
use itrans::forward::expand_albedo_certified;
use itrans::inversion::{extract_xray, fbp_invert, Sinogram};
use itrans::measures::{w1kappa, BoundaryMeasure, KappaMetric};
use itrans::optics::{certify, MediumSpec};
use itrans::{Error, Result};
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "itrans", version, about = "Stationary inverse transport laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a medium for subcriticality and print its certificate.
    Certify { medium: PathBuf },
    /// Collision expansion of every medium for every probe.
    Forward { config: PathBuf },
    /// W₁,κ distance between two boundary measures.
    Wdist {
        mu: PathBuf,
        nu: PathBuf,
        #[arg(long)]
        kappa: f64,
    },
    /// Line integrals of σ extracted from simulated data.
    Xray { config: PathBuf },
    /// Filtered backprojection of a parallel-beam sinogram.
    Fbp {
        sinogram: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Output stem; writes <stem>.bin and <stem>.json.
        #[arg(long, default_value = "fbp")]
        out: PathBuf,
    },
    /// Stability of the extracted attenuation under data and source errors.
    SweepBallistic { config: PathBuf },
    /// Stability of the single-scattering functional (space only).
    SweepSingle { config: PathBuf },
    /// Scattering contamination of test functions across widths.
    EtaScaling { config: PathBuf },
    /// Exponent of the worst-case error envelope in a stability CSV.
    Fit {
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Blur)]
        kind: Kind,
        #[arg(long)]
        log_correction: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Blur,
    Shift,
    Mesh,
}

impl From<Kind> for PerturbationKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Blur => PerturbationKind::Blur,
            Kind::Shift => PerturbationKind::Shift,
            Kind::Mesh => PerturbationKind::Mesh,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("ITRANS_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("ITRANS_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Certify { medium } => {
            let spec: MediumSpec = serde_json::from_str(&std::fs::read_to_string(medium)?)?;
            let m = spec.build()?;
            let cert = certify(&m, 4096)?;
            println!("{}", serde_json::to_string_pretty(&cert)?);
        }
        Command::Forward { config } => forward(&ExperimentConfig::load(&config)?)?,
        Command::Wdist { mu, nu, kappa } => {
            let a = BoundaryMeasure::read_jsonl(BufReader::new(File::open(mu)?))?;
            let b = BoundaryMeasure::read_jsonl(BufReader::new(File::open(nu)?))?;
            let w = w1kappa(&a, &b, &KappaMetric::new(kappa)?)?;
            println!("{}", json!({ "kappa": kappa, "w1kappa": w }));
        }
        Command::Xray { config } => xray(&ExperimentConfig::load(&config)?)?,
        Command::Fbp { sinogram, size, out } => {
            let sino = Sinogram::read_csv(BufReader::new(File::open(sinogram)?))?;
            let image = fbp_invert(&sino, size)?;
            image.write(&out)?;
            println!("{}", json!({ "size": size, "views": sino.views, "offsets": sino.offsets, "out": out }));
        }
        Command::SweepBallistic { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let records = run_ballistic_sweep(&cfg)?;
            emit_sweep(&cfg, "ballistic.csv", &records, false)?;
        }
        Command::SweepSingle { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let records = run_singlescatter_sweep(&cfg)?;
            emit_sweep(&cfg, "single.csv", &records, true)?;
        }
        Command::EtaScaling { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let table = run_eta_scaling(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            table.write_csv(BufWriter::new(File::create(cfg.output_dir.join("eta_scaling.csv"))?))?;
            let slopes = serde_json::to_string_pretty(&table.slopes)?;
            std::fs::write(cfg.output_dir.join("eta_slopes.json"), &slopes)?;
            println!("{slopes}");
        }
        Command::Fit { csv, kind, log_correction } => {
            let records = read_records(BufReader::new(File::open(csv)?))?;
            let points = envelope(&records, kind.into());
            let fit = fit_exponent(&points, log_correction)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
        }
    }
    Ok(())
}

fn forward(cfg: &ExperimentConfig) -> Result<()> {
    let prep = cfg.prepare()?;
    let settings = cfg.expansion_settings();
    std::fs::create_dir_all(&cfg.output_dir)?;
    for (mi, medium) in prep.media.iter().enumerate() {
        for (pi, ray) in prep.probes.iter().enumerate() {
            let g = BoundaryMeasure::point(medium.domain(), *ray, 1.0)?;
            let exp = expand_albedo_certified(medium, &g, &settings, &prep.certificates[mi])?;
            let name = format!("forward_{}_{pi}.json", cfg.media[mi].name);
            exp.write_json(BufWriter::new(File::create(cfg.output_dir.join(&name))?))?;
            let masses: Vec<f64> = exp.orders.iter().map(|o| o.total_mass()).collect();
            println!(
                "{}",
                json!({ "medium": cfg.media[mi].name, "probe": pi, "order_masses": masses,
                        "std_errors": exp.std_errors, "tail_bound": exp.tail_bound, "file": name })
            );
        }
    }
    Ok(())
}

fn xray(cfg: &ExperimentConfig) -> Result<()> {
    let prep = cfg.prepare()?;
    let settings = cfg.expansion_settings();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut out = csv::Writer::from_path(cfg.output_dir.join("xray.csv"))?;
    out.write_record(["medium", "probe", "kappa", "width", "estimate", "chord_integral"])?;
    for (mi, medium) in prep.media.iter().enumerate() {
        for (pi, ray) in prep.probes.iter().enumerate() {
            let g = BoundaryMeasure::point(medium.domain(), *ray, 1.0)?;
            let data = expand_albedo_certified(medium, &g, &settings, &prep.certificates[mi])?.total()?;
            let truth = chord_integral(medium, ray);
            for &kappa in &cfg.kappa {
                for &width in &cfg.test_widths {
                    let est = extract_xray(&data, ray, width, kappa, 1.0)?;
                    out.write_record([
                        cfg.media[mi].name.clone(),
                        pi.to_string(),
                        kappa.to_string(),
                        width.to_string(),
                        est.value.to_string(),
                        truth.to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn emit_sweep(cfg: &ExperimentConfig, file: &str, records: &[StabilityRecord], log_correction: bool) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path: &Path = &cfg.output_dir.join(file);
    write_records(records, BufWriter::new(File::create(path)?))?;
    let mut summary = Vec::new();
    for kind in [PerturbationKind::Blur, PerturbationKind::Shift, PerturbationKind::Mesh] {
        let points = envelope(records, kind);
        if points.is_empty() {
            continue;
        }
        let fit = fit_exponent(&points, log_correction).ok();
        summary.push(json!({ "kind": kind, "points": points.len(), "fit": fit }));
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", json!({ "records": records.len(), "csv": path, "fits": summary }))?;
    Ok(())
}
