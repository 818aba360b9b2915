use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use doppler_slam::harness::{
    compare, read_report, run_bounds, run_monte_carlo, sibling_path, simulate, write_report, RunConfig,
};
use doppler_slam::pcrb::{sweep_summary_csv, sweep_to_csv};
use doppler_slam::Error;

#[derive(Parser)]
#[command(name = "doppler-slam", version, about = "Doppler-aware bistatic radio SLAM: bounds and filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply to missing fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (run j uses seed + j)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    doppler: Option<Toggle>,
    /// Doppler noise std in m/s; `bounds` takes a comma-separated grid
    #[arg(long = "sigma-d", value_delimiter = ',')]
    sigma_d: Vec<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior bound sweep over sigma_d, written as CSV
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "bounds.csv")]
        out: PathBuf,
    },
    /// Truth trajectory and scans of a single run, written as JSON
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "simulation.json")]
        out: PathBuf,
    },
    /// Monte-Carlo filter experiment; writes report.json, gospa.csv, runs.csv
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = "run-out")]
        out: PathBuf,
    },
    /// Side-by-side headline metrics of two run reports
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// CSV destination; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common, grid: bool) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    if let Some(t) = common.doppler {
        cfg.doppler = matches!(t, Toggle::On);
    }
    match (grid, common.sigma_d.as_slice()) {
        (_, []) => {}
        (true, g) => cfg.bounds.sigma_d_grid_mps = g.to_vec(),
        (false, [s]) => cfg.sensor.sigma_d_mps = *s,
        (false, _) => return Err(Error::Config("--sigma-d takes a single value here".into())),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, body: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Bounds { common, out } => {
            let cfg = load(&common, true)?;
            let result = run_bounds(&cfg)?;
            write(&out, &sweep_to_csv(&result.cells))?;
            let summary = sibling_path(&out, "summary.csv");
            write(&summary, &sweep_summary_csv(&result.cells, cfg.bounds.aggregation))?;
            let meta = sibling_path(&out, "meta.json");
            write(&meta, &(serde_json::to_string_pretty(&result.meta)? + "\n"))?;
            println!("wrote {}, {}, {}", out.display(), summary.display(), meta.display());
        }
        Command::Simulate { common, out } => {
            let cfg = load(&common, false)?;
            let sim = simulate(&cfg, cfg.base_seed)?;
            write(&out, &(serde_json::to_string_pretty(&sim)? + "\n"))?;
            println!("wrote {}", out.display());
        }
        Command::Run { common, runs, out } => {
            let mut cfg = load(&common, false)?;
            if let Some(n) = runs {
                cfg.runs = n;
                cfg.validate()?;
            }
            let report = run_monte_carlo(&cfg)?;
            write_report(&report, &out)?;
            let s = &report.summary;
            println!(
                "runs {} doppler {}: final GOSPA VA {:.4} m, SP {:.4} m; RMSE pos {:.4} m, heading {:.4} deg, bias {:.4} m; correct DA weight {:.4}",
                cfg.runs,
                if cfg.doppler { "on" } else { "off" },
                s.final_gospa_va,
                s.final_gospa_sp,
                s.rmse.pos_m,
                s.rmse_heading_deg,
                s.rmse.bias_m,
                s.mean_correct_da_weight
            );
            println!("wrote {}", out.display());
        }
        Command::Compare { a, b, out } => {
            let text = compare(&read_report(&a)?, &read_report(&b)?);
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
