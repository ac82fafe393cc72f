//! Benchmark driver: runs manufactured-solution parameter sweeps with the
//! Schwarz-preconditioned GMRES solver and emits CSV plus markdown
//! iteration tables.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::Parser;

use biot2d::bench::{self, CaseConfig, SweepSpec};
use biot2d::schwarz::SchwarzMode;

#[derive(Parser, Debug)]
#[command(
    name = "biot-bench",
    about = "Schwarz-preconditioned GMRES benchmarks for the mixed consolidation solver"
)]
struct Cli {
    /// Flat key = value configuration file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preconditioner composition.
    #[arg(long, value_parser = ["additive", "multiplicative", "multilevel"])]
    mode: Option<String>,
    /// Polynomial degree of the spaces.
    #[arg(long)]
    degree: Option<usize>,
    /// Comma-separated cells-per-side values (h = 1/n).
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated scaled Lame ratio values.
    #[arg(long = "lambda-hat")]
    lambda_hat: Option<String>,
    /// Comma-separated inverse scaled permeability values.
    #[arg(long = "kappa-inv")]
    kappa_inv: Option<String>,
    /// Comma-separated scaled storage coefficient values.
    #[arg(long = "cs-hat")]
    cs_hat: Option<String>,
    /// Interior-penalty parameter (defaults to 4(k+1)^2).
    #[arg(long)]
    eta: Option<f64>,
    /// Additive relaxation factor.
    #[arg(long)]
    omega: Option<f64>,
    /// Coarse-solve relaxation factor.
    #[arg(long)]
    omega0: Option<f64>,
    /// Residual reduction required of GMRES.
    #[arg(long)]
    rtol: Option<f64>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Preset sweep reproducing one of the published tables (1-4).
    #[arg(long)]
    table: Option<usize>,
}

#[derive(Default)]
struct Settings {
    mode: Option<String>,
    degree: Option<usize>,
    n: Option<Vec<usize>>,
    lambda_hat: Option<Vec<f64>>,
    kappa_inv: Option<Vec<f64>>,
    cs_hat: Option<Vec<f64>>,
    eta: Option<f64>,
    omega: Option<f64>,
    omega0: Option<f64>,
    rtol: Option<f64>,
    out: Option<PathBuf>,
    table: Option<usize>,
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("'{p}': {e}")))
        .collect()
}

impl Settings {
    fn from_config_file(path: &PathBuf) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut s = Settings::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            let err = |e: String| format!("line {}: {e}", lineno + 1);
            match key.as_str() {
                "mode" => s.mode = Some(value.to_string()),
                "degree" => s.degree = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                "n" => s.n = Some(parse_list(value).map_err(err)?),
                "lambda_hat" => s.lambda_hat = Some(parse_list(value).map_err(err)?),
                "kappa_inv" => s.kappa_inv = Some(parse_list(value).map_err(err)?),
                "cs_hat" => s.cs_hat = Some(parse_list(value).map_err(err)?),
                "eta" => s.eta = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                "omega" => s.omega = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                "omega0" => s.omega0 = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                "rtol" => s.rtol = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                "out" => s.out = Some(PathBuf::from(value)),
                "table" => s.table = Some(value.parse().map_err(|e| err(format!("{e}")))?),
                other => return Err(format!("line {}: unknown key '{other}'", lineno + 1)),
            }
        }
        Ok(s)
    }

    fn override_with(mut self, cli: Cli) -> Result<Self, String> {
        if cli.mode.is_some() {
            self.mode = cli.mode;
        }
        if cli.degree.is_some() {
            self.degree = cli.degree;
        }
        if let Some(v) = cli.n {
            self.n = Some(parse_list(&v)?);
        }
        if let Some(v) = cli.lambda_hat {
            self.lambda_hat = Some(parse_list(&v)?);
        }
        if let Some(v) = cli.kappa_inv {
            self.kappa_inv = Some(parse_list(&v)?);
        }
        if let Some(v) = cli.cs_hat {
            self.cs_hat = Some(parse_list(&v)?);
        }
        if cli.eta.is_some() {
            self.eta = cli.eta;
        }
        if cli.omega.is_some() {
            self.omega = cli.omega;
        }
        if cli.omega0.is_some() {
            self.omega0 = cli.omega0;
        }
        if cli.rtol.is_some() {
            self.rtol = cli.rtol;
        }
        if cli.out.is_some() {
            self.out = cli.out;
        }
        if cli.table.is_some() {
            self.table = cli.table;
        }
        Ok(self)
    }

    fn case_config(&self, mode: SchwarzMode) -> CaseConfig {
        let mut config = CaseConfig {
            mode,
            ..Default::default()
        };
        if let Some(r) = self.rtol {
            config.rtol = r;
        }
        if let Some(w) = self.omega {
            config.omega = w;
        }
        if let Some(w0) = self.omega0 {
            config.omega0 = w0;
        }
        config
    }

    fn specs(&self) -> Result<Vec<SweepSpec>, String> {
        if let Some(t) = self.table {
            let mut specs = bench::table_preset(t).map_err(|e| e.to_string())?;
            for spec in &mut specs {
                spec.eta = self.eta;
                spec.config = self.case_config(spec.config.mode);
            }
            return Ok(specs);
        }
        let mode = match &self.mode {
            Some(m) => m.parse::<SchwarzMode>().map_err(|e| e.to_string())?,
            None => SchwarzMode::Multiplicative,
        };
        Ok(vec![SweepSpec {
            lambda_hats: self.lambda_hat.clone().unwrap_or_else(|| vec![1.0]),
            kappa_invs: self.kappa_inv.clone().unwrap_or_else(|| vec![1.0]),
            cs_hats: self.cs_hat.clone().unwrap_or_else(|| vec![0.0]),
            ns: self.n.clone().unwrap_or_else(|| vec![16]),
            degree: self.degree.unwrap_or(2),
            eta: self.eta,
            config: self.case_config(mode),
        }])
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let settings = match &cli.config {
        Some(path) => match Settings::from_config_file(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(2);
            }
        },
        None => Settings::default(),
    };
    let settings = match settings.override_with(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("argument error: {e}");
            return ExitCode::from(2);
        }
    };
    let specs = match settings.specs() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    let mut all_runs = Vec::new();
    for spec in &specs {
        match bench::run_sweep(spec) {
            Ok(mut runs) => {
                println!(
                    "# {} sweep, degree {} ({} cases)",
                    spec.config.mode,
                    spec.degree,
                    runs.len()
                );
                println!("{}", bench::to_markdown(&runs));
                all_runs.append(&mut runs);
            }
            Err(e) => {
                eprintln!("sweep failed: {e}");
                return ExitCode::from(2);
            }
        }
    }

    let csv = bench::to_csv(&all_runs);
    match &settings.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &csv) {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
            println!("wrote {} rows to {}", all_runs.len(), path.display());
        }
        None => print!("{csv}"),
    }

    if all_runs.iter().all(|r| r.converged) {
        ExitCode::SUCCESS
    } else {
        eprintln!("some cases did not converge");
        ExitCode::FAILURE
    }
}
