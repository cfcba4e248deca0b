//! `krein`: command-line front end for scenario runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use krein_core::config::{preset, preset_names, MuRange, ScenarioConfig};
use krein_core::driver::{self, ReportStatus};
use krein_core::krein::{phase_field, pole_candidates, residue};
use krein_core::{KreinError, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "krein", version, about = "Krein-matrix spectral stability of Gross-Pitaevskii stationary states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seed, Newton-solve and continue a branch; writes branch files only.
    Solve(Common),
    /// Full spectral report for every mu of the scenario.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Analyze persisted branch files instead of solving.
        #[arg(long)]
        branch: Option<PathBuf>,
    },
    /// Reports along a mu range with bisection of every count transition.
    Sweep(Common),
    /// Residue of K(z) at the pole candidate nearest `--z`.
    Residue {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        z: f64,
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long)]
        increment: Option<f64>,
    },
    /// arg det K(z) on a grid over the complex search region.
    PhaseField {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        nx: usize,
        #[arg(long, default_value_t = 100)]
        ny: usize,
    },
    /// List the shipped presets.
    Presets,
}

#[derive(Args, Clone)]
struct Common {
    /// Shipped preset to start from.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Machine-readable result on stdout.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    mu: Option<f64>,
    /// `start:stop:step`.
    #[arg(long, value_parser = parse_range)]
    mu_range: Option<MuRange>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    seed_mu: Option<f64>,
    #[arg(long)]
    d_mu_max: Option<f64>,
    #[arg(long)]
    z_max: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    max_extensions: Option<usize>,
    #[arg(long)]
    zero_tol: Option<f64>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    removable_tol: Option<f64>,
    #[arg(long)]
    zero_cross_tol: Option<f64>,
    #[arg(long)]
    slope_tol: Option<f64>,
    #[arg(long)]
    residue_increment: Option<f64>,
    #[arg(long)]
    oracle_tol: Option<f64>,
    #[arg(long)]
    sweep_tol: Option<f64>,
    /// Skip the direct-spectrum cross-check.
    #[arg(long)]
    no_oracle: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<MuRange, String> {
    let v: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [start, stop, step] => Ok(MuRange { start, stop, step }),
        _ => Err("expected start:stop:step".into()),
    }
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(name), _) => preset(name)?,
            (None, Some(path)) => ScenarioConfig::load(path)?,
            (None, None) => return Err(KreinError::Config("pass --preset or --config".into())),
        };
        if let Some(mu) = self.mu {
            cfg.mu = Some(mu);
            cfg.mu_range = None;
        }
        if let Some(r) = self.mu_range {
            cfg.mu_range = Some(r);
        }
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            omega => cfg.omega,
            n => cfg.grid.n,
            dx => cfg.grid.dx,
            samples => cfg.scan.samples,
            max_extensions => cfg.scan.max_extensions,
            zero_tol => cfg.tolerances.zero_tol,
            newton_tol => cfg.tolerances.newton_tol,
            removable_tol => cfg.tolerances.removable_tol,
            zero_cross_tol => cfg.tolerances.zero_cross_tol,
            slope_tol => cfg.tolerances.slope_tol,
            residue_increment => cfg.tolerances.residue_increment,
            oracle_tol => cfg.tolerances.oracle_tol,
            sweep_tol => cfg.tolerances.sweep_tol,
        );
        if self.seed_mu.is_some() {
            cfg.seed.mu = self.seed_mu;
        }
        if self.d_mu_max.is_some() {
            cfg.seed.d_mu_max = self.d_mu_max;
        }
        if self.z_max.is_some() {
            cfg.scan.z_max = self.z_max;
        }
        if self.no_oracle {
            cfg.oracle.enabled = false;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        println!("{}", text());
    }
    Ok(())
}

fn status_code(status: ReportStatus) -> ExitCode {
    match status {
        ReportStatus::Passed => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    }
}

fn summarize(r: &driver::SpectrumReport) -> String {
    let c = r.counts();
    let mut s = format!(
        "{} mu={:.4}: K_Ham={} (n(L)={}, n(D)={}), k_r={} k_c={} k_i-={} [{:?}]",
        r.scenario, r.state.mu, r.index.k_ham, r.index.n_l, r.index.n_d, c.k_r, c.k_c, c.k_i_minus, r.status()
    );
    for e in &r.classification.eigenvalues {
        s.push_str(&format!(
            "\n  lambda = {:+.8} {:+.8}i  z = {:+.8} {:+.8}i  mult {}  {:?} {:?}",
            e.lambda.re, e.lambda.im, e.z.re, e.z.im, e.multiplicity, e.source, e.signature
        ));
    }
    if let Some(o) = &r.oracle {
        s.push_str(&format!(
            "\n  oracle: max |dlambda| = {:.2e}, signatures {}/{}",
            o.max_deviation, o.signature_agreement.0, o.signature_agreement.1
        ));
    }
    for n in &r.classification.notes {
        s.push_str(&format!("\n  note: {n}"));
    }
    s
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Presets => {
            for name in preset_names() {
                let cfg = preset(name)?;
                println!("{name:18} {}", cfg.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve(common) => {
            let cfg = common.config()?;
            let run = driver::solve_branch(&cfg)?;
            run.branch.save(&cfg.output.join("branch"))?;
            #[derive(Serialize)]
            struct Out<'a> {
                mu: Vec<f64>,
                power: Vec<f64>,
                termination: &'a Option<(f64, String)>,
            }
            let out = Out {
                mu: run.branch.mus(),
                power: run.branch.points.iter().map(|p| p.power).collect(),
                termination: &run.termination,
            };
            emit(common.json, &out, || {
                let mut s = format!("{}: {} states written to {}", cfg.name, out.mu.len(), cfg.output.join("branch").display());
                for (m, p) in out.mu.iter().zip(&out.power) {
                    s.push_str(&format!("\n  mu = {m:.6}  P = {p:.8e}"));
                }
                if let Some((mu, reason)) = &run.termination {
                    s.push_str(&format!("\n  branch terminated after mu = {mu:.6}: {reason}"));
                }
                s
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectrum { common, branch } => {
            let cfg = common.config()?;
            let run = match branch {
                Some(dir) => driver::run_from_branch(&cfg, &dir)?,
                None => driver::run_scenario(&cfg)?,
            };
            emit(common.json, &run, || run.reports.iter().map(summarize).collect::<Vec<_>>().join("\n"))?;
            Ok(status_code(run.status))
        }
        Command::Sweep(common) => {
            let cfg = common.config()?;
            if cfg.mu_range.is_none() {
                return Err(KreinError::Config("sweep needs a mu range".into()));
            }
            let sweep = driver::sweep_mu(&cfg)?;
            emit(common.json, &sweep, || {
                let mut s = format!("{}: {} points [{:?}]", sweep.scenario, sweep.points.len(), sweep.status);
                for p in &sweep.points {
                    s.push_str(&format!(
                        "\n  mu = {:.4}  (k_r, k_c, k_i-) = ({}, {}, {}){}",
                        p.mu,
                        p.counts.k_r,
                        p.counts.k_c,
                        p.counts.k_i_minus,
                        if p.bisection { "  (bisection)" } else { "" }
                    ));
                }
                for t in &sweep.transitions {
                    s.push_str(&format!(
                        "\n  transition ({}, {}, {}) -> ({}, {}, {}) in [{:.4}, {:.4}]",
                        t.from.k_r, t.from.k_c, t.from.k_i_minus, t.to.k_r, t.to.k_c, t.to.k_i_minus, t.interval.0, t.interval.1
                    ));
                }
                s
            })?;
            Ok(status_code(sweep.status))
        }
        Command::Residue { common, z, half_width, increment } => {
            let cfg = common.config()?;
            let state = driver::state_at(&cfg, cfg.mu_values()[0])?;
            let analysis = driver::prepare(state, &cfg.tolerances)?;
            let poles = pole_candidates(&analysis.krein);
            let z_p = poles
                .iter()
                .copied()
                .min_by(|a, b| (a - z).abs().total_cmp(&(b - z).abs()))
                .ok_or_else(|| KreinError::InvalidArgument("K(z) has no poles".into()))?;
            let inc = increment.unwrap_or(cfg.tolerances.residue_increment);
            let report = residue(&analysis.krein, z_p, half_width, inc, cfg.tolerances.removable_tol)?;
            std::fs::create_dir_all(&cfg.output)?;
            std::fs::write(
                cfg.output.join(format!("residue_{z_p:.6e}.json")),
                serde_json::to_string_pretty(&report)?,
            )?;
            emit(common.json, &report, || {
                format!(
                    "pole z_p = {:.8e}: max residue entry {:.3e} over {} nodes (half-width {:.2e}) -> {:?}",
                    report.z_p, report.max_entry, report.nodes, report.half_width, report.verdict
                )
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::PhaseField { common, nx, ny } => {
            let cfg = common.config()?;
            let state = driver::state_at(&cfg, cfg.mu_values()[0])?;
            let analysis = driver::prepare(state, &cfg.tolerances)?;
            let z_min = analysis.z_min(cfg.z_max())?;
            let region = analysis.complex_region(z_min, cfg.z_max());
            let field = phase_field(&analysis.krein, region, nx, ny)?;
            std::fs::create_dir_all(&cfg.output)?;
            let path = cfg.output.join("phase_field.csv");
            std::fs::write(&path, field.to_csv())?;
            emit(common.json, &region, || format!("arg det K(z) on {nx}x{ny} grid over {region:?} written to {}", path.display()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}
