//! Experiment harness: simulation study tables, figure data and rate
//! diagnostics, written as CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::em::{algorithm1, algorithm2, algorithm3, default_init, mu_map_slope, rate_location, FitOptions, FitReport, Scheme};
use crate::error::{Error, Result};
use crate::gibbs::{default_burnin, lag1_autocorr, run_chain};
use crate::model::{format_float, replicate_rng, simulate_with_rng, ModelParams, Parametrization, TimeSeries};
use crate::vb::vb_map_slope;
use crate::workparam::{a_hat_asymptotic, corollary1_bounds, scale_approx, scale_opt, w_opt_location};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ssm-pnc", version, about = "Partially noncentered EM, Gibbs and VB for the AR(1)-plus-noise model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write one simulated series per setting and replicate
    Simulate,
    /// Algorithm 1: μ unknown
    Table1,
    /// Algorithm 2: σ_η² unknown
    Table2,
    /// Algorithm 3: all parameters unknown
    Table3,
    /// Optimal location weights and their bounds against φ and γ
    WoptCurve,
    /// Mean optimal scale over replicates against its large-n limit
    AoptCurve,
    /// EM, VB and Gibbs convergence rates side by side
    Rates,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Table1 => "table1",
            Command::Table2 => "table2",
            Command::Table3 => "table3",
            Command::WoptCurve => "wopt-curve",
            Command::AoptCurve => "aopt-curve",
            Command::Rates => "rates",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Series length
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Datasets per setting
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// File of `key = value` lines; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated schemes: centered, noncentered, partial, approx
    #[arg(long, global = true, value_delimiter = ',')]
    pub scheme: Option<Vec<String>>,
    /// Comma-separated AR coefficients
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub phi: Option<Vec<f64>>,
    /// Comma-separated state variances
    #[arg(long = "sigma-eta-sq", global = true, value_delimiter = ',')]
    pub sigma_eta_sq: Option<Vec<f64>>,
    /// Gibbs chain length
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter", global = true)]
    pub max_iter: Option<usize>,
    /// Scheme for the (φ, σ_ε²) cycle of Algorithm 3
    #[arg(long, global = true)]
    pub cycle2: Option<String>,
    /// Full-size runs: n = 10⁴ and 1000 replicates
    #[arg(long = "paper-scale", global = true)]
    pub paper_scale: bool,
    /// Exit with status 2 if any replicate fails numerically
    #[arg(long, global = true)]
    pub strict: bool,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub replicates: usize,
    pub mu: f64,
    pub sigma_eps_sq: f64,
    pub sigma_eta_sq_list: Vec<f64>,
    pub phi_list: Vec<f64>,
    pub gamma_list: Vec<f64>,
    /// Starting μ for Algorithm 1; `None` starts at the sample mean.
    pub mu_init: Option<f64>,
    pub schemes: Vec<Scheme>,
    pub cycle2: Scheme,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub draws: usize,
    pub burnin: usize,
    pub out: PathBuf,
    pub strict: bool,
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

/// `{−0.99, …, 0.99}` in steps of `0.99/half`, with an exact zero.
fn symmetric_grid(half: usize) -> Vec<f64> {
    let h = half as i64;
    (-h..=h).map(|k| 0.99 * k as f64 / h as f64).collect()
}

impl ExperimentConfig {
    /// Defaults of `cmd`, then `--paper-scale` sizes, then the config file, then flags.
    pub fn resolve(cmd: Command, flags: &Flags) -> Result<Self> {
        let mut cfg = Self::defaults(cmd, flags.paper_scale);
        if let Some(path) = &flags.config {
            let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
            cfg.apply_file(&text)?;
        }
        cfg.apply_flags(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn defaults(cmd: Command, paper_scale: bool) -> Self {
        let mut cfg = Self {
            n: 2000,
            replicates: 20,
            mu: 1.0,
            sigma_eps_sq: 0.1,
            sigma_eta_sq_list: vec![0.01, 0.1, 1.0],
            phi_list: vec![-0.95, 0.1, 0.95],
            gamma_list: vec![0.1, 1.0, 10.0],
            mu_init: None,
            schemes: Scheme::ALL.to_vec(),
            cycle2: Scheme::Noncentered,
            seed: 2017,
            tol: 1e-8,
            max_iter: 10_000,
            draws: 20_000,
            burnin: default_burnin(20_000),
            out: PathBuf::from("out"),
            strict: false,
        };
        if paper_scale {
            cfg.n = 10_000;
            cfg.replicates = 1000;
        }
        match cmd {
            Command::Table1 => {
                cfg.schemes = vec![Scheme::Centered, Scheme::Noncentered, Scheme::Partial];
                cfg.mu_init = Some(0.0);
            }
            Command::WoptCurve => {
                cfg.n = 10;
                cfg.phi_list = symmetric_grid(99);
                cfg.gamma_list = (1..=100).map(|k| 0.005 * k as f64).collect();
            }
            Command::AoptCurve => {
                cfg.n = 5000;
                cfg.replicates = if paper_scale { 1000 } else { 200 };
                cfg.phi_list = if paper_scale { symmetric_grid(99) } else { linspace(-0.99, 0.99, 21) };
            }
            Command::Rates => {
                cfg.n = 50;
                cfg.replicates = 1;
            }
            _ => {}
        }
        cfg
    }

    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        fn list(v: &str) -> std::result::Result<Vec<f64>, String> {
            v.split(',').map(|s| num(s.trim())).collect()
        }
        match key {
            "n" => self.n = num(value)?,
            "replicates" => self.replicates = num(value)?,
            "mu" => self.mu = num(value)?,
            "sigma_eps_sq" => self.sigma_eps_sq = num(value)?,
            "sigma_eta_sq" => self.sigma_eta_sq_list = list(value)?,
            "phi" => self.phi_list = list(value)?,
            "gamma" => self.gamma_list = list(value)?,
            "mu_init" => self.mu_init = if value == "mean" { None } else { Some(num(value)?) },
            "schemes" | "scheme" => {
                self.schemes = value
                    .split(',')
                    .map(|s| s.parse::<Scheme>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "cycle2" => self.cycle2 = value.parse().map_err(|e: Error| e.to_string())?,
            "seed" => self.seed = num(value)?,
            "tol" => self.tol = num(value)?,
            "max_iter" => self.max_iter = num(value)?,
            "draws" => {
                self.draws = num(value)?;
                self.burnin = default_burnin(self.draws);
            }
            "burnin" => self.burnin = num(value)?,
            "out" => self.out = PathBuf::from(value),
            "strict" => self.strict = num(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) -> Result<()> {
        if let Some(v) = f.n {
            self.n = v;
        }
        if let Some(v) = f.replicates {
            self.replicates = v;
        }
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = &f.out {
            self.out = v.clone();
        }
        if let Some(v) = &f.scheme {
            self.schemes = v.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = &f.phi {
            self.phi_list = v.clone();
        }
        if let Some(v) = &f.sigma_eta_sq {
            self.sigma_eta_sq_list = v.clone();
        }
        if let Some(v) = f.draws {
            self.draws = v;
            self.burnin = default_burnin(v);
        }
        if let Some(v) = f.tol {
            self.tol = v;
        }
        if let Some(v) = f.max_iter {
            self.max_iter = v;
        }
        if let Some(v) = &f.cycle2 {
            self.cycle2 = v.parse()?;
        }
        self.strict |= f.strict;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.phi_list.is_empty() || self.sigma_eta_sq_list.is_empty() || self.schemes.is_empty() || self.gamma_list.is_empty() {
            return bad("parameter and scheme lists must be nonempty".into());
        }
        if let Some(p) = self.phi_list.iter().find(|p| !(p.abs() < 1.0)) {
            return bad(format!("phi must lie in (-1, 1), got {p}"));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.sigma_eta_sq_list.iter().all(positive) || !self.gamma_list.iter().all(positive) || !positive(&self.sigma_eps_sq) {
            return bad("variances and signal-to-noise ratios must be positive".into());
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite".into());
        }
        if !positive(&self.tol) || self.max_iter == 0 {
            return bad("tol must be positive and max_iter at least 1".into());
        }
        if !matches!(self.cycle2, Scheme::Centered | Scheme::Noncentered) {
            return bad("cycle2 must be centered or noncentered".into());
        }
        if self.draws <= self.burnin + 100 {
            return bad(format!("draws ({}) must exceed burnin ({}) by more than 100", self.draws, self.burnin));
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions { tol: self.tol, max_iter: self.max_iter }
    }

    /// `(φ, σ_η²)` pairs in grid order.
    fn settings(&self) -> Vec<(usize, ModelParams)> {
        let mut out = Vec::new();
        for &phi in &self.phi_list {
            for &sh in &self.sigma_eta_sq_list {
                out.push((out.len(), ModelParams { mu: self.mu, sigma_eta_sq: sh, sigma_eps_sq: self.sigma_eps_sq, phi }));
            }
        }
        out
    }

    fn series(&self, params: &ModelParams, replicate: usize) -> Result<TimeSeries> {
        simulate_with_rng(params, self.n, &mut replicate_rng(self.seed, replicate as u64))
    }
}

/// One fit of one replicate under one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setting: usize,
    pub phi: f64,
    pub gamma: f64,
    pub sigma_eta_sq: f64,
    pub scheme: Scheme,
    pub replicate: usize,
    pub iterations: usize,
    pub converged: bool,
    pub mu: Option<f64>,
    pub sigma_eta_sq_hat: Option<f64>,
    pub sigma_eps_sq_hat: Option<f64>,
    pub phi_hat: Option<f64>,
    pub loglik: f64,
    pub warnings: usize,
    pub error: String,
}

impl ResultRow {
    fn failed(&self) -> bool {
        !self.error.is_empty() || self.warnings > 0
    }
}

const ROW_HEADER: [&str; 14] = [
    "phi", "gamma", "sigma_eta_sq", "scheme", "replicate", "iterations", "converged", "mu_hat",
    "sigma_eta_sq_hat", "sigma_eps_sq_hat", "phi_hat", "loglik", "warnings", "error",
];

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    wr.write_record(header).map_err(csv_err)?;
    for r in rows {
        wr.write_record(r).map_err(csv_err)?;
    }
    wr.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Plain-text table with right-aligned columns.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&mut header.iter().copied());
    for r in rows {
        line(&mut r.iter().map(String::as_str));
    }
    out
}

fn fit_row(
    setting: usize,
    truth: &ModelParams,
    scheme: Scheme,
    replicate: usize,
    estimated: [bool; 4],
    fit: Result<FitReport>,
) -> ResultRow {
    let mut row = ResultRow {
        setting,
        phi: truth.phi,
        gamma: truth.gamma(),
        sigma_eta_sq: truth.sigma_eta_sq,
        scheme,
        replicate,
        iterations: 0,
        converged: false,
        mu: None,
        sigma_eta_sq_hat: None,
        sigma_eps_sq_hat: None,
        phi_hat: None,
        loglik: f64::NAN,
        warnings: 0,
        error: String::new(),
    };
    match fit {
        Ok(rep) => {
            let p = rep.final_params;
            let pick = |on: bool, v: f64| on.then_some(v);
            row.iterations = rep.iterations;
            row.converged = rep.converged();
            row.mu = pick(estimated[0], p.mu);
            row.sigma_eta_sq_hat = pick(estimated[1], p.sigma_eta_sq);
            row.sigma_eps_sq_hat = pick(estimated[2], p.sigma_eps_sq);
            row.phi_hat = pick(estimated[3], p.phi);
            row.loglik = rep.final_loglik();
            row.warnings = rep.warnings.len();
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

/// Runs the fits of `cmd` for every setting, replicate and scheme.
pub fn run_table(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let opts = cfg.fit_options();
    let tasks: Vec<(usize, ModelParams, usize)> = cfg
        .settings()
        .into_iter()
        .flat_map(|(s, p)| (0..cfg.replicates).map(move |k| (s, p, k)))
        .collect();
    let nested: Vec<Vec<ResultRow>> = tasks
        .par_iter()
        .map(|&(s, truth, k)| {
            let y = match cfg.series(&truth, k) {
                Ok(y) => y,
                Err(e) => {
                    return cfg
                        .schemes
                        .iter()
                        .map(|&sc| fit_row(s, &truth, sc, k, [false; 4], Err(Error::InvalidParameter(e.to_string()))))
                        .collect()
                }
            };
            cfg.schemes
                .iter()
                .map(|&sc| match cmd {
                    Command::Table1 => fit_row(s, &truth, sc, k, [true, false, false, false], algorithm1(&y, cfg.mu_init.unwrap_or_else(|| y.mean()), &truth, sc, opts)),
                    Command::Table2 => {
                        let init = (0.5 * y.variance()).max(1e-8);
                        fit_row(s, &truth, sc, k, [false, true, false, false], algorithm2(&y, init, &truth, sc, opts))
                    }
                    _ => fit_row(s, &truth, sc, k, [true; 4], algorithm3(&y, &default_init(&y), cfg.cycle2, sc, opts)),
                })
                .collect()
        })
        .collect();
    let mut rows: Vec<ResultRow> = nested.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.setting, r.scheme, r.replicate));
    Ok(rows)
}

pub fn rows_to_records(rows: &[ResultRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                format_float(r.phi),
                format_float(r.gamma),
                format_float(r.sigma_eta_sq),
                r.scheme.to_string(),
                r.replicate.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                opt_float(r.mu),
                opt_float(r.sigma_eta_sq_hat),
                opt_float(r.sigma_eps_sq_hat),
                opt_float(r.phi_hat),
                format_float(r.loglik),
                r.warnings.to_string(),
                r.error.clone(),
            ]
        })
        .collect()
}

/// Per `(setting, scheme)` means over the replicates that did not error.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub phi: f64,
    pub gamma: f64,
    pub scheme: Scheme,
    pub ok: usize,
    pub failed: usize,
    pub mean_iterations: f64,
    pub mu: Option<(f64, f64)>,
    pub sigma_eta_sq: Option<(f64, f64)>,
    pub sigma_eps_sq: Option<(f64, f64)>,
    pub phi_hat: Option<(f64, f64)>,
}

/// Mean and Monte-Carlo standard error.
fn mean_se(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    Some((m, se))
}

pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, Scheme), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.setting, r.scheme)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let ok: Vec<&ResultRow> = g.iter().copied().filter(|r| r.error.is_empty()).collect();
            let col = |f: fn(&ResultRow) -> Option<f64>| mean_se(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                phi: g[0].phi,
                gamma: g[0].gamma,
                scheme: g[0].scheme,
                ok: ok.len(),
                failed: g.iter().filter(|r| r.failed()).count(),
                mean_iterations: ok.iter().map(|r| r.iterations as f64).sum::<f64>() / ok.len().max(1) as f64,
                mu: col(|r| r.mu),
                sigma_eta_sq: col(|r| r.sigma_eta_sq_hat),
                sigma_eps_sq: col(|r| r.sigma_eps_sq_hat),
                phi_hat: col(|r| r.phi_hat),
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 14] = [
    "phi", "gamma", "scheme", "ok", "failed", "mean_iterations", "mu", "mu_se", "sigma_eta_sq",
    "sigma_eta_sq_se", "sigma_eps_sq", "sigma_eps_sq_se", "phi_hat", "phi_hat_se",
];

fn summary_records(rows: &[SummaryRow], digits: usize) -> Vec<Vec<String>> {
    let f = |v: f64| if digits == 0 { format_float(v) } else { format!("{v:.digits$}") };
    let pair = |p: Option<(f64, f64)>| match p {
        Some((m, se)) => [f(m), f(se)],
        None => [String::new(), String::new()],
    };
    rows.iter()
        .map(|r| {
            let mut rec = vec![
                f(r.phi),
                f(r.gamma),
                r.scheme.to_string(),
                r.ok.to_string(),
                r.failed.to_string(),
                if digits == 0 { format_float(r.mean_iterations) } else { format!("{:.1}", r.mean_iterations) },
            ];
            for p in [r.mu, r.sigma_eta_sq, r.sigma_eps_sq, r.phi_hat] {
                rec.extend(pair(p));
            }
            rec
        })
        .collect()
}

/// What a command produced: printable text and whether any replicate failed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub report: String,
    pub numerical_failures: usize,
    pub files: Vec<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn cmd_table(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    ensure_dir(&cfg.out)?;
    let rows = run_table(cmd, cfg)?;
    let long = cfg.out.join(format!("{}_long.csv", cmd.name()));
    write_csv(&long, &ROW_HEADER, &rows_to_records(&rows))?;
    let summary = aggregate(&rows);
    let agg = cfg.out.join(format!("{}_summary.csv", cmd.name()));
    write_csv(&agg, &SUMMARY_HEADER, &summary_records(&summary, 0))?;
    Ok(Outcome {
        report: format_table(&SUMMARY_HEADER, &summary_records(&summary, 4)),
        numerical_failures: rows.iter().filter(|r| r.failed()).count(),
        files: vec![long, agg],
    })
}

pub fn series_file_name(params: &ModelParams, replicate: usize) -> String {
    format!("series_phi{}_seta{}_rep{replicate:03}.csv", params.phi, params.sigma_eta_sq)
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    ensure_dir(&cfg.out)?;
    let tasks: Vec<(ModelParams, usize)> = cfg
        .settings()
        .into_iter()
        .flat_map(|(_, p)| (0..cfg.replicates).map(move |k| (p, k)))
        .collect();
    let mut files = tasks
        .par_iter()
        .map(|(p, k)| {
            let path = cfg.out.join(series_file_name(p, *k));
            cfg.series(p, *k)?.save(&path)?;
            Ok(path)
        })
        .collect::<Result<Vec<PathBuf>>>()?;
    files.sort();
    Ok(Outcome { report: format!("wrote {} series to {}\n", files.len(), cfg.out.display()), numerical_failures: 0, files })
}

fn cmd_wopt_curve(cfg: &ExperimentConfig) -> Result<Outcome> {
    ensure_dir(&cfg.out)?;
    let phi_at = -0.9;
    let gamma_at = 0.1;
    let mut panels: Vec<(&str, f64, f64)> = cfg.phi_list.iter().map(|&phi| ("phi", phi, gamma_at)).collect();
    panels.extend(cfg.gamma_list.iter().map(|&g| ("gamma", phi_at, g)));
    let rows = panels
        .par_iter()
        .map(|&(panel, phi, gamma)| {
            let p = ModelParams::new(cfg.mu, gamma * cfg.sigma_eps_sq, cfg.sigma_eps_sq, phi)?;
            let w = w_opt_location(&p, cfg.n)?;
            let (lo, hi) = corollary1_bounds(&p);
            Ok(w.iter()
                .enumerate()
                .map(|(t, wt)| {
                    vec![panel.to_string(), format_float(phi), format_float(gamma), (t + 1).to_string(), format_float(*wt), format_float(lo), format_float(hi)]
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let path = cfg.out.join("wopt_curve.csv");
    let records: Vec<Vec<String>> = rows.into_iter().flatten().collect();
    write_csv(&path, &["panel", "phi", "gamma", "t", "w_opt", "bound_low", "bound_high"], &records)?;
    Ok(Outcome { report: format!("wrote {} rows to {}\n", records.len(), path.display()), numerical_failures: 0, files: vec![path] })
}

/// One `(φ, σ_η²)` point of the optimal-scale curve.
#[derive(Debug, Clone, PartialEq)]
pub struct AoptPoint {
    pub phi: f64,
    pub sigma_eta_sq: f64,
    pub n: usize,
    pub mean_a_opt: f64,
    pub sd_a_opt: f64,
    pub a_hat: f64,
    pub a_approx: f64,
    pub nonpositive: usize,
    pub failures: usize,
}

pub fn aopt_points(cfg: &ExperimentConfig) -> Result<(Vec<AoptPoint>, Vec<Vec<String>>)> {
    let settings = cfg.settings();
    let per_setting: Vec<(AoptPoint, Vec<Vec<String>>)> = settings
        .par_iter()
        .map(|(_, p)| {
            let mut values = Vec::with_capacity(cfg.replicates);
            let mut long = Vec::with_capacity(cfg.replicates);
            let mut failures = 0;
            for k in 0..cfg.replicates {
                let a = cfg
                    .series(p, k)
                    .and_then(|y| scale_opt(&y, p, &vec![1.0; cfg.n]).map(|s| s.a_opt));
                let (val, err) = match a {
                    Ok(v) => (Some(v), String::new()),
                    Err(Error::DegenerateScale(v)) => (Some(v), String::new()),
                    Err(e) => (None, e.to_string()),
                };
                if let Some(v) = val {
                    values.push(v);
                } else {
                    failures += 1;
                }
                long.push(vec![format_float(p.phi), format_float(p.sigma_eta_sq), cfg.n.to_string(), k.to_string(), opt_float(val), err]);
            }
            let nf = values.len() as f64;
            let mean = values.iter().sum::<f64>() / nf;
            let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0).max(1.0)).sqrt();
            let point = AoptPoint {
                phi: p.phi,
                sigma_eta_sq: p.sigma_eta_sq,
                n: cfg.n,
                mean_a_opt: mean,
                sd_a_opt: sd,
                a_hat: a_hat_asymptotic(p.gamma(), p.phi),
                a_approx: scale_approx(p.gamma(), p.phi),
                nonpositive: values.iter().filter(|v| **v <= 0.0).count(),
                failures,
            };
            (point, long)
        })
        .collect();
    let mut points = Vec::new();
    let mut long = Vec::new();
    for (p, l) in per_setting {
        points.push(p);
        long.extend(l);
    }
    Ok((points, long))
}

fn cmd_aopt_curve(cfg: &ExperimentConfig) -> Result<Outcome> {
    ensure_dir(&cfg.out)?;
    let (points, long) = aopt_points(cfg)?;
    let long_path = cfg.out.join("aopt_long.csv");
    write_csv(&long_path, &["phi", "sigma_eta_sq", "n", "replicate", "a_opt", "error"], &long)?;
    let header = ["phi", "sigma_eta_sq", "gamma", "n", "mean_a_opt", "sd_a_opt", "a_hat", "a_approx", "nonpositive", "failures"];
    let rec = |p: &AoptPoint, f: &dyn Fn(f64) -> String| {
        vec![
            f(p.phi),
            f(p.sigma_eta_sq),
            f(p.sigma_eta_sq / cfg.sigma_eps_sq),
            p.n.to_string(),
            f(p.mean_a_opt),
            f(p.sd_a_opt),
            f(p.a_hat),
            f(p.a_approx),
            p.nonpositive.to_string(),
            p.failures.to_string(),
        ]
    };
    let exact: Vec<Vec<String>> = points.iter().map(|p| rec(p, &format_float)).collect();
    let curve_path = cfg.out.join("aopt_curve.csv");
    write_csv(&curve_path, &header, &exact)?;
    let pretty: Vec<Vec<String>> = points.iter().map(|p| rec(p, &|v| format!("{v:.4}"))).collect();
    Ok(Outcome {
        report: format_table(&header, &pretty),
        numerical_failures: points.iter().map(|p| p.failures).sum(),
        files: vec![long_path, curve_path],
    })
}

/// One row of the rate comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub phi: f64,
    pub gamma: f64,
    pub weights: &'static str,
    pub formula: f64,
    pub em_fd: f64,
    pub vb: f64,
    pub gibbs: f64,
}

pub fn rate_rows(cfg: &ExperimentConfig) -> Result<Vec<RateRow>> {
    let tasks: Vec<(usize, ModelParams, usize, &'static str)> = cfg
        .settings()
        .into_iter()
        .flat_map(|(s, p)| ["w=0", "w=1", "w_opt"].into_iter().enumerate().map(move |(k, w)| (s, p, k, w)))
        .collect();
    tasks
        .par_iter()
        .map(|&(s, p, k, label)| {
            let y = cfg.series(&p, 0)?;
            let w = match label {
                "w=0" => vec![0.0; cfg.n],
                "w=1" => vec![1.0; cfg.n],
                _ => w_opt_location(&p, cfg.n)?,
            };
            let par = Parametrization::new(0.0, w);
            let at = p.with_mu(y.mean());
            let h = (1e-5 * (1.0 + at.mu.abs())).min(1e-4);
            let chain_seed = cfg.seed.wrapping_add(1000 * s as u64 + k as u64);
            let chain = run_chain(&y, &p, &par, cfg.draws, cfg.burnin, chain_seed)?;
            Ok(RateRow {
                phi: p.phi,
                gamma: p.gamma(),
                weights: label,
                formula: rate_location(&p, &par.w)?,
                em_fd: mu_map_slope(&y, &at, &par, h)?,
                vb: vb_map_slope(&y, &p, &par, 1.0)?,
                gibbs: lag1_autocorr(&chain)?,
            })
        })
        .collect()
}

fn cmd_rates(cfg: &ExperimentConfig) -> Result<Outcome> {
    ensure_dir(&cfg.out)?;
    let rows = rate_rows(cfg)?;
    let header = ["phi", "gamma", "weights", "rate_formula", "rate_em_fd", "rate_vb", "gibbs_lag1"];
    let rec = |r: &RateRow, f: &dyn Fn(f64) -> String| {
        vec![f(r.phi), f(r.gamma), r.weights.to_string(), f(r.formula), f(r.em_fd), f(r.vb), f(r.gibbs)]
    };
    let path = cfg.out.join("rates.csv");
    write_csv(&path, &header, &rows.iter().map(|r| rec(r, &format_float)).collect::<Vec<_>>())?;
    let pretty: Vec<Vec<String>> = rows.iter().map(|r| rec(r, &|v| format!("{v:.4}"))).collect();
    Ok(Outcome { report: format_table(&header, &pretty), numerical_failures: 0, files: vec![path] })
}

pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    match cmd {
        Command::Simulate => cmd_simulate(cfg),
        Command::Table1 | Command::Table2 | Command::Table3 => cmd_table(cmd, cfg),
        Command::WoptCurve => cmd_wopt_curve(cfg),
        Command::AoptCurve => cmd_aopt_curve(cfg),
        Command::Rates => cmd_rates(cfg),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match ExperimentConfig::resolve(cli.command, &cli.flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match execute(cli.command, &cfg) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            if outcome.numerical_failures > 0 {
                eprintln!("{} replicate fits reported numerical problems", outcome.numerical_failures);
                if cfg.strict {
                    return EXIT_NUMERICAL;
                }
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Io { .. } | Error::Csv { .. } => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            }
        }
    }
}
