use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use mecm::dgp::{build_companion, simulate_dgp, DgpSpec};
use mecm::harness::{render_table, run_montecarlo, with_workers, DgpTemplate, MonteCarloConfig, MonteCarloReport};
use mecm::{fit, select_ranks, to_vecm, vec, Criterion, FitOptions, MecmParams, RankPair};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::layout::{layout_path_for, load_csv, read_json, write_csv, write_json, write_table, Panel, PanelLayout};
use crate::report::{render_fit, render_selection, FitReport, ParamsReport, SelectOutput};

#[derive(Debug, Parser)]
#[command(name = "mecm", version, about = "Matrix error correction models: simulate, fit, select ranks, run Monte Carlo studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel from a random stable MECM.
    Simulate(SimulateArgs),
    /// Fit a MECM with given ranks.
    Fit(FitArgs),
    /// Fit every rank pair and choose by AIC and BIC.
    Select(SelectArgs),
    /// Run rank-recovery Monte Carlo experiments.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 3)]
    pub n1: usize,
    #[arg(long, default_value_t = 4)]
    pub n2: usize,
    #[arg(long)]
    pub r1: usize,
    #[arg(long)]
    pub r2: usize,
    #[arg(long, default_value_t = 0)]
    pub p: usize,
    #[arg(long, default_value_t = 250)]
    pub t: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub burn_in: usize,
    /// Target spectral radius of the companion matrix.
    #[arg(long, default_value_t = 0.7)]
    pub snr: f64,
    /// Output CSV; the sidecar and layout are written next to it.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimationArgs {
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Number of optimizer starts.
    #[arg(long, default_value_t = 1)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EstimationArgs {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            n_starts: self.starts,
            seed: self.seed,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Wide CSV panel.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Layout JSON; defaults to `<input>.layout.json`.
    #[arg(long)]
    pub layout: Option<PathBuf>,
}

impl InputArgs {
    pub fn load(&self) -> Result<(Panel, PanelLayout)> {
        let layout_path = self.layout.clone().unwrap_or_else(|| layout_path_for(&self.input));
        let layout = PanelLayout::read(&layout_path)?;
        let panel = load_csv(&self.input, &layout)?;
        Ok((panel, layout))
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub r1: usize,
    #[arg(long)]
    pub r2: usize,
    #[arg(long)]
    pub p: usize,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    /// JSON report path.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// CSV path for the fitted cointegrated series.
    #[arg(long)]
    pub coint_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Aic,
    Bic,
    Both,
}

impl CriterionArg {
    pub fn criteria(self) -> Vec<Criterion> {
        match self {
            CriterionArg::Aic => vec![Criterion::Aic],
            CriterionArg::Bic => vec![Criterion::Bic],
            CriterionArg::Both => Criterion::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub p: usize,
    #[arg(long, value_enum, default_value_t = CriterionArg::Both)]
    pub criterion: CriterionArg,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// MECM(0) DGP, fitted with p = 0.
    Static,
    /// MECM(1) DGP, fitted with p = 1.
    Lagged,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
pub struct MonteCarloArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON with one experiment or `{"cells": [...]}`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the number of replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// JSON report with per-replication records.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Plain-text table path.
    #[arg(long)]
    pub table_output: Option<PathBuf>,
}

/// Metadata written next to a simulated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSidecar {
    pub params: ParamsReport,
    pub dgp: DgpSpec,
    pub companion_spectral_radius: f64,
    pub data: String,
    pub layout: PanelLayout,
    pub seed: u64,
    pub invocation: String,
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub params: MecmParams,
    pub panel: Panel,
    pub layout: PanelLayout,
    pub sidecar_path: PathBuf,
    pub layout_path: PathBuf,
}

pub fn sidecar_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn cmd_simulate(args: &SimulateArgs, invocation: &str) -> Result<SimulateOutput> {
    if args.n1 == 0 || args.n2 == 0 {
        return Err(CliError::Usage("--n1 and --n2 must be positive".into()));
    }
    if !(1..=args.n1).contains(&args.r1) || !(1..=args.n2).contains(&args.r2) {
        return Err(CliError::Usage(format!(
            "ranks must satisfy 1 <= r1 <= n1 = {} and 1 <= r2 <= n2 = {}",
            args.n1, args.n2
        )));
    }
    if args.t < 2 {
        return Err(CliError::Usage("--t must be at least 2".into()));
    }
    let spec = DgpSpec {
        n1: args.n1,
        n2: args.n2,
        ranks: RankPair::new(args.r1, args.r2),
        p: args.p,
        t_len: args.t,
        burn_in: args.burn_in,
        snr: args.snr,
        seed: args.seed,
    };
    let (params, series) = simulate_dgp(&spec)?;
    let layout = PanelLayout::generic(args.n1, args.n2);
    let panel = Panel {
        times: (1..=args.t).map(|t| t.to_string()).collect(),
        series,
    };
    write_csv(&args.output, &panel, &layout)?;
    let layout_path = layout_path_for(&args.output);
    write_json(&layout_path, &layout)?;
    let sidecar_path = sidecar_path_for(&args.output);
    let sidecar = SimulationSidecar {
        params: (&params).into(),
        companion_spectral_radius: build_companion(&params).spectral_radius(),
        dgp: spec,
        data: args.output.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        layout: layout.clone(),
        seed: args.seed,
        invocation: invocation.to_string(),
    };
    write_json(&sidecar_path, &sidecar)?;
    info!("wrote {} observations to {}", args.t, args.output.display());
    Ok(SimulateOutput {
        params,
        panel,
        layout,
        sidecar_path,
        layout_path,
    })
}

/// `βᵀvec(Y_t)` for every observation, with `β = U₄ ⊗ U₃`.
pub fn cointegrated_series(params: &MecmParams, panel: &Panel) -> Vec<Vec<f64>> {
    let beta = to_vecm(params).beta;
    panel
        .series
        .iter()
        .map(|y| (beta.transpose() * vec(y)).iter().copied().collect())
        .collect()
}

pub fn cmd_fit(args: &FitArgs, invocation: &str) -> Result<(FitReport, String)> {
    let (panel, layout) = args.input.load()?;
    let ranks = RankPair::new(args.r1, args.r2);
    ranks.validate(layout.n1(), layout.n2())?;
    let opts = args.estimation.options();
    let res = fit(&panel.series, ranks, args.p, &opts)?;
    if !res.converged {
        warn!(
            "estimation stopped after {} iterations without converging{}",
            res.iterations,
            if res.covariance_at_floor {
                " (a covariance eigenvalue is at its floor; the likelihood may be unbounded on this data)"
            } else {
                ""
            }
        );
    }
    let report = FitReport::new(&res, panel.series.len(), &layout, opts.seed, invocation);
    if let Some(path) = &args.output {
        write_json(path, &report)?;
    }
    if let Some(path) = &args.coint_output {
        let names: Vec<String> = (1..=ranks.r1 * ranks.r2).map(|k| format!("coint_{k}")).collect();
        let header = std::iter::once(layout.time_column.as_str()).chain(names.iter().map(String::as_str));
        let rows = panel
            .times
            .iter()
            .zip(cointegrated_series(&res.params, &panel))
            .map(|(t, v)| std::iter::once(t.clone()).chain(v.iter().map(f64::to_string)).collect());
        write_table(path, header, rows)?;
    }
    let text = render_fit(&report, &res.params);
    Ok((report, text))
}

pub fn cmd_select(args: &SelectArgs, invocation: &str) -> Result<(SelectOutput, String)> {
    let (panel, _) = args.input.load()?;
    let opts = args.estimation.options();
    let report = with_workers(args.workers, || select_ranks(&panel.series, args.p, &opts))??;
    let out = SelectOutput {
        report,
        seed: opts.seed,
        invocation: invocation.to_string(),
    };
    if let Some(path) = &args.output {
        write_json(path, &out)?;
    }
    let text = render_selection(&out.report, &args.criterion.criteria());
    Ok((out, text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentPlan {
    Cells { cells: Vec<MonteCarloConfig> },
    Single(MonteCarloConfig),
}

impl ExperimentPlan {
    pub fn into_cells(self) -> Vec<MonteCarloConfig> {
        match self {
            ExperimentPlan::Cells { cells } => cells,
            ExperimentPlan::Single(c) => vec![c],
        }
    }
}

pub const PRESET_SEED: u64 = 2024;
pub const PRESET_REPS: usize = 100;
pub const PRESET_RANKS: [(usize, usize); 4] = [(1, 1), (3, 1), (1, 4), (3, 4)];

/// One experiment per true rank pair on a 3x4 panel at T = 100 and 250.
pub fn preset_cells(preset: Preset) -> Vec<MonteCarloConfig> {
    let p = match preset {
        Preset::Static => 0,
        Preset::Lagged => 1,
    };
    PRESET_RANKS
        .iter()
        .map(|&(r1, r2)| MonteCarloConfig {
            dgp: DgpTemplate {
                p,
                ..DgpTemplate::default()
            },
            true_ranks: RankPair::new(r1, r2),
            t_values: vec![100, 250],
            n_reps: PRESET_REPS,
            fit_p: p,
            base_seed: PRESET_SEED,
            fit: FitOptions::default(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutput {
    pub cells: Vec<MonteCarloConfig>,
    pub reports: Vec<MonteCarloReport>,
    pub table: String,
    pub invocation: String,
}

pub fn cmd_montecarlo(args: &MonteCarloArgs, invocation: &str) -> Result<MonteCarloOutput> {
    let mut cells = match (&args.preset, &args.config) {
        (Some(preset), None) => preset_cells(*preset),
        (None, Some(path)) => read_json::<ExperimentPlan>(path)?.into_cells(),
        _ => return Err(CliError::Usage("give exactly one of --preset or --config".into())),
    };
    if cells.is_empty() {
        return Err(CliError::Usage("the experiment has no cells".into()));
    }
    for cell in &mut cells {
        if let Some(reps) = args.reps {
            cell.n_reps = reps;
        }
        if let Some(seed) = args.seed {
            cell.base_seed = seed;
        }
        if let Some(tol) = args.tol {
            cell.fit.tol = tol;
        }
        if let Some(max_iter) = args.max_iter {
            cell.fit.max_iter = max_iter;
        }
        cell.validate()?;
    }
    let mut reports = Vec::with_capacity(cells.len());
    for cell in &cells {
        info!("running true ranks {} ({} replications)", cell.true_ranks, cell.n_reps);
        reports.push(with_workers(args.workers, || run_montecarlo(cell))??);
    }
    let table = render_table(&reports);
    let failed: usize = reports
        .iter()
        .map(|r| r.replications.iter().filter(|x| x.error.is_some()).count())
        .sum();
    if failed > 0 {
        warn!("{failed} replications failed; affected rows are flagged in the table");
    }
    let out = MonteCarloOutput {
        cells,
        reports,
        table,
        invocation: invocation.to_string(),
    };
    if let Some(path) = &args.output {
        write_json(path, &out)?;
    }
    if let Some(path) = &args.table_output {
        std::fs::write(path, &out.table).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(out)
}

/// Runs a parsed command and returns the text for standard output.
pub fn run(cli: &Cli, invocation: &str) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => {
            let out = cmd_simulate(a, invocation)?;
            Ok(format!(
                "wrote {} ({} observations of {}x{}), {} and {}\n",
                a.output.display(),
                out.panel.series.len(),
                a.n1,
                a.n2,
                out.sidecar_path.display(),
                out.layout_path.display()
            ))
        }
        Command::Fit(a) => cmd_fit(a, invocation).map(|(_, text)| text),
        Command::Select(a) => cmd_select(a, invocation).map(|(_, text)| text),
        Command::Montecarlo(a) => cmd_montecarlo(a, invocation).map(|out| out.table),
    }
}
