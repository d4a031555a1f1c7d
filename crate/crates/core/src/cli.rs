//! Run configuration, grid execution and report files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::borrowing::{BorrowConfig, JsdCache, PriorSpec};
use crate::error::{Error, Result};
use crate::oc::{aggregate, OCReport, TruthLabels};
use crate::rng::Substreams;
use crate::survival::McmcConfig;
use crate::trial::{interim_schedule, run_trial_cached, DesignSpec, ScenarioSpec, Strategy};

pub const REPORT_FILE: &str = "oc_report.csv";
pub const META_FILE: &str = "run_meta.json";

/// A grid cell fails the run when this share of its replicates errored.
pub const FAILURE_THRESHOLD: f64 = 0.01;

pub const CSV_HEADER: [&str; 18] = [
    "scenario_id",
    "rates",
    "B",
    "n_b",
    "lambda",
    "n_interims",
    "strategy",
    "basket",
    "PET",
    "PET_se",
    "ESS",
    "ETD",
    "basketwise_alpha",
    "power",
    "ECD",
    "trialwise_alpha",
    "replicates",
    "failures",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-length chains.
    Paper,
    /// Short chains for quick runs.
    Fast,
}

impl Profile {
    pub fn mcmc(self) -> McmcConfig {
        match self {
            Self::Paper => McmcConfig::paper(),
            Self::Fast => McmcConfig::fast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignParams {
    pub prior: PriorSpec,
    pub borrow: BorrowConfig,
    pub gamma_interim: f64,
    pub gamma_final: f64,
    pub phi: f64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            prior: PriorSpec::default(),
            borrow: BorrowConfig::default(),
            gamma_interim: 0.95,
            gamma_final: 0.975,
            phi: 0.3,
        }
    }
}

/// Generating Weibull shape and response window (months).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub shape: f64,
    pub window: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { shape: 4.0, window: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Response rates in percent, one tuple per scenario.
    pub scenarios: Vec<Vec<f64>>,
    pub basket_sizes: Vec<usize>,
    pub accrual_rates: Vec<f64>,
    /// Number of interim analyses per basket (1 or 3).
    pub interims: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub replicates: usize,
    pub seed: u64,
    pub workers: usize,
    pub profile: Profile,
    /// Overrides the profile's chain settings when present.
    pub mcmc: Option<McmcConfig>,
    pub design: DesignParams,
    pub model: ModelParams,
    pub out_dir: PathBuf,
}

/// Every multiset of {10, 30, 50}% over two and three baskets.
pub fn default_scenarios() -> Vec<Vec<f64>> {
    let rates = [10.0, 30.0, 50.0];
    let mut out = Vec::new();
    for i in 0..3 {
        for j in 0..=i {
            out.push(vec![rates[i], rates[j]]);
        }
    }
    for i in 0..3 {
        for j in 0..=i {
            for k in 0..=j {
                out.push(vec![rates[i], rates[j], rates[k]]);
            }
        }
    }
    out
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            basket_sizes: vec![24, 36],
            accrual_rates: vec![0.5, 1.5],
            interims: vec![1, 3],
            strategies: Strategy::ALL.to_vec(),
            replicates: 1000,
            seed: 1,
            workers: 1,
            profile: Profile::Paper,
            mcmc: None,
            design: DesignParams::default(),
            model: ModelParams::default(),
            out_dir: PathBuf::from("."),
        }
    }
}

/// One (scenario, size, accrual, schedule, strategy) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub scenario_id: usize,
    /// Percentages as configured.
    pub rates: Vec<f64>,
    pub n_interims: usize,
    pub scenario: ScenarioSpec,
    pub design: DesignSpec,
}

impl GridCell {
    pub fn rates_label(&self) -> String {
        self.rates.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub cell: GridCell,
    pub report: OCReport,
    /// First error message among failed replicates, if any.
    pub first_failure: Option<String>,
}

impl CellReport {
    pub fn failure_rate(&self) -> f64 {
        let total = self.report.replicates + self.report.failures;
        self.report.failures as f64 / total as f64
    }
}

impl RunConfig {
    pub fn mcmc_config(&self) -> McmcConfig {
        self.mcmc.clone().unwrap_or_else(|| self.profile.mcmc())
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("`{name}` must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("scenarios", self.scenarios.len())?;
        nonempty("basket_sizes", self.basket_sizes.len())?;
        nonempty("accrual_rates", self.accrual_rates.len())?;
        nonempty("interims", self.interims.len())?;
        nonempty("strategies", self.strategies.len())?;
        if self.replicates == 0 {
            return Err(Error::Config("`replicates` must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("`workers` must be at least 1".into()));
        }
        let unique: BTreeSet<_> = self.strategies.iter().collect();
        if unique.len() != self.strategies.len() {
            return Err(Error::Config(format!("duplicate strategies in {:?}", self.strategies)));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            if let Some(r) = s.iter().find(|r| !(**r > 0.0 && **r < 100.0)) {
                return Err(Error::Config(format!(
                    "scenarios[{i}]: response rate {r}% must lie strictly between 0 and 100"
                )));
            }
        }
        self.mcmc_config().validate()?;
        self.cells().map(|_| ())
    }

    /// Grid cells in output order.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let mut cells = Vec::new();
        for (i, rates) in self.scenarios.iter().enumerate() {
            let fractions: Vec<f64> = rates.iter().map(|r| r / 100.0).collect();
            for &n in &self.basket_sizes {
                for &lambda in &self.accrual_rates {
                    let scenario = ScenarioSpec::from_rates(
                        &fractions,
                        self.model.shape,
                        self.model.window,
                        lambda,
                        n,
                        self.design.phi,
                    )
                    .map_err(|e| Error::Config(format!("scenarios[{i}]: {e}")))?;
                    for &k in &self.interims {
                        let interim_counts = interim_schedule(n, k)?;
                        for &strategy in &self.strategies {
                            let design = DesignSpec {
                                prior: self.design.prior,
                                borrow: self.design.borrow,
                                gamma_interim: self.design.gamma_interim,
                                gamma_final: self.design.gamma_final,
                                interim_counts: interim_counts.clone(),
                                strategy,
                                mcmc: self.mcmc_config(),
                            };
                            design.validate(n)?;
                            cells.push(GridCell {
                                scenario_id: i + 1,
                                rates: rates.clone(),
                                n_interims: k,
                                scenario: scenario.clone(),
                                design,
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Parses and validates a JSON run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Error::Config(inner.to_string())
        } else {
            Error::Config(format!("{path}: {inner}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Runs every replicate of one cell on the current rayon pool.
pub fn run_cell(cell: &GridCell, replicates: usize, seed: u64) -> Result<CellReport> {
    let results: Vec<_> = (0..replicates as u64)
        .into_par_iter()
        .map_init(JsdCache::new, |cache, r| {
            run_trial_cached(&cell.scenario, &cell.design, &Substreams::new(seed, r), cache)
        })
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut first_failure = None;
    let mut failures = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(t) => ok.push(t),
            Err(e) => {
                failures += 1;
                first_failure.get_or_insert_with(|| format!("replicate {r}: {e}"));
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate failed for scenario {} ({}); first: {}",
            cell.scenario_id,
            cell.design.strategy,
            first_failure.unwrap_or_default()
        )));
    }
    let mut report = aggregate(&ok, &TruthLabels::from_scenario(&cell.scenario)?)?;
    report.failures = failures;
    Ok(CellReport { cell: cell.clone(), report, first_failure })
}

/// Runs the whole grid with `cfg.workers` threads. Output does not depend
/// on the worker count.
pub fn run_grid(cfg: &RunConfig) -> Result<Vec<CellReport>> {
    run_grid_with(cfg, |_, _, _| {})
}

/// As [`run_grid`], calling `progress(done, total, report)` after each cell.
pub fn run_grid_with<F>(cfg: &RunConfig, mut progress: F) -> Result<Vec<CellReport>>
where
    F: FnMut(usize, usize, &CellReport),
{
    cfg.validate()?;
    let cells = cfg.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let mut out = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let report = pool.install(|| run_cell(cell, cfg.replicates, cfg.seed))?;
        progress(i + 1, cells.len(), &report);
        out.push(report);
    }
    Ok(out)
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

/// CSV rows, one per (cell, basket).
pub fn report_rows(reports: &[CellReport]) -> Vec<[String; 18]> {
    let mut rows = Vec::new();
    for cr in reports {
        let (c, r) = (&cr.cell, &cr.report);
        for (b, oc) in r.baskets.iter().enumerate() {
            let alpha = oc.basketwise_alpha().map(|p| fixed(p.estimate)).unwrap_or_default();
            let power = oc.power().map(|p| fixed(p.estimate)).unwrap_or_default();
            rows.push([
                c.scenario_id.to_string(),
                c.rates_label(),
                c.scenario.num_baskets().to_string(),
                c.scenario.basket_size.to_string(),
                c.scenario.accrual_rate.to_string(),
                c.n_interims.to_string(),
                c.design.strategy.to_string(),
                (b + 1).to_string(),
                fixed(oc.pet.estimate),
                fixed(oc.pet.se),
                fixed(oc.ess),
                fixed(r.etd),
                alpha,
                power,
                fixed(r.ecd),
                r.trialwise_alpha.map(|p| fixed(p.estimate)).unwrap_or_default(),
                r.replicates.to_string(),
                r.failures.to_string(),
            ]);
        }
    }
    rows
}

#[derive(Serialize)]
struct RunMeta<'a> {
    package: &'static str,
    version: &'static str,
    seed: u64,
    /// "paper", "fast" or "custom" when chain settings were given explicitly.
    profile: &'static str,
    mcmc: McmcConfig,
    cells: usize,
    failures: usize,
    config: &'a RunConfig,
}

/// Writes the CSV report and the JSON sidecar into `dir`.
pub fn write_reports(reports: &[CellReport], cfg: &RunConfig, dir: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Contract("no reports to write".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let csv_path = dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::Io(format!("{}: {e}", csv_path.display())))?;
    w.write_record(CSV_HEADER)?;
    for row in report_rows(reports) {
        w.write_record(&row)?;
    }
    w.flush()?;
    let meta = RunMeta {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        profile: match (&cfg.mcmc, cfg.profile) {
            (Some(_), _) => "custom",
            (None, Profile::Paper) => "paper",
            (None, Profile::Fast) => "fast",
        },
        mcmc: cfg.mcmc_config(),
        cells: reports.len(),
        failures: reports.iter().map(|r| r.report.failures).sum(),
        config: cfg,
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
        .map_err(|e| Error::Io(format!("{}: {e}", meta_path.display())))?;
    Ok(())
}

/// Command-line interface of `basket-sim`.
#[derive(Debug, Clone, Default, Parser)]
#[command(
    name = "basket-sim",
    version,
    about = "Operating characteristics of a Bayesian basket trial with delayed binary outcomes"
)]
pub struct CliArgs {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Comma-separated subset of NI,OD,CD,MI,MIC.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    /// Output directory for oc_report.csv and run_meta.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve_config(args: &CliArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.replicates {
        cfg.replicates = n;
    }
    if let Some(n) = args.workers {
        cfg.workers = n;
    }
    if let Some(s) = &args.strategies {
        cfg.strategies = s.clone();
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(p) = args.profile {
        cfg.profile = p;
        cfg.mcmc = None;
    }
    cfg.validate()?;
    Ok(cfg)
}
