use std::process::ExitCode;

use basket_core::cli::{resolve_config, run_grid_with, write_reports, CliArgs, FAILURE_THRESHOLD};
use basket_core::Error;
use clap::Parser;

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let args = CliArgs::parse();
    let cfg = match resolve_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("basket-sim: {e}");
            return exit_code(&e);
        }
    };
    let reports = run_grid_with(&cfg, |done, total, r| {
        let c = &r.cell;
        eprintln!(
            "[{done}/{total}] scenario {} ({}) n={} lambda={} interims={} {}",
            c.scenario_id,
            c.rates_label(),
            c.scenario.basket_size,
            c.scenario.accrual_rate,
            c.n_interims,
            c.design.strategy
        );
    });
    let reports = match reports.and_then(|r| write_reports(&r, &cfg, &cfg.out_dir).map(|_| r)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("basket-sim: {e}");
            return exit_code(&e);
        }
    };
    let bad: Vec<_> = reports.iter().filter(|r| r.failure_rate() >= FAILURE_THRESHOLD).collect();
    for r in &bad {
        eprintln!(
            "basket-sim: scenario {} {}: {} of {} replicates failed ({})",
            r.cell.scenario_id,
            r.cell.design.strategy,
            r.report.failures,
            r.report.failures + r.report.replicates,
            r.first_failure.as_deref().unwrap_or("")
        );
    }
    if !bad.is_empty() {
        return ExitCode::from(3);
    }
    eprintln!("basket-sim: wrote {} cells to {}", reports.len(), cfg.out_dir.display());
    ExitCode::SUCCESS
}
