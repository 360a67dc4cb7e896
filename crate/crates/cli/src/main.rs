//! Command-line driver: scan, backtest, sweep, and report.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, RunManifest};
use statarb_core::backtest::{frequency_sweep, metrics_from_wealth, run, IdleMode};
use statarb_core::cointegration::scan_pairs;
use statarb_core::market_data::{compute_returns, load_prices, load_universe, prescreen};
use statarb_core::Error;

#[derive(Parser)]
#[command(name = "statarb", version, about = "Cointegration pairs trading toolkit")]
struct Cli {
    /// TOML config file (or a run_manifest.json from a previous run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed recorded in the manifest (synthetic-data workflows).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cointegration scan on the latest window and write the report.
    Scan(ScanArgs),
    /// Run the full backtest and write curve, logs, and report.
    Backtest(BacktestArgs),
    /// Backtest across selection frequencies and tabulate Sharpe/Calmar.
    Sweep(SweepArgs),
    /// Compute performance statistics for an existing equity curve CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Price CSV (date,ticker,adj_close).
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Universe CSV (ticker,sector).
    #[arg(long)]
    universe: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Cointegration window in trading days.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Selection (rebalance) frequency in trading days.
    #[arg(long)]
    freq: Option<usize>,
    /// Leverage multiplier on the trading book.
    #[arg(long)]
    leverage: Option<f64>,
    /// Idle capital destination: money_market or index.
    #[arg(long)]
    idle_mode: Option<String>,
    /// Ticker backing index idle mode.
    #[arg(long)]
    index_ticker: Option<String>,
    /// First backtest date (YYYY-MM-DD).
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Last backtest date (YYYY-MM-DD).
    #[arg(long)]
    end: Option<NaiveDate>,
    /// Re-solve the optimizer every day.
    #[arg(long)]
    resolve_daily: bool,
    /// Fill optimizer weight changes at the next close.
    #[arg(long)]
    delay_fill: bool,
    /// Write Black-Litterman and solver debug dumps.
    #[arg(long)]
    debug_dumps: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// First frequency of the range (inclusive).
    #[arg(long, conflicts_with = "freqs")]
    from: Option<usize>,
    /// Last frequency of the range (inclusive).
    #[arg(long, requires = "from", conflicts_with = "freqs")]
    to: Option<usize>,
    /// Explicit comma-separated frequency list.
    #[arg(long, value_delimiter = ',')]
    freqs: Option<Vec<usize>>,
}

#[derive(Args)]
struct ReportArgs {
    /// Equity curve CSV (date,wealth).
    #[arg(long)]
    curve: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> statarb_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }

    match cli.command {
        Command::Scan(args) => cmd_scan(cfg, args),
        Command::Backtest(args) => cmd_backtest(cfg, args),
        Command::Sweep(args) => cmd_sweep(cfg, args),
        Command::Report(args) => cmd_report(cfg, args),
    }
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(p) = &data.prices {
        cfg.prices = Some(p.clone());
    }
    if let Some(u) = &data.universe {
        cfg.universe = Some(u.clone());
    }
}

fn write_manifest(cfg: &RunConfig, command: &str) -> statarb_core::Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config: cfg.clone(),
    };
    output::write_json(&cfg.out_dir.join("run_manifest.json"), &manifest)
}

fn cmd_scan(mut cfg: RunConfig, args: ScanArgs) -> statarb_core::Result<()> {
    apply_data_args(&mut cfg, &args.data);
    if let Some(w) = args.window {
        cfg.backtest.window = w;
    }
    let universe = load_universe(cfg.require_universe()?, cfg.per_sector)?;
    let panel = load_prices(cfg.require_prices()?, &universe, cfg.missing_policy)?;
    let returns = compute_returns(&panel)?;
    let candidates = prescreen(&panel, &universe)?;

    let mut scan_cfg = statarb_core::cointegration::ScanConfig {
        window: cfg.backtest.window,
        adf_lag_order: cfg.backtest.adf_lag_order,
        adf_alpha: cfg.backtest.adf_alpha,
        dt: cfg.backtest.dt,
    };
    scan_cfg.window = cfg.backtest.window;
    let records = scan_pairs(&panel, &returns, &candidates, returns.n_dates(), &scan_cfg)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    output::write_json(&cfg.out_dir.join("scan_report.json"), &records)?;
    write_manifest(&cfg, "scan")?;

    let stationary = records.iter().filter(|r| r.stationary).count();
    println!(
        "scanned {} pairs over the last {} days: {} stationary",
        records.len(),
        cfg.backtest.window,
        stationary
    );
    for rec in records.iter().filter(|r| r.stationary) {
        println!(
            "  {} {}/{}: adf {:.2}, reversion {} days",
            rec.sector,
            rec.ticker_a,
            rec.ticker_b,
            rec.adf_stat,
            rec.reversion_days
                .map(|d| format!("{d:.1}"))
                .unwrap_or_else(|| "n/a".into()),
        );
    }
    println!("report: {}", cfg.out_dir.join("scan_report.json").display());
    Ok(())
}

fn cmd_backtest(mut cfg: RunConfig, args: BacktestArgs) -> statarb_core::Result<()> {
    apply_data_args(&mut cfg, &args.data);
    if let Some(f) = args.freq {
        cfg.backtest.selection_freq = f;
    }
    if let Some(l) = args.leverage {
        cfg.costs.leverage = l;
    }
    if let Some(mode) = &args.idle_mode {
        cfg.backtest.idle_mode = match mode.as_str() {
            "money_market" => IdleMode::MoneyMarket,
            "index" => IdleMode::Index,
            other => {
                return Err(Error::Config(format!(
                    "unknown idle mode {other}; use money_market or index"
                )))
            }
        };
    }
    if let Some(t) = &args.index_ticker {
        cfg.backtest.index_ticker = Some(t.clone());
    }
    if args.start.is_some() {
        cfg.backtest.start = args.start;
    }
    if args.end.is_some() {
        cfg.backtest.end = args.end;
    }
    if args.resolve_daily {
        cfg.backtest.resolve_daily = true;
    }
    if args.delay_fill {
        cfg.backtest.delay_fill = true;
    }
    if args.debug_dumps {
        cfg.backtest.debug_dumps = true;
    }

    let universe = load_universe(cfg.require_universe()?, cfg.per_sector)?;
    let panel = load_prices(cfg.require_prices()?, &universe, cfg.missing_policy)?;
    let result = run(&panel, &universe, &cfg.backtest, &cfg.costs)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    output::write_equity_curve(&cfg.out_dir.join("equity_curve.csv"), &result.curve)?;
    output::write_trade_log(&cfg.out_dir.join("trade_log.csv"), &result.trades)?;
    output::write_signal_log(&cfg.out_dir.join("signal_log.csv"), &result.signals)?;
    output::write_report(&cfg.out_dir.join("report.json"), &result, &cfg)?;
    output::write_json(&cfg.out_dir.join("selections.json"), &result.selections)?;
    if cfg.backtest.debug_dumps {
        output::write_json(&cfg.out_dir.join("bl_dumps.json"), &result.blend_dumps)?;
        output::write_json(&cfg.out_dir.join("solutions.json"), &result.solution_dumps)?;
    }
    write_manifest(&cfg, "backtest")?;

    let r = &result.report;
    println!(
        "backtest {} .. {}: wealth {:.4}, total return {:.2}%, sharpe {:.2}, max drawdown {:.2}%",
        result.curve.dates.first().unwrap(),
        result.curve.dates.last().unwrap(),
        result.curve.wealth.last().unwrap(),
        r.total_return * 100.0,
        r.sharpe,
        r.max_drawdown * 100.0,
    );
    println!(
        "{} selections, {} trades, ledger error {:.2e}",
        result.selections.len(),
        result.trades.len(),
        result.max_ledger_error
    );
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_sweep(mut cfg: RunConfig, args: SweepArgs) -> statarb_core::Result<()> {
    apply_data_args(&mut cfg, &args.data);
    let freqs: Vec<usize> = match (&args.freqs, args.from, args.to) {
        (Some(list), _, _) => list.clone(),
        (None, Some(a), Some(b)) if a <= b => (a..=b).collect(),
        (None, Some(a), None) => vec![a],
        _ => {
            return Err(Error::Config(
                "sweep needs --freqs or --from/--to".into(),
            ))
        }
    };
    let universe = load_universe(cfg.require_universe()?, cfg.per_sector)?;
    let panel = load_prices(cfg.require_prices()?, &universe, cfg.missing_policy)?;
    let table = frequency_sweep(&panel, &universe, &cfg.backtest, &cfg.costs, &freqs)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    output::write_sweep(&cfg.out_dir.join("sweep.csv"), &table)?;
    write_manifest(&cfg, "sweep")?;

    println!("freq,sharpe,calmar");
    for row in &table.rows {
        println!("{},{:.4},{:.4}", row.freq, row.sharpe, row.calmar);
    }
    println!(
        "best by sharpe: {}; best by calmar: {}",
        table.best_by_sharpe, table.best_by_calmar
    );
    Ok(())
}

fn cmd_report(cfg: RunConfig, args: ReportArgs) -> statarb_core::Result<()> {
    let wealth = output::read_equity_curve(&args.curve)?;
    let report = metrics_from_wealth(&wealth, cfg.costs.risk_free_annual)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    output::write_json(&cfg.out_dir.join("report.json"), &report)?;
    println!(
        "total return {:.4}, average return {:.4}, sharpe {:.4}, volatility {:.4}, max drawdown {:.4}, calmar {}",
        report.total_return,
        report.average_return,
        report.sharpe,
        report.volatility,
        report.max_drawdown,
        if report.calmar.is_finite() {
            format!("{:.4}", report.calmar)
        } else {
            "inf".to_string()
        }
    );
    Ok(())
}
