//! Output file writers and the curve reader for `report`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use statarb_core::backtest::{BacktestResult, EquityCurve, SweepTable, TradeLogEntry};
use statarb_core::{Error, Result};

use crate::config::RunConfig;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_equity_curve(path: &Path, curve: &EquityCurve) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "date,wealth")?;
    for (date, wealth) in curve.dates.iter().zip(&curve.wealth) {
        writeln!(f, "{date},{wealth:.10}")?;
    }
    Ok(())
}

pub fn write_trade_log(path: &Path, trades: &[TradeLogEntry]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "date,sector,pair,action,units_s1,units_s2,cost")?;
    for t in trades {
        writeln!(
            f,
            "{},{},{},{},{:.6},{:.6},{:.8}",
            t.date, t.sector, t.pair, t.action, t.units_s1, t.units_s2, t.cost
        )?;
    }
    Ok(())
}

pub fn write_signal_log(
    path: &Path,
    signals: &[statarb_core::backtest::SignalLogEntry],
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "date,sector,pair,s_score,action,state")?;
    for s in signals {
        writeln!(
            f,
            "{},{},{},{:.6},{},{}",
            s.date, s.sector, s.pair, s.s_score, s.action, s.state
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    total_return: f64,
    average_return: f64,
    sharpe: f64,
    volatility: f64,
    max_drawdown: f64,
    /// Null when the curve has no drawdown (the +inf sentinel).
    calmar: f64,
    meta: ReportMeta<'a>,
}

#[derive(Serialize)]
struct ReportMeta<'a> {
    leverage: f64,
    selection_freq: usize,
    window: usize,
    idle_mode: &'a statarb_core::backtest::IdleMode,
    seed: u64,
    n_selections: usize,
    n_trades: usize,
    max_ledger_error: f64,
}

pub fn write_report(path: &Path, result: &BacktestResult, cfg: &RunConfig) -> Result<()> {
    let r = &result.report;
    write_json(
        path,
        &ReportFile {
            total_return: r.total_return,
            average_return: r.average_return,
            sharpe: r.sharpe,
            volatility: r.volatility,
            max_drawdown: r.max_drawdown,
            calmar: r.calmar,
            meta: ReportMeta {
                leverage: cfg.costs.leverage,
                selection_freq: cfg.backtest.selection_freq,
                window: cfg.backtest.window,
                idle_mode: &cfg.backtest.idle_mode,
                seed: cfg.seed,
                n_selections: result.selections.len(),
                n_trades: result.trades.len(),
                max_ledger_error: result.max_ledger_error,
            },
        },
    )
}

pub fn write_sweep(path: &Path, table: &SweepTable) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "freq,sharpe,calmar")?;
    for row in &table.rows {
        writeln!(f, "{},{:.10},{:.10}", row.freq, row.sharpe, row.calmar)?;
    }
    Ok(())
}

pub fn read_equity_curve(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("cannot open curve {}: {e}", path.display())))?;
    let mut wealth = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let value: f64 = record
            .get(1)
            .ok_or_else(|| Error::Parse {
                line: i + 2,
                msg: "missing wealth column".into(),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                line: i + 2,
                msg: format!("bad wealth value: {e}"),
            })?;
        wealth.push(value);
    }
    Ok(wealth)
}
