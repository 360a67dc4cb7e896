//! Event-driven daily backtest of the pairs portfolio.
//!
//! Every `selection_freq` trading days positions are force-closed, the pair
//! scan reruns on the trailing window, and total wealth is split equally
//! across the sectors that produced a valid pair. Day by day the selected
//! spreads are re-scored, the signal state machines step, open pairs become
//! Black-Litterman views, and the mean-variance weights are re-solved
//! whenever the set of open pairs changes (or daily, when configured).
//!
//! Accounting convention: each date's equity snapshot is taken at the close
//! *before* that close's trades, so a date's ledger entry carries the mark
//! P&L and accruals of its own session plus the transaction costs of trades
//! executed at the previous close. Sector capital of flat pairs accrues at
//! the money-market rate or the index return; sectors with open pairs pool
//! their capital into one optimizer-weighted book and own pro-rata shares
//! of it.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::black_litterman::{build_views, estimate_prior, posterior, BlendDump, ViewInput};
use crate::cointegration::{ols_regress, scan_pairs, select_pairs, OuParams, ScanConfig};
use crate::error::{Error, Result};
use crate::market_data::{compute_returns, prescreen, PricePanel, UniverseSpec};
use crate::optimizer::{solve, OptimizationProblem, OptimalWeights};
use crate::signals::{force_close, s_score, step, Action, PairPosition, SScoreThresholds};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Cost and financing assumptions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostModel {
    /// Per-trade transaction cost rate (fraction of traded value).
    pub txn_cost: f64,
    /// Annualized short-sale cost on short market value.
    pub short_cost_annual: f64,
    /// Annualized borrowing rate charged on the levered fraction.
    pub borrow_rate_annual: f64,
    /// Annualized risk-free rate for idle capital and the Sharpe ratio.
    pub risk_free_annual: f64,
    /// Leverage multiplier on the trading book, >= 1.
    pub leverage: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            txn_cost: 0.0005,
            short_cost_annual: 0.01,
            borrow_rate_annual: 0.02,
            risk_free_annual: 0.02,
            leverage: 1.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if self.txn_cost < 0.0
            || self.short_cost_annual < 0.0
            || self.borrow_rate_annual < 0.0
            || self.risk_free_annual < 0.0
        {
            return Err(Error::Validation("cost rates must be nonnegative".into()));
        }
        if !(self.leverage >= 1.0) {
            return Err(Error::Validation(format!(
                "leverage must be >= 1, got {}",
                self.leverage
            )));
        }
        Ok(())
    }

    pub fn short_cost_daily(&self) -> f64 {
        self.short_cost_annual / TRADING_DAYS_PER_YEAR
    }

    pub fn borrow_rate_daily(&self) -> f64 {
        self.borrow_rate_annual / TRADING_DAYS_PER_YEAR
    }

    pub fn risk_free_daily(&self) -> f64 {
        self.risk_free_annual / TRADING_DAYS_PER_YEAR
    }
}

/// Where capital sits while a sector has no open pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IdleMode {
    #[default]
    MoneyMarket,
    Index,
}

/// Backtest parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Cointegration / prior estimation window (trading days).
    pub window: usize,
    /// Pair-selection (rebalance) frequency in trading days.
    pub selection_freq: usize,
    pub thresholds: SScoreThresholds,
    pub idle_mode: IdleMode,
    /// Ticker whose returns accrue on idle capital in `Index` mode.
    pub index_ticker: Option<String>,
    /// Risk-aversion scalar for the optimizer.
    pub risk_aversion: f64,
    /// View conviction multiplier.
    pub conviction: f64,
    /// Prior-precision scale on the covariance in the posterior blend.
    pub tau: f64,
    /// Bound on total transaction cost per unit wealth in the optimizer.
    pub cost_cap: f64,
    /// Minimum acceptable mean-reversion time (trading days).
    pub min_reversion_days: f64,
    pub adf_lag_order: usize,
    pub adf_alpha: f64,
    /// Day fraction per observation (1.0 for daily data).
    pub dt: f64,
    /// Re-solve the optimizer every day instead of only when the set of open
    /// pairs changes.
    pub resolve_daily: bool,
    /// Execute optimizer weight changes at the next close instead of the
    /// signal close.
    pub delay_fill: bool,
    /// First backtest date (inclusive); defaults to the first date with a
    /// full warmup window behind it.
    pub start: Option<NaiveDate>,
    /// Last backtest date (inclusive); defaults to the panel end.
    pub end: Option<NaiveDate>,
    /// Collect per-rebalance Black-Litterman and solver dumps.
    pub debug_dumps: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: 60,
            selection_freq: 27,
            thresholds: SScoreThresholds::default(),
            idle_mode: IdleMode::MoneyMarket,
            index_ticker: None,
            risk_aversion: 2.0,
            conviction: 1.0,
            tau: 1.0,
            cost_cap: 0.02,
            min_reversion_days: 5.0,
            adf_lag_order: 1,
            adf_alpha: 0.05,
            dt: 1.0,
            resolve_daily: false,
            delay_fill: false,
            start: None,
            end: None,
            debug_dumps: false,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.window < 20 {
            return Err(Error::Validation(format!(
                "window must be at least 20 days, got {}",
                self.window
            )));
        }
        if !(self.min_reversion_days >= 5.0) {
            return Err(Error::Validation(format!(
                "min_reversion_days must be at least 5, got {}",
                self.min_reversion_days
            )));
        }
        if !(self.selection_freq as f64 > self.min_reversion_days) {
            return Err(Error::Validation(format!(
                "selection_freq ({}) must exceed min_reversion_days ({})",
                self.selection_freq, self.min_reversion_days
            )));
        }
        if !(self.risk_aversion > 0.0) || !(self.conviction.is_finite()) || !(self.tau > 0.0) {
            return Err(Error::Validation(
                "risk_aversion and tau must be positive, conviction finite".into(),
            ));
        }
        if self.idle_mode == IdleMode::Index && self.index_ticker.is_none() {
            return Err(Error::Validation(
                "idle_mode = index requires index_ticker".into(),
            ));
        }
        Ok(())
    }

    fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            window: self.window,
            adf_lag_order: self.adf_lag_order,
            adf_alpha: self.adf_alpha,
            dt: self.dt,
        }
    }
}

/// Daily wealth ledger: every component of the day's wealth change.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DailyLedger {
    pub date: NaiveDate,
    pub position_pnl: f64,
    pub txn_cost: f64,
    pub short_cost: f64,
    pub borrow_cost: f64,
    pub idle_accrual: f64,
}

/// Daily cumulative wealth plus per-sector breakdown.
#[derive(Debug, Clone)]
pub struct EquityCurve {
    pub dates: Vec<NaiveDate>,
    pub wealth: Vec<f64>,
    /// Per-sector end-of-day wealth, aligned with `dates`.
    pub sector_wealth: BTreeMap<String, Vec<f64>>,
    /// Wealth held outside any sector (no sector qualified at the last
    /// rebalance), aligned with `dates`.
    pub unallocated: Vec<f64>,
    /// NAV of the pooled trading book at each snapshot (0 when no pair is
    /// open), aligned with `dates`.
    pub book_nav: Vec<f64>,
}

impl EquityCurve {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Summary statistics of an equity curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub total_return: f64,
    /// Annualized mean daily return.
    pub average_return: f64,
    pub sharpe: f64,
    /// Annualized daily volatility.
    pub volatility: f64,
    pub max_drawdown: f64,
    /// `average_return / max_drawdown`; +inf on a drawdown-free curve.
    pub calmar: f64,
}

/// One row of the trade log. Units follow the signal convention: one unit
/// of spread is 1 dollar of the first leg against `hedge_ratio` dollars of
/// the second; `cost` is the transaction cost of that conventional unit.
#[derive(Debug, Clone, Serialize)]
pub struct TradeLogEntry {
    pub date: NaiveDate,
    pub sector: String,
    pub pair: String,
    pub action: Action,
    pub units_s1: f64,
    pub units_s2: f64,
    pub cost: f64,
}

/// One row of the signal log.
#[derive(Debug, Clone, Serialize)]
pub struct SignalLogEntry {
    pub date: NaiveDate,
    pub sector: String,
    pub pair: String,
    pub s_score: f64,
    pub action: Action,
    pub state: String,
}

/// A pair chosen at a rebalance.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionEvent {
    pub date: NaiveDate,
    pub sector: String,
    pub ticker_a: String,
    pub ticker_b: String,
    pub hedge_ratio: f64,
    pub speed: f64,
    pub reversion_days: f64,
}

/// Optimizer solution dump (debug output).
#[derive(Debug, Clone, Serialize)]
pub struct SolutionDump {
    pub date: NaiveDate,
    pub x: Vec<f64>,
    pub objective: f64,
    pub turnover: f64,
    pub kkt_residual: f64,
    pub binding_constraints: Vec<String>,
}

/// Everything a backtest run produces.
#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub curve: EquityCurve,
    pub report: PerformanceReport,
    pub trades: Vec<TradeLogEntry>,
    pub signals: Vec<SignalLogEntry>,
    pub selections: Vec<SelectionEvent>,
    pub ledger: Vec<DailyLedger>,
    /// Worst daily violation of the accounting identity.
    pub max_ledger_error: f64,
    /// Worst KKT residual over every optimizer solve in the run.
    pub max_kkt_residual: f64,
    pub blend_dumps: Vec<BlendDump>,
    pub solution_dumps: Vec<SolutionDump>,
}

struct ActivePair {
    sector: String,
    ticker_a: String,
    ticker_b: String,
    col_a: usize,
    col_b: usize,
    ou: OuParams,
    intercept: f64,
    spread: f64,
    position: PairPosition,
}

impl ActivePair {
    fn pair_label(&self) -> String {
        format!("{}/{}", self.ticker_a, self.ticker_b)
    }
}

/// The pooled optimizer-weighted book shared by sectors with open pairs.
struct Book {
    /// Dollar positions per active column.
    positions: Vec<f64>,
    cash: f64,
    /// Sector -> fractional share of the book (sums to 1 when non-empty).
    shares: BTreeMap<String, f64>,
    /// NAV at the previous snapshot, for the borrow accrual base.
    nav_prev: f64,
}

impl Book {
    fn new(n: usize) -> Self {
        Self {
            positions: vec![0.0; n],
            cash: 0.0,
            shares: BTreeMap::new(),
            nav_prev: 0.0,
        }
    }

    fn nav(&self) -> f64 {
        self.cash + self.positions.iter().sum::<f64>()
    }

    fn is_active(&self) -> bool {
        !self.shares.is_empty()
    }

    fn join(&mut self, sector: &str, capital: f64) {
        let nav0 = self.nav();
        let total = nav0 + capital;
        self.cash += capital;
        if total <= 0.0 {
            self.shares.insert(sector.to_string(), 1.0);
            return;
        }
        let scale = nav0 / total;
        for share in self.shares.values_mut() {
            *share *= scale;
        }
        *self.shares.entry(sector.to_string()).or_insert(0.0) += capital / total;
    }

    /// Redeem a sector's share at the current NAV; returns the cash amount.
    fn redeem(&mut self, sector: &str) -> f64 {
        let Some(share) = self.shares.remove(sector) else {
            return 0.0;
        };
        let amount = share * self.nav();
        self.cash -= amount;
        let remaining: f64 = self.shares.values().sum();
        if remaining > 0.0 {
            for s in self.shares.values_mut() {
                *s /= remaining;
            }
        }
        amount
    }
}

/// Run the full pipeline over the panel.
pub fn run(
    panel: &PricePanel,
    universe: &UniverseSpec,
    config: &BacktestConfig,
    costs: &CostModel,
) -> Result<BacktestResult> {
    config.validate()?;
    costs.validate()?;
    let returns = compute_returns(panel)?;
    let candidates = prescreen(panel, universe)?;
    let scan_cfg = config.scan_config();

    let index_col = match config.idle_mode {
        IdleMode::MoneyMarket => None,
        IdleMode::Index => {
            let ticker = config.index_ticker.as_deref().unwrap();
            Some(panel.ticker_index(ticker).ok_or_else(|| {
                Error::Validation(format!("index ticker {ticker} not in the price panel"))
            })?)
        }
    };

    // first tradable return row: full window behind it, inside [start, end]
    let n_rows = returns.n_dates();
    let warmup_min = config.window - 1;
    let t0 = match config.start {
        None => warmup_min,
        Some(start) => {
            let first = returns
                .dates
                .iter()
                .position(|d| *d >= start)
                .ok_or(Error::InsufficientData {
                    needed: config.window + 1,
                    got: 0,
                })?;
            if first < warmup_min {
                return Err(Error::InsufficientData {
                    needed: config.window,
                    got: first + 1,
                });
            }
            first
        }
    };
    let mut t_end = n_rows.saturating_sub(1);
    if let Some(end) = config.end {
        while t_end > 0 && returns.dates[t_end] > end {
            t_end -= 1;
        }
    }
    if t0 >= n_rows || t_end < t0 {
        return Err(Error::InsufficientData {
            needed: config.window + 1,
            got: n_rows.min(t_end + 1),
        });
    }

    let leverage = costs.leverage;
    let rf_daily = costs.risk_free_daily();
    let short_daily = costs.short_cost_daily();
    let borrow_daily = costs.borrow_rate_daily();

    let mut actives: Vec<ActivePair> = Vec::new();
    let mut active_cols: Vec<usize> = Vec::new();
    let mut idle: BTreeMap<String, f64> = BTreeMap::new();
    let mut reserve = 1.0f64;
    let mut book = Book::new(0);
    let mut pending_weights: Option<Vec<f64>> = None;
    let mut pending_txn_cost = 0.0f64;

    let mut curve = EquityCurve {
        dates: Vec::new(),
        wealth: Vec::new(),
        sector_wealth: universe
            .sectors
            .iter()
            .map(|s| (s.clone(), Vec::new()))
            .collect(),
        unallocated: Vec::new(),
        book_nav: Vec::new(),
    };
    let mut ledger: Vec<DailyLedger> = Vec::new();
    let mut trades: Vec<TradeLogEntry> = Vec::new();
    let mut signal_log: Vec<SignalLogEntry> = Vec::new();
    let mut selections: Vec<SelectionEvent> = Vec::new();
    let mut blend_dumps: Vec<BlendDump> = Vec::new();
    let mut solution_dumps: Vec<SolutionDump> = Vec::new();
    let mut max_ledger_error = 0.0f64;
    let mut max_kkt_residual = 0.0f64;
    let mut prev_wealth: Option<f64> = None;

    for t in t0..=t_end {
        let date = returns.dates[t];
        let day_returns = &returns.returns[t];

        // -- marks and accruals (positions and balances held overnight) --
        let mut position_pnl = 0.0;
        let mut short_cost = 0.0;
        let mut borrow_cost = 0.0;
        let mut idle_accrual = 0.0;
        if t > t0 {
            if book.is_active() {
                borrow_cost = borrow_daily * (leverage - 1.0) * book.nav_prev;
                for (slot, &col) in active_cols.iter().enumerate() {
                    let pos = book.positions[slot];
                    position_pnl += pos * day_returns[col];
                    short_cost += short_daily * (-pos).max(0.0);
                    book.positions[slot] = pos * (1.0 + day_returns[col]);
                }
                book.cash -= short_cost + borrow_cost;
            }
            let accr = match index_col {
                None => rf_daily,
                Some(col) => day_returns[col],
            };
            for capital in idle.values_mut() {
                let gain = *capital * accr;
                idle_accrual += gain;
                *capital += gain;
            }
            let gain = reserve * accr;
            idle_accrual += gain;
            reserve += gain;
        }

        // -- snapshot --
        let wealth = book.cash + book.positions.iter().sum::<f64>()
            + idle.values().sum::<f64>()
            + reserve;
        let txn_cost = std::mem::take(&mut pending_txn_cost);
        if let Some(prev) = prev_wealth {
            let expected =
                prev + position_pnl - txn_cost - short_cost - borrow_cost + idle_accrual;
            max_ledger_error = max_ledger_error.max((wealth - expected).abs());
            ledger.push(DailyLedger {
                date,
                position_pnl,
                txn_cost,
                short_cost,
                borrow_cost,
                idle_accrual,
            });
        }
        curve.dates.push(date);
        curve.wealth.push(wealth);
        for (sector, series) in curve.sector_wealth.iter_mut() {
            let value = if let Some(share) = book.shares.get(sector) {
                share * book.nav()
            } else {
                idle.get(sector).copied().unwrap_or(0.0)
            };
            series.push(value);
        }
        curve.unallocated.push(reserve);
        curve.book_nav.push(if book.is_active() { book.nav() } else { 0.0 });
        prev_wealth = Some(wealth);
        if wealth <= 0.0 {
            return Err(Error::Bankruptcy { date, wealth });
        }

        // -- rebalance: force-close, rescan, redistribute --
        if (t - t0) % config.selection_freq == 0 {
            for pair in actives.iter_mut() {
                let (next, action) = force_close(pair.position);
                if let Some(action) = action {
                    trades.push(trade_entry(date, pair, action, costs.txn_cost));
                    signal_log.push(SignalLogEntry {
                        date,
                        sector: pair.sector.clone(),
                        pair: pair.pair_label(),
                        s_score: f64::NAN,
                        action,
                        state: next.state.to_string(),
                    });
                }
                pair.position = next;
            }
            // liquidate the book at today's closes
            let liquidation: f64 = book.positions.iter().map(|p| p.abs()).sum();
            if liquidation > 0.0 {
                pending_txn_cost += costs.txn_cost * liquidation;
            }
            let pool = book.cash + book.positions.iter().sum::<f64>()
                - costs.txn_cost * liquidation
                + idle.values().sum::<f64>()
                + reserve;
            idle.clear();
            reserve = 0.0;
            pending_weights = None;

            let records = scan_pairs(panel, &returns, &candidates, t + 1, &scan_cfg)?;
            let chosen = select_pairs(
                &records,
                config.min_reversion_days,
                config.selection_freq as f64,
            );

            actives = Vec::with_capacity(chosen.len());
            for rec in &chosen {
                let Some(ou) = rec.ou() else { continue };
                if !(ou.eq_std > 0.0) {
                    continue;
                }
                let col_a = panel.ticker_index(&rec.ticker_a).unwrap();
                let col_b = panel.ticker_index(&rec.ticker_b).unwrap();
                // refit the window regression for the residual intercept
                let rows = (t + 1 - config.window)..(t + 1);
                let r1 = returns.column(col_a, rows.clone());
                let r2 = returns.column(col_b, rows);
                let fit = ols_regress(&r1, &r2)?;
                selections.push(SelectionEvent {
                    date,
                    sector: rec.sector.clone(),
                    ticker_a: rec.ticker_a.clone(),
                    ticker_b: rec.ticker_b.clone(),
                    hedge_ratio: ou.hedge_ratio,
                    speed: ou.speed,
                    reversion_days: ou.reversion_days,
                });
                actives.push(ActivePair {
                    sector: rec.sector.clone(),
                    ticker_a: rec.ticker_a.clone(),
                    ticker_b: rec.ticker_b.clone(),
                    col_a,
                    col_b,
                    ou,
                    intercept: fit.intercept,
                    spread: 0.0,
                    position: PairPosition::flat(),
                });
            }
            active_cols = actives
                .iter()
                .flat_map(|p| [p.col_a, p.col_b])
                .collect();
            book = Book::new(active_cols.len());
            book.nav_prev = 0.0;

            if actives.is_empty() {
                reserve = pool;
            } else {
                let per_sector = pool / actives.len() as f64;
                for pair in &actives {
                    idle.insert(pair.sector.clone(), per_sector);
                }
            }
        } else {
            // -- daily spread update for the standing selection --
            for pair in actives.iter_mut() {
                let residual = day_returns[pair.col_a]
                    - pair.intercept
                    - pair.ou.hedge_ratio * day_returns[pair.col_b];
                pair.spread += residual;
            }
        }

        // -- signal step --
        let mut membership_changed = false;
        for pair in actives.iter_mut() {
            let s = s_score(pair.spread, &pair.ou)?;
            let (next, action) = step(pair.position, s, &config.thresholds, date);
            signal_log.push(SignalLogEntry {
                date,
                sector: pair.sector.clone(),
                pair: pair.pair_label(),
                s_score: s,
                action,
                state: next.state.to_string(),
            });
            match action {
                Action::OpenLong | Action::OpenShort => {
                    trades.push(trade_entry(date, pair, action, costs.txn_cost));
                    let capital = idle.remove(&pair.sector).unwrap_or(0.0);
                    book.join(&pair.sector, capital);
                    membership_changed = true;
                }
                Action::Close => {
                    trades.push(trade_entry(date, pair, action, costs.txn_cost));
                    membership_changed = true;
                }
                Action::Hold | Action::ForceClose => {}
            }
            pair.position = next;
        }
        // redemptions after all joins so exits price at the updated NAV
        if membership_changed {
            let open_sectors: Vec<String> = actives
                .iter()
                .filter(|p| p.position.is_open())
                .map(|p| p.sector.clone())
                .collect();
            let leavers: Vec<String> = book
                .shares
                .keys()
                .filter(|s| !open_sectors.contains(s))
                .cloned()
                .collect();
            if !leavers.is_empty() && leavers.len() == book.shares.len() {
                // last members left: liquidate before redemption
                let liquidation: f64 = book.positions.iter().map(|p| p.abs()).sum();
                if liquidation > 0.0 {
                    let fee = costs.txn_cost * liquidation;
                    pending_txn_cost += fee;
                    book.cash += book.positions.iter().sum::<f64>() - fee;
                    book.positions.iter_mut().for_each(|p| *p = 0.0);
                }
            }
            for sector in leavers {
                let amount = book.redeem(&sector);
                *idle.entry(sector).or_insert(0.0) += amount;
            }
        }

        // -- optimizer re-solve and trade execution --
        let execute_pending = pending_weights.is_some() && book.is_active();
        if execute_pending {
            let weights = pending_weights.take().unwrap();
            pending_txn_cost += execute_trades(&mut book, &weights, leverage, costs.txn_cost);
        }
        if book.is_active() && (membership_changed || config.resolve_daily) {
            let nav = book.nav();
            if nav > 0.0 {
                let n = active_cols.len();
                let rows = (t + 1 - config.window)..(t + 1);
                let mut window = DMatrix::zeros(config.window, n);
                for (slot, &col) in active_cols.iter().enumerate() {
                    for (r, row_idx) in rows.clone().enumerate() {
                        window[(r, slot)] = returns.returns[row_idx][col];
                    }
                }
                let prior = estimate_prior(&window)?;
                let view_inputs: Vec<ViewInput> = actives
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.position.is_open())
                    .map(|(i, p)| ViewInput {
                        ou: p.ou,
                        spread_value: p.spread,
                        col_unit: 2 * i,
                        col_hedge: 2 * i + 1,
                    })
                    .collect();
                let views = build_views(&view_inputs, n, config.conviction, config.dt)?;
                let post = posterior(&prior, &views, config.tau)?;
                if config.debug_dumps {
                    blend_dumps.push(BlendDump {
                        date: date.to_string(),
                        picking: (0..views.picking.nrows())
                            .map(|r| views.picking.row(r).iter().cloned().collect())
                            .collect(),
                        expected: views.expected.iter().cloned().collect(),
                        uncertainty_diag: views.uncertainty_diag.iter().cloned().collect(),
                        prior_mean: prior.mean.iter().cloned().collect(),
                        posterior_mean: post.mean.iter().cloned().collect(),
                    });
                }

                let prev: Vec<f64> = book
                    .positions
                    .iter()
                    .map(|p| (p / (leverage * nav)).clamp(-1.0, 1.0))
                    .collect();
                let problem = OptimizationProblem {
                    expected_returns: post.mean,
                    covariance: prior.covariance,
                    risk_aversion: config.risk_aversion,
                    prev_weights: DVector::from_column_slice(&prev),
                    txn_cost_rate: costs.txn_cost,
                    cost_cap: config.cost_cap,
                    enforce_budget: true,
                };
                let solution = solve(&problem)?;
                max_kkt_residual = max_kkt_residual.max(solution.kkt_residual);
                if config.debug_dumps {
                    solution_dumps.push(solution_dump(date, &solution));
                }
                if config.delay_fill {
                    pending_weights = Some(solution.weights);
                } else {
                    pending_txn_cost +=
                        execute_trades(&mut book, &solution.weights, leverage, costs.txn_cost);
                }
            }
        }
        if !book.is_active() {
            pending_weights = None;
        }

        // borrow accrual tomorrow is charged on what is held overnight
        book.nav_prev = book.nav();
    }

    let report = metrics(&curve, costs)?;
    Ok(BacktestResult {
        curve,
        report,
        trades,
        signals: signal_log,
        selections,
        ledger,
        max_ledger_error,
        max_kkt_residual,
        blend_dumps,
        solution_dumps,
    })
}

fn trade_entry(
    date: NaiveDate,
    pair: &ActivePair,
    action: Action,
    txn_cost: f64,
) -> TradeLogEntry {
    use crate::signals::PositionState;
    let b = pair.ou.hedge_ratio;
    let (units_s1, units_s2) = match action {
        Action::OpenLong => (1.0, -b),
        Action::OpenShort => (-1.0, b),
        // closing unwinds whatever is on: report the unwind of one unit
        Action::Close | Action::ForceClose => match pair.position.state {
            PositionState::LongSpread => (-1.0, b),
            PositionState::ShortSpread => (1.0, -b),
            PositionState::Flat => (0.0, 0.0),
        },
        Action::Hold => (0.0, 0.0),
    };
    TradeLogEntry {
        date,
        sector: pair.sector.clone(),
        pair: pair.pair_label(),
        action,
        units_s1,
        units_s2,
        cost: txn_cost * (units_s1.abs() + units_s2.abs()),
    }
}

fn solution_dump(date: NaiveDate, solution: &OptimalWeights) -> SolutionDump {
    SolutionDump {
        date,
        x: solution.weights.clone(),
        objective: solution.objective_value,
        turnover: solution.turnover,
        kkt_residual: solution.kkt_residual,
        binding_constraints: solution.binding_constraints.clone(),
    }
}

/// Trade the book to `weights * leverage * nav`; returns the transaction
/// cost incurred.
fn execute_trades(book: &mut Book, weights: &[f64], leverage: f64, txn_rate: f64) -> f64 {
    let nav = book.nav();
    let mut traded = 0.0;
    for (slot, &w) in weights.iter().enumerate() {
        let target = leverage * nav * w;
        let delta = target - book.positions[slot];
        traded += delta.abs();
        book.cash -= delta;
        book.positions[slot] = target;
    }
    let fee = txn_rate * traded;
    book.cash -= fee;
    fee
}

/// Performance statistics of a wealth curve.
pub fn metrics(curve: &EquityCurve, costs: &CostModel) -> Result<PerformanceReport> {
    metrics_from_wealth(&curve.wealth, costs.risk_free_annual)
}

/// Statistics from a raw wealth series and an annual risk-free rate.
pub fn metrics_from_wealth(wealth: &[f64], risk_free_annual: f64) -> Result<PerformanceReport> {
    if wealth.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: wealth.len(),
        });
    }
    if wealth.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Validation("wealth must stay positive".into()));
    }
    let daily: Vec<f64> = wealth.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let n = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / n;
    let average_return = mean * TRADING_DAYS_PER_YEAR;
    let volatility = if daily.len() > 1 {
        let var = daily.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        var.sqrt() * TRADING_DAYS_PER_YEAR.sqrt()
    } else {
        0.0
    };
    let sharpe = if volatility > 1e-12 {
        (average_return - risk_free_annual) / volatility
    } else {
        0.0
    };
    let total_return = wealth[wealth.len() - 1] / wealth[0] - 1.0;

    let mut peak = wealth[0];
    let mut max_drawdown = 0.0f64;
    for &w in wealth {
        peak = peak.max(w);
        max_drawdown = max_drawdown.max(1.0 - w / peak);
    }
    let calmar = if max_drawdown > 0.0 {
        average_return / max_drawdown
    } else {
        f64::INFINITY
    };

    Ok(PerformanceReport {
        total_return,
        average_return,
        sharpe,
        volatility,
        max_drawdown,
        calmar,
    })
}

/// One row of the frequency-tuning table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRow {
    pub freq: usize,
    pub sharpe: f64,
    pub calmar: f64,
}

/// Tuning table plus the winners by each criterion.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best_by_sharpe: usize,
    pub best_by_calmar: usize,
}

/// Run the backtest once per selection frequency and tabulate Sharpe and
/// Calmar. Frequencies must be greater than 10 days.
pub fn frequency_sweep(
    panel: &PricePanel,
    universe: &UniverseSpec,
    template: &BacktestConfig,
    costs: &CostModel,
    freqs: &[usize],
) -> Result<SweepTable> {
    if freqs.is_empty() {
        return Err(Error::Validation("frequency list is empty".into()));
    }
    for &f in freqs {
        if f <= 10 {
            return Err(Error::Validation(format!(
                "selection frequency must be greater than 10 days, got {f}"
            )));
        }
    }
    let mut rows = Vec::with_capacity(freqs.len());
    for &freq in freqs {
        let mut config = template.clone();
        config.selection_freq = freq;
        let result = run(panel, universe, &config, costs)?;
        rows.push(SweepRow {
            freq,
            sharpe: result.report.sharpe,
            calmar: result.report.calmar,
        });
    }
    let best = |key: fn(&SweepRow) -> f64| {
        rows.iter()
            .fold(None::<&SweepRow>, |acc, row| match acc {
                Some(best) if key(best) >= key(row) => Some(best),
                _ => Some(row),
            })
            .map(|r| r.freq)
            .unwrap()
    };
    Ok(SweepTable {
        rows: rows.clone(),
        best_by_sharpe: best(|r| r.sharpe),
        best_by_calmar: best(|r| r.calmar),
    })
}
