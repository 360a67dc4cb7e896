//! Engle-Granger two-step cointegration testing and Ornstein-Uhlenbeck
//! calibration of the cumulative residual spread.
//!
//! The two-step procedure on a window of daily returns:
//! 1. OLS of the first leg's returns on the second leg's returns gives the
//!    hedge ratio and residuals.
//! 2. The cumulative residuals form the spread series; an augmented
//!    Dickey-Fuller test on that series decides stationarity.
//!
//! Stationary spreads are then fit with an OU model whose exact AR(1)
//! discretization provides closed-form parameter estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{CandidatePair, PricePanel, ReturnPanel};

/// Ordinary least squares fit of `y = a + b x + e`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub intercept: f64,
    pub slope: f64,
    pub residuals: Vec<f64>,
}

/// Cumulative residual series `X_n = sum_{k<=n} e_k`.
#[derive(Debug, Clone)]
pub struct SpreadSeries {
    pub values: Vec<f64>,
}

impl SpreadSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("non-empty spread")
    }
}

/// Augmented Dickey-Fuller test outcome.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdfResult {
    /// t-ratio of the lagged-level coefficient.
    pub statistic: f64,
    pub lag_order: usize,
    /// Critical value at the configured significance level.
    pub critical_value: f64,
    pub stationary: bool,
}

/// Calibrated OU spread model `dX = speed (mean - X) dt + diffusion dW`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OuParams {
    /// Mean-reversion speed (1/day).
    pub speed: f64,
    /// Equilibrium mean of the spread.
    pub mean: f64,
    /// Diffusion scale (per sqrt-day).
    pub diffusion: f64,
    /// Equilibrium standard deviation `diffusion / sqrt(2 speed)`.
    pub eq_std: f64,
    /// OLS hedge ratio carried from the cointegrating regression; `fit_ou`
    /// alone leaves this 0, the pair scan fills it in.
    pub hedge_ratio: f64,
    /// Characteristic reversion time `1 / speed` (days).
    pub reversion_days: f64,
}

/// OLS of `y` on `x` with intercept. Residuals are returned in input order.
pub fn ols_regress(y: &[f64], x: &[f64]) -> Result<OlsFit> {
    if y.len() != x.len() {
        return Err(Error::Validation(format!(
            "series lengths differ: {} vs {}",
            y.len(),
            x.len()
        )));
    }
    if y.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: y.len(),
        });
    }
    let n = x.len() as f64;
    let x_mean = x.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - x_mean) * (xi - x_mean);
        sxy += (xi - x_mean) * (yi - y_mean);
    }
    if sxx < 1e-300 || sxx / n < f64::EPSILON * x_mean * x_mean {
        return Err(Error::DegenerateRegression(
            "regressor has zero variance".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let residuals = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi - intercept - slope * xi)
        .collect();
    Ok(OlsFit {
        intercept,
        slope,
        residuals,
    })
}

/// Running sum of the fit residuals. With a fitted intercept the final value
/// is zero up to rounding.
pub fn cumulative_residuals(fit: &OlsFit) -> SpreadSeries {
    let mut values = Vec::with_capacity(fit.residuals.len());
    let mut acc = 0.0;
    for e in &fit.residuals {
        acc += e;
        values.push(acc);
    }
    SpreadSeries { values }
}

/// ADF critical values for the constant, no-trend regression.
/// MacKinnon large-sample values at 1%, 5%, and 10%.
const ADF_CRITICAL: [(f64, f64); 3] = [(0.01, -3.43), (0.05, -2.86), (0.10, -2.57)];

pub fn adf_critical_value(alpha: f64) -> Result<f64> {
    ADF_CRITICAL
        .iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-12)
        .map(|&(_, cv)| cv)
        .ok_or_else(|| {
            Error::Validation(format!(
                "unsupported ADF significance level {alpha}; use 0.01, 0.05, or 0.10"
            ))
        })
}

/// Augmented Dickey-Fuller unit-root test with constant and no trend.
///
/// Regresses `dX_n` on `(1, X_{n-1}, dX_{n-1}, .., dX_{n-p})` and reports the
/// t-ratio of the lagged-level coefficient. The series is called stationary
/// when the statistic falls below the critical value at `alpha`.
pub fn adf_test(series: &[f64], lag_order: usize, alpha: f64) -> Result<AdfResult> {
    let critical_value = adf_critical_value(alpha)?;
    if series.len() < lag_order + 10 {
        return Err(Error::InsufficientData {
            needed: lag_order + 10,
            got: series.len(),
        });
    }

    let n = series.len();
    let diffs: Vec<f64> = (1..n).map(|t| series[t] - series[t - 1]).collect();

    // Effective observations: t runs over diffs indices lag_order..
    let rows = diffs.len() - lag_order;
    let cols = 2 + lag_order;
    if rows <= cols {
        return Err(Error::InsufficientData {
            needed: cols + lag_order + 2,
            got: n,
        });
    }
    let mut design = DMatrix::<f64>::zeros(rows, cols);
    let mut target = DVector::<f64>::zeros(rows);
    for (r, t) in (lag_order..diffs.len()).enumerate() {
        design[(r, 0)] = 1.0;
        design[(r, 1)] = series[t]; // level lagged one step behind diffs[t]
        for j in 1..=lag_order {
            design[(r, 1 + j)] = diffs[t - j];
        }
        target[r] = diffs[t];
    }

    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &target;
    let chol = xtx.clone().cholesky().ok_or_else(|| {
        Error::DegenerateRegression("ADF design matrix is rank-deficient (constant series?)".into())
    })?;
    let coef = chol.solve(&xty);

    let fitted = &design * &coef;
    let rss: f64 = (&target - &fitted).iter().map(|e| e * e).sum();
    let dof = (rows - cols) as f64;
    let sigma2 = rss / dof;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::DegenerateRegression(
            "ADF residual variance is zero".into(),
        ));
    }
    let xtx_inv = chol.inverse();
    let se = (sigma2 * xtx_inv[(1, 1)]).sqrt();
    if !(se > 0.0) {
        return Err(Error::DegenerateRegression(
            "ADF coefficient standard error is zero".into(),
        ));
    }
    let statistic = coef[1] / se;

    Ok(AdfResult {
        statistic,
        lag_order,
        critical_value,
        stationary: statistic < critical_value,
    })
}

/// Combined result of the two-step test on one candidate pair.
#[derive(Debug, Clone)]
pub struct EngleGrangerResult {
    pub ols: OlsFit,
    pub spread: SpreadSeries,
    pub adf: AdfResult,
}

impl EngleGrangerResult {
    pub fn cointegrated(&self) -> bool {
        self.adf.stationary
    }
}

/// Two-step Engle-Granger test on equal-length return windows.
pub fn engle_granger(
    r1: &[f64],
    r2: &[f64],
    window: usize,
    lag_order: usize,
    alpha: f64,
) -> Result<EngleGrangerResult> {
    if r1.len() != window || r2.len() != window {
        return Err(Error::Validation(format!(
            "both series must have window length {window}, got {} and {}",
            r1.len(),
            r2.len()
        )));
    }
    let ols = ols_regress(r1, r2)?;
    let spread = cumulative_residuals(&ols);
    let adf = adf_test(&spread.values, lag_order, alpha)?;
    Ok(EngleGrangerResult { ols, spread, adf })
}

/// Fit an OU model to a spread series via its exact AR(1) discretization.
///
/// `X_{n+1} = c0 + c1 X_n + eps` maps to `speed = -ln(c1)/dt`,
/// `mean = c0/(1-c1)`, `diffusion = std(eps) sqrt(2 speed / (1 - c1^2))`.
/// Fits with `c1` outside `(0, 1)` are rejected as non-mean-reverting.
pub fn fit_ou(series: &[f64], dt: f64) -> Result<OuParams> {
    if series.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: series.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let x = &series[..series.len() - 1];
    let y = &series[1..];
    let fit = ols_regress(y, x).map_err(|e| match e {
        Error::DegenerateRegression(_) => {
            Error::DegenerateRegression("spread series is constant".into())
        }
        other => other,
    })?;
    let c1 = fit.slope;
    let c0 = fit.intercept;
    if c1 <= 0.0 || c1 >= 1.0 {
        return Err(Error::NonMeanReverting { coeff: c1 });
    }
    let speed = -c1.ln() / dt;
    let mean = c0 / (1.0 - c1);
    let n = fit.residuals.len() as f64;
    let eps_var = fit.residuals.iter().map(|e| e * e).sum::<f64>() / n;
    let diffusion = (eps_var * 2.0 * speed / (1.0 - c1 * c1)).sqrt();
    let eq_std = diffusion / (2.0 * speed).sqrt();
    Ok(OuParams {
        speed,
        mean,
        diffusion,
        eq_std,
        hedge_ratio: 0.0,
        reversion_days: 1.0 / speed,
    })
}

/// One row of the pair-scan report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairScanRecord {
    pub sector: String,
    pub ticker_a: String,
    pub ticker_b: String,
    #[serde(rename = "b_hat")]
    pub hedge_ratio: f64,
    pub adf_stat: f64,
    pub stationary: bool,
    #[serde(rename = "k")]
    pub speed: Option<f64>,
    #[serde(rename = "m")]
    pub mean: Option<f64>,
    #[serde(rename = "s_eq")]
    pub eq_std: Option<f64>,
    pub reversion_days: Option<f64>,
}

impl PairScanRecord {
    pub fn ou(&self) -> Option<OuParams> {
        match (self.speed, self.mean, self.eq_std, self.reversion_days) {
            (Some(speed), Some(mean), Some(eq_std), Some(reversion_days)) => Some(OuParams {
                speed,
                mean,
                diffusion: eq_std * (2.0 * speed).sqrt(),
                eq_std,
                hedge_ratio: self.hedge_ratio,
                reversion_days,
            }),
            _ => None,
        }
    }
}

/// Scan settings for the per-window pair sweep.
#[derive(Debug, Clone, Copy)]
pub struct ScanConfig {
    pub window: usize,
    pub adf_lag_order: usize,
    pub adf_alpha: f64,
    pub dt: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            window: 60,
            adf_lag_order: 1,
            adf_alpha: 0.05,
            dt: 1.0,
        }
    }
}

/// Run Engle-Granger plus OU calibration on every candidate pair over the
/// return rows `end_row - window .. end_row`.
///
/// Pairs whose test degenerates (constant spread, trending fit) are reported
/// as non-stationary with no OU parameters rather than aborting the scan.
pub fn scan_pairs(
    panel: &PricePanel,
    returns: &ReturnPanel,
    candidates: &[CandidatePair],
    end_row: usize,
    config: &ScanConfig,
) -> Result<Vec<PairScanRecord>> {
    if end_row > returns.n_dates() || end_row < config.window {
        return Err(Error::InsufficientData {
            needed: config.window,
            got: end_row.min(returns.n_dates()),
        });
    }
    let rows = (end_row - config.window)..end_row;
    let mut records = Vec::with_capacity(candidates.len());
    for pair in candidates {
        let col_a = panel.ticker_index(&pair.ticker_a).ok_or_else(|| {
            Error::Validation(format!("unknown ticker {}", pair.ticker_a))
        })?;
        let col_b = panel.ticker_index(&pair.ticker_b).ok_or_else(|| {
            Error::Validation(format!("unknown ticker {}", pair.ticker_b))
        })?;
        let r1 = returns.column(col_a, rows.clone());
        let r2 = returns.column(col_b, rows.clone());
        let record = match engle_granger(&r1, &r2, config.window, config.adf_lag_order, config.adf_alpha) {
            Ok(eg) => {
                let ou = if eg.cointegrated() {
                    fit_ou(&eg.spread.values, config.dt).ok().map(|mut p| {
                        p.hedge_ratio = eg.ols.slope;
                        p
                    })
                } else {
                    None
                };
                PairScanRecord {
                    sector: pair.sector.clone(),
                    ticker_a: pair.ticker_a.clone(),
                    ticker_b: pair.ticker_b.clone(),
                    hedge_ratio: eg.ols.slope,
                    adf_stat: eg.adf.statistic,
                    stationary: eg.adf.stationary,
                    speed: ou.map(|p| p.speed),
                    mean: ou.map(|p| p.mean),
                    eq_std: ou.map(|p| p.eq_std),
                    reversion_days: ou.map(|p| p.reversion_days),
                }
            }
            Err(Error::DegenerateRegression(_)) | Err(Error::NonMeanReverting { .. }) => {
                PairScanRecord {
                    sector: pair.sector.clone(),
                    ticker_a: pair.ticker_a.clone(),
                    ticker_b: pair.ticker_b.clone(),
                    hedge_ratio: f64::NAN,
                    adf_stat: f64::NAN,
                    stationary: false,
                    speed: None,
                    mean: None,
                    eq_std: None,
                    reversion_days: None,
                }
            }
            Err(e) => return Err(e),
        };
        records.push(record);
    }
    Ok(records)
}

/// A pair chosen for trading in one sector.
#[derive(Debug, Clone)]
pub struct SelectedPair {
    pub sector: String,
    pub ticker_a: String,
    pub ticker_b: String,
    pub ou: OuParams,
    pub intercept: f64,
}

/// Pick at most one pair per sector: stationary, reversion time inside
/// `[min_reversion_days, selection_freq)`, fastest mean reversion wins.
pub fn select_pairs(
    records: &[PairScanRecord],
    min_reversion_days: f64,
    selection_freq: f64,
) -> Vec<PairScanRecord> {
    let mut sorted: Vec<&PairScanRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.sector, &a.ticker_a, &a.ticker_b).cmp(&(&b.sector, &b.ticker_a, &b.ticker_b))
    });
    let mut best: Vec<PairScanRecord> = Vec::new();
    for rec in sorted {
        if !rec.stationary {
            continue;
        }
        let (Some(speed), Some(rev)) = (rec.speed, rec.reversion_days) else {
            continue;
        };
        if !(rev >= min_reversion_days && rev < selection_freq) {
            continue;
        }
        match best.iter_mut().find(|b| b.sector == rec.sector) {
            Some(current) => {
                if speed > current.speed.unwrap_or(f64::NEG_INFINITY) {
                    *current = rec.clone();
                }
            }
            None => best.push(rec.clone()),
        }
    }
    best
}
