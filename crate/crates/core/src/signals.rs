//! The s-score trading signal and its open/close position state machine.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cointegration::OuParams;
use crate::error::{Error, Result};

/// Dimensionless s-score cutoffs for the four decision rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SScoreThresholds {
    /// Open a long spread when `s < -buy_open`.
    pub buy_open: f64,
    /// Open a short spread when `s > +sell_open`.
    pub sell_open: f64,
    /// Close a short spread when `s < +buy_close`.
    pub buy_close: f64,
    /// Close a long spread when `s > -sell_close`.
    pub sell_close: f64,
}

impl Default for SScoreThresholds {
    fn default() -> Self {
        Self {
            buy_open: 1.3,
            sell_open: 1.3,
            buy_close: 0.7,
            sell_close: 0.5,
        }
    }
}

impl SScoreThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.buy_open > self.buy_close && self.buy_close >= 0.0) {
            return Err(Error::Validation(format!(
                "thresholds require buy_open > buy_close >= 0, got {} and {}",
                self.buy_open, self.buy_close
            )));
        }
        if !(self.sell_open > self.sell_close && self.sell_close >= 0.0) {
            return Err(Error::Validation(format!(
                "thresholds require sell_open > sell_close >= 0, got {} and {}",
                self.sell_open, self.sell_close
            )));
        }
        Ok(())
    }
}

/// State of one pair's spread trade.
///
/// `LongSpread` is long one unit of the first leg and short `hedge_ratio`
/// units of the second; `ShortSpread` is the mirror image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionState {
    Flat,
    LongSpread,
    ShortSpread,
}

impl std::fmt::Display for PositionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PositionState::Flat => "flat",
            PositionState::LongSpread => "long_spread",
            PositionState::ShortSpread => "short_spread",
        };
        f.write_str(s)
    }
}

/// A pair position with its entry bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPosition {
    pub state: PositionState,
    pub entry_date: Option<NaiveDate>,
    pub entry_s_score: Option<f64>,
}

impl PairPosition {
    pub fn flat() -> Self {
        Self {
            state: PositionState::Flat,
            entry_date: None,
            entry_s_score: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.state != PositionState::Flat
    }
}

impl Default for PairPosition {
    fn default() -> Self {
        Self::flat()
    }
}

/// What the state machine did on one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    OpenLong,
    OpenShort,
    Close,
    Hold,
    /// Liquidation forced by the rebalance schedule, not by the s-score.
    ForceClose,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Action::OpenLong => "open_long",
            Action::OpenShort => "open_short",
            Action::Close => "close",
            Action::Hold => "hold",
            Action::ForceClose => "force_close",
        };
        f.write_str(s)
    }
}

/// Normalized spread deviation `s = (X_t - mean) / eq_std`.
pub fn s_score(spread_value: f64, ou: &OuParams) -> Result<f64> {
    if !(ou.eq_std > 0.0) || !ou.eq_std.is_finite() {
        return Err(Error::Validation(format!(
            "equilibrium std must be positive to score a spread, got {}",
            ou.eq_std
        )));
    }
    Ok((spread_value - ou.mean) / ou.eq_std)
}

/// Advance the position state machine by one observation.
///
/// Cutoff comparisons are strict: a score exactly at a threshold does not
/// trigger.
pub fn step(
    position: PairPosition,
    s: f64,
    thresholds: &SScoreThresholds,
    date: NaiveDate,
) -> (PairPosition, Action) {
    match position.state {
        PositionState::Flat => {
            if s < -thresholds.buy_open {
                (
                    PairPosition {
                        state: PositionState::LongSpread,
                        entry_date: Some(date),
                        entry_s_score: Some(s),
                    },
                    Action::OpenLong,
                )
            } else if s > thresholds.sell_open {
                (
                    PairPosition {
                        state: PositionState::ShortSpread,
                        entry_date: Some(date),
                        entry_s_score: Some(s),
                    },
                    Action::OpenShort,
                )
            } else {
                (position, Action::Hold)
            }
        }
        PositionState::ShortSpread => {
            if s < thresholds.buy_close {
                (PairPosition::flat(), Action::Close)
            } else {
                (position, Action::Hold)
            }
        }
        PositionState::LongSpread => {
            if s > -thresholds.sell_close {
                (PairPosition::flat(), Action::Close)
            } else {
                (position, Action::Hold)
            }
        }
    }
}

/// Liquidate regardless of the score (rebalance-date rule).
pub fn force_close(position: PairPosition) -> (PairPosition, Option<Action>) {
    if position.is_open() {
        (PairPosition::flat(), Some(Action::ForceClose))
    } else {
        (position, None)
    }
}
