//! Price ingestion, calendar alignment, returns, and universe prescreening.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How to treat dates where some ticker has no quote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingDataPolicy {
    /// Drop the whole date row (default).
    #[default]
    Drop,
    /// Forward-fill from the previous quote; leading gaps still drop the row.
    Ffill,
}

/// Record of what alignment did to the raw file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub policy: MissingDataPolicy,
    pub dropped_dates: usize,
    pub filled_cells: usize,
}

/// Date-aligned adjusted-close prices for a ticker universe.
///
/// Rows are trading dates, columns are tickers. After construction the panel
/// is dense: every cell holds a strictly positive price.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    sectors: Vec<String>,
    pub prices: Vec<Vec<f64>>,
    pub alignment: AlignmentSummary,
}

impl PricePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        sectors: Vec<String>,
        prices: Vec<Vec<f64>>,
        alignment: AlignmentSummary,
    ) -> Result<Self> {
        if tickers.len() != sectors.len() {
            return Err(Error::Validation(
                "every ticker needs a sector label".into(),
            ));
        }
        if prices.len() != dates.len() {
            return Err(Error::Validation(format!(
                "price rows ({}) do not match dates ({})",
                prices.len(),
                dates.len()
            )));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "dates must be strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (ri, row) in prices.iter().enumerate() {
            if row.len() != tickers.len() {
                return Err(Error::Validation(format!(
                    "row {} has {} cells, expected {}",
                    ri,
                    row.len(),
                    tickers.len()
                )));
            }
            for (ci, &p) in row.iter().enumerate() {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-positive price {} for {} on {}",
                        p, tickers[ci], dates[ri]
                    )));
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            sectors,
            prices,
            alignment,
        })
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn sector_of(&self, ticker: &str) -> Option<&str> {
        self.ticker_index(ticker).map(|i| self.sectors[i].as_str())
    }

    pub fn sector_of_col(&self, col: usize) -> &str {
        &self.sectors[col]
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }
}

/// Simple daily returns derived from a [`PricePanel`].
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: Vec<Vec<f64>>,
}

impl ReturnPanel {
    /// Column of returns for one ticker over a row range.
    pub fn column(&self, col: usize, rows: std::ops::Range<usize>) -> Vec<f64> {
        self.returns[rows].iter().map(|r| r[col]).collect()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }
}

/// The tradable universe: sector groups of top holdings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniverseSpec {
    /// Sector labels in deterministic (sorted) order.
    pub sectors: Vec<String>,
    /// Cap on holdings per sector; groups larger than this are truncated to
    /// their first `per_sector` file entries.
    pub per_sector: usize,
    /// Tickers per sector, parallel to `sectors`.
    pub members: Vec<Vec<String>>,
}

pub const DEFAULT_PER_SECTOR: usize = 5;

impl UniverseSpec {
    pub fn from_groups(groups: BTreeMap<String, Vec<String>>, per_sector: usize) -> Result<Self> {
        if per_sector == 0 {
            return Err(Error::Validation("per_sector must be positive".into()));
        }
        let mut sectors = Vec::new();
        let mut members = Vec::new();
        for (sector, tickers) in groups {
            let mut seen = BTreeSet::new();
            let mut kept = Vec::new();
            for t in tickers {
                if seen.insert(t.clone()) {
                    kept.push(t);
                }
                if kept.len() == per_sector {
                    break;
                }
            }
            if kept.is_empty() {
                continue;
            }
            sectors.push(sector);
            members.push(kept);
        }
        if sectors.is_empty() {
            return Err(Error::Validation("universe has no sectors".into()));
        }
        let mut all = BTreeSet::new();
        for (sector, group) in sectors.iter().zip(&members) {
            for t in group {
                if !all.insert(t.clone()) {
                    return Err(Error::Validation(format!(
                        "ticker {t} appears in more than one sector (seen again in {sector})"
                    )));
                }
            }
        }
        Ok(Self {
            sectors,
            per_sector,
            members,
        })
    }

    pub fn tickers(&self) -> Vec<&str> {
        self.members
            .iter()
            .flat_map(|g| g.iter().map(|t| t.as_str()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.members.iter().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sector_of(&self, ticker: &str) -> Option<&str> {
        for (s, group) in self.sectors.iter().zip(&self.members) {
            if group.iter().any(|t| t == ticker) {
                return Some(s);
            }
        }
        None
    }
}

/// An unordered within-sector candidate pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub sector: String,
    pub ticker_a: String,
    pub ticker_b: String,
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    date: String,
    ticker: String,
    adj_close: String,
}

#[derive(Debug, Deserialize)]
struct UniverseRow {
    ticker: String,
    sector: String,
}

/// Load a universe file (`ticker,sector` CSV). File order within a sector
/// defines the "top holdings" order used when truncating to `per_sector`.
pub fn load_universe<P: AsRef<Path>>(path: P, per_sector: usize) -> Result<UniverseSpec> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Config(format!("cannot open universe file {}: {e}", path.display()))
    })?;
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<UniverseRow>().enumerate() {
        let line = i + 2; // header is line 1
        let row = row.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if row.ticker.trim().is_empty() || row.sector.trim().is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty ticker or sector".into(),
            });
        }
        groups
            .entry(row.sector.trim().to_string())
            .or_default()
            .push(row.ticker.trim().to_string());
    }
    UniverseSpec::from_groups(groups, per_sector)
}

/// Load a long-format price file (`date,ticker,adj_close` CSV) and align it
/// into a dense panel over the universe tickers.
///
/// Tickers present in the file but absent from the universe are ignored.
/// Dates where some universe ticker has no quote are handled per `policy`.
pub fn load_prices<P: AsRef<Path>>(
    path: P,
    universe: &UniverseSpec,
    policy: MissingDataPolicy,
) -> Result<PricePanel> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("cannot open price file {}: {e}", path.display())))?;

    let wanted: BTreeSet<&str> = universe.tickers().into_iter().collect();
    let mut cells: BTreeMap<NaiveDate, BTreeMap<String, f64>> = BTreeMap::new();

    for (i, row) in reader.deserialize::<PriceRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let ticker = row.ticker.trim();
        if !wanted.contains(ticker) {
            continue;
        }
        let date = NaiveDate::parse_from_str(row.date.trim(), "%Y-%m-%d").map_err(|e| {
            Error::Parse {
                line,
                msg: format!("bad date {:?}: {e}", row.date),
            }
        })?;
        let price: f64 = row.adj_close.trim().parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad price {:?}: {e}", row.adj_close),
        })?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(Error::Validation(format!(
                "non-positive price {price} for {ticker} on {date} (line {line})"
            )));
        }
        let day = cells.entry(date).or_default();
        if day.insert(ticker.to_string(), price).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate quote for {ticker} on {date}"),
            });
        }
    }

    align_panel(cells, universe, policy)
}

fn align_panel(
    cells: BTreeMap<NaiveDate, BTreeMap<String, f64>>,
    universe: &UniverseSpec,
    policy: MissingDataPolicy,
) -> Result<PricePanel> {
    let tickers: Vec<String> = universe
        .tickers()
        .into_iter()
        .map(|t| t.to_string())
        .collect();
    let sectors: Vec<String> = tickers
        .iter()
        .map(|t| universe.sector_of(t).unwrap().to_string())
        .collect();

    let mut dates = Vec::new();
    let mut prices: Vec<Vec<f64>> = Vec::new();
    let mut last_seen: Vec<Option<f64>> = vec![None; tickers.len()];
    let mut dropped = 0usize;
    let mut filled = 0usize;

    for (date, quotes) in cells {
        let mut row = Vec::with_capacity(tickers.len());
        let mut complete = true;
        for (ci, t) in tickers.iter().enumerate() {
            match quotes.get(t) {
                Some(&p) => {
                    last_seen[ci] = Some(p);
                    row.push(p);
                }
                None => match (policy, last_seen[ci]) {
                    (MissingDataPolicy::Ffill, Some(p)) => {
                        filled += 1;
                        row.push(p);
                    }
                    _ => {
                        complete = false;
                        break;
                    }
                },
            }
        }
        if complete {
            dates.push(date);
            prices.push(row);
        } else {
            dropped += 1;
            // still remember whatever quotes the dropped row carried
            for (ci, t) in tickers.iter().enumerate() {
                if let Some(&p) = quotes.get(t) {
                    last_seen[ci] = Some(p);
                }
            }
        }
    }

    if dates.is_empty() {
        return Err(Error::Alignment(
            "no date has quotes for every universe ticker".into(),
        ));
    }

    PricePanel::new(
        dates,
        tickers,
        sectors,
        prices,
        AlignmentSummary {
            policy,
            dropped_dates: dropped,
            filled_cells: filled,
        },
    )
}

/// Simple daily returns: `R[t][i] = P[t+1][i] / P[t][i] - 1`.
pub fn compute_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    if panel.n_dates() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: panel.n_dates(),
        });
    }
    let mut returns = Vec::with_capacity(panel.n_dates() - 1);
    for t in 1..panel.n_dates() {
        let row: Vec<f64> = panel.prices[t]
            .iter()
            .zip(&panel.prices[t - 1])
            .map(|(p, q)| p / q - 1.0)
            .collect();
        returns.push(row);
    }
    Ok(ReturnPanel {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        returns,
    })
}

/// All unordered within-sector pairs over the universe tickers.
pub fn prescreen(panel: &PricePanel, universe: &UniverseSpec) -> Result<Vec<CandidatePair>> {
    for t in universe.tickers() {
        if panel.ticker_index(t).is_none() {
            return Err(Error::Validation(format!(
                "universe ticker {t} is not in the price panel"
            )));
        }
    }
    let mut pairs = Vec::new();
    for (sector, group) in universe.sectors.iter().zip(&universe.members) {
        for i in 0..group.len() {
            for j in (i + 1)..group.len() {
                pairs.push(CandidatePair {
                    sector: sector.clone(),
                    ticker_a: group[i].clone(),
                    ticker_b: group[j].clone(),
                });
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn small_universe(dir: &tempfile::TempDir) -> UniverseSpec {
        let path = write_file(
            dir,
            "universe.csv",
            "ticker,sector\nAAA,tech\nBBB,tech\nCCC,energy\n",
        );
        load_universe(path, DEFAULT_PER_SECTOR).unwrap()
    }

    #[test]
    fn load_well_formed_panel() {
        let dir = tempfile::tempdir().unwrap();
        let universe = small_universe(&dir);
        let mut csv = String::from("date,ticker,adj_close\n");
        for (d, day) in ["2020-01-02", "2020-01-03", "2020-01-06", "2020-01-07", "2020-01-08"]
            .iter()
            .enumerate()
        {
            for (i, t) in ["AAA", "BBB", "CCC"].iter().enumerate() {
                csv.push_str(&format!("{day},{t},{}\n", 100.0 + d as f64 + i as f64));
            }
        }
        let path = write_file(&dir, "prices.csv", &csv);
        let panel = load_prices(path, &universe, MissingDataPolicy::Drop).unwrap();
        assert_eq!(panel.n_dates(), 5);
        assert_eq!(panel.n_tickers(), 3);
        assert_eq!(panel.sector_of("AAA"), Some("tech"));
        assert_eq!(panel.alignment.dropped_dates, 0);
    }

    #[test]
    fn zero_price_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let universe = small_universe(&dir);
        let path = write_file(
            &dir,
            "prices.csv",
            "date,ticker,adj_close\n2020-01-02,AAA,0.0\n2020-01-02,BBB,10\n2020-01-02,CCC,10\n",
        );
        let err = load_prices(path, &universe, MissingDataPolicy::Drop).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "got {err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let universe = small_universe(&dir);
        let path = write_file(
            &dir,
            "prices.csv",
            "date,ticker,adj_close\n2020-01-02,AAA,10\n2020-01-03,AAA,not_a_number\n",
        );
        let err = load_prices(path, &universe, MissingDataPolicy::Drop).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn missing_date_dropped_under_drop_policy() {
        let dir = tempfile::tempdir().unwrap();
        let universe = small_universe(&dir);
        let mut csv = String::from("date,ticker,adj_close\n");
        for day in ["2020-01-02", "2020-01-03", "2020-01-06", "2020-01-07", "2020-01-08"] {
            for t in ["AAA", "BBB", "CCC"] {
                // BBB has no quote on 2020-01-06
                if day == "2020-01-06" && t == "BBB" {
                    continue;
                }
                csv.push_str(&format!("{day},{t},100\n"));
            }
        }
        let path = write_file(&dir, "prices.csv", &csv);
        let panel = load_prices(path, &universe, MissingDataPolicy::Drop).unwrap();
        assert_eq!(panel.n_dates(), 4);
        assert_eq!(panel.alignment.dropped_dates, 1);
    }

    #[test]
    fn missing_date_filled_under_ffill_policy() {
        let dir = tempfile::tempdir().unwrap();
        let universe = small_universe(&dir);
        let mut csv = String::from("date,ticker,adj_close\n");
        for day in ["2020-01-02", "2020-01-03", "2020-01-06"] {
            for t in ["AAA", "BBB", "CCC"] {
                if day == "2020-01-03" && t == "BBB" {
                    continue;
                }
                csv.push_str(&format!("{day},{t},111\n"));
            }
        }
        let path = write_file(&dir, "prices.csv", &csv);
        let panel = load_prices(path, &universe, MissingDataPolicy::Ffill).unwrap();
        assert_eq!(panel.n_dates(), 3);
        assert_eq!(panel.alignment.filled_cells, 1);
        let bbb = panel.ticker_index("BBB").unwrap();
        assert_eq!(panel.prices[1][bbb], 111.0);
    }

    #[test]
    fn empty_intersection_is_alignment_error() {
        let dir = tempfile::tempdir().unwrap();
        let universe = small_universe(&dir);
        // AAA and BBB never quote on the same date as CCC
        let path = write_file(
            &dir,
            "prices.csv",
            "date,ticker,adj_close\n2020-01-02,AAA,10\n2020-01-02,BBB,10\n2020-01-03,CCC,10\n",
        );
        let err = load_prices(path, &universe, MissingDataPolicy::Drop).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)), "got {err}");
    }

    #[test]
    fn returns_constant_prices_are_zero() {
        let dates: Vec<NaiveDate> = (1..=4)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, d).unwrap())
            .collect();
        let panel = PricePanel::new(
            dates,
            vec!["AAA".into()],
            vec!["tech".into()],
            vec![vec![50.0]; 4],
            AlignmentSummary {
                policy: MissingDataPolicy::Drop,
                dropped_dates: 0,
                filled_cells: 0,
            },
        )
        .unwrap();
        let r = compute_returns(&panel).unwrap();
        assert_eq!(r.n_dates(), 3);
        assert!(r.returns.iter().all(|row| row[0] == 0.0));
    }

    #[test]
    fn returns_simple_arithmetic() {
        let dates: Vec<NaiveDate> = (1..=2)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, d).unwrap())
            .collect();
        let panel = PricePanel::new(
            dates,
            vec!["AAA".into()],
            vec!["tech".into()],
            vec![vec![100.0], vec![110.0]],
            AlignmentSummary {
                policy: MissingDataPolicy::Drop,
                dropped_dates: 0,
                filled_cells: 0,
            },
        )
        .unwrap();
        let r = compute_returns(&panel).unwrap();
        assert!((r.returns[0][0] - 0.10).abs() < 1e-15);
    }

    #[test]
    fn returns_single_date_is_error() {
        let panel = PricePanel::new(
            vec![NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()],
            vec!["AAA".into()],
            vec!["tech".into()],
            vec![vec![100.0]],
            AlignmentSummary {
                policy: MissingDataPolicy::Drop,
                dropped_dates: 0,
                filled_cells: 0,
            },
        )
        .unwrap();
        assert!(matches!(
            compute_returns(&panel),
            Err(Error::InsufficientData { .. })
        ));
    }

    fn synthetic_universe(sectors: usize, per: usize) -> UniverseSpec {
        let mut groups = BTreeMap::new();
        for s in 0..sectors {
            let tickers: Vec<String> = (0..per).map(|i| format!("S{s}T{i}")).collect();
            groups.insert(format!("sector{s}"), tickers);
        }
        UniverseSpec::from_groups(groups, per).unwrap()
    }

    fn panel_for(universe: &UniverseSpec) -> PricePanel {
        let n = universe.len();
        let dates: Vec<NaiveDate> = (1..=2)
            .map(|d| NaiveDate::from_ymd_opt(2020, 1, d).unwrap())
            .collect();
        let tickers: Vec<String> = universe.tickers().iter().map(|t| t.to_string()).collect();
        let sectors: Vec<String> = tickers
            .iter()
            .map(|t| universe.sector_of(t).unwrap().to_string())
            .collect();
        PricePanel::new(
            dates,
            tickers,
            sectors,
            vec![vec![100.0; n]; 2],
            AlignmentSummary {
                policy: MissingDataPolicy::Drop,
                dropped_dates: 0,
                filled_cells: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn prescreen_nine_sectors_of_five_gives_ninety_pairs() {
        let universe = synthetic_universe(9, 5);
        let panel = panel_for(&universe);
        let pairs = prescreen(&panel, &universe).unwrap();
        assert_eq!(pairs.len(), 90);
    }

    #[test]
    fn prescreen_one_sector_of_two_gives_one_pair() {
        let universe = synthetic_universe(1, 2);
        let panel = panel_for(&universe);
        assert_eq!(prescreen(&panel, &universe).unwrap().len(), 1);
    }

    #[test]
    fn prescreen_three_sectors_of_three_gives_nine_pairs() {
        let universe = synthetic_universe(3, 3);
        let panel = panel_for(&universe);
        assert_eq!(prescreen(&panel, &universe).unwrap().len(), 9);
    }

    #[test]
    fn prescreen_unknown_ticker_is_error() {
        let universe = synthetic_universe(1, 2);
        let panel = panel_for(&universe);
        let other = synthetic_universe(1, 3);
        assert!(matches!(
            prescreen(&panel, &other),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn prescreen_no_cross_sector_or_self_pairs() {
        let universe = synthetic_universe(4, 4);
        let panel = panel_for(&universe);
        let pairs = prescreen(&panel, &universe).unwrap();
        assert_eq!(pairs.len(), 4 * 6);
        for p in &pairs {
            assert_ne!(p.ticker_a, p.ticker_b);
            assert_eq!(
                universe.sector_of(&p.ticker_a),
                universe.sector_of(&p.ticker_b)
            );
        }
    }

    #[test]
    fn universe_truncates_to_per_sector() {
        let mut groups = BTreeMap::new();
        groups.insert(
            "tech".to_string(),
            vec!["A".into(), "B".into(), "C".into(), "D".into()],
        );
        let u = UniverseSpec::from_groups(groups, 2).unwrap();
        assert_eq!(u.members[0], vec!["A".to_string(), "B".to_string()]);
    }
}
