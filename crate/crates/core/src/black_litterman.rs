//! Bayesian blending of the historical return prior with pair-trade views.
//!
//! The prior is the sample mean and covariance of daily returns. Each open
//! pair contributes one view row: long one unit of the first leg, short the
//! hedge ratio of the second, with expected return driven by the OU pull
//! toward equilibrium and uncertainty given by the equilibrium variance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cointegration::OuParams;
use crate::error::{Error, Result};

/// Sample mean and covariance of a return window.
#[derive(Debug, Clone)]
pub struct PriorEstimate {
    /// Mean daily return per asset.
    pub mean: DVector<f64>,
    /// Sample covariance (divisor T-1), ridge-regularized to positive
    /// definite when needed.
    pub covariance: DMatrix<f64>,
    /// Number of return observations.
    pub sample_len: usize,
    /// Ridge added to the diagonal, if regularization was required.
    pub ridge: Option<f64>,
}

/// One active pair expressed as a view: column indices into the asset
/// universe plus the calibrated spread model and its current value.
#[derive(Debug, Clone)]
pub struct ViewInput {
    pub ou: OuParams,
    pub spread_value: f64,
    /// Column receiving the +1 picking entry (the unit leg).
    pub col_unit: usize,
    /// Column receiving the -hedge_ratio picking entry.
    pub col_hedge: usize,
}

/// The view triple (P, q, W) over K active pairs and N assets.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub picking: DMatrix<f64>,
    pub expected: DVector<f64>,
    pub uncertainty_diag: DVector<f64>,
    pub conviction: f64,
    pub dt: f64,
}

impl ViewSet {
    pub fn empty(n_assets: usize, conviction: f64, dt: f64) -> Self {
        Self {
            picking: DMatrix::zeros(0, n_assets),
            expected: DVector::zeros(0),
            uncertainty_diag: DVector::zeros(0),
            conviction,
            dt,
        }
    }

    pub fn n_views(&self) -> usize {
        self.picking.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.picking.ncols()
    }
}

/// Blended posterior mean and covariance.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Debug dump of one blend, matching the optional JSON interface.
#[derive(Debug, Clone, Serialize)]
pub struct BlendDump {
    pub date: String,
    pub picking: Vec<Vec<f64>>,
    pub expected: Vec<f64>,
    pub uncertainty_diag: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub posterior_mean: Vec<f64>,
}

const EIGEN_FLOOR: f64 = 1e-12;

/// Sample mean and covariance of a T x N return window, ridge-regularized so
/// the covariance is positive definite.
pub fn estimate_prior(window: &DMatrix<f64>) -> Result<PriorEstimate> {
    let t = window.nrows();
    let n = window.ncols();
    if t < 2 {
        return Err(Error::InsufficientData { needed: 2, got: t });
    }
    let mean = DVector::from_iterator(n, (0..n).map(|j| window.column(j).sum() / t as f64));
    let mut cov = DMatrix::zeros(n, n);
    for r in 0..t {
        for i in 0..n {
            let di = window[(r, i)] - mean[i];
            for j in i..n {
                cov[(i, j)] += di * (window[(r, j)] - mean[j]);
            }
        }
    }
    cov /= (t - 1) as f64;
    for i in 0..n {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }

    let eigs = cov.clone().symmetric_eigenvalues();
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = (cov.diagonal().sum() / n as f64).max(1e-10);
    let ridge = if min_eig < EIGEN_FLOOR * scale {
        let delta = 1e-8 * scale - min_eig.min(0.0);
        for i in 0..n {
            cov[(i, i)] += delta;
        }
        Some(delta)
    } else {
        None
    };

    Ok(PriorEstimate {
        mean,
        covariance: cov,
        sample_len: t,
        ridge,
    })
}

/// Build the picking matrix, view returns, and view uncertainties for the
/// active pairs. Each asset may appear in at most one view.
pub fn build_views(
    active: &[ViewInput],
    n_assets: usize,
    conviction: f64,
    dt: f64,
) -> Result<ViewSet> {
    let k = active.len();
    let mut picking = DMatrix::zeros(k, n_assets);
    let mut expected = DVector::zeros(k);
    let mut uncertainty = DVector::zeros(k);
    let mut used = vec![false; n_assets];

    for (row, view) in active.iter().enumerate() {
        for col in [view.col_unit, view.col_hedge] {
            if col >= n_assets {
                return Err(Error::Validation(format!(
                    "view column {col} out of range for {n_assets} assets"
                )));
            }
            if used[col] {
                return Err(Error::ConflictingView { column: col });
            }
            used[col] = true;
        }
        picking[(row, view.col_unit)] = 1.0;
        picking[(row, view.col_hedge)] = -view.ou.hedge_ratio;
        expected[row] =
            conviction * view.ou.speed * (view.ou.mean - view.spread_value) * dt;
        let w = view.ou.eq_std * view.ou.eq_std * dt;
        if !(w > 0.0) {
            return Err(Error::Validation(format!(
                "view uncertainty must be positive, got {w}"
            )));
        }
        uncertainty[row] = w;
    }

    Ok(ViewSet {
        picking,
        expected,
        uncertainty_diag: uncertainty,
        conviction,
        dt,
    })
}

/// Posterior blend:
/// `M = (inv(tau S) + P' inv(W) P)^-1`,
/// `mean = M (inv(tau S) m_hat + P' inv(W) q)`.
///
/// With no views this reduces exactly to the prior (scaled by `tau` in the
/// covariance). Solves go through Cholesky factorizations; nothing here
/// inverts a matrix that is not symmetric positive definite.
pub fn posterior(prior: &PriorEstimate, views: &ViewSet, tau: f64) -> Result<Posterior> {
    let n = prior.mean.len();
    if views.n_assets() != n {
        return Err(Error::Validation(format!(
            "views cover {} assets, prior has {n}",
            views.n_assets()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Validation(format!("tau must be positive, got {tau}")));
    }

    let scaled = &prior.covariance * tau;
    let chol_prior = scaled.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let prior_precision = chol_prior.inverse();

    if views.n_views() == 0 {
        return Ok(Posterior {
            mean: prior.mean.clone(),
            covariance: scaled,
        });
    }

    // P' W^-1 and the view precision P' W^-1 P
    let mut pt_winv = views.picking.transpose();
    for k in 0..views.n_views() {
        let w = views.uncertainty_diag[k];
        if !(w > 0.0) {
            return Err(Error::Validation(format!(
                "view uncertainty must be positive, got {w}"
            )));
        }
        let mut col = pt_winv.column_mut(k);
        col /= w;
    }
    let view_precision = &pt_winv * &views.picking;

    let total_precision = &prior_precision + &view_precision;
    let chol_post = total_precision
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance)?;

    let rhs = &prior_precision * &prior.mean + &pt_winv * &views.expected;
    let mean = chol_post.solve(&rhs);
    let covariance = chol_post.inverse();

    Ok(Posterior { mean, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ou(speed: f64, mean: f64, eq_std: f64, hedge_ratio: f64) -> OuParams {
        OuParams {
            speed,
            mean,
            diffusion: eq_std * (2.0 * speed).sqrt(),
            eq_std,
            hedge_ratio,
            reversion_days: 1.0 / speed,
        }
    }

    #[test]
    fn prior_constant_returns_degenerate_covariance() {
        let window = DMatrix::from_element(10, 3, 0.004);
        let prior = estimate_prior(&window).unwrap();
        assert!(prior.ridge.is_some());
        let delta = prior.ridge.unwrap();
        for i in 0..3 {
            assert!((prior.mean[i] - 0.004).abs() < 1e-15);
            for j in 0..3 {
                let expect = if i == j { delta } else { 0.0 };
                assert!((prior.covariance[(i, j)] - expect).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn prior_single_asset_hand_arithmetic() {
        let window = DMatrix::from_column_slice(2, 1, &[0.01, 0.03]);
        let prior = estimate_prior(&window).unwrap();
        assert!((prior.mean[0] - 0.02).abs() < 1e-15);
        assert!((prior.covariance[(0, 0)] - 0.0002).abs() < 1e-15);
    }

    #[test]
    fn prior_recovers_generator_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let true_cov: [[f64; 2]; 2] = [[0.0004, 0.0003], [0.0003, 0.0009]];
        // sample via Cholesky of the true covariance
        let l11 = true_cov[0][0].sqrt();
        let l21 = true_cov[0][1] / l11;
        let l22 = (true_cov[1][1] - l21 * l21).sqrt();
        let t = 10_000;
        let mut window = DMatrix::zeros(t, 2);
        for r in 0..t {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            window[(r, 0)] = l11 * z1;
            window[(r, 1)] = l21 * z1 + l22 * z2;
        }
        let prior = estimate_prior(&window).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let rel = (prior.covariance[(i, j)] - true_cov[i][j]).abs() / true_cov[i][j];
                assert!(rel < 0.05, "cov[{i}][{j}] off by {rel}");
            }
        }
    }

    #[test]
    fn prior_too_short_is_error() {
        let window = DMatrix::from_element(1, 2, 0.01);
        assert!(matches!(
            estimate_prior(&window),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn views_empty_set() {
        let views = build_views(&[], 4, 1.0, 1.0).unwrap();
        assert_eq!(views.n_views(), 0);
        assert_eq!(views.n_assets(), 4);
    }

    #[test]
    fn views_single_pair_plug_in_arithmetic() {
        let input = ViewInput {
            ou: ou(0.2, 0.05, 0.02, 1.5),
            spread_value: -0.15,
            col_unit: 0,
            col_hedge: 1,
        };
        let views = build_views(&[input], 2, 1.0, 1.0).unwrap();
        assert_eq!(views.picking[(0, 0)], 1.0);
        assert_eq!(views.picking[(0, 1)], -1.5);
        // q = l k (m - X) dt = 0.2 * 0.2 = 0.04
        assert!((views.expected[0] - 0.04).abs() < 1e-15);
        assert!((views.uncertainty_diag[0] - 0.0004).abs() < 1e-18);
    }

    #[test]
    fn views_two_pairs_block_structure() {
        let inputs = vec![
            ViewInput {
                ou: ou(0.2, 0.0, 0.02, 1.1),
                spread_value: 0.01,
                col_unit: 0,
                col_hedge: 1,
            },
            ViewInput {
                ou: ou(0.3, 0.0, 0.03, 0.9),
                spread_value: -0.01,
                col_unit: 2,
                col_hedge: 3,
            },
        ];
        let views = build_views(&inputs, 4, 1.0, 1.0).unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            4,
            &[1.0, -1.1, 0.0, 0.0, 0.0, 0.0, 1.0, -0.9],
        );
        assert_eq!(views.picking, expected);
    }

    #[test]
    fn views_duplicate_column_is_error() {
        let inputs = vec![
            ViewInput {
                ou: ou(0.2, 0.0, 0.02, 1.0),
                spread_value: 0.0,
                col_unit: 0,
                col_hedge: 1,
            },
            ViewInput {
                ou: ou(0.2, 0.0, 0.02, 1.0),
                spread_value: 0.0,
                col_unit: 1,
                col_hedge: 2,
            },
        ];
        assert!(matches!(
            build_views(&inputs, 3, 1.0, 1.0),
            Err(Error::ConflictingView { column: 1 })
        ));
    }

    fn random_pd_prior(n: usize, rng: &mut ChaCha8Rng) -> PriorEstimate {
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let mean = DVector::from_fn(n, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
        PriorEstimate {
            mean,
            covariance: cov,
            sample_len: 100,
            ridge: None,
        }
    }

    #[test]
    fn no_views_posterior_is_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.gen_range(1..=10);
            let prior = random_pd_prior(n, &mut rng);
            let views = ViewSet::empty(n, 1.0, 1.0);
            let post = posterior(&prior, &views, 1.0).unwrap();
            for i in 0..n {
                assert!((post.mean[i] - prior.mean[i]).abs() < 1e-12);
                for j in 0..n {
                    assert!((post.covariance[(i, j)] - prior.covariance[(i, j)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vacuous_views_recover_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = random_pd_prior(3, &mut rng);
        let mut views = build_views(
            &[ViewInput {
                ou: ou(0.2, 0.0, 0.02, 1.0),
                spread_value: -0.05,
                col_unit: 0,
                col_hedge: 1,
            }],
            3,
            1.0,
            1.0,
        )
        .unwrap();
        views.uncertainty_diag[0] = 1e12;
        let post = posterior(&prior, &views, 1.0).unwrap();
        for i in 0..3 {
            assert!((post.mean[i] - prior.mean[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn posterior_matches_two_by_two_hand_algebra() {
        // N=2, S=I, m=(0.1,0.2), P=(1,-1), q=0.05, W=0.1
        let prior = PriorEstimate {
            mean: DVector::from_column_slice(&[0.1, 0.2]),
            covariance: DMatrix::identity(2, 2),
            sample_len: 100,
            ridge: None,
        };
        let views = ViewSet {
            picking: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            expected: DVector::from_column_slice(&[0.05]),
            uncertainty_diag: DVector::from_column_slice(&[0.1]),
            conviction: 1.0,
            dt: 1.0,
        };
        let post = posterior(&prior, &views, 1.0).unwrap();

        // A = I + P'P/0.1 = [[11, -10], [-10, 11]], inv by adjugate
        let det = 11.0 * 11.0 - 100.0;
        let m = [
            [11.0 / det, 10.0 / det],
            [10.0 / det, 11.0 / det],
        ];
        let rhs = [0.1 + 0.5, 0.2 - 0.5];
        let mean0 = m[0][0] * rhs[0] + m[0][1] * rhs[1];
        let mean1 = m[1][0] * rhs[0] + m[1][1] * rhs[1];
        assert!((post.mean[0] - mean0).abs() < 1e-10);
        assert!((post.mean[1] - mean1).abs() < 1e-10);
        for i in 0..2 {
            for j in 0..2 {
                assert!((post.covariance[(i, j)] - m[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn posterior_precision_dominates_prior_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prior = random_pd_prior(4, &mut rng);
        let views = build_views(
            &[ViewInput {
                ou: ou(0.2, 0.0, 0.05, 1.2),
                spread_value: 0.08,
                col_unit: 0,
                col_hedge: 2,
            }],
            4,
            1.0,
            1.0,
        )
        .unwrap();
        let post = posterior(&prior, &views, 1.0).unwrap();
        let prior_prec = prior.covariance.clone().cholesky().unwrap().inverse();
        let post_prec = post.covariance.clone().cholesky().unwrap().inverse();
        let diff = post_prec - prior_prec;
        let eigs = diff.symmetric_eigenvalues();
        assert!(eigs.iter().all(|&e| e >= -1e-10), "eigs {eigs:?}");
    }

    #[test]
    fn shrinking_uncertainty_pulls_posterior_toward_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prior = random_pd_prior(2, &mut rng);
        let base = build_views(
            &[ViewInput {
                ou: ou(0.2, 0.0, 0.05, 1.0),
                spread_value: -0.2,
                col_unit: 0,
                col_hedge: 1,
            }],
            2,
            1.0,
            1.0,
        )
        .unwrap();
        let q = base.expected[0];
        let mut gaps = Vec::new();
        for factor in [1.0, 0.5, 0.25, 0.1, 0.01] {
            let mut views = base.clone();
            views.uncertainty_diag[0] *= factor;
            let post = posterior(&prior, &views, 1.0).unwrap();
            let achieved = (views.picking.row(0) * &post.mean)[0];
            gaps.push((achieved - q).abs());
        }
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-14, "gaps {gaps:?}");
        }
    }

    #[test]
    fn posterior_invariant_under_view_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prior = random_pd_prior(4, &mut rng);
        let a = ViewInput {
            ou: ou(0.2, 0.01, 0.05, 1.2),
            spread_value: 0.1,
            col_unit: 0,
            col_hedge: 1,
        };
        let b = ViewInput {
            ou: ou(0.4, -0.01, 0.03, 0.8),
            spread_value: -0.06,
            col_unit: 2,
            col_hedge: 3,
        };
        let v1 = build_views(&[a.clone(), b.clone()], 4, 1.0, 1.0).unwrap();
        let v2 = build_views(&[b, a], 4, 1.0, 1.0).unwrap();
        let p1 = posterior(&prior, &v1, 1.0).unwrap();
        let p2 = posterior(&prior, &v2, 1.0).unwrap();
        for i in 0..4 {
            assert!((p1.mean[i] - p2.mean[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn near_exact_view_is_honored() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prior = random_pd_prior(2, &mut rng);
        let mut views = build_views(
            &[ViewInput {
                ou: ou(0.2, 0.0, 0.05, 1.0),
                spread_value: -0.2,
                col_unit: 0,
                col_hedge: 1,
            }],
            2,
            1.0,
            1.0,
        )
        .unwrap();
        views.uncertainty_diag[0] = 1e-12;
        let post = posterior(&prior, &views, 1.0).unwrap();
        let achieved = (views.picking.row(0) * &post.mean)[0];
        assert!((achieved - views.expected[0]).abs() < 1e-6);
    }

    #[test]
    fn tau_scales_the_no_view_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let prior = random_pd_prior(3, &mut rng);
        let views = ViewSet::empty(3, 1.0, 1.0);
        let tau = 0.01;
        let post = posterior(&prior, &views, tau).unwrap();
        for i in 0..3 {
            assert!((post.mean[i] - prior.mean[i]).abs() < 1e-12);
            for j in 0..3 {
                assert!(
                    (post.covariance[(i, j)] - tau * prior.covariance[(i, j)]).abs() < 1e-14
                );
            }
        }
    }
}
