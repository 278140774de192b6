//! Closed-form rank estimators built from pure interaction terms.

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::moments::MomentTable;
use crate::sharing::SharingSet;

/// A rank estimate of the form `numerator / denominator`, kept apart so the pipeline
/// can regularize the denominator across bootstrap replicates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioParts {
    pub label: String,
    pub numerator: f64,
    pub denominator: f64,
}

impl RatioParts {
    pub fn value(&self) -> f64 {
        self.numerator / self.denominator
    }

    fn checked(self) -> Result<Self> {
        if self.numerator.is_finite() && self.denominator.is_finite() {
            Ok(self)
        } else {
            Err(Error::Numeric(format!("{}: non-finite ratio parts {self:?}", self.label)))
        }
    }
}

fn v(table: &MomentTable, modes: &[usize]) -> Result<f64> {
    table.pure(SharingSet::try_new(modes)?)
}

/// `r = v_{p,q} E[Y]^2 / (v_p v_q)` for any two distinct modes.
pub fn cp_rank_ratio(table: &MomentTable, p: usize, q: usize) -> Result<RatioParts> {
    if p == q {
        return Err(Error::Config(format!("CP ratio needs two distinct modes, got {p} twice")));
    }
    RatioParts {
        label: "r".into(),
        numerator: v(table, &[p, q])? * table.mean_sq(),
        denominator: v(table, &[p])? * v(table, &[q])?,
    }
    .checked()
}

/// Bond `p` of an order-`m` tensor train.
///
/// Left bond: `v_{12} v_3 / (v_2 v_{13})`. Right bond for `m >= 4`:
/// `v_{m-1,m} v_{m-3} / (v_m v_{m-3,m-1})`, and its mirror image of the left formula
/// when `m = 3`. Interior bonds use
/// `v_{p-1,p,p+1} v_{p-1,p+2} / (v_{p-1,p+1} v_{p-1,p,p+2})`.
pub fn tt_rank_ratio(table: &MomentTable, p: usize, m: usize) -> Result<RatioParts> {
    if m < 3 {
        return Err(Error::Unsupported(
            "a TT model of order 2 is a matrix factorization; use the CP estimator".into(),
        ));
    }
    if p == 0 || p >= m {
        return Err(Error::Config(format!("TT bond {p} outside 1..{}", m - 1)));
    }
    let (num, den) = if p == 1 {
        (v(table, &[1, 2])? * v(table, &[3])?, v(table, &[2])? * v(table, &[1, 3])?)
    } else if p == m - 1 && m == 3 {
        (v(table, &[2, 3])? * v(table, &[1])?, v(table, &[2])? * v(table, &[1, 3])?)
    } else if p == m - 1 {
        (
            v(table, &[m - 1, m])? * v(table, &[m - 3])?,
            v(table, &[m])? * v(table, &[m - 3, m - 1])?,
        )
    } else {
        (
            v(table, &[p - 1, p, p + 1])? * v(table, &[p - 1, p + 2])?,
            v(table, &[p - 1, p + 1])? * v(table, &[p - 1, p, p + 2])?,
        )
    };
    RatioParts { label: format!("r{p}"), numerator: num, denominator: den }.checked()
}

fn next(p: usize, m: usize) -> usize {
    p % m + 1
}

fn prev(p: usize, m: usize) -> usize {
    if p == 1 {
        m
    } else {
        p - 1
    }
}

/// `xi_p = E[Y]^2 v_{p,p+1} / (v_p v_{p+1})` with cyclic indices.
pub fn tr_xi_parts(table: &MomentTable, p: usize, m: usize) -> Result<RatioParts> {
    if m < 3 || p == 0 || p > m {
        return Err(Error::Config(format!("TR mode {p} invalid for order {m}")));
    }
    let q = next(p, m);
    RatioParts {
        label: format!("xi{p}"),
        numerator: table.mean_sq() * v(table, &[p, q])?,
        denominator: v(table, &[p])? * v(table, &[q])?,
    }
    .checked()
}

pub fn tr_xi(table: &MomentTable, p: usize, m: usize) -> Result<f64> {
    let x = tr_xi_parts(table, p, m)?.value();
    if !(x > 0.0) {
        return Err(Error::Domain(format!("xi{p} = {x} is not positive")));
    }
    Ok(x)
}

/// Ring ratios `rho_p = xi_p xi_{p-1} / xi_{p+1}`.
///
/// Each `xi_p` equals the bond rank `r_p` of the ring, so `rho_p = r_p r_{p-1} / r_{p+1}`,
/// which is the right-hand side of the circulant system solved by [`tr_solve`].
pub fn ring_ratios(xis: &[f64]) -> Vec<f64> {
    let m = xis.len();
    (1..=m)
        .map(|p| xis[p - 1] * xis[prev(p, m) - 1] / xis[next(p, m) - 1])
        .collect()
}

/// The cyclic system `x_p + x_{p-1} - x_{p+1} = psi_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct CirculantSystem {
    pub size: usize,
    pub eigenvalues: Vec<Complex64>,
}

impl CirculantSystem {
    pub fn new(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::Unsupported(
                "a ring of order 2 reduces to a matrix factorization".into(),
            ));
        }
        let eigenvalues = (0..size)
            .map(|k| Complex64::new(1.0, 2.0 * (2.0 * PI * k as f64 / size as f64).sin()))
            .collect();
        Ok(CirculantSystem { size, eigenvalues })
    }

    /// Forward transform `X_k = sum_p x_p e^{+2 pi i p k / M}`, the sign under which the
    /// system diagonalizes with the eigenvalues above.
    fn dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
        let m = x.len();
        (0..m)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(p, &xp)| xp * Complex64::from_polar(1.0, sign * 2.0 * PI * (p * k % m) as f64 / m as f64))
                    .sum()
            })
            .collect()
    }

    pub fn solve(&self, psi: &[f64]) -> Result<Vec<f64>> {
        if psi.len() != self.size {
            return Err(Error::Config(format!("expected {} values, got {}", self.size, psi.len())));
        }
        let z: Vec<Complex64> = psi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let hat: Vec<Complex64> = Self::dft(&z, 1.0)
            .into_iter()
            .zip(&self.eigenvalues)
            .map(|(h, l)| h / l)
            .collect();
        let m = self.size as f64;
        Ok(Self::dft(&hat, -1.0).into_iter().map(|c| c.re / m).collect())
    }

    /// Largest absolute violation of the difference equation.
    pub fn residual(&self, x: &[f64], psi: &[f64]) -> f64 {
        let m = self.size;
        (1..=m)
            .map(|p| (x[p - 1] + x[prev(p, m) - 1] - x[next(p, m) - 1] - psi[p - 1]).abs())
            .fold(0.0, f64::max)
    }
}

/// Solution of a ring solve: ranks and the residual of the log-space system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RingSolution {
    pub ranks: Vec<f64>,
    pub residual: f64,
}

/// Solves `x_p + x_{p-1} - x_{p+1} = log rho_p` and returns `r_p = exp(x_p)`.
pub fn tr_solve(rhos: &[f64]) -> Result<RingSolution> {
    let sys = CirculantSystem::new(rhos.len())?;
    if let Some((i, r)) = rhos.iter().enumerate().find(|(_, &r)| !(r > 0.0)) {
        return Err(Error::Domain(format!("ring ratio {} = {r} is not positive", i + 1)));
    }
    let psi: Vec<f64> = rhos.iter().map(|r| r.ln()).collect();
    let x = sys.solve(&psi)?;
    let residual = sys.residual(&x, &psi);
    Ok(RingSolution { ranks: x.iter().map(|v| v.exp()).collect(), residual })
}

/// TR ranks from a moment table, without regularization.
pub fn tr_ranks(table: &MomentTable, m: usize) -> Result<RingSolution> {
    let xis = (1..=m).map(|p| tr_xi(table, p, m)).collect::<Result<Vec<_>>>()?;
    tr_solve(&ring_ratios(&xis))
}

/// `1.96 * sd(dens) / sqrt(B)`, or 0 with a warning when there are fewer than two samples.
pub fn regularization_epsilon(dens: &[f64]) -> f64 {
    let b = dens.len();
    if b < 2 {
        warn!("fewer than two denominators; skipping ratio regularization");
        return 0.0;
    }
    let mean = dens.iter().sum::<f64>() / b as f64;
    let var = dens.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    1.96 * var.sqrt() / (b as f64).sqrt()
}

/// `sign(den) * num / (|den| + eps)`, where `sign(0) = 0`.
pub fn regularized_ratio(num: f64, den: f64, eps: f64) -> f64 {
    if den == 0.0 {
        return 0.0;
    }
    den.signum() * num / (den.abs() + eps)
}

/// Regularized estimate for every replicate, with the shrinkage term computed from all of them.
pub fn regularize_replicates(nums: &[f64], dens: &[f64]) -> Vec<f64> {
    let eps = regularization_epsilon(dens);
    nums.iter().zip(dens).map(|(&n, &d)| regularized_ratio(n, d, eps)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circulant_eigenvalues_for_three() {
        let sys = CirculantSystem::new(3).unwrap();
        let s3 = 3f64.sqrt();
        let want = [(1.0, 0.0), (1.0, s3), (1.0, -s3)];
        for (l, (re, im)) in sys.eigenvalues.iter().zip(want) {
            assert!((l.re - re).abs() < 1e-12 && (l.im - im).abs() < 1e-12, "{l}");
        }
        assert!(sys.eigenvalues.iter().all(|l| l.norm() >= 1.0));
        assert!(CirculantSystem::new(2).is_err());
    }

    #[test]
    fn ring_solve_recovers_ranks() {
        let r = [2.0, 3.0, 4.0];
        let rho: Vec<f64> = (0..3).map(|p| r[p] * r[(p + 2) % 3] / r[(p + 1) % 3]).collect();
        assert!((rho[0] - 8.0 / 3.0).abs() < 1e-12);
        let sol = tr_solve(&rho).unwrap();
        for (a, b) in sol.ranks.iter().zip(r) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn constant_ring_is_fixed_point() {
        let sol = tr_solve(&[5.0; 6]).unwrap();
        assert!(sol.ranks.iter().all(|x| (x - 5.0).abs() < 1e-9));
        assert!(tr_solve(&[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn regularized_ratio_examples() {
        assert_eq!(regularized_ratio(6.0, 3.0, 0.0), 2.0);
        assert_eq!(regularized_ratio(6.0, -3.0, 1.0), -1.5);
        assert_eq!(regularization_epsilon(&[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(regularization_epsilon(&[2.0]), 0.0);
        assert_eq!(regularize_replicates(&[4.0, 6.0], &[2.0, 2.0]), [2.0, 3.0]);
    }
}
