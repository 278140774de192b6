//! Signal-to-noise ratio of pure-term estimates under Gamma priors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::sample_latents;
use crate::model::{ModelSpec, ObservationModel};
use crate::seed::{self, stream};
use crate::sharing::SharingSet;

/// Raw second and fourth moments of a Gamma variable with mean `mu` and coefficient of
/// variation `cv`: `m2 = mu^2 (1 + cv^2)`, `m4 = mu^4 (1 + cv^2)(1 + 2 cv^2)(1 + 3 cv^2)`.
pub fn gamma_raw_moments(mu: f64, cv: f64) -> (f64, f64) {
    let c2 = cv * cv;
    let mu2 = mu * mu;
    (mu2 * (1.0 + c2), mu2 * mu2 * (1.0 + c2) * (1.0 + 2.0 * c2) * (1.0 + 3.0 * c2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrQuery {
    pub order: usize,
    pub size_s: usize,
    pub mu: f64,
    pub cv: f64,
    pub n: usize,
}

/// Leading-order SNR with equal Gamma priors on every mode:
/// `sqrt(n) * (sigma^2 / sqrt(m4))^|S| * (mu^2 / m2)^(M - |S|)`.
///
/// Both factors are ratios of moments of equal degree, so the value does not depend on `mu`.
pub fn theoretical_snr(q: &SnrQuery) -> Result<f64> {
    if !(q.mu > 0.0 && q.cv > 0.0) || q.n == 0 || q.size_s > q.order {
        return Err(Error::Config(format!("invalid SNR query {q:?}")));
    }
    let (m2, m4) = gamma_raw_moments(q.mu, q.cv);
    let var = q.mu * q.mu * q.cv * q.cv;
    let shared = (var / m4.sqrt()).powi(q.size_s as i32);
    let free = (q.mu * q.mu / m2).powi((q.order - q.size_s) as i32);
    Ok((q.n as f64).sqrt() * shared * free)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmpiricalSnr {
    pub snr: f64,
    pub mean: f64,
    pub sd: f64,
    pub replicates: usize,
}

fn observe<R: rand::Rng>(eta: f64, obs: &ObservationModel, rng: &mut R) -> Result<f64> {
    use rand_distr::{Distribution, Normal, Poisson};
    match *obs {
        ObservationModel::Poisson => Poisson::new(eta)
            .map(|p| p.sample(rng))
            .map_err(|e| Error::Domain(format!("Poisson({eta}): {e}"))),
        ObservationModel::Gaussian { variance } if variance == 0.0 => Ok(eta),
        ObservationModel::Gaussian { variance } => Normal::new(eta, variance.sqrt())
            .map(|n| n.sample(rng))
            .map_err(|e| Error::Config(format!("Normal noise: {e}"))),
    }
}

/// One pair-sample covariance in which every pair comes from its own latent draw.
fn iid_pair_covariance(small: &ModelSpec, t: SharingSet, n_pairs: usize, seed: u64) -> Result<f64> {
    let m = small.order;
    let a = vec![0usize; m];
    let b: Vec<usize> = (1..=m).map(|k| usize::from(!t.contains(k))).collect();
    let mut noise = seed::rng(seed::derive(seed, stream::OBSERVATION));
    let mut ys = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let lat = sample_latents(small, seed::derive(seed, i as u64))?;
        let ya = observe(lat.entry(&a), &small.obs, &mut noise)?;
        let yb = observe(lat.entry(&b), &small.obs, &mut noise)?;
        ys.push((ya, yb));
    }
    let mean = ys.iter().map(|(x, y)| x + y).sum::<f64>() / (2 * n_pairs) as f64;
    Ok(ys.iter().map(|(x, y)| (x - mean) * (y - mean)).sum::<f64>() / (n_pairs - 1) as f64)
}

/// `mean / sd` of the pure-term estimate over independent replicates.
///
/// Each covariance uses `n_pairs` pairs, and each pair is drawn from fresh latents, which
/// is the independent-pair regime the leading-order formula describes.
pub fn empirical_snr(spec: &ModelSpec, s: SharingSet, n_pairs: usize, replicates: usize, seed: u64) -> Result<EmpiricalSnr> {
    spec.validate()?;
    if s.is_empty() {
        return Err(Error::Config("the empty set has no pure term".into()));
    }
    if s.max_mode() > spec.order || s == SharingSet::full(spec.order) {
        return Err(Error::Config(format!("sharing set {s} is not a proper subset of the modes")));
    }
    if replicates < 30 {
        return Err(Error::Config(format!("need at least 30 replicates, got {replicates}")));
    }
    if n_pairs < 2 {
        return Err(Error::Config("need at least 2 pairs".into()));
    }
    let mut small = spec.clone();
    small.dims = vec![2; spec.order];
    let estimates: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let rep = seed::derive_path(seed, &[stream::SNR, r as u64]);
            let mut v = 0.0;
            for t in s.nonempty_subsets() {
                v += s.mobius_sign(t) * iid_pair_covariance(&small, t, n_pairs, seed::derive(rep, t.bits() as u64))?;
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let n = replicates as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = (estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Numeric("pure-term estimates have zero spread; SNR undefined".into()));
    }
    Ok(EmpiricalSnr { snr: mean / sd, mean, sd, replicates })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrGrid {
    pub cvs: Vec<f64>,
    pub mus: Vec<f64>,
    pub orders: Vec<usize>,
    pub sizes: Vec<usize>,
    pub n: usize,
}

/// `count` points spaced evenly in log scale from `lo` to `hi`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

impl Default for SnrGrid {
    fn default() -> Self {
        SnrGrid {
            cvs: logspace(0.1, 5.0, 50),
            mus: vec![0.5, 1.0, 2.0],
            orders: vec![3, 4, 5],
            sizes: vec![1, 2],
            n: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    #[serde(rename = "M")]
    pub order: usize,
    pub size_s: usize,
    pub mu: f64,
    pub cv: f64,
    pub n: usize,
    pub snr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnrSweep {
    pub rows: Vec<SnrRow>,
    /// `(M, |S|, mu, cv maximizing the SNR)`.
    pub argmax: Vec<(usize, usize, f64, f64)>,
}

pub fn snr_sweep(grid: &SnrGrid) -> Result<SnrSweep> {
    let mut rows = Vec::new();
    let mut argmax = Vec::new();
    for &order in &grid.orders {
        for &size_s in &grid.sizes {
            if size_s == 0 || size_s >= order {
                continue;
            }
            for &mu in &grid.mus {
                let mut best = (f64::NEG_INFINITY, f64::NAN);
                for &cv in &grid.cvs {
                    let snr = theoretical_snr(&SnrQuery { order, size_s, mu, cv, n: grid.n })?;
                    if snr > best.0 {
                        best = (snr, cv);
                    }
                    rows.push(SnrRow { order, size_s, mu, cv, n: grid.n, snr });
                }
                argmax.push((order, size_s, mu, best.1));
            }
        }
    }
    Ok(SnrSweep { rows, argmax })
}

impl SnrSweep {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}
