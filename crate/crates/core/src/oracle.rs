//! Monte-Carlo ground truth for the pure interaction terms of the rate tensor.
//!
//! Each replicate draws fresh latents and evaluates the alternating sum
//! `sum_U (-1)^{|S|-|U|} eta_a eta_{b_U}` over `U ⊆ S`, where `b_U` agrees with `a`
//! exactly on `U`. Its expectation is `v_S` and nothing from the closed forms is used.
//! Latents are iid across indices, so extents of 2 per mode are enough to realize every
//! sharing pattern.
//!
//! The Tucker core is common to every entry, so for Tucker the core is treated as one
//! more factor group: unless the moment lists the core, `b` reads an independently
//! drawn core. The terms are then the group-level pure terms, with `v{1}` meaning the
//! contribution of group 1 alone, core in mean mode.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::{sample_latents, LatentDraw};
use crate::model::{ModelSpec, Topology};
use crate::seed::{self, stream};
use crate::sharing::{MomentId, SharingSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

pub const MIN_MC: usize = 1000;

fn reduced(spec: &ModelSpec) -> ModelSpec {
    let mut s = spec.clone();
    s.dims = vec![2; spec.order];
    s
}

fn replicate_terms(spec: &ModelSpec, moments: &[MomentId], seed: u64) -> Result<Vec<f64>> {
    let lat = sample_latents(spec, seed)?;
    let other_core = match &lat {
        LatentDraw::Tucker { ranks, factors, .. } => {
            let LatentDraw::Tucker { core, .. } = sample_latents(spec, seed::derive(seed, stream::SECOND_CORE))? else {
                unreachable!()
            };
            Some(LatentDraw::Tucker { ranks: ranks.clone(), factors: factors.clone(), core })
        }
        _ => None,
    };
    let m = spec.order;
    let a = vec![0usize; m];
    let eta_a = lat.entry(&a);
    let b_for = |u: SharingSet| -> Vec<usize> { (1..=m).map(|k| usize::from(!u.contains(k))).collect() };
    let mut out = Vec::with_capacity(moments.len());
    for &mid in moments {
        let z = match mid {
            MomentId::MeanSquared => {
                let b = b_for(SharingSet::EMPTY);
                eta_a * other_core.as_ref().unwrap_or(&lat).entry(&b)
            }
            MomentId::Pure(s) => {
                let other = other_core.as_ref().unwrap_or(&lat);
                s.subsets()
                    .map(|u| s.mobius_sign(u) * eta_a * other.entry(&b_for(u)))
                    .sum()
            }
            MomentId::Core | MomentId::CoreWith(_) => {
                // The core counts as one more group: sharing it means reusing the same draw.
                let other = other_core.as_ref().expect("core moments need a Tucker draw");
                let s = mid.factor_set();
                let mut z = 0.0;
                for u in s.subsets() {
                    let b = b_for(u);
                    let sign = s.mobius_sign(u);
                    z += sign * eta_a * (lat.entry(&b) - other.entry(&b));
                }
                z
            }
        };
        out.push(z);
    }
    Ok(out)
}

/// Monte-Carlo estimates for several observables from one set of replicates.
pub fn oracle_batch(spec: &ModelSpec, moments: &[MomentId], n_mc: usize, seed: u64) -> Result<Vec<OracleEstimate>> {
    spec.validate()?;
    if n_mc < MIN_MC {
        return Err(Error::Config(format!("the oracle needs at least {MIN_MC} replicates, got {n_mc}")));
    }
    for &mid in moments {
        if mid.factor_set().max_mode() > spec.order {
            return Err(Error::Unsupported(format!("{mid} refers to a mode above {}", spec.order)));
        }
        if mid.core_in_variance() && spec.topology != Topology::Tucker {
            return Err(Error::Unsupported(format!("{mid} exists only for Tucker models")));
        }
    }
    let small = reduced(spec);
    let rows: Vec<Vec<f64>> = (0..n_mc)
        .into_par_iter()
        .map(|r| replicate_terms(&small, moments, seed::derive_path(seed, &[stream::ORACLE, r as u64])))
        .collect::<Result<_>>()?;
    let n = n_mc as f64;
    Ok((0..moments.len())
        .map(|j| {
            if moments[j] == MomentId::Pure(SharingSet::EMPTY) {
                return OracleEstimate { estimate: 0.0, std_error: 0.0 };
            }
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            OracleEstimate { estimate: mean, std_error: (var / n).sqrt() }
        })
        .collect())
}

/// Monte-Carlo estimate of one observable of the rate tensor.
pub fn population_pure_term_oracle(spec: &ModelSpec, moment: MomentId, n_mc: usize, seed: u64) -> Result<OracleEstimate> {
    Ok(oracle_batch(spec, &[moment], n_mc, seed)?[0])
}
