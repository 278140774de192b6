//! Bootstrap estimation of ranks from an observed tensor.
//!
//! Two passes: every replicate first produces the raw numerator and denominator of
//! each ratio; the shrinkage term for a ratio then comes from the spread of its
//! denominators over all replicates, and only then are replicate estimates formed.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    cp_rank_ratio, regularization_epsilon, regularized_ratio, ring_ratios, tr_solve, tr_xi_parts,
    tt_rank_ratio, RatioParts,
};
use crate::model::Topology;
use crate::moments::{compute_moment_table, required_sharing_sets_for, DEFAULT_PAIRS};
use crate::seed::{self, stream, DEFAULT_SEED};
use crate::sharing::SharingSet;
use crate::tensor::{strides, DenseTensor, EntrySource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub bootstrap: usize,
    pub n_pairs: usize,
    pub alpha: f64,
    pub normalize: bool,
    /// 1-based mode whose slices are resampled.
    pub block_mode: usize,
    pub seed: u64,
    /// Average the CP estimate over every mode pair instead of using modes 1 and 2.
    pub cp_average_pairs: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bootstrap: 50,
            n_pairs: DEFAULT_PAIRS,
            alpha: 0.05,
            normalize: false,
            block_mode: 1,
            seed: DEFAULT_SEED,
            cp_average_pairs: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, order: usize) -> Result<()> {
        if self.bootstrap < 2 {
            return Err(Error::Config(format!("need at least 2 bootstrap replicates, got {}", self.bootstrap)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.block_mode == 0 || self.block_mode > order {
            return Err(Error::Config(format!("block mode {} outside 1..={order}", self.block_mode)));
        }
        if self.n_pairs < 2 {
            return Err(Error::Config(format!("need at least 2 pairs per set, got {}", self.n_pairs)));
        }
        Ok(())
    }
}

/// Resampling map along one mode: output slice `i` is input slice `map[i]`.
fn draw_slice_map(n: usize, seed: u64) -> Vec<usize> {
    if n < 2 {
        return (0..n).collect();
    }
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// A bootstrap replicate that reads through to the original tensor.
pub struct Resampled<'a> {
    base: &'a DenseTensor,
    mode: usize,
    stride: usize,
    map: Vec<usize>,
    mean: f64,
}

impl<'a> Resampled<'a> {
    /// `slice_sums[i]` is the sum of slice `i` of `base` along `mode` (0-based).
    fn new(base: &'a DenseTensor, mode: usize, map: Vec<usize>, slice_sums: &[f64]) -> Self {
        let total: f64 = map.iter().map(|&i| slice_sums[i]).sum();
        Resampled {
            base,
            mode,
            stride: strides(base.dims())[mode],
            mean: total / base.len() as f64,
            map,
        }
    }
}

impl EntrySource for Resampled<'_> {
    fn dims(&self) -> &[usize] {
        self.base.dims()
    }

    fn get(&self, idx: &[usize]) -> f64 {
        let i = idx[self.mode];
        let flat = self.base.flat_index(idx) + self.map[i] * self.stride - i * self.stride;
        self.base.values()[flat]
    }

    fn mean(&self) -> f64 {
        self.mean
    }
}

fn slice_sums(y: &DenseTensor, mode: usize) -> Vec<f64> {
    let dims = y.dims();
    let stride = strides(dims)[mode];
    let n = dims[mode];
    let mut sums = vec![0.0; n];
    for (flat, v) in y.values().iter().enumerate() {
        sums[(flat / stride) % n] += v;
    }
    sums
}

/// Resamples the slices along `block_mode` (1-based) with replacement.
pub fn block_bootstrap(y: &DenseTensor, block_mode: usize, seed: u64) -> Result<DenseTensor> {
    if block_mode == 0 || block_mode > y.order() {
        return Err(Error::Config(format!("block mode {block_mode} outside 1..={}", y.order())));
    }
    let map = draw_slice_map(y.dims()[block_mode - 1], seed);
    resample_with_map(y, block_mode, &map)
}

/// Applies an explicit slice map along `block_mode` (1-based).
pub fn resample_with_map(y: &DenseTensor, block_mode: usize, map: &[usize]) -> Result<DenseTensor> {
    let mode = block_mode - 1;
    if map.len() != y.dims()[mode] || map.iter().any(|&i| i >= y.dims()[mode]) {
        return Err(Error::Config("slice map does not fit the tensor".into()));
    }
    let view = Resampled::new(y, mode, map.to_vec(), &slice_sums(y, mode));
    let values = (0..y.len()).map(|f| view.get(&y.multi_index(f))).collect();
    DenseTensor::new(y.dims().to_vec(), values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub label: String,
    pub samples: Vec<f64>,
    /// `None` when too few replicates were valid.
    pub median: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub n_invalid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub topology: Topology,
    pub estimates: Vec<RankEstimate>,
    /// Largest circulant residual over valid TR replicates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_circulant_residual: Option<f64>,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and the `(alpha/2, 1 - alpha/2)` percentile interval, by linear interpolation.
pub fn summarize(samples: &[f64], alpha: f64) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot summarize an empty sample".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite bootstrap sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok((percentile(&s, 0.5), percentile(&s, alpha / 2.0), percentile(&s, 1.0 - alpha / 2.0)))
}

/// Valid replicates needed before a rank is reported.
pub fn min_valid(b: usize) -> usize {
    b.min(10.max(b.div_ceil(4)))
}

fn sets_for(topology: Topology, m: usize, cfg: &PipelineConfig) -> Result<Vec<SharingSet>> {
    let mut sets = required_sharing_sets_for(topology, m)?;
    if topology == Topology::CP && cfg.cp_average_pairs {
        for p in 1..=m {
            for q in p + 1..=m {
                sets.push(SharingSet::new(&[p, q]));
            }
        }
    }
    Ok(sets)
}

fn replicate_parts(
    y: &DenseTensor,
    topology: Topology,
    cfg: &PipelineConfig,
    sets: &[SharingSet],
    sums: &[f64],
    b: usize,
) -> Result<Vec<RatioParts>> {
    let m = y.order();
    let rep_seed = seed::derive_path(cfg.seed, &[stream::REPLICATE, b as u64]);
    let mode = cfg.block_mode - 1;
    let map = draw_slice_map(y.dims()[mode], seed::derive(rep_seed, stream::BOOTSTRAP));
    let view = Resampled::new(y, mode, map, sums);
    let table = compute_moment_table(&view, sets, cfg.n_pairs, seed::derive(rep_seed, stream::MOMENTS), cfg.normalize)?;
    match topology {
        Topology::CP if cfg.cp_average_pairs => {
            let mut out = Vec::new();
            for p in 1..=m {
                for q in p + 1..=m {
                    out.push(cp_rank_ratio(&table, p, q)?);
                }
            }
            Ok(out)
        }
        Topology::CP => Ok(vec![cp_rank_ratio(&table, 1, 2)?]),
        Topology::TT => (1..m).map(|p| tt_rank_ratio(&table, p, m)).collect(),
        Topology::TR => (1..=m).map(|p| tr_xi_parts(&table, p, m)).collect(),
        Topology::Tucker => unreachable!(),
    }
}

fn finish(label: String, per_rep: Vec<Option<f64>>, alpha: f64) -> Result<RankEstimate> {
    let b = per_rep.len();
    let samples: Vec<f64> = per_rep.into_iter().flatten().filter(|x| x.is_finite()).collect();
    let n_invalid = b - samples.len();
    let (median, ci) = if samples.len() >= min_valid(b) {
        let (med, lo, hi) = summarize(&samples, alpha)?;
        (Some(med), Some([lo, hi]))
    } else {
        warn!("{label}: only {} of {b} replicates valid; estimate unavailable", samples.len());
        (None, None)
    };
    Ok(RankEstimate { label, samples, median, ci, n_invalid })
}

pub fn run_pipeline(y: &DenseTensor, topology: Topology, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let m = y.order();
    if topology == Topology::Tucker {
        return Err(Error::Unsupported(
            "Tucker ranks are not identifiable from first and second moments".into(),
        ));
    }
    cfg.validate(m)?;
    let sets = sets_for(topology, m, cfg)?;
    let sums = slice_sums(y, cfg.block_mode - 1);
    let parts: Vec<Vec<RatioParts>> = (0..cfg.bootstrap)
        .into_par_iter()
        .map(|b| replicate_parts(y, topology, cfg, &sets, &sums, b))
        .collect::<Result<_>>()?;
    let n_parts = parts[0].len();
    let regularized: Vec<Vec<f64>> = (0..n_parts)
        .map(|j| {
            let dens: Vec<f64> = parts.iter().map(|r| r[j].denominator).collect();
            let eps = regularization_epsilon(&dens);
            parts.iter().map(|r| regularized_ratio(r[j].numerator, r[j].denominator, eps)).collect()
        })
        .collect();
    let per_rep = |j: usize| -> Vec<Option<f64>> { regularized[j].iter().map(|&x| Some(x)).collect() };
    let mut max_residual = None;
    let estimates = match topology {
        Topology::CP => {
            let avg: Vec<Option<f64>> = (0..cfg.bootstrap)
                .map(|b| Some((0..n_parts).map(|j| regularized[j][b]).sum::<f64>() / n_parts as f64))
                .collect();
            vec![finish("r".into(), avg, cfg.alpha)?]
        }
        Topology::TT => (0..n_parts)
            .map(|j| finish(parts[0][j].label.clone(), per_rep(j), cfg.alpha))
            .collect::<Result<_>>()?,
        Topology::TR => {
            let mut ranks: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(cfg.bootstrap); m];
            let mut worst: f64 = 0.0;
            for b in 0..cfg.bootstrap {
                let xis: Vec<f64> = (0..m).map(|j| regularized[j][b]).collect();
                let sol = if xis.iter().all(|&x| x > 0.0 && x.is_finite()) {
                    tr_solve(&ring_ratios(&xis)).ok()
                } else {
                    None
                };
                match sol {
                    Some(s) => {
                        worst = worst.max(s.residual);
                        for (p, r) in s.ranks.into_iter().enumerate() {
                            ranks[p].push(Some(r));
                        }
                    }
                    None => ranks.iter_mut().for_each(|v| v.push(None)),
                }
            }
            max_residual = Some(worst);
            ranks
                .into_iter()
                .enumerate()
                .map(|(p, v)| finish(format!("r{}", p + 1), v, cfg.alpha))
                .collect::<Result<_>>()?
        }
        Topology::Tucker => unreachable!(),
    };
    Ok(PipelineReport { topology, estimates, max_circulant_residual: max_residual })
}

impl PipelineReport {
    pub fn to_json(&self, with_samples: bool) -> Result<String> {
        if with_samples {
            return Ok(serde_json::to_string_pretty(self)?);
        }
        let mut slim = self.clone();
        slim.estimates.iter_mut().for_each(|e| e.samples.clear());
        let mut v = serde_json::to_value(&slim)?;
        if let Some(arr) = v.get_mut("estimates").and_then(|e| e.as_array_mut()) {
            for e in arr {
                if let Some(o) = e.as_object_mut() {
                    o.remove("samples");
                }
            }
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// One row per (rank, replicate sample).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["label", "replicate", "value"])?;
        for e in &self.estimates {
            for (i, s) in e.samples.iter().enumerate() {
                wr.write_record([e.label.clone(), i.to_string(), format!("{s}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}
