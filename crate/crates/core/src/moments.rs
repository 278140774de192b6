//! Exact-sharing covariances and pure interaction terms.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiability::analytic_value;
use crate::model::{ModelSpec, Topology};
use crate::seed;
use crate::sharing::{MomentId, SharingSet};
use crate::tensor::EntrySource;

/// Added to the squared mean before normalizing, so an all-zero tensor does not divide by zero.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Pairs per sharing set when the caller does not choose.
pub const DEFAULT_PAIRS: usize = 50_000;

/// Sharing sets whose pure terms the estimators for `spec` read.
pub fn required_sharing_sets(spec: &ModelSpec) -> Result<Vec<SharingSet>> {
    required_sharing_sets_for(spec.topology, spec.order)
}

pub fn required_sharing_sets_for(topology: Topology, m: usize) -> Result<Vec<SharingSet>> {
    let s = SharingSet::new;
    let singletons = (1..=m).map(SharingSet::singleton);
    let mut out: BTreeSet<SharingSet> = BTreeSet::new();
    match topology {
        Topology::CP => {
            if m < 3 {
                return Err(Error::Unsupported(
                    "CP needs order >= 3: at order 2 the pair {1,2} is the whole index".into(),
                ));
            }
            out.extend(singletons);
            out.insert(s(&[1, 2]));
        }
        Topology::TT => {
            if m < 3 {
                return Err(Error::Unsupported(
                    "a TT model of order 2 is a matrix factorization; use the CP estimator".into(),
                ));
            }
            out.extend(singletons);
            // Left boundary.
            out.extend([s(&[1, 2]), s(&[1, 3])]);
            if m == 3 {
                out.insert(s(&[2, 3]));
            } else {
                // Right boundary.
                out.extend([s(&[m - 1, m]), s(&[m - 3, m - 1])]);
                // Interior bonds 2..=m-2.
                for p in 2..=m - 2 {
                    out.extend([
                        s(&[p - 1, p, p + 1]),
                        s(&[p - 1, p + 2]),
                        s(&[p - 1, p + 1]),
                        s(&[p - 1, p, p + 2]),
                    ]);
                }
                if m == 4 {
                    out.insert(s(&[1, 3, 4]));
                }
            }
        }
        Topology::TR => {
            if m < 3 {
                return Err(Error::Unsupported(
                    "a TR model of order 2 reduces to a matrix factorization".into(),
                ));
            }
            out.extend(singletons);
            for p in 1..=m {
                out.insert(s(&[p, p % m + 1]));
            }
        }
        Topology::Tucker => out.extend(singletons),
    }
    Ok(out.into_iter().collect())
}

/// All nonempty subsets of the given sets, sorted.
pub fn subset_closure(sets: &[SharingSet]) -> Vec<SharingSet> {
    let mut out = BTreeSet::new();
    for s in sets {
        out.extend(s.nonempty_subsets());
    }
    out.into_iter().collect()
}

/// Draws index pairs sharing exactly the modes in `S`.
pub struct PairSampler {
    dims: Vec<usize>,
    set: SharingSet,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(dims: &[usize], set: SharingSet, seed: u64) -> Result<Self> {
        let m = dims.len();
        if set.max_mode() > m {
            return Err(Error::Config(format!("sharing set {set} exceeds order {m}")));
        }
        if set == SharingSet::full(m) {
            return Err(Error::Config(format!(
                "sharing set {set} covers every mode, so both indices of a pair would coincide"
            )));
        }
        for (k, &d) in dims.iter().enumerate() {
            if !set.contains(k + 1) && d < 2 {
                return Err(Error::Config(format!(
                    "mode {} has extent {d}, so no pair can differ there as {set} requires",
                    k + 1
                )));
            }
        }
        Ok(PairSampler { dims: dims.to_vec(), set, rng: seed::rng(seed) })
    }

    /// Fills `a` and `b` with the next pair.
    pub fn next_into(&mut self, a: &mut [usize], b: &mut [usize]) {
        for (k, &d) in self.dims.iter().enumerate() {
            let i = self.rng.random_range(0..d);
            a[k] = i;
            b[k] = if self.set.contains(k + 1) {
                i
            } else {
                (i + 1 + self.rng.random_range(0..d - 1)) % d
            };
        }
    }
}

impl Iterator for PairSampler {
    type Item = (Vec<usize>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let m = self.dims.len();
        let (mut a, mut b) = (vec![0; m], vec![0; m]);
        self.next_into(&mut a, &mut b);
        Some((a, b))
    }
}

/// `n` independent uniformly drawn pairs sharing exactly `set`.
pub fn sample_sharing_pairs(
    dims: &[usize],
    set: SharingSet,
    n: usize,
    seed: u64,
) -> Result<impl Iterator<Item = (Vec<usize>, Vec<usize>)>> {
    Ok(PairSampler::new(dims, set, seed)?.take(n))
}

/// Pair-sample covariance around a supplied mean, with an `n - 1` denominator.
pub fn estimate_covariance<T: EntrySource + ?Sized>(
    y: &T,
    set: SharingSet,
    n_pairs: usize,
    seed: u64,
    mean: f64,
) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    if n_pairs < 2 {
        return Err(Error::Config(format!("need at least 2 pairs, got {n_pairs}")));
    }
    let mut sampler = PairSampler::new(y.dims(), set, seed)?;
    let m = y.dims().len();
    let (mut a, mut b) = (vec![0; m], vec![0; m]);
    let mut acc = 0.0;
    for _ in 0..n_pairs {
        sampler.next_into(&mut a, &mut b);
        acc += (y.get(&a) - mean) * (y.get(&b) - mean);
    }
    Ok(acc / (n_pairs - 1) as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    /// Global mean, always before any normalization.
    pub mean: f64,
    pub cov: BTreeMap<SharingSet, f64>,
    pub pure: BTreeMap<SharingSet, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub n_pairs: BTreeMap<SharingSet, usize>,
    pub normalized: bool,
}

impl MomentTable {
    pub fn new(mean: f64) -> Self {
        MomentTable { mean, ..Default::default() }
    }

    pub fn cov(&self, s: SharingSet) -> Result<f64> {
        if s.is_empty() {
            return Ok(0.0);
        }
        self.cov.get(&s).copied().ok_or(Error::MissingMoment(s))
    }

    pub fn pure(&self, s: SharingSet) -> Result<f64> {
        self.pure.get(&s).copied().ok_or(Error::MissingMoment(s))
    }

    /// The squared-mean factor on the same scale as the stored pure terms.
    pub fn mean_sq(&self) -> f64 {
        let m2 = self.mean * self.mean;
        if self.normalized {
            m2 / (m2 + NORMALIZE_EPS)
        } else {
            m2
        }
    }

    /// Divides every pure term by the squared mean. A second call does nothing.
    pub fn normalize(&mut self) {
        if self.normalized {
            return;
        }
        let d = self.mean * self.mean + NORMALIZE_EPS;
        for v in self.pure.values_mut() {
            *v /= d;
        }
        self.normalized = true;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Inclusion-exclusion over the subsets of `set`, with the empty covariance taken as 0.
/// The result is also stored in the table.
pub fn mobius_invert(table: &mut MomentTable, set: SharingSet) -> Result<f64> {
    let mut v = 0.0;
    for t in set.nonempty_subsets() {
        v += set.mobius_sign(t) * table.cov(t)?;
    }
    table.pure.insert(set, v);
    Ok(v)
}

/// Mean, covariances over the subset closure of `sets`, and pure terms for every set
/// in that closure. Each set draws pairs from its own derived stream.
pub fn compute_moment_table<T: EntrySource + ?Sized>(
    y: &T,
    sets: &[SharingSet],
    n_pairs: usize,
    seed: u64,
    normalize: bool,
) -> Result<MomentTable> {
    let mean = y.mean();
    let closure = subset_closure(sets);
    let covs: Vec<f64> = closure
        .par_iter()
        .map(|&s| estimate_covariance(y, s, n_pairs, seed::derive(seed, s.bits() as u64), mean))
        .collect::<Result<_>>()?;
    let mut table = MomentTable::new(mean);
    for (&s, c) in closure.iter().zip(covs) {
        table.cov.insert(s, c);
        table.n_pairs.insert(s, n_pairs);
    }
    for &s in &closure {
        mobius_invert(&mut table, s)?;
    }
    if normalize {
        table.normalize();
    }
    Ok(table)
}

/// The population table of the rate tensor: pure terms from the analytic monomials,
/// covariances by summing them over subsets.
pub fn population_moment_table(spec: &ModelSpec, sets: &[SharingSet], normalize: bool) -> Result<MomentTable> {
    let closure = subset_closure(sets);
    let mut table = MomentTable::new(analytic_value(spec, MomentId::MeanSquared)?.sqrt());
    for &s in &closure {
        table.pure.insert(s, analytic_value(spec, MomentId::Pure(s))?);
    }
    for &s in &closure {
        let c = s.nonempty_subsets().map(|t| table.pure[&t]).sum();
        table.cov.insert(s, c);
    }
    if normalize {
        table.normalize();
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;

    fn keys(v: &[SharingSet]) -> Vec<String> {
        v.iter().map(|s| s.key()).collect()
    }

    #[test]
    fn required_sets_match_estimators() {
        assert_eq!(
            keys(&required_sharing_sets_for(Topology::TR, 4).unwrap()),
            ["1", "2", "3", "4", "1,2", "1,4", "2,3", "3,4"]
        );
        assert_eq!(
            keys(&required_sharing_sets_for(Topology::CP, 3).unwrap()),
            ["1", "2", "3", "1,2"]
        );
        let tt4 = required_sharing_sets_for(Topology::TT, 4).unwrap();
        assert!(tt4.contains(&SharingSet::new(&[1, 2, 4])));
        assert!(tt4.contains(&SharingSet::new(&[1, 3, 4])));
        assert!(tt4.contains(&SharingSet::new(&[1, 2, 3])));
        assert!(required_sharing_sets_for(Topology::TT, 2).is_err());
        assert!(required_sharing_sets_for(Topology::CP, 2).is_err());
    }

    #[test]
    fn pairs_share_exactly_s() {
        let s = SharingSet::new(&[1]);
        for (a, b) in sample_sharing_pairs(&[3, 3], s, 500, 1).unwrap() {
            assert_eq!(a[0], b[0]);
            assert_ne!(a[1], b[1]);
        }
        assert!(sample_sharing_pairs(&[3, 3], SharingSet::new(&[1, 2]), 1, 1).is_err());
        assert!(sample_sharing_pairs(&[3, 1], SharingSet::new(&[1]), 1, 1).is_err());
    }

    #[test]
    fn constant_tensor_has_zero_covariance() {
        let y = DenseTensor::filled(vec![4, 5, 6], 3.0);
        for s in [SharingSet::new(&[1]), SharingSet::new(&[2, 3])] {
            assert_eq!(estimate_covariance(&y, s, 100, 2, 3.0).unwrap(), 0.0);
        }
        assert_eq!(estimate_covariance(&y, SharingSet::EMPTY, 100, 2, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn covariance_on_handcrafted_matrix() {
        // Rows (1, 1) and (-1, -1): pairs sharing mode 1 always see equal values.
        let y = DenseTensor::new(vec![2, 2], vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let n = 10_000;
        let c = estimate_covariance(&y, SharingSet::new(&[1]), n, 3, 0.0).unwrap();
        assert!((c - n as f64 / (n - 1) as f64).abs() < 1e-12);
        let c2 = estimate_covariance(&y, SharingSet::new(&[2]), n, 3, 0.0).unwrap();
        assert!((c2 + n as f64 / (n - 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn mobius_examples() {
        let mut t = MomentTable::new(1.0);
        let vals = [
            (&[1][..], 1.0),
            (&[2], 2.0),
            (&[3], 3.0),
            (&[1, 2], 4.0),
            (&[1, 3], 5.0),
            (&[2, 3], 6.0),
            (&[1, 2, 3], 10.0),
        ];
        for (s, v) in vals {
            t.cov.insert(SharingSet::new(s), v);
        }
        assert_eq!(mobius_invert(&mut t, SharingSet::new(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(mobius_invert(&mut t, SharingSet::new(&[2])).unwrap(), 2.0);
        assert_eq!(mobius_invert(&mut t, SharingSet::new(&[1, 2])).unwrap(), 4.0 - 1.0 - 2.0);
        t.cov.remove(&SharingSet::new(&[1, 3]));
        match mobius_invert(&mut t, SharingSet::new(&[1, 2, 3])) {
            Err(Error::MissingMoment(s)) => assert_eq!(s, SharingSet::new(&[1, 3])),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_set_list_gives_mean_only() {
        let y = DenseTensor::filled(vec![3, 3], 2.0);
        let t = compute_moment_table(&y, &[], 10, 1, true).unwrap();
        assert_eq!(t.mean, 2.0);
        assert!(t.cov.is_empty() && t.pure.is_empty());
    }

    #[test]
    fn table_json_round_trip() {
        let y = DenseTensor::new(vec![3, 4], (0..12).map(|i| (i * i % 7) as f64).collect()).unwrap();
        let t = compute_moment_table(&y, &[SharingSet::new(&[1]), SharingSet::new(&[2])], 50, 4, true).unwrap();
        let text = t.to_json().unwrap();
        assert!(text.contains("\"1\""));
        let back: MomentTable = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }
}
