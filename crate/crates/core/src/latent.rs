//! Latent factor sampling, rate contraction and observation noise.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ObservationModel, Prior, PriorFamily, Topology};
use crate::seed::{self, stream};
use crate::tensor::DenseTensor;

/// Sampled factor arrays.
///
/// Factor matrices are `N_m x r` row-major. Chain cores are stored index-major: the
/// slice for index `i` is the `r_{p-1} x r_p` matrix at `core[i * r_{p-1} * r_p ..]`.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentDraw {
    Cp { rank: usize, factors: Vec<Vec<f64>> },
    Tucker { ranks: Vec<usize>, factors: Vec<Vec<f64>>, core: Vec<f64> },
    Tt { links: Vec<usize>, cores: Vec<Vec<f64>> },
    Tr { links: Vec<usize>, cores: Vec<Vec<f64>> },
}

const CHUNK: usize = 4096;

fn draw_group<R: Rng>(prior: Prior, family: PriorFamily, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    match family {
        PriorFamily::Gamma => {
            let g = Gamma::new(prior.shape(), prior.scale()).map_err(|e| {
                Error::Config(format!("Gamma(shape={}, scale={}): {e}", prior.shape(), prior.scale()))
            })?;
            Ok((0..n).map(|_| g.sample(rng)).collect())
        }
        PriorFamily::ExplicitMoments => {
            if prior.variance == 0.0 {
                Ok(vec![prior.mean; n])
            } else {
                Err(Error::Config(
                    "explicit-moment priors carry no distribution and can only be sampled with zero variance"
                        .into(),
                ))
            }
        }
    }
}

/// Draws every latent entry independently from its group prior. Group `p` uses its own
/// derived stream, so changing one group's shape never perturbs another's values.
pub fn sample_latents(spec: &ModelSpec, seed: u64) -> Result<LatentDraw> {
    spec.validate()?;
    let m = spec.order;
    let group = |p: usize, n: usize| {
        let mut rng = seed::rng(seed::derive_path(seed, &[stream::LATENT, p as u64]));
        draw_group(spec.prior(p), spec.prior_family, n, &mut rng)
    };
    Ok(match spec.topology {
        Topology::CP => {
            let r = spec.ranks[0];
            let factors = (1..=m).map(|p| group(p, spec.dims[p - 1] * r)).collect::<Result<_>>()?;
            LatentDraw::Cp { rank: r, factors }
        }
        Topology::Tucker => {
            let factors = (1..=m)
                .map(|p| group(p, spec.dims[p - 1] * spec.ranks[p - 1]))
                .collect::<Result<_>>()?;
            let mut rng = seed::rng(seed::derive_path(seed, &[stream::LATENT, 0]));
            let core = draw_group(spec.core()?, spec.prior_family, spec.ranks.iter().product(), &mut rng)?;
            LatentDraw::Tucker { ranks: spec.ranks.clone(), factors, core }
        }
        Topology::TT | Topology::TR => {
            let links: Vec<usize> = (0..=m).map(|l| spec.link_rank(l)).collect();
            let cores = (1..=m)
                .map(|p| group(p, links[p - 1] * spec.dims[p - 1] * links[p]))
                .collect::<Result<_>>()?;
            if spec.topology == Topology::TT {
                LatentDraw::Tt { links, cores }
            } else {
                LatentDraw::Tr { links, cores }
            }
        }
    })
}

fn check_shapes(spec: &ModelSpec, lat: &LatentDraw) -> Result<()> {
    let m = spec.order;
    let bad = |what: &str| Err(Error::Config(format!("latent draw does not match spec: {what}")));
    match (spec.topology, lat) {
        (Topology::CP, LatentDraw::Cp { rank, factors }) => {
            if *rank != spec.ranks[0] || factors.len() != m {
                return bad("CP rank or factor count");
            }
            for (p, f) in factors.iter().enumerate() {
                if f.len() != spec.dims[p] * rank {
                    return bad("CP factor shape");
                }
            }
        }
        (Topology::Tucker, LatentDraw::Tucker { ranks, factors, core }) => {
            if ranks != &spec.ranks || factors.len() != m || core.len() != ranks.iter().product::<usize>() {
                return bad("Tucker ranks or core");
            }
            for (p, f) in factors.iter().enumerate() {
                if f.len() != spec.dims[p] * ranks[p] {
                    return bad("Tucker factor shape");
                }
            }
        }
        (Topology::TT, LatentDraw::Tt { links, cores }) | (Topology::TR, LatentDraw::Tr { links, cores }) => {
            if links.len() != m + 1 || cores.len() != m {
                return bad("chain length");
            }
            for p in 1..=m {
                if links[p] != spec.link_rank(p)
                    || cores[p - 1].len() != links[p - 1] * spec.dims[p - 1] * links[p]
                {
                    return bad("chain core shape");
                }
            }
        }
        _ => return bad("topology"),
    }
    Ok(())
}

/// Contracts the latent factors into the rate tensor.
///
/// Every topology walks the index tree mode by mode, carrying a partial product for
/// the current prefix, so the cost is `prod(N) * max(r)^2` rather than a sum over all
/// latent index tuples per entry.
pub fn build_rate(spec: &ModelSpec, lat: &LatentDraw) -> Result<DenseTensor> {
    check_shapes(spec, lat)?;
    let dims = spec.dims.clone();
    let mut out = Vec::with_capacity(spec.n_entries());
    match lat {
        LatentDraw::Cp { rank, factors } => {
            let mut acc = vec![vec![1.0; *rank]; dims.len()];
            cp_walk(&dims, factors, *rank, 0, &mut acc, &mut out);
        }
        LatentDraw::Tt { links, cores } | LatentDraw::Tr { links, cores } => {
            // Prefix products are r_0 x r_p; the identity seeds the walk.
            let r0 = links[0];
            let mut start = vec![0.0; r0 * r0];
            for a in 0..r0 {
                start[a * r0 + a] = 1.0;
            }
            let mut acc: Vec<Vec<f64>> = vec![Vec::new(); dims.len()];
            chain_walk(&dims, links, cores, 0, &start, &mut acc, &mut out);
        }
        LatentDraw::Tucker { ranks, factors, core } => {
            out = tucker_contract(&dims, ranks, factors, core);
        }
    }
    if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
        let t = DenseTensor::filled(dims.clone(), 0.0);
        return Err(Error::Numeric(format!(
            "rate overflowed at index {:?}",
            one_based(&t.multi_index(pos))
        )));
    }
    DenseTensor::new(dims, out)
}

fn cp_walk(dims: &[usize], factors: &[Vec<f64>], r: usize, level: usize, acc: &mut [Vec<f64>], out: &mut Vec<f64>) {
    let last = dims.len() - 1;
    for i in 0..dims[level] {
        let row = &factors[level][i * r..(i + 1) * r];
        if level == last {
            let prev = if level == 0 { None } else { Some(&acc[level - 1]) };
            let v = match prev {
                Some(p) => p.iter().zip(row).map(|(a, b)| a * b).sum(),
                None => row.iter().sum(),
            };
            out.push(v);
        } else {
            let (head, tail) = acc.split_at_mut(level);
            let cur = &mut tail[0];
            for k in 0..r {
                cur[k] = row[k] * if level == 0 { 1.0 } else { head[level - 1][k] };
            }
            cp_walk(dims, factors, r, level + 1, acc, out);
        }
    }
}

fn chain_walk(
    dims: &[usize],
    links: &[usize],
    cores: &[Vec<f64>],
    level: usize,
    prefix: &[f64],
    scratch: &mut [Vec<f64>],
    out: &mut Vec<f64>,
) {
    let r0 = links[0];
    let (rl, rr) = (links[level], links[level + 1]);
    let last = dims.len() - 1;
    for i in 0..dims[level] {
        let slice = &cores[level][i * rl * rr..(i + 1) * rl * rr];
        if level == last {
            // Tr(prefix * slice) with prefix r_0 x r_{M-1}, slice r_{M-1} x r_0.
            let mut tr = 0.0;
            for a in 0..r0 {
                for b in 0..rl {
                    tr += prefix[a * rl + b] * slice[b * rr + a];
                }
            }
            out.push(tr);
        } else {
            let mut next = std::mem::take(&mut scratch[level]);
            next.clear();
            next.resize(r0 * rr, 0.0);
            for a in 0..r0 {
                for b in 0..rl {
                    let pab = prefix[a * rl + b];
                    if pab == 0.0 {
                        continue;
                    }
                    let srow = &slice[b * rr..(b + 1) * rr];
                    let nrow = &mut next[a * rr..(a + 1) * rr];
                    for (n, s) in nrow.iter_mut().zip(srow) {
                        *n += pab * s;
                    }
                }
            }
            chain_walk(dims, links, cores, level + 1, &next, scratch, out);
            scratch[level] = next;
        }
    }
}

/// Successive mode products: core `r_1 x .. x r_M` becomes `N_1 x .. x N_M`.
fn tucker_contract(dims: &[usize], ranks: &[usize], factors: &[Vec<f64>], core: &[f64]) -> Vec<f64> {
    let m = dims.len();
    let mut shape: Vec<usize> = ranks.to_vec();
    let mut cur = core.to_vec();
    for p in 0..m {
        let before: usize = shape[..p].iter().product();
        let after: usize = shape[p + 1..].iter().product();
        let (r, n) = (ranks[p], dims[p]);
        let a = &factors[p];
        let mut next = vec![0.0; before * n * after];
        for x in 0..before {
            for i in 0..n {
                let dst = &mut next[(x * n + i) * after..(x * n + i + 1) * after];
                for k in 0..r {
                    let w = a[i * r + k];
                    let src = &cur[(x * r + k) * after..(x * r + k + 1) * after];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        shape[p] = n;
        cur = next;
    }
    cur
}

impl LatentDraw {
    /// Rate at a single 0-based multi-index, by direct summation. Used by the Monte-Carlo
    /// oracle on tiny latent draws and as a brute-force check of [`build_rate`].
    pub fn entry(&self, idx: &[usize]) -> f64 {
        match self {
            LatentDraw::Cp { rank, factors } => (0..*rank)
                .map(|k| factors.iter().zip(idx).map(|(f, &i)| f[i * rank + k]).product::<f64>())
                .sum(),
            LatentDraw::Tt { links, cores } | LatentDraw::Tr { links, cores } => {
                let r0 = links[0];
                let mut cur = vec![0.0; r0 * r0];
                for a in 0..r0 {
                    cur[a * r0 + a] = 1.0;
                }
                for (p, &i) in idx.iter().enumerate() {
                    let (rl, rr) = (links[p], links[p + 1]);
                    let s = &cores[p][i * rl * rr..(i + 1) * rl * rr];
                    let mut next = vec![0.0; r0 * rr];
                    for a in 0..r0 {
                        for b in 0..rl {
                            for c in 0..rr {
                                next[a * rr + c] += cur[a * rl + b] * s[b * rr + c];
                            }
                        }
                    }
                    cur = next;
                }
                (0..r0).map(|a| cur[a * r0 + a]).sum()
            }
            LatentDraw::Tucker { ranks, factors, core } => {
                let m = ranks.len();
                let mut k = vec![0usize; m];
                let mut total = 0.0;
                for g in core {
                    let mut term = *g;
                    for p in 0..m {
                        term *= factors[p][idx[p] * ranks[p] + k[p]];
                    }
                    total += term;
                    for p in (0..m).rev() {
                        k[p] += 1;
                        if k[p] < ranks[p] {
                            break;
                        }
                        k[p] = 0;
                    }
                }
                total
            }
        }
    }
}

fn one_based(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|i| i + 1).collect()
}

/// Draws observations entrywise. Each block of 4096 entries has its own derived stream,
/// so the result does not depend on how the blocks are scheduled.
pub fn sample_observation(rate: &DenseTensor, obs: &ObservationModel, seed: u64) -> Result<DenseTensor> {
    let dims = rate.dims().to_vec();
    let mut out = vec![0.0; rate.len()];
    match *obs {
        ObservationModel::Poisson => {
            if let Some(pos) = rate.values().iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Domain(format!(
                    "Poisson rate {} at index {:?} is not positive",
                    rate.values()[pos],
                    one_based(&rate.multi_index(pos))
                )));
            }
            out.par_chunks_mut(CHUNK)
                .zip(rate.values().par_chunks(CHUNK))
                .enumerate()
                .try_for_each(|(c, (dst, src))| -> Result<()> {
                    let mut rng = seed::rng(seed::derive_path(seed, &[stream::OBSERVATION, c as u64]));
                    for (d, &lam) in dst.iter_mut().zip(src) {
                        let p = Poisson::new(lam)
                            .map_err(|e| Error::Domain(format!("Poisson({lam}): {e}")))?;
                        *d = p.sample(&mut rng);
                    }
                    Ok(())
                })?;
        }
        ObservationModel::Gaussian { variance } => {
            if !(variance >= 0.0) {
                return Err(Error::Config(format!("observation variance {variance} is negative")));
            }
            if variance == 0.0 {
                out.copy_from_slice(rate.values());
            } else {
                let normal = Normal::new(0.0, variance.sqrt())
                    .map_err(|e| Error::Config(format!("Normal noise: {e}")))?;
                out.par_chunks_mut(CHUNK)
                    .zip(rate.values().par_chunks(CHUNK))
                    .enumerate()
                    .for_each(|(c, (dst, src))| {
                        let mut rng = seed::rng(seed::derive_path(seed, &[stream::OBSERVATION, c as u64]));
                        for (d, &eta) in dst.iter_mut().zip(src) {
                            *d = eta + normal.sample(&mut rng);
                        }
                    });
            }
        }
    }
    DenseTensor::new(dims, out)
}

/// A full draw from the generative model.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub latents: LatentDraw,
    pub rate: DenseTensor,
    pub observed: DenseTensor,
}

/// Latents, rate and observations for one master seed.
pub fn simulate(spec: &ModelSpec, seed: u64) -> Result<Simulation> {
    let latents = sample_latents(spec, seed::derive(seed, stream::LATENT))?;
    let rate = build_rate(spec, &latents)?;
    let observed = sample_observation(&rate, &spec.obs, seed::derive(seed, stream::OBSERVATION))?;
    Ok(Simulation { latents, rate, observed })
}
