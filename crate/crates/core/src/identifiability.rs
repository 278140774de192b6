//! Monomial forms of the observable moments and the exact rank-identifiability test.
//!
//! Every observable (the squared mean and each pure interaction term) is a monomial in
//! the ranks and the prior moments. One counting rule covers all four topologies: each
//! factor group touches a set of links, the groups listed in the moment id contribute
//! `σ²` and the rest `μ²`, and a link appears squared unless some variance-mode group
//! touches it, in which case it appears once.

use num_rational::Rational64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Topology};
use crate::moments::required_sharing_sets_for;
use crate::sharing::{MomentId, SharingSet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SymbolLayout {
    pub topology: Topology,
    pub order: usize,
    /// `log r_l`, then `log mu_p^2` per group, then `log sigma_p^2` per group. Tucker
    /// appends the core group after the mode groups in both moment blocks.
    pub names: Vec<String>,
    pub n_rank: usize,
    pub n_groups: usize,
}

impl SymbolLayout {
    pub fn new(topology: Topology, order: usize) -> Self {
        let n_rank = topology.n_ranks(order);
        let mut names: Vec<String> = if topology == Topology::CP {
            vec!["log r".into()]
        } else {
            (1..=n_rank).map(|l| format!("log r{l}")).collect()
        };
        let mut groups: Vec<String> = (1..=order).map(|p| p.to_string()).collect();
        if topology == Topology::Tucker {
            groups.push("G".into());
        }
        names.extend(groups.iter().map(|g| format!("log mu{g}^2")));
        names.extend(groups.iter().map(|g| format!("log s{g}^2")));
        SymbolLayout { topology, order, names, n_rank, n_groups: groups.len() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Column of `log r_l` (1-based link).
    pub fn rank_col(&self, l: usize) -> usize {
        if self.topology == Topology::CP {
            0
        } else {
            l - 1
        }
    }

    /// Column of `log mu_g^2`; group `order + 1` is the Tucker core.
    pub fn mean_col(&self, g: usize) -> usize {
        self.n_rank + g - 1
    }

    pub fn var_col(&self, g: usize) -> usize {
        self.n_rank + self.n_groups + g - 1
    }

    /// Links (1-based) touched by group `g` (1-based; `order + 1` is the Tucker core).
    pub fn links_of(&self, g: usize) -> Vec<usize> {
        let m = self.order;
        match self.topology {
            Topology::CP => vec![1],
            Topology::Tucker => {
                if g == m + 1 {
                    (1..=m).collect()
                } else {
                    vec![g]
                }
            }
            Topology::TT => [g.wrapping_sub(1), g].into_iter().filter(|&l| l >= 1 && l < m).collect(),
            Topology::TR => {
                let left = if g == 1 { m } else { g - 1 };
                vec![left, g]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Monomial {
    pub moment: MomentId,
    pub exponents: Vec<i64>,
}

/// Exponent vector of `moment` for the given topology and order.
pub fn monomial_for(layout: &SymbolLayout, moment: MomentId) -> Result<Monomial> {
    let m = layout.order;
    let tucker = layout.topology == Topology::Tucker;
    let set = moment.factor_set();
    if set.max_mode() > m {
        return Err(Error::Unsupported(format!("{moment} refers to a mode above {m}")));
    }
    if moment.core_in_variance() && !tucker {
        return Err(Error::Unsupported(format!("{moment} exists only for Tucker models")));
    }
    if let MomentId::Pure(s) = moment {
        if s.is_empty() {
            return Err(Error::Unsupported("the empty pure term is identically zero".into()));
        }
    }
    let n_groups = layout.n_groups;
    let in_var = |g: usize| if g == m + 1 { moment.core_in_variance() } else { set.contains(g) };
    let mut e = vec![0i64; layout.len()];
    let mut touched = vec![false; layout.n_rank + 1];
    for g in 1..=n_groups {
        if in_var(g) {
            e[layout.var_col(g)] += 1;
            for l in layout.links_of(g) {
                touched[l] = true;
            }
        } else {
            e[layout.mean_col(g)] += 1;
        }
    }
    for l in 1..=layout.n_rank {
        e[layout.rank_col(l)] = if touched[l] { 1 } else { 2 };
    }
    Ok(Monomial { moment, exponents: e })
}

/// Monomial of one observable for `spec`'s topology and order.
pub fn analytic_monomial(spec: &ModelSpec, moment: MomentId) -> Result<Monomial> {
    monomial_for(&SymbolLayout::new(spec.topology, spec.order), moment)
}

/// Numeric value of a monomial at the spec's ranks and prior moments.
pub fn evaluate_monomial(spec: &ModelSpec, mono: &Monomial) -> Result<f64> {
    let layout = SymbolLayout::new(spec.topology, spec.order);
    if mono.exponents.len() != layout.len() {
        return Err(Error::Config("monomial does not match the spec's symbol layout".into()));
    }
    let mut values = Vec::with_capacity(layout.len());
    values.extend(spec.ranks.iter().map(|&r| r as f64));
    let mut groups: Vec<_> = (1..=spec.order).map(|p| spec.prior(p)).collect();
    if spec.topology == Topology::Tucker {
        groups.push(spec.core()?);
    }
    values.extend(groups.iter().map(|p| p.mean_sq()));
    values.extend(groups.iter().map(|p| p.variance));
    Ok(values
        .iter()
        .zip(&mono.exponents)
        .map(|(v, &e)| v.powi(e as i32))
        .product())
}

/// Value of an observable for `spec`.
pub fn analytic_value(spec: &ModelSpec, moment: MomentId) -> Result<f64> {
    evaluate_monomial(spec, &analytic_monomial(spec, moment)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignMatrix {
    pub layout: SymbolLayout,
    pub rows: Vec<Monomial>,
}

impl DesignMatrix {
    pub fn from_moments(layout: SymbolLayout, moments: &[MomentId]) -> Result<Self> {
        let rows = moments.iter().map(|&mid| monomial_for(&layout, mid)).collect::<Result<_>>()?;
        Ok(DesignMatrix { layout, rows })
    }

    pub fn row(&self, moment: MomentId) -> Option<&Monomial> {
        self.rows.iter().find(|r| r.moment == moment)
    }
}

/// Observables used for a topology and order.
///
/// Tucker gets the core bookkeeping family; the other topologies get the squared mean
/// plus the sets their estimators consume. Orders too small for an estimator fall back
/// to the singletons so the verdict is still reported.
pub fn design_moments(topology: Topology, order: usize) -> Vec<MomentId> {
    let mut out = vec![MomentId::MeanSquared];
    if topology == Topology::Tucker {
        out.push(MomentId::Core);
        out.extend((1..=order).map(|p| MomentId::Pure(SharingSet::singleton(p))));
        out.extend((1..=order).map(|p| MomentId::CoreWith(SharingSet::singleton(p))));
        return out;
    }
    let sets = required_sharing_sets_for(topology, order)
        .unwrap_or_else(|_| (1..=order).map(SharingSet::singleton).collect());
    out.extend(sets.into_iter().map(MomentId::Pure));
    out
}

pub fn build_design_matrix(spec: &ModelSpec) -> Result<DesignMatrix> {
    design_matrix_for(spec.topology, spec.order)
}

pub fn design_matrix_for(topology: Topology, order: usize) -> Result<DesignMatrix> {
    let layout = SymbolLayout::new(topology, order);
    DesignMatrix::from_moments(layout, &design_moments(topology, order))
}

/// The squared mean plus every pure term that pair sampling can estimate: all nonempty
/// proper subsets of the modes. For Tucker this excludes the core bookkeeping terms.
pub fn observable_design_matrix(topology: Topology, order: usize) -> Result<DesignMatrix> {
    let layout = SymbolLayout::new(topology, order);
    let mut moments = vec![MomentId::MeanSquared];
    let full = SharingSet::full(order);
    let mut sets: Vec<SharingSet> = full.nonempty_subsets().filter(|&s| s != full).collect();
    sets.sort();
    moments.extend(sets.into_iter().map(MomentId::Pure));
    DesignMatrix::from_moments(layout, &moments)
}

/// A combination of design rows, with its image on the rank columns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowCombination {
    /// `(coefficient, moment)` pairs as reduced fractions `num/den`.
    pub terms: Vec<(String, MomentId)>,
    pub rank_part: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifiabilityVerdict {
    pub identifiable: bool,
    pub reduced_rank: usize,
    pub n_rank_symbols: usize,
    /// Row combinations free of nuisance symbols. Those with a zero rank part are
    /// identities among observables; the rest pin down rank combinations.
    pub witness: Vec<RowCombination>,
}

fn zero() -> Rational64 {
    Rational64::from_integer(0)
}

fn fmt_ratio(q: &Rational64) -> String {
    if *q.denom() == 1 {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Exact elimination of the nuisance columns followed by the rank of what is left on
/// the rank columns. Pivots are taken column by column, left to right, using the
/// lowest-indexed unused row.
pub fn rank_identifiability(dm: &DesignMatrix) -> IdentifiabilityVerdict {
    let n_rows = dm.rows.len();
    let n_cols = dm.layout.len();
    let n_rank = dm.layout.n_rank;
    // Augment with the identity so each reduced row remembers its combination.
    let mut a: Vec<Vec<Rational64>> = dm
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v: Vec<Rational64> = r.exponents.iter().map(|&e| Rational64::from_integer(e)).collect();
            v.extend((0..n_rows).map(|j| Rational64::from_integer((i == j) as i64)));
            v
        })
        .collect();
    let mut used = vec![false; n_rows];
    let eliminate = |a: &mut Vec<Vec<Rational64>>, col: usize, used: &mut Vec<bool>| -> bool {
        let Some(piv) = (0..n_rows).find(|&i| !used[i] && a[i][col] != zero()) else {
            return false;
        };
        used[piv] = true;
        let p = a[piv][col];
        for x in a[piv].iter_mut() {
            *x /= p;
        }
        let prow = a[piv].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i != piv && row[col] != zero() {
                let f = row[col];
                for (x, y) in row.iter_mut().zip(&prow) {
                    *x -= f * y;
                }
            }
        }
        true
    };
    for col in n_rank..n_cols {
        eliminate(&mut a, col, &mut used);
    }
    let residual: Vec<usize> = (0..n_rows).filter(|&i| !used[i]).collect();
    let mut reduced_rank = 0;
    for col in 0..n_rank {
        if eliminate(&mut a, col, &mut used) {
            reduced_rank += 1;
        }
    }
    let witness = residual
        .iter()
        .map(|&i| RowCombination {
            terms: (0..n_rows)
                .filter(|&j| a[i][n_cols + j] != zero())
                .map(|j| (fmt_ratio(&a[i][n_cols + j]), dm.rows[j].moment))
                .collect(),
            rank_part: a[i][..n_rank].iter().map(fmt_ratio).collect(),
        })
        .collect();
    IdentifiabilityVerdict {
        identifiable: reduced_rank == n_rank,
        reduced_rank,
        n_rank_symbols: n_rank,
        witness,
    }
}

/// Per mode, the exponent vector of `log v_p - log E[Y]^2 - log v_{G,p} + log v_G`.
pub fn tucker_identity_check(dm: &DesignMatrix) -> Result<Vec<Vec<i64>>> {
    if dm.layout.topology != Topology::Tucker {
        return Err(Error::Unsupported("the core identity applies to Tucker models only".into()));
    }
    let get = |mid: MomentId| {
        dm.row(mid)
            .map(|r| r.exponents.clone())
            .ok_or_else(|| Error::Config(format!("design matrix lacks a row for {mid}")))
    };
    let e2 = get(MomentId::MeanSquared)?;
    let vg = get(MomentId::Core)?;
    (1..=dm.layout.order)
        .map(|p| {
            let s = SharingSet::singleton(p);
            let vp = get(MomentId::Pure(s))?;
            let vgp = get(MomentId::CoreWith(s))?;
            Ok((0..e2.len()).map(|k| vp[k] - e2[k] - vgp[k] + vg[k]).collect())
        })
        .collect()
}

/// Both sides of the core identity evaluated numerically, `(log(v_p / E^2), log(v_{G,p} / v_G))`.
pub fn tucker_identity_sides(spec: &ModelSpec, p: usize) -> Result<(f64, f64)> {
    let s = SharingSet::singleton(p);
    let lhs = analytic_value(spec, MomentId::Pure(s))? / analytic_value(spec, MomentId::MeanSquared)?;
    let rhs = analytic_value(spec, MomentId::CoreWith(s))? / analytic_value(spec, MomentId::Core)?;
    Ok((lhs.ln(), rhs.ln()))
}
