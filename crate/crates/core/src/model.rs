//! Model specifications for the four factorization topologies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sharing::MAX_ORDER;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Topology {
    CP,
    Tucker,
    TT,
    TR,
}

impl Topology {
    /// Length of the ranks vector for order `m`.
    pub fn n_ranks(self, m: usize) -> usize {
        match self {
            Topology::CP => 1,
            Topology::Tucker | Topology::TR => m,
            Topology::TT => m.saturating_sub(1),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Topology::CP => "CP",
            Topology::Tucker => "Tucker",
            Topology::TT => "TT",
            Topology::TR => "TR",
        };
        f.write_str(s)
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cp" | "parafac" => Ok(Topology::CP),
            "tucker" => Ok(Topology::Tucker),
            "tt" | "tensor-train" => Ok(Topology::TT),
            "tr" | "tensor-ring" => Ok(Topology::TR),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

/// First two moments of a factor prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub mean: f64,
    pub variance: f64,
}

impl Prior {
    pub fn new(mean: f64, variance: f64) -> Self {
        Prior { mean, variance }
    }

    /// Gamma prior in shape/scale form.
    pub fn gamma(shape: f64, scale: f64) -> Self {
        Prior { mean: shape * scale, variance: shape * scale * scale }
    }

    pub fn shape(&self) -> f64 {
        self.mean * self.mean / self.variance
    }

    pub fn scale(&self) -> f64 {
        self.variance / self.mean
    }

    pub fn mean_sq(&self) -> f64 {
        self.mean * self.mean
    }

    pub fn cv(&self) -> f64 {
        self.variance.sqrt() / self.mean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PriorFamily {
    #[default]
    Gamma,
    /// Only the two moments are known. Sampling is possible only for zero variance.
    ExplicitMoments,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ObservationModel {
    Poisson,
    Gaussian { variance: f64 },
}

impl Default for ObservationModel {
    fn default() -> Self {
        ObservationModel::Poisson
    }
}

/// A probabilistic tensor factorization model.
///
/// `priors` holds one entry per factor group (one per mode); a single entry is broadcast
/// to every mode. Tucker models additionally need `core_prior`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub topology: Topology,
    pub order: usize,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub priors: Vec<Prior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_prior: Option<Prior>,
    #[serde(default)]
    pub prior_family: PriorFamily,
    #[serde(default)]
    pub obs: ObservationModel,
}

impl ModelSpec {
    /// Gamma-Poisson model with the same prior on every factor group (and the core).
    pub fn uniform(topology: Topology, dims: Vec<usize>, ranks: Vec<usize>, prior: Prior) -> Self {
        let order = dims.len();
        ModelSpec {
            topology,
            order,
            dims,
            ranks,
            priors: vec![prior; order],
            core_prior: (topology == Topology::Tucker).then_some(prior),
            prior_family: PriorFamily::Gamma,
            obs: ObservationModel::Poisson,
        }
    }

    pub fn with_obs(mut self, obs: ObservationModel) -> Self {
        self.obs = obs;
        self
    }

    pub fn with_family(mut self, family: PriorFamily) -> Self {
        self.prior_family = family;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Prior of factor group `p` (1-based).
    pub fn prior(&self, p: usize) -> Prior {
        if self.priors.len() == 1 {
            self.priors[0]
        } else {
            self.priors[p - 1]
        }
    }

    pub fn core(&self) -> Result<Prior> {
        self.core_prior
            .ok_or_else(|| Error::Config("Tucker model needs `core_prior`".into()))
    }

    /// Rank `r_l` with TT boundary ranks `r_0 = r_M = 1` and TR wrap-around `r_0 = r_M`.
    /// For CP every link is the single rank.
    pub fn link_rank(&self, l: usize) -> usize {
        let m = self.order;
        match self.topology {
            Topology::CP => self.ranks[0],
            Topology::Tucker => self.ranks[l - 1],
            Topology::TT => {
                if l == 0 || l >= m {
                    1
                } else {
                    self.ranks[l - 1]
                }
            }
            Topology::TR => {
                if l == 0 {
                    self.ranks[m - 1]
                } else {
                    self.ranks[l - 1]
                }
            }
        }
    }

    pub fn n_entries(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.order;
        if m < 2 || m > MAX_ORDER {
            return Err(Error::Config(format!("order must lie in 2..={MAX_ORDER}, got {m}")));
        }
        if self.dims.len() != m {
            return Err(Error::Config(format!(
                "dims has {} entries for an order-{m} model",
                self.dims.len()
            )));
        }
        if let Some(d) = self.dims.iter().find(|&&d| d < 2) {
            return Err(Error::Config(format!("every dim must be at least 2, got {d}")));
        }
        let want = self.topology.n_ranks(m);
        if self.ranks.len() != want {
            return Err(Error::Config(format!(
                "{} of order {m} needs {want} ranks, got {}",
                self.topology,
                self.ranks.len()
            )));
        }
        if self.ranks.contains(&0) {
            return Err(Error::Config("ranks must be at least 1".into()));
        }
        if self.priors.len() != 1 && self.priors.len() != m {
            return Err(Error::Config(format!(
                "priors must have 1 or {m} entries, got {}",
                self.priors.len()
            )));
        }
        let mut all: Vec<(String, Prior)> =
            (1..=m).map(|p| (format!("group {p}"), self.prior(p))).collect();
        if self.topology == Topology::Tucker {
            all.push(("core".into(), self.core()?));
        }
        for (name, pr) in &all {
            if !pr.mean.is_finite() || !pr.variance.is_finite() || pr.variance < 0.0 {
                return Err(Error::Config(format!("{name}: invalid prior moments {pr:?}")));
            }
            if self.prior_family == PriorFamily::Gamma && (pr.mean <= 0.0 || pr.variance <= 0.0) {
                return Err(Error::Config(format!(
                    "{name}: Gamma prior needs positive mean and variance, got {pr:?}"
                )));
            }
        }
        if let ObservationModel::Gaussian { variance } = self.obs {
            if !(variance >= 0.0) || !variance.is_finite() {
                return Err(Error::Config(format!("observation variance must be >= 0, got {variance}")));
            }
        }
        Ok(())
    }
}
