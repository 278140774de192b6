//! Exact-sharing patterns and moment identifiers.
//!
//! Modes are numbered from 1 in every public API, matching the usual `{1,3}` notation
//! for sharing sets. Internally a set is a bitmask with bit `k-1` standing for mode `k`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported tensor order.
pub const MAX_ORDER: usize = 32;

/// A set of modes on which two multi-indices agree.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SharingSet(u32);

impl SharingSet {
    pub const EMPTY: SharingSet = SharingSet(0);

    /// Builds a set from 1-based mode numbers.
    ///
    /// Panics if a mode is 0 or above [`MAX_ORDER`].
    pub fn new(modes: &[usize]) -> Self {
        Self::try_new(modes).expect("mode numbers must lie in 1..=32")
    }

    pub fn try_new(modes: &[usize]) -> Result<Self> {
        let mut bits = 0u32;
        for &m in modes {
            if m == 0 || m > MAX_ORDER {
                return Err(Error::Config(format!("mode {m} is outside 1..={MAX_ORDER}")));
            }
            bits |= 1 << (m - 1);
        }
        Ok(SharingSet(bits))
    }

    pub fn from_bits(bits: u32) -> Self {
        SharingSet(bits)
    }

    /// All modes `1..=order`.
    pub fn full(order: usize) -> Self {
        assert!(order <= MAX_ORDER);
        if order == 32 {
            SharingSet(u32::MAX)
        } else {
            SharingSet((1u32 << order) - 1)
        }
    }

    pub fn singleton(mode: usize) -> Self {
        Self::new(&[mode])
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Whether the 1-based `mode` belongs to the set.
    pub fn contains(self, mode: usize) -> bool {
        mode >= 1 && mode <= MAX_ORDER && self.0 & (1 << (mode - 1)) != 0
    }

    /// Largest mode in the set, 0 for the empty set.
    pub fn max_mode(self) -> usize {
        32 - self.0.leading_zeros() as usize
    }

    pub fn is_subset_of(self, other: SharingSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: SharingSet) -> SharingSet {
        SharingSet(self.0 | other.0)
    }

    pub fn with(self, mode: usize) -> SharingSet {
        self.union(SharingSet::singleton(mode))
    }

    /// Ascending 1-based modes.
    pub fn modes(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..MAX_ORDER).filter(move |k| bits & (1 << k) != 0).map(|k| k + 1)
    }

    /// Every subset, including the empty set and the set itself.
    pub fn subsets(self) -> impl Iterator<Item = SharingSet> {
        // Standard submask enumeration, run in reverse so output starts at the empty set.
        let full = self.0;
        let mut out = Vec::with_capacity(1 << self.len());
        let mut sub = full;
        loop {
            out.push(SharingSet(sub));
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & full;
        }
        out.into_iter().rev()
    }

    /// Every nonempty subset.
    pub fn nonempty_subsets(self) -> impl Iterator<Item = SharingSet> {
        self.subsets().filter(|s| !s.is_empty())
    }

    /// `(-1)^(|self| - |subset|)`.
    pub fn mobius_sign(self, subset: SharingSet) -> f64 {
        if (self.len() - subset.len()) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Comma-joined ascending 1-based modes, e.g. `1,3`. Empty set renders as the empty string.
    pub fn key(self) -> String {
        self.modes().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl Ord for SharingSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.modes().cmp(other.modes()))
    }
}

impl PartialOrd for SharingSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SharingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.key())
    }
}

impl fmt::Debug for SharingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for SharingSet {
    type Err = Error;

    /// Accepts `1,3`, `{1,3}`, `1 3` and the empty string.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('{').trim_end_matches('}');
        let mut modes = Vec::new();
        for tok in trimmed.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            let m: usize = tok
                .parse()
                .map_err(|_| Error::Parse(format!("bad mode `{tok}` in sharing set `{s}`")))?;
            modes.push(m);
        }
        SharingSet::try_new(&modes)
    }
}

impl Serialize for SharingSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for SharingSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which observable a monomial (or an oracle estimate) refers to.
///
/// `Core` and `CoreWith` are the Tucker bookkeeping terms: contributions carrying the
/// core-tensor variance, with the listed factor groups also in variance mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "set")]
pub enum MomentId {
    MeanSquared,
    Pure(SharingSet),
    Core,
    CoreWith(SharingSet),
}

impl MomentId {
    /// Factor groups in variance mode.
    pub fn factor_set(self) -> SharingSet {
        match self {
            MomentId::MeanSquared | MomentId::Core => SharingSet::EMPTY,
            MomentId::Pure(s) | MomentId::CoreWith(s) => s,
        }
    }

    /// Whether the core tensor is in variance mode.
    pub fn core_in_variance(self) -> bool {
        matches!(self, MomentId::Core | MomentId::CoreWith(_))
    }
}

impl fmt::Display for MomentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentId::MeanSquared => write!(f, "E[Y]^2"),
            MomentId::Pure(s) => write!(f, "v{s}"),
            MomentId::Core => write!(f, "v{{G}}"),
            MomentId::CoreWith(s) => write!(f, "v{{G,{}}}", s.key()),
        }
    }
}

impl FromStr for MomentId {
    type Err = Error;

    /// Parses `E[Y]^2`, `G`, `G,1`, or a plain sharing set such as `1,3`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix('v').unwrap_or(t);
        let inner = t.trim_start_matches('{').trim_end_matches('}').trim();
        if inner.eq_ignore_ascii_case("E[Y]^2") || inner.eq_ignore_ascii_case("mean") {
            return Ok(MomentId::MeanSquared);
        }
        let mut parts = inner.split(',').map(str::trim).peekable();
        if parts.peek().is_some_and(|p| p.eq_ignore_ascii_case("G")) {
            parts.next();
            let rest: Vec<&str> = parts.collect();
            if rest.is_empty() {
                return Ok(MomentId::Core);
            }
            return Ok(MomentId::CoreWith(rest.join(",").parse()?));
        }
        Ok(MomentId::Pure(inner.parse()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_enumerate_the_lattice() {
        let s = SharingSet::new(&[1, 3, 4]);
        let subs: Vec<_> = s.subsets().collect();
        assert_eq!(subs.len(), 8);
        assert_eq!(subs[0], SharingSet::EMPTY);
        assert!(subs.iter().all(|t| t.is_subset_of(s)));
        assert_eq!(s.nonempty_subsets().count(), 7);
    }

    #[test]
    fn ordering_is_by_size_then_modes() {
        let mut v = vec![
            SharingSet::new(&[1, 2]),
            SharingSet::new(&[3]),
            SharingSet::new(&[1]),
            SharingSet::new(&[1, 2, 4]),
        ];
        v.sort();
        let keys: Vec<_> = v.iter().map(|s| s.key()).collect();
        assert_eq!(keys, ["1", "3", "1,2", "1,2,4"]);
    }

    #[test]
    fn parse_and_display() {
        let s: SharingSet = "{1, 3}".parse().unwrap();
        assert_eq!(s, SharingSet::new(&[1, 3]));
        assert_eq!(s.to_string(), "{1,3}");
        assert!("0".parse::<SharingSet>().is_err());
        assert!("x".parse::<SharingSet>().is_err());
        assert_eq!("".parse::<SharingSet>().unwrap(), SharingSet::EMPTY);
    }

    #[test]
    fn moment_id_parse() {
        assert_eq!("G".parse::<MomentId>().unwrap(), MomentId::Core);
        assert_eq!(
            "G,2".parse::<MomentId>().unwrap(),
            MomentId::CoreWith(SharingSet::new(&[2]))
        );
        assert_eq!("E[Y]^2".parse::<MomentId>().unwrap(), MomentId::MeanSquared);
        assert_eq!(
            "v{1,2}".parse::<MomentId>().unwrap(),
            MomentId::Pure(SharingSet::new(&[1, 2]))
        );
    }

    #[test]
    fn json_uses_comma_keys() {
        let s = SharingSet::new(&[2, 5]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "\"2,5\"");
        let back: SharingSet = serde_json::from_str("\"2,5\"").unwrap();
        assert_eq!(back, s);
    }
}
