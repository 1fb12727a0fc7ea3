use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::child_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRole {
    PretrainMember,
    ShadowMember,
    ShadowNonmember,
    EvalMember,
    EvalNonmember,
    DownstreamTrain,
    DownstreamTest,
}

impl SplitRole {
    pub const ALL: [SplitRole; 7] = [
        Self::PretrainMember,
        Self::ShadowMember,
        Self::ShadowNonmember,
        Self::EvalMember,
        Self::EvalNonmember,
        Self::DownstreamTrain,
        Self::DownstreamTest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PretrainMember => "pretrain-member",
            Self::ShadowMember => "shadow-member",
            Self::ShadowNonmember => "shadow-nonmember",
            Self::EvalMember => "eval-member",
            Self::EvalNonmember => "eval-nonmember",
            Self::DownstreamTrain => "downstream-train",
            Self::DownstreamTest => "downstream-test",
        }
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| Error::UnknownRole(s.to_string()))
    }
}

/// Ordered record ids of one role within a source dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub role: SplitRole,
    pub source: String,
    pub indices: Vec<usize>,
}

impl DatasetSplit {
    pub fn new(role: SplitRole, source: impl Into<String>, indices: Vec<usize>) -> Self {
        let source = source.into();
        Self { name: format!("{source}/{role}"), role, source, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// First `n` ids (or all of them).
    pub fn head(&self, n: usize) -> Self {
        Self { indices: self.indices[..n.min(self.len())].to_vec(), ..self.clone() }
    }
}

/// Parses a role-name → count map, rejecting unknown role names.
pub fn parse_sizes<'a>(sizes: impl IntoIterator<Item = (&'a str, usize)>) -> Result<BTreeMap<SplitRole, usize>> {
    sizes.into_iter().map(|(name, n)| Ok((name.parse::<SplitRole>()?, n))).collect()
}

/// Draws the requested splits from `0..dataset_len`.
///
/// Every role receives fresh ids except `eval-member`, which is a random
/// subset of `pretrain-member` (members of the target must come from its
/// pre-training data). Roles with size 0 yield empty splits; roles not in
/// `sizes` are omitted.
pub fn make_splits(
    source: &str,
    dataset_len: usize,
    sizes: &BTreeMap<SplitRole, usize>,
    seed: u64,
) -> Result<Vec<DatasetSplit>> {
    let fresh: usize = sizes.iter().filter(|(r, _)| **r != SplitRole::EvalMember).map(|(_, n)| n).sum();
    if fresh > dataset_len {
        return Err(Error::InsufficientData { requested: fresh, available: dataset_len });
    }
    let mut ids: Vec<usize> = (0..dataset_len).collect();
    ids.shuffle(&mut child_rng(seed, &format!("splits/{source}")));
    let mut cursor = 0;
    let mut splits = Vec::new();
    for (&role, &n) in sizes {
        if role == SplitRole::EvalMember {
            continue;
        }
        splits.push(DatasetSplit::new(role, source, ids[cursor..cursor + n].to_vec()));
        cursor += n;
    }
    if let Some(&n) = sizes.get(&SplitRole::EvalMember) {
        let pool = splits
            .iter()
            .find(|s| s.role == SplitRole::PretrainMember)
            .map(|s| s.indices.clone())
            .unwrap_or_default();
        if n > pool.len() {
            return Err(Error::InsufficientData { requested: n, available: pool.len() });
        }
        let mut pool = pool;
        pool.shuffle(&mut child_rng(seed, &format!("splits/{source}/eval-member")));
        pool.truncate(n);
        splits.push(DatasetSplit::new(SplitRole::EvalMember, source, pool));
    }
    splits.sort_by_key(|s| s.role);
    Ok(splits)
}

/// Checks the split contracts: splits on the same source are pairwise
/// disjoint, except that `eval-member` must lie inside `pretrain-member`.
pub fn validate_splits(splits: &[DatasetSplit]) -> Result<()> {
    for (i, a) in splits.iter().enumerate() {
        let set_a: HashSet<usize> = a.indices.iter().copied().collect();
        if set_a.len() != a.len() {
            return Err(Error::InvalidParameter(format!("split {} repeats ids", a.name)));
        }
        for b in &splits[i + 1..] {
            if a.source != b.source {
                continue;
            }
            let subset_pair = matches!(
                (a.role, b.role),
                (SplitRole::PretrainMember, SplitRole::EvalMember) | (SplitRole::EvalMember, SplitRole::PretrainMember)
            );
            if subset_pair {
                let (outer, inner) = if a.role == SplitRole::PretrainMember { (a, b) } else { (b, a) };
                let outer: HashSet<usize> = outer.indices.iter().copied().collect();
                if let Some(stray) = inner.indices.iter().find(|id| !outer.contains(id)) {
                    return Err(Error::InvalidParameter(format!("eval-member id {stray} is not a pre-training member")));
                }
                continue;
            }
            let overlap: Vec<usize> = b.indices.iter().copied().filter(|id| set_a.contains(id)).collect();
            if let Some(&first) = overlap.first() {
                return Err(Error::SplitOverlap { count: overlap.len(), first });
            }
        }
    }
    Ok(())
}

/// Serialized split assignment for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub splits: Vec<DatasetSplit>,
}

impl SplitManifest {
    pub fn get(&self, source: &str, role: SplitRole) -> Option<&DatasetSplit> {
        self.splits.iter().find(|s| s.source == source && s.role == role)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        validate_splits(&m.splits)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(pairs: &[(SplitRole, usize)]) -> BTreeMap<SplitRole, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn sizes_disjointness_and_subset() {
        let req = sizes(&[
            (SplitRole::PretrainMember, 50),
            (SplitRole::EvalMember, 20),
            (SplitRole::EvalNonmember, 20),
            (SplitRole::ShadowMember, 10),
        ]);
        let splits = make_splits("d", 100, &req, 9).unwrap();
        for s in &splits {
            assert_eq!(s.len(), req[&s.role]);
        }
        validate_splits(&splits).unwrap();
        let pre: HashSet<_> = splits[0].indices.iter().collect();
        let eval_m = splits.iter().find(|s| s.role == SplitRole::EvalMember).unwrap();
        assert!(eval_m.indices.iter().all(|i| pre.contains(i)));
    }

    #[test]
    fn deterministic_and_zero_sizes() {
        let req = sizes(&[(SplitRole::ShadowMember, 0), (SplitRole::ShadowNonmember, 0)]);
        let a = make_splits("d", 0, &req, 1).unwrap();
        assert!(a.iter().all(|s| s.is_empty()));
        let req = sizes(&[(SplitRole::ShadowMember, 7), (SplitRole::ShadowNonmember, 5)]);
        assert_eq!(make_splits("d", 30, &req, 4).unwrap(), make_splits("d", 30, &req, 4).unwrap());
        assert_ne!(make_splits("d", 30, &req, 4).unwrap(), make_splits("d", 30, &req, 5).unwrap());
    }

    #[test]
    fn errors() {
        let req = sizes(&[(SplitRole::ShadowMember, 7), (SplitRole::ShadowNonmember, 5)]);
        assert!(matches!(make_splits("d", 11, &req, 0), Err(Error::InsufficientData { requested: 12, available: 11 })));
        assert!(matches!(parse_sizes([("shadow-members", 1)]), Err(Error::UnknownRole(_))));
        let overlapping = vec![
            DatasetSplit::new(SplitRole::ShadowMember, "d", vec![1, 2]),
            DatasetSplit::new(SplitRole::ShadowNonmember, "d", vec![2, 3]),
        ];
        assert!(matches!(validate_splits(&overlapping), Err(Error::SplitOverlap { count: 1, first: 2 })));
        let stray = vec![
            DatasetSplit::new(SplitRole::EvalMember, "d", vec![9]),
            DatasetSplit::new(SplitRole::PretrainMember, "d", vec![1, 2]),
        ];
        assert!(validate_splits(&stray).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let req = sizes(&[(SplitRole::PretrainMember, 4), (SplitRole::EvalMember, 2)]);
        let m = SplitManifest { seed: 3, splits: make_splits("d", 10, &req, 3).unwrap() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("splits.json");
        m.save(&p).unwrap();
        assert_eq!(SplitManifest::load(&p).unwrap(), m);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"pretrain-member\""));
    }
}
