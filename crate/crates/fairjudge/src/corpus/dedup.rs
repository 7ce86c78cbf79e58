//! Greedy near-duplicate rejection over perceptual hashes.

use serde::{Deserialize, Serialize};

use super::phash::PerceptualHash;
use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedDuplicate {
    pub id: String,
    pub kept_id: String,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupOutcome {
    pub kept: Vec<String>,
    pub rejected: Vec<RejectedDuplicate>,
}

/// Scan records in id order; reject a record when its Hamming distance to
/// any previously kept record is at or below `threshold`. Deterministic:
/// the same inputs always keep the same set.
pub fn dedup(
    items: &[(String, PerceptualHash)],
    threshold: u32,
) -> Result<DedupOutcome, CorpusError> {
    if threshold > 64 {
        return Err(CorpusError::BadThreshold(threshold));
    }
    let mut ordered: Vec<&(String, PerceptualHash)> = items.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));

    let mut kept: Vec<(String, PerceptualHash)> = Vec::new();
    let mut rejected = Vec::new();
    for (id, hash) in ordered {
        match kept
            .iter()
            .find(|(_, kept_hash)| hash.hamming(kept_hash) <= threshold)
        {
            Some((kept_id, kept_hash)) => rejected.push(RejectedDuplicate {
                id: id.clone(),
                kept_id: kept_id.clone(),
                distance: hash.hamming(kept_hash),
            }),
            None => kept.push((id.clone(), *hash)),
        }
    }
    Ok(DedupOutcome {
        kept: kept.into_iter().map(|(id, _)| id).collect(),
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, bits: u64) -> (String, PerceptualHash) {
        (id.to_string(), PerceptualHash { bits })
    }

    #[test]
    fn identical_hashes_reject_the_second() {
        let out = dedup(&[item("a", 7), item("b", 7)], 8).unwrap();
        assert_eq!(out.kept, ["a"]);
        assert_eq!(out.rejected[0].id, "b");
        assert_eq!(out.rejected[0].distance, 0);
    }

    #[test]
    fn distant_pair_survives() {
        // distance 32
        let out = dedup(&[item("a", 0), item("b", 0xFFFF_FFFF)], 8).unwrap();
        assert_eq!(out.kept.len(), 2);
    }

    #[test]
    fn threshold_64_keeps_only_the_first() {
        let out = dedup(
            &[item("c", 1), item("a", u64::MAX), item("b", 12345)],
            64,
        )
        .unwrap();
        assert_eq!(out.kept, ["a"]);
        assert_eq!(out.rejected.len(), 2);
    }

    #[test]
    fn threshold_over_64_is_an_error() {
        assert!(dedup(&[], 65).is_err());
    }
}
