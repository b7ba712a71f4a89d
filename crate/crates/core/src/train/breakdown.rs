//! Scores bucketed by graph size, diameter and reentrancy count.

use serde::{Deserialize, Serialize};

use crate::penman::GraphStats;

use super::metrics::{bleu, chrf};
use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Size,
    Diameter,
    Reentrancies,
}

impl Property {
    pub const ALL: [Property; 3] = [Property::Size, Property::Diameter, Property::Reentrancies];

    /// Inclusive bucket ranges; `None` as the upper end means unbounded.
    pub fn buckets(self) -> &'static [(usize, Option<usize>)] {
        match self {
            Property::Size => &[(1, Some(30)), (31, Some(60)), (61, None)],
            Property::Diameter => &[(1, Some(10)), (11, Some(20)), (21, None)],
            Property::Reentrancies => &[(0, Some(0)), (1, Some(3)), (4, Some(20))],
        }
    }

    pub fn value(self, s: &GraphStats) -> usize {
        match self {
            Property::Size => s.size,
            Property::Diameter => s.diameter,
            Property::Reentrancies => s.reentrancies,
        }
    }

    /// Index of the bucket holding `v`, if any.
    pub fn bucket_of(self, v: usize) -> Option<usize> {
        self.buckets().iter().position(|&(lo, hi)| v >= lo && hi.is_none_or(|h| v <= h))
    }

    pub fn label(self, bucket: usize) -> String {
        match self.buckets()[bucket] {
            (lo, Some(hi)) if lo == hi => format!("{lo}"),
            (lo, Some(hi)) => format!("{lo}-{hi}"),
            (lo, None) => format!(">{}", lo - 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub property: Property,
    pub bucket: String,
    pub count: usize,
    pub bleu: f64,
    pub chrf: f64,
}

/// Corpus scores per nonempty bucket; empty buckets are left out.
pub fn breakdown<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R], stats: &[GraphStats]) -> Result<Vec<BucketScore>, TrainError> {
    if hyps.len() != refs.len() || hyps.len() != stats.len() {
        return Err(TrainError::Metric(format!(
            "{} hypotheses, {} references, {} stats",
            hyps.len(),
            refs.len(),
            stats.len()
        )));
    }
    let mut out = Vec::new();
    for p in Property::ALL {
        for b in 0..p.buckets().len() {
            let idx: Vec<usize> = (0..stats.len()).filter(|&i| p.bucket_of(p.value(&stats[i])) == Some(b)).collect();
            if idx.is_empty() {
                continue;
            }
            let h: Vec<&str> = idx.iter().map(|&i| hyps[i].as_ref()).collect();
            let r: Vec<&str> = idx.iter().map(|&i| refs[i].as_ref()).collect();
            out.push(BucketScore {
                property: p,
                bucket: p.label(b),
                count: idx.len(),
                bleu: bleu(&h, &r)?,
                chrf: chrf(&h, &r)?,
            });
        }
    }
    Ok(out)
}

/// BLEU of `run` minus BLEU of `baseline` for buckets present in both.
pub fn bucket_deltas(run: &[BucketScore], baseline: &[BucketScore]) -> Vec<(Property, String, f64)> {
    run.iter()
        .filter_map(|a| {
            baseline
                .iter()
                .find(|b| b.property == a.property && b.bucket == a.bucket)
                .map(|b| (a.property, a.bucket.clone(), a.bleu - b.bleu))
        })
        .collect()
}
