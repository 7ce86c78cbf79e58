//! Stratified train/dev/test assignment preserving per-label marginals.
//!
//! Records are grouped into cross-attribute strata, shuffled per stratum
//! under the run seed, then assigned greedily against fractional
//! per-label targets. A deterministic swap pass afterwards repairs any
//! residual violation of the marginal contract (every label with at
//! least [`MAJOR_LABEL_MIN`] items within [`TOLERANCE_PP`] percentage
//! points of its corpus share, in every split). Infeasible corpora come
//! back flagged with the achieved deviations instead of failing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metadata::{MetadataRecord, Split};
use super::CorpusError;
use crate::digest::Digest;
use crate::taxonomy::AttributeKind;

/// Labels with at least this many items are held to the tolerance.
pub const MAJOR_LABEL_MIN: u64 = 20;
/// Allowed deviation between a label's split share and corpus share.
pub const TOLERANCE_PP: f64 = 2.0;

const SWAP_CAP: usize = 2000;
const SIZE_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<SplitRatios, CorpusError> {
        let ratios = [train, dev, test];
        let sum: f64 = ratios.iter().sum();
        if ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadRatios(ratios));
        }
        Ok(SplitRatios { train, dev, test })
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.dev, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            dev: 0.1,
            test: 0.2,
        }
    }
}

/// Achieved share for one (attribute, label, split) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDeviation {
    pub kind: AttributeKind,
    pub label: String,
    pub split: Split,
    pub label_count: u64,
    pub corpus_share: f64,
    pub split_share: f64,
    pub deviation_pp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub assignments: BTreeMap<String, Split>,
    pub deviations: Vec<LabelDeviation>,
    /// Worst deviation among labels with >= MAJOR_LABEL_MIN items.
    pub max_major_deviation_pp: f64,
    /// False when a split stayed empty or a major label broke tolerance.
    pub feasible: bool,
}

struct Problem {
    // (kind, label index) pairs per record, plus ids in record order.
    record_labels: Vec<Vec<(usize, usize)>>,
    ids: Vec<String>,
    // per dimension: kind, labels, per-label total counts
    dims: Vec<Dim>,
    n: usize,
}

struct Dim {
    kind: AttributeKind,
    labels: Vec<String>,
    totals: Vec<u64>,
}

/// Assign every record to exactly one split, deterministically under
/// `seed`.
pub fn stratified_split(
    records: &[MetadataRecord],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitOutcome, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let problem = build_problem(records);
    let order = processing_order(records, seed);
    let ratio = ratios.as_array();

    // Greedy pass: put each record where it most reduces squared
    // deviation from fractional targets.
    let mut counts: Vec<Vec<[i64; 3]>> = problem
        .dims
        .iter()
        .map(|d| vec![[0i64; 3]; d.labels.len()])
        .collect();
    let mut sizes = [0i64; 3];
    let mut assignment = vec![0usize; problem.n];
    for &rec in &order {
        let mut best_k = 0;
        let mut best_delta = f64::INFINITY;
        for k in 0..3 {
            let mut delta = SIZE_WEIGHT
                * (2.0 * (sizes[k] as f64 - problem.n as f64 * ratio[k]) + 1.0);
            for &(dim, label) in &problem.record_labels[rec] {
                let target = problem.dims[dim].totals[label] as f64 * ratio[k];
                delta += 2.0 * (counts[dim][label][k] as f64 - target) + 1.0;
            }
            if delta < best_delta {
                best_delta = delta;
                best_k = k;
            }
        }
        assignment[rec] = best_k;
        sizes[best_k] += 1;
        for &(dim, label) in &problem.record_labels[rec] {
            counts[dim][label][best_k] += 1;
        }
    }

    repair(&problem, &mut assignment, &mut counts, &sizes);

    let (deviations, max_major) = measure(&problem, &counts, &sizes);
    let feasible = sizes.iter().all(|&s| s > 0) && max_major <= TOLERANCE_PP;
    let assignments = problem
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), Split::ASSIGNED[assignment[i]]))
        .collect();
    Ok(SplitOutcome {
        assignments,
        deviations,
        max_major_deviation_pp: max_major,
        feasible,
    })
}

fn record_label<'a>(record: &'a MetadataRecord, kind: AttributeKind) -> Option<&'a str> {
    if kind == AttributeKind::Profession {
        record.profession.as_deref()
    } else {
        record.label(kind)
    }
}

fn build_problem(records: &[MetadataRecord]) -> Problem {
    let mut dims = Vec::new();
    for kind in AttributeKind::ALL {
        let mut labels: Vec<String> = Vec::new();
        for r in records {
            if let Some(l) = record_label(r, kind) {
                if !labels.iter().any(|x| x == l) {
                    labels.push(l.to_string());
                }
            }
        }
        if labels.is_empty() {
            continue;
        }
        labels.sort();
        dims.push(Dim {
            kind,
            labels,
            totals: Vec::new(),
        });
    }
    let mut record_labels = Vec::with_capacity(records.len());
    for r in records {
        let mut pairs = Vec::new();
        for (di, dim) in dims.iter().enumerate() {
            if let Some(l) = record_label(r, dim.kind) {
                let li = dim.labels.iter().position(|x| x == l).expect("label indexed");
                pairs.push((di, li));
            }
        }
        record_labels.push(pairs);
    }
    for (di, dim) in dims.iter_mut().enumerate() {
        let mut totals = vec![0u64; dim.labels.len()];
        for pairs in &record_labels {
            for &(d, l) in pairs {
                if d == di {
                    totals[l] += 1;
                }
            }
        }
        dim.totals = totals;
    }
    Problem {
        record_labels,
        ids: records.iter().map(|r| r.id.clone()).collect(),
        dims,
        n: records.len(),
    }
}

/// Group records into cross-attribute strata, shuffle each under a
/// stratum-derived seed, then interleave strata round-robin (largest
/// first) so the greedy pass sees a well-mixed stream.
fn processing_order(records: &[MetadataRecord], seed: u64) -> Vec<usize> {
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let mut key = String::new();
        for kind in AttributeKind::ALL {
            if let Some(l) = record_label(r, kind) {
                key.push_str(kind.as_str());
                key.push('=');
                key.push_str(l);
                key.push('|');
            }
        }
        strata.entry(key).or_default().push(i);
    }
    let mut groups: Vec<(String, Vec<usize>)> = strata.into_iter().collect();
    for (key, members) in groups.iter_mut() {
        members.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
        let stratum_seed = Digest::of_str(key).prefix_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stratum_seed);
        members.shuffle(&mut rng);
    }
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut order = Vec::with_capacity(records.len());
    let mut cursors = vec![0usize; groups.len()];
    loop {
        let mut any = false;
        for (gi, (_, members)) in groups.iter().enumerate() {
            if cursors[gi] < members.len() {
                order.push(members[cursors[gi]]);
                cursors[gi] += 1;
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    order
}

fn violation(count: i64, split_size: i64, total: u64, n: usize) -> f64 {
    if split_size == 0 {
        return 0.0;
    }
    let corpus_share = total as f64 / n as f64;
    let split_share = count as f64 / split_size as f64;
    let dev_pp = (split_share - corpus_share).abs() * 100.0;
    (dev_pp - TOLERANCE_PP).max(0.0)
}

fn objective(problem: &Problem, counts: &[Vec<[i64; 3]>], sizes: &[i64; 3]) -> f64 {
    let mut f = 0.0;
    for (di, dim) in problem.dims.iter().enumerate() {
        for (li, &total) in dim.totals.iter().enumerate() {
            if total < MAJOR_LABEL_MIN {
                continue;
            }
            for k in 0..3 {
                let v = violation(counts[di][li][k], sizes[k], total, problem.n);
                f += v * v;
            }
        }
    }
    f
}

/// Deterministic swap search: while a major label violates the tolerance
/// somewhere, look for the record swap between two splits that most
/// reduces the violation objective. Swaps keep split sizes fixed; only
/// records touching a violating cell are considered as movers.
fn repair(
    problem: &Problem,
    assignment: &mut [usize],
    counts: &mut [Vec<[i64; 3]>],
    sizes: &[i64; 3],
) {
    for _ in 0..SWAP_CAP {
        if objective(problem, counts, sizes) == 0.0 {
            return;
        }
        let violating: Vec<(usize, usize)> = problem
            .dims
            .iter()
            .enumerate()
            .flat_map(|(di, dim)| {
                dim.totals
                    .iter()
                    .enumerate()
                    .filter(move |(li, &total)| {
                        total >= MAJOR_LABEL_MIN
                            && (0..3).any(|k| {
                                violation(counts[di][*li][k], sizes[k], total, problem.n) > 0.0
                            })
                    })
                    .map(move |(li, _)| (di, li))
            })
            .collect();

        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..problem.n {
            if !problem.record_labels[a]
                .iter()
                .any(|cell| violating.contains(cell))
            {
                continue;
            }
            for b in 0..problem.n {
                let (ka, kb) = (assignment[a], assignment[b]);
                if a == b || ka == kb {
                    continue;
                }
                let delta = swap_delta(problem, counts, sizes, a, ka, b, kb);
                let better = match best {
                    None => delta < -1e-12,
                    Some((_, _, best_delta)) => delta < best_delta - 1e-12,
                };
                if better {
                    best = Some((a, b, delta));
                }
            }
        }
        let Some((a, b, _)) = best else {
            return;
        };
        let (ka, kb) = (assignment[a], assignment[b]);
        apply_move(problem, counts, a, ka, kb);
        apply_move(problem, counts, b, kb, ka);
        assignment[a] = kb;
        assignment[b] = ka;
    }
}

fn apply_move(problem: &Problem, counts: &mut [Vec<[i64; 3]>], rec: usize, from: usize, to: usize) {
    for &(d, l) in &problem.record_labels[rec] {
        counts[d][l][from] -= 1;
        counts[d][l][to] += 1;
    }
}

/// Objective change from swapping records `a` (in ka) and `b` (in kb);
/// only cells touched by either record can change.
fn swap_delta(
    problem: &Problem,
    counts: &[Vec<[i64; 3]>],
    sizes: &[i64; 3],
    a: usize,
    ka: usize,
    b: usize,
    kb: usize,
) -> f64 {
    let mut touched: Vec<(usize, usize)> = Vec::new();
    for &(d, l) in problem.record_labels[a].iter().chain(&problem.record_labels[b]) {
        if problem.dims[d].totals[l] >= MAJOR_LABEL_MIN && !touched.contains(&(d, l)) {
            touched.push((d, l));
        }
    }
    let mut before = 0.0;
    let mut after = 0.0;
    for &(d, l) in &touched {
        let total = problem.dims[d].totals[l];
        let mut cell = counts[d][l];
        for k in [ka, kb] {
            let v = violation(cell[k], sizes[k], total, problem.n);
            before += v * v;
        }
        let a_has = problem.record_labels[a].contains(&(d, l));
        let b_has = problem.record_labels[b].contains(&(d, l));
        if a_has {
            cell[ka] -= 1;
            cell[kb] += 1;
        }
        if b_has {
            cell[kb] -= 1;
            cell[ka] += 1;
        }
        for k in [ka, kb] {
            let v = violation(cell[k], sizes[k], total, problem.n);
            after += v * v;
        }
    }
    after - before
}

fn measure(
    problem: &Problem,
    counts: &[Vec<[i64; 3]>],
    sizes: &[i64; 3],
) -> (Vec<LabelDeviation>, f64) {
    let mut deviations = Vec::new();
    let mut max_major: f64 = 0.0;
    for (di, dim) in problem.dims.iter().enumerate() {
        for (li, label) in dim.labels.iter().enumerate() {
            let total = dim.totals[li];
            let corpus_share = total as f64 / problem.n as f64;
            for k in 0..3 {
                let split_share = if sizes[k] == 0 {
                    0.0
                } else {
                    counts[di][li][k] as f64 / sizes[k] as f64
                };
                let deviation_pp = if sizes[k] == 0 {
                    0.0
                } else {
                    (split_share - corpus_share).abs() * 100.0
                };
                if total >= MAJOR_LABEL_MIN {
                    max_major = max_major.max(deviation_pp);
                }
                deviations.push(LabelDeviation {
                    kind: dim.kind,
                    label: label.clone(),
                    split: Split::ASSIGNED[k],
                    label_count: total,
                    corpus_share,
                    split_share,
                    deviation_pp,
                });
            }
        }
    }
    (deviations, max_major)
}
