//! Borderline-SMOTE: synthesize minority rows only from minority samples
//! that sit near the class boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StaticError;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoteNotice {
    /// Classes already had equal counts; nothing was generated.
    AlreadyBalanced,
    /// No minority sample qualified as borderline; nothing was generated.
    NoDangerSamples,
}

#[derive(Debug, Clone)]
pub struct SmoteOutcome {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
    pub minority_label: bool,
    pub danger_count: usize,
    pub synthetic_count: usize,
    pub notice: Option<SmoteNotice>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Indices of the `k` nearest rows to `x[query]` among `pool`, excluding
/// `query` itself; ties resolve to the lower index.
fn k_nearest(x: &[Vec<f64>], query: usize, pool: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&i| i != query)
        .map(|&i| (sq_dist(&x[query], &x[i]), i))
        .collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    d.select_nth_unstable_by(k - 1, cmp);
    d.truncate(k);
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// A minority sample is DANGER when between `k/2` (inclusive) and `k`
/// (exclusive) of its `k` nearest neighbours over all rows are majority.
/// Each synthetic row is `x + u * (x_nn - x)` with `u ~ U(0, 1)` and `x_nn`
/// drawn from the sample's `k` nearest minority neighbours. DANGER samples
/// are used round-robin until the classes are level. Original rows come
/// first and are untouched.
pub fn borderline_smote(
    x: &[Vec<f64>],
    y: &[bool],
    k: usize,
    seed: u64,
) -> Result<SmoteOutcome, StaticError> {
    if x.len() != y.len() {
        return Err(StaticError::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    if k == 0 {
        return Err(StaticError::InvalidParams("SMOTE k must be at least 1".into()));
    }
    let pos = y.iter().filter(|&&v| v).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(StaticError::SingleClass);
    }
    let minority_label = pos < neg;
    let unchanged = |notice, danger_count| SmoteOutcome {
        x: x.to_vec(),
        y: y.to_vec(),
        minority_label,
        danger_count,
        synthetic_count: 0,
        notice: Some(notice),
    };
    if pos == neg {
        return Ok(unchanged(SmoteNotice::AlreadyBalanced, 0));
    }
    let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority_label).collect();
    let majority_count = y.len() - minority.len();
    if minority.len() <= k {
        return Err(StaticError::TooFewMinority {
            minority: minority.len(),
            k,
        });
    }
    let everyone: Vec<usize> = (0..y.len()).collect();
    let is_danger = par::map_slice(&minority, |&i| {
        let majority_nn = k_nearest(x, i, &everyone, k)
            .into_iter()
            .filter(|&j| y[j] != minority_label)
            .count();
        2 * majority_nn >= k && majority_nn < k
    });
    let danger: Vec<usize> = minority
        .iter()
        .zip(&is_danger)
        .filter(|(_, &d)| d)
        .map(|(&i, _)| i)
        .collect();
    if danger.is_empty() {
        return Ok(unchanged(SmoteNotice::NoDangerSamples, 0));
    }
    let neighbours = par::map_slice(&danger, |&i| k_nearest(x, i, &minority, k));

    let need = majority_count - minority.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out_x = x.to_vec();
    let mut out_y = y.to_vec();
    out_x.reserve(need);
    out_y.reserve(need);
    for s in 0..need {
        let slot = s % danger.len();
        let base = &x[danger[slot]];
        let nn = &x[neighbours[slot][rng.random_range(0..neighbours[slot].len())]];
        let u: f64 = rng.random();
        out_x.push(base.iter().zip(nn).map(|(a, b)| a + u * (b - a)).collect());
        out_y.push(minority_label);
    }
    Ok(SmoteOutcome {
        x: out_x,
        y: out_y,
        minority_label,
        danger_count: danger.len(),
        synthetic_count: need,
        notice: None,
    })
}
