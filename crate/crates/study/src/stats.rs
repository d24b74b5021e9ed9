//! Descriptive statistics: per-method rating distributions and the
//! identification cross-table. Standard deviations use the n-1 divisor;
//! percentages and one-decimal displays round half up.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::StudyError;
use crate::schedule::{Method, ReviewItem};
use crate::store::{Identification, ReviewResponse};

/// `round_half_up(100 * n / total)` in exact integer arithmetic.
pub fn percent_half_up(n: u64, total: u64) -> u32 {
    if total == 0 {
        return 0;
    }
    ((200 * n + total) / (2 * total)) as u32
}

/// One decimal place, ties away from zero.
pub fn one_decimal(x: f64) -> String {
    let scaled = (x.abs() * 10.0 + 0.5 + 1e-9).floor() / 10.0;
    format!(
        "{}{scaled:.1}",
        if x < 0.0 && scaled > 0.0 { "-" } else { "" }
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingDistribution {
    /// Counts for ratings 1..=4.
    pub counts: [u64; 4],
    pub percentages: [u32; 4],
    pub n: u64,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// "mean (sd)" to one decimal.
    pub display: Option<String>,
}

impl RatingDistribution {
    pub fn from_counts(counts: [u64; 4]) -> Self {
        let n: u64 = counts.iter().sum();
        let mean = (n > 0).then(|| {
            counts
                .iter()
                .zip(1u64..)
                .map(|(c, r)| (c * r) as f64)
                .sum::<f64>()
                / n as f64
        });
        let sd = match mean {
            Some(m) if n > 1 => {
                let ss: f64 = counts
                    .iter()
                    .zip(1u64..)
                    .map(|(&c, r)| c as f64 * (r as f64 - m).powi(2))
                    .sum();
                Some((ss / (n - 1) as f64).sqrt())
            }
            _ => None,
        };
        Self {
            counts,
            percentages: counts.map(|c| percent_half_up(c, n)),
            n,
            mean,
            sd,
            display: mean
                .zip(sd)
                .map(|(m, s)| format!("{} ({})", one_decimal(m), one_decimal(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub reviews: u64,
    pub effectiveness: RatingDistribution,
    pub quality: RatingDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPercent {
    pub n: u64,
    /// Percent of all reviews.
    pub percent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationTable {
    pub total: u64,
    pub incorrect: CountPercent,
    pub traditional_when_synthetic: CountPercent,
    pub synthetic_when_traditional: CountPercent,
    pub correct: CountPercent,
    pub correct_synthetic: CountPercent,
    pub correct_traditional: CountPercent,
    pub cannot_tell: CountPercent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyStats {
    pub total_reviews: u64,
    pub traditional: MethodStats,
    pub synthetic: MethodStats,
    pub identification: IdentificationTable,
}

pub fn compute_stats(
    responses: &[ReviewResponse],
    schedule: &[ReviewItem],
) -> Result<StudyStats, StudyError> {
    let by_position: HashMap<usize, &ReviewItem> =
        schedule.iter().map(|i| (i.position, i)).collect();
    let mut seen = HashSet::new();
    let mut eff: HashMap<Method, [u64; 4]> = HashMap::new();
    let mut qual: HashMap<Method, [u64; 4]> = HashMap::new();
    let mut ident: HashMap<(Method, Identification), u64> = HashMap::new();

    for r in responses {
        let item = by_position
            .get(&r.position)
            .ok_or_else(|| StudyError::OrphanResponse {
                reviewer_id: r.reviewer_id.clone(),
                position: r.position,
            })?;
        if !seen.insert((r.reviewer_id.as_str(), r.position)) {
            return Err(StudyError::Duplicate {
                reviewer_id: r.reviewer_id.clone(),
                position: r.position,
            });
        }
        for (name, v) in [("effectiveness", r.effectiveness), ("quality", r.quality)] {
            if !(1..=4).contains(&v) {
                return Err(StudyError::InvalidResponse(format!("{name} {v}")));
            }
        }
        eff.entry(item.method).or_default()[usize::from(r.effectiveness - 1)] += 1;
        qual.entry(item.method).or_default()[usize::from(r.quality - 1)] += 1;
        *ident.entry((item.method, r.identification)).or_default() += 1;
    }

    let total = responses.len() as u64;
    let cp = |n: u64| CountPercent {
        n,
        percent: percent_half_up(n, total),
    };
    let id = |m: Method, i: Identification| ident.get(&(m, i)).copied().unwrap_or(0);
    let tw_s = id(Method::Synthetic, Identification::Traditional);
    let sw_t = id(Method::Traditional, Identification::Synthetic);
    let c_s = id(Method::Synthetic, Identification::Synthetic);
    let c_t = id(Method::Traditional, Identification::Traditional);
    let cannot = id(Method::Synthetic, Identification::CannotTell)
        + id(Method::Traditional, Identification::CannotTell);

    let method = |m: Method| {
        let e = eff.get(&m).copied().unwrap_or_default();
        MethodStats {
            reviews: e.iter().sum(),
            effectiveness: RatingDistribution::from_counts(e),
            quality: RatingDistribution::from_counts(qual.get(&m).copied().unwrap_or_default()),
        }
    };
    Ok(StudyStats {
        total_reviews: total,
        traditional: method(Method::Traditional),
        synthetic: method(Method::Synthetic),
        identification: IdentificationTable {
            total,
            incorrect: cp(tw_s + sw_t),
            traditional_when_synthetic: cp(tw_s),
            synthetic_when_traditional: cp(sw_t),
            correct: cp(c_s + c_t),
            correct_synthetic: cp(c_s),
            correct_traditional: cp(c_t),
            cannot_tell: cp(cannot),
        },
    })
}
