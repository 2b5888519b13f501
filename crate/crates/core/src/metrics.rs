//! Evaluation metrics: frame-level ROC-AUC and AP, confidence-gated box IoU
//! (TIoU), and BLEU / ROUGE-L for descriptions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::BoundingBox;

/// ROUGE-L recall weight.
pub const ROUGE_L_BETA: f64 = 1.2;

pub const BLEU_MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("labels contain a single class ({positives} positives, {negatives} negatives)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("scores ({scores}) and labels ({labels}) differ in length")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("no annotated frames to evaluate")]
    NoAnnotatedFrames,
    #[error("text is empty after tokenization")]
    EmptyText,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    Ok((positives, labels.len() - positives))
}

/// Index order by ascending score.
fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Mann-Whitney AUC: probability that a random positive outscores a random
/// negative, ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (positives, negatives) = check_inputs(scores, labels)?;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::DegenerateLabels {
            positives,
            negatives,
        });
    }
    let order = ascending_order(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg_rank * group_pos as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64);
    Ok(auc.clamp(0.0, 1.0))
}

/// Step-wise AP over descending thresholds; equal scores enter together.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (positives, negatives) = check_inputs(scores, labels)?;
    if positives == 0 {
        return Err(MetricError::DegenerateLabels {
            positives,
            negatives,
        });
    }
    let mut order = ascending_order(scores);
    order.reverse();
    let total = positives as f64;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / total;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap.clamp(0.0, 1.0))
}

/// Mean confidence-gated IoU over every frame that has ground-truth boxes.
///
/// A frame's prediction is its highest-confidence box; it counts only when
/// that confidence reaches `threshold`, and is scored against the
/// best-matching ground-truth box.
pub fn tiou<K: Ord>(
    predictions: &BTreeMap<K, Vec<BoundingBox>>,
    ground_truth: &BTreeMap<K, Vec<BoundingBox>>,
    threshold: f64,
) -> Result<f64, MetricError> {
    let mut frames = 0usize;
    let mut total = 0.0;
    for (key, gts) in ground_truth {
        if gts.is_empty() {
            continue;
        }
        frames += 1;
        let best = predictions.get(key).and_then(|boxes| {
            boxes.iter().fold(None::<&BoundingBox>, |acc, b| match acc {
                Some(a) if a.confidence >= b.confidence => Some(a),
                _ => Some(b),
            })
        });
        if let Some(pred) = best.filter(|p| p.confidence >= threshold) {
            total += gts.iter().map(|g| pred.iou(g)).fold(0.0, f64::max);
        }
    }
    if frames == 0 {
        return Err(MetricError::NoAnnotatedFrames);
    }
    Ok(total / frames as f64)
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuOptions {
    /// Add-one smoothing of the order >= 2 precisions.
    pub smoothing: bool,
}

/// Sufficient statistics for BLEU; sum over pairs for corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; BLEU_MAX_ORDER],
    pub totals: [usize; BLEU_MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn from_pair(candidate: &str, reference: &str) -> Result<Self, MetricError> {
        let cand = tokenize(candidate);
        let refs = tokenize(reference);
        if cand.is_empty() || refs.is_empty() {
            return Err(MetricError::EmptyText);
        }
        let mut stats = BleuStats {
            candidate_len: cand.len(),
            reference_len: refs.len(),
            ..Default::default()
        };
        for n in 1..=BLEU_MAX_ORDER {
            let c = ngram_counts(&cand, n);
            let r = ngram_counts(&refs, n);
            stats.totals[n - 1] = cand.len().saturating_sub(n - 1);
            stats.matches[n - 1] = c
                .iter()
                .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
                .sum();
        }
        Ok(stats)
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..BLEU_MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn score(&self, options: BleuOptions) -> f64 {
        let mut log_sum = 0.0;
        for n in 0..BLEU_MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if options.smoothing && n > 0 {
                (m + 1.0) / (t + 1.0)
            } else if t == 0.0 {
                0.0
            } else {
                m / t
            };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += libm::log(p);
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c < r { libm::exp(1.0 - r / c) } else { 1.0 };
        (bp * libm::exp(log_sum / BLEU_MAX_ORDER as f64)).clamp(0.0, 1.0)
    }
}

pub fn bleu(candidate: &str, reference: &str, options: BleuOptions) -> Result<f64, MetricError> {
    Ok(BleuStats::from_pair(candidate, reference)?.score(options))
}

/// Corpus BLEU: clipped counts and lengths pooled over all pairs.
pub fn corpus_bleu<'a, I>(pairs: I, options: BleuOptions) -> Result<f64, MetricError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut total = BleuStats::default();
    let mut any = false;
    for (c, r) in pairs {
        total.merge(&BleuStats::from_pair(c, r)?);
        any = true;
    }
    if !any {
        return Err(MetricError::EmptyText);
    }
    Ok(total.score(options))
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1 + b^2) R P / (R + b^2 P)` with `b = 1.2`.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() || refs.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let lcs = lcs_len(&cand, &refs) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / refs.len() as f64;
    let b2 = ROUGE_L_BETA * ROUGE_L_BETA;
    Ok(((1.0 + b2) * r * p / (r + b2 * p)).clamp(0.0, 1.0))
}
