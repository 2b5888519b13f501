//! Brute-force reference implementations used by the test suites. None of
//! these share code paths with the library.

#![allow(dead_code)]

/// Exhaustive scan over every start frame of a held (zero-order) series,
/// earliest start on ties. Returns `(start, mean)`.
pub fn window_scan(values: &[f64], stride: usize, total_frames: usize, len: usize) -> (usize, f64) {
    let len = len.clamp(1, total_frames);
    let frames: Vec<f64> = (0..total_frames).map(|f| values[f / stride]).collect();
    let mut sum: f64 = frames[..len].iter().sum();
    let (mut best, mut best_start) = (sum, 0);
    for s in 1..=total_frames - len {
        sum += frames[s + len - 1] - frames[s - 1];
        if sum > best {
            best = sum;
            best_start = s;
        }
    }
    let covered: f64 = frames[best_start..best_start + len].iter().sum();
    (best_start + 1, covered / len as f64)
}

fn mirror(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Direct-summation Gaussian filter with half-sample mirroring.
pub fn gaussian_direct(values: &[f64], sigma: f64, truncate: f64) -> Vec<f64> {
    let radius = (truncate * sigma + 0.5).floor() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = raw.iter().sum();
    let n = values.len() as i64;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, w) in raw.iter().enumerate() {
                acc += w / norm * values[mirror(i + j as i64 - radius, n)];
            }
            acc
        })
        .collect()
}

/// O(n^2) pairwise AUC with half credit for ties.
pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// AP by enumerating every distinct threshold from the top.
pub fn ap_thresholds(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / positives;
        let precision = tp / predicted.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Memoized recursive LCS length.
pub fn lcs_recursive(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

/// Exact `floor(a + k (b - a) / (n - 1))` via rationals in u128.
pub fn linspace_floor_oracle(a: usize, b: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|k| {
            let num = (a as u128) * (n as u128 - 1) + (k as u128) * (b as u128 - a as u128);
            (num / (n as u128 - 1)) as usize
        })
        .collect()
}
