//! Score-series numerics: suspicious-window search, surrogate score, the
//! refinement gate and Gaussian post-smoothing.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Absolute slack used by the inclusive gate comparison so that decimal
/// band edges such as `|0.55 - 0.5| <= 0.05` hold despite binary rounding.
pub const GATE_EPSILON: f64 = 1e-12;

/// Upper clamp applied to the adaptive (variance) margin.
pub const MAX_ADAPTIVE_MARGIN: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("score series is empty")]
    Empty,
    #[error("stride must be positive")]
    ZeroStride,
    #[error("total_frames must be positive")]
    ZeroFrames,
    #[error("series has {got} values but ceil({total_frames}/{stride}) = {expected}")]
    LengthMismatch {
        got: usize,
        expected: usize,
        total_frames: usize,
        stride: usize,
    },
    #[error("score {value} at position {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid smoothing config: {0}")]
    Smoothing(&'static str),
}

/// Anomaly scores sampled every `stride` frames over a video of
/// `total_frames` frames. Position `p` (0-based) covers frames
/// `p*stride + 1 ..= min((p+1)*stride, total_frames)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSeries", into = "RawSeries")]
pub struct ScoreSeries {
    values: Vec<f64>,
    stride: usize,
    total_frames: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSeries {
    values: Vec<f64>,
    stride: usize,
    total_frames: usize,
}

impl TryFrom<RawSeries> for ScoreSeries {
    type Error = SeriesError;

    fn try_from(raw: RawSeries) -> Result<Self, Self::Error> {
        ScoreSeries::new(raw.values, raw.stride, raw.total_frames)
    }
}

impl From<ScoreSeries> for RawSeries {
    fn from(s: ScoreSeries) -> Self {
        RawSeries {
            values: s.values,
            stride: s.stride,
            total_frames: s.total_frames,
        }
    }
}

/// Number of scored positions for a video of `total_frames` at `stride`.
pub fn position_count(total_frames: usize, stride: usize) -> usize {
    total_frames.div_ceil(stride)
}

impl ScoreSeries {
    pub fn new(values: Vec<f64>, stride: usize, total_frames: usize) -> Result<Self, SeriesError> {
        if stride == 0 {
            return Err(SeriesError::ZeroStride);
        }
        if total_frames == 0 {
            return Err(SeriesError::ZeroFrames);
        }
        if values.is_empty() {
            return Err(SeriesError::Empty);
        }
        let expected = position_count(total_frames, stride);
        if values.len() != expected {
            return Err(SeriesError::LengthMismatch {
                got: values.len(),
                expected,
                total_frames,
                stride,
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(SeriesError::OutOfRange { index, value });
        }
        Ok(Self {
            values,
            stride,
            total_frames,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// First frame (1-based) covered by position `p`.
    pub fn position_start_frame(&self, p: usize) -> usize {
        p * self.stride + 1
    }

    /// Score held by frame `f` (1-based).
    pub fn frame_score(&self, frame: usize) -> f64 {
        self.values[(frame - 1) / self.stride]
    }

    /// Same positions and stride with different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, SeriesError> {
        Self::new(values, self.stride, self.total_frames)
    }

    /// Sum of frame-level (held) scores over frames `1..=frame`.
    fn frame_prefix(&self, prefix: &[f64], frame: usize) -> f64 {
        let full = frame / self.stride;
        let rem = frame % self.stride;
        let mut sum = prefix[full];
        if rem > 0 {
            sum += rem as f64 * self.values[full];
        }
        sum
    }
}

/// Contiguous frame interval `[start, end]` (1-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspicionWindow {
    pub start: usize,
    pub end: usize,
    pub mean_score: f64,
    pub length: usize,
}

impl SuspicionWindow {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start..=self.end).contains(&frame)
    }
}

/// Rule for the suspicious-window length: `max(floor, T / divisor)` with the
/// division rounded down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRule {
    pub floor: usize,
    pub divisor: usize,
}

impl Default for WindowRule {
    fn default() -> Self {
        Self {
            floor: 300,
            divisor: 10,
        }
    }
}

impl WindowRule {
    /// Window length in frames for a video of `total_frames`, clamped to the
    /// video length.
    pub fn length_for(&self, total_frames: usize) -> usize {
        let scaled = total_frames.checked_div(self.divisor).unwrap_or(0);
        self.floor.max(scaled).clamp(1, total_frames.max(1))
    }
}

/// Finds the `window_frames`-long frame window with the largest mean held
/// score. Ties go to the earliest start.
///
/// The window sum is piecewise linear in the start frame, with breakpoints
/// where either edge crosses a stride block boundary, so only those starts
/// need evaluating. Candidate sums within rounding noise of each other are
/// treated as ties. The reported mean is summed frame by frame over the
/// chosen window.
pub fn sliding_window_max_mean(series: &ScoreSeries, window_frames: usize) -> SuspicionWindow {
    let t = series.total_frames;
    let len = window_frames.clamp(1, t);
    let stride = series.stride;
    let last_start = t - len + 1;

    // Neumaier-compensated prefix sums keep each entry within a few ulps.
    let mut prefix = Vec::with_capacity(series.values.len() + 1);
    prefix.push(0.0);
    let (mut acc, mut comp) = (0.0f64, 0.0f64);
    for &v in &series.values {
        let x = v * stride as f64;
        let t = acc + x;
        if acc.abs() >= x.abs() {
            comp += (acc - t) + x;
        } else {
            comp += (x - t) + acc;
        }
        acc = t;
        prefix.push(acc + comp);
    }
    let tie_tolerance = 64.0 * f64::EPSILON * (acc + comp).max(1.0);

    let mut starts = Vec::with_capacity(2 * series.values.len() + 2);
    starts.push(1);
    starts.push(last_start);
    for p in 0..=series.values.len() {
        let block_start = p * stride + 1;
        if block_start <= last_start {
            starts.push(block_start);
        }
        // start whose window ends on the frame before `block_start`
        if block_start > len && block_start - len <= last_start {
            starts.push(block_start - len);
        }
    }
    starts.sort_unstable();
    starts.dedup();

    let mut best_start = 1;
    let mut best_sum = f64::NEG_INFINITY;
    for &s in &starts {
        let sum = series.frame_prefix(&prefix, s + len - 1) - series.frame_prefix(&prefix, s - 1);
        if sum > best_sum + tie_tolerance {
            best_sum = sum;
            best_start = s;
        }
    }

    let end = best_start + len - 1;
    let covered: f64 = (best_start..=end).map(|f| series.frame_score(f)).sum();
    SuspicionWindow {
        start: best_start,
        end,
        mean_score: (covered / len as f64).clamp(0.0, 1.0),
        length: len,
    }
}

/// Video-level anomaly probability: the mean score of the most suspicious
/// window.
pub fn surrogate_score(window: &SuspicionWindow) -> f64 {
    window.mean_score.clamp(0.0, 1.0)
}

/// Population variance of the series values.
pub fn variance_margin(series: &ScoreSeries) -> f64 {
    // shifted by the first value so that a constant series gives exactly 0
    let n = series.values.len() as f64;
    let shift = series.values[0];
    let mean = series.values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = series
        .values
        .iter()
        .map(|v| {
            let d = (v - shift) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    var.clamp(0.0, 0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    Fixed,
    AdaptiveVariance,
}

/// How the gate half-width is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum MarginMode {
    Fixed(f64),
    AdaptiveVariance,
}

impl Default for MarginMode {
    fn default() -> Self {
        MarginMode::Fixed(0.05)
    }
}

impl MarginMode {
    pub fn kind(&self) -> MarginKind {
        match self {
            MarginMode::Fixed(_) => MarginKind::Fixed,
            MarginMode::AdaptiveVariance => MarginKind::AdaptiveVariance,
        }
    }

    /// Concrete margin for a given first-pass series.
    pub fn resolve(&self, series: &ScoreSeries) -> f64 {
        match *self {
            MarginMode::Fixed(m) => m,
            MarginMode::AdaptiveVariance => variance_margin(series).clamp(0.0, MAX_ADAPTIVE_MARGIN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub surrogate: f64,
    pub margin: f64,
    pub boundary: f64,
    pub refine: bool,
    pub margin_mode: MarginKind,
}

/// Refine iff the surrogate falls inside the closed band
/// `[boundary - margin, boundary + margin]`.
pub fn gate_decision(surrogate: f64, margin: f64, boundary: f64) -> GateDecision {
    gate_decision_with_kind(surrogate, margin, boundary, MarginKind::Fixed)
}

pub fn gate_decision_with_kind(
    surrogate: f64,
    margin: f64,
    boundary: f64,
    margin_mode: MarginKind,
) -> GateDecision {
    let margin = margin.max(0.0);
    GateDecision {
        surrogate,
        margin,
        boundary,
        refine: (surrogate - boundary).abs() <= margin + GATE_EPSILON,
        margin_mode,
    }
}

/// Reflect-boundary Gaussian smoothing parameters (sigma in score positions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub sigma: f64,
    pub truncate: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            truncate: 4.0,
        }
    }
}

impl SmoothingConfig {
    pub fn new(sigma: f64, truncate: f64) -> Result<Self, SeriesError> {
        let cfg = Self { sigma, truncate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SeriesError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(SeriesError::Smoothing("sigma must be positive"));
        }
        if !(self.truncate > 0.0 && self.truncate.is_finite()) {
            return Err(SeriesError::Smoothing("truncate must be positive"));
        }
        if self.radius() < 1 {
            return Err(SeriesError::Smoothing("kernel radius must be at least 1"));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        libm::floor(self.truncate * self.sigma + 0.5) as usize
    }

    /// Normalized kernel of length `2 * radius + 1`, centre at index `radius`.
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.radius() as i64;
        let s2 = self.sigma * self.sigma;
        let mut k: Vec<f64> = (-r..=r)
            .map(|x| libm::exp(-0.5 / s2 * (x * x) as f64))
            .collect();
        let total: f64 = k.iter().sum();
        for w in &mut k {
            *w /= total;
        }
        k
    }
}

/// Maps an out-of-range index onto `0..n` by half-sample mirroring
/// (`v[-1-j] = v[j]`, `v[n+j] = v[n-1-j]`), repeating with period `2n`.
pub fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    if m < n {
        m as usize
    } else {
        (2 * n - 1 - m) as usize
    }
}

pub fn gaussian_smooth(series: &ScoreSeries, config: &SmoothingConfig) -> ScoreSeries {
    let kernel = config.kernel();
    let r = config.radius() as i64;
    let n = series.values.len();
    let out = (0..n as i64)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * series.values[reflect_index(i + k as i64 - r, n)])
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    ScoreSeries {
        values: out,
        stride: series.stride,
        total_frames: series.total_frames,
    }
}

/// Zero-order hold: every frame receives the score of its stride block.
pub fn expand_to_frames(series: &ScoreSeries) -> Vec<f64> {
    (1..=series.total_frames)
        .map(|f| series.frame_score(f))
        .collect()
}
