//! Frame-index selection. All indices are 1-based frame numbers.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::score::SuspicionWindow;

/// `floor(linspace(a, b, n))` with both endpoints included, computed in
/// exact integer arithmetic.
pub fn linspace_floor(a: usize, b: usize, n: usize) -> Vec<usize> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![a],
        _ => {
            let span = b - a;
            (0..n).map(|k| a + (k * span) / (n - 1)).collect()
        }
    }
}

/// Order-preserving removal of repeated indices.
pub fn dedup_preserving(indices: Vec<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(indices.len());
    for i in indices {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Frames fed to the captioner for the scored position centred at
/// `center_frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub center_frame: usize,
    pub indices: Vec<usize>,
    pub radius_seconds: f64,
    pub fps: f64,
    pub clip_size: usize,
}

/// Clip of `clip_size` evenly spaced frames spanning `radius_seconds` on
/// either side of `center`, clamped to the video.
pub fn clip_indices(
    center: usize,
    total_frames: usize,
    fps: f64,
    radius_seconds: f64,
    clip_size: usize,
) -> ClipSpec {
    let total_len = 2.0 * radius_seconds * fps + 1.0;
    let half = libm::floor(total_len / 2.0).max(0.0) as usize;
    let center = center.clamp(1, total_frames);
    let a = center.saturating_sub(half).max(1);
    let b = (center + half).min(total_frames);
    ClipSpec {
        center_frame: center,
        indices: linspace_floor(a, b, clip_size.max(1)),
        radius_seconds,
        fps,
        clip_size: clip_size.max(1),
    }
}

/// At most `cap` frames evenly spread over the window, endpoints included.
pub fn window_subsample(window: &SuspicionWindow, cap: usize) -> Vec<usize> {
    let cap = cap.max(1);
    let len = window.end - window.start + 1;
    if len <= cap {
        (window.start..=window.end).collect()
    } else if cap == 1 {
        alloc::vec![window.start]
    } else {
        dedup_preserving(linspace_floor(window.start, window.end, cap))
    }
}

/// `count` frames for description/overlay: spread over the whole video, or
/// over the suspicious window when one is given.
pub fn vau_frame_sample(
    total_frames: usize,
    window: Option<&SuspicionWindow>,
    count: usize,
) -> Vec<usize> {
    let (a, b) = match window {
        Some(w) => (w.start, w.end),
        None => (1, total_frames),
    };
    dedup_preserving(linspace_floor(a, b, count.max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn window(start: usize, end: usize) -> SuspicionWindow {
        SuspicionWindow {
            start,
            end,
            mean_score: 0.0,
            length: end - start + 1,
        }
    }

    #[test]
    fn clip_at_video_start() {
        let c = clip_indices(1, 10_000, 30.0, 10.0, 10);
        assert_eq!(c.indices, vec![1, 34, 67, 101, 134, 167, 201, 234, 267, 301]);
    }

    #[test]
    fn single_frame_video() {
        let c = clip_indices(1, 1, 30.0, 10.0, 10);
        assert_eq!(c.indices, vec![1; 10]);
    }

    #[test]
    fn clip_at_video_end() {
        let c = clip_indices(10_000, 10_000, 30.0, 10.0, 10);
        assert_eq!(*c.indices.last().unwrap(), 10_000);
        assert_eq!(c.indices[0], 9_700);
    }

    #[test]
    fn subsample_under_cap() {
        assert_eq!(window_subsample(&window(1, 100), 180), (1..=100).collect::<Vec<_>>());
        assert_eq!(window_subsample(&window(5, 5), 180), vec![5]);
    }

    #[test]
    fn subsample_over_cap() {
        let s = window_subsample(&window(1, 359), 180);
        assert_eq!(s.len(), 180);
        assert_eq!((s[0], s[179]), (1, 359));
        // floor(1 + k*358/179) = 1 + 2k
        assert!(s.iter().enumerate().all(|(k, &i)| i == 1 + 2 * k));
    }

    #[test]
    fn vau_samples() {
        assert_eq!(vau_frame_sample(16, None, 16), (1..=16).collect::<Vec<_>>());
        assert_eq!(vau_frame_sample(4, None, 16), vec![1, 2, 3, 4]);
        let s = vau_frame_sample(10_000, Some(&window(101, 500)), 16);
        assert_eq!(s.len(), 16);
        assert_eq!((s[0], s[15]), (101, 500));
        // floor(101 + k*399/15)
        assert_eq!(s[1], 127);
        assert_eq!(s[7], 287);
    }
}
