use serde::{Deserialize, Serialize};

/// Axis-aligned pixel rectangle with a model confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub confidence: f64,
}

impl BoundingBox {
    /// Builds a box with corners reordered so that `x1 <= x2` and `y1 <= y2`.
    pub fn from_corners(a: f64, b: f64, c: f64, d: f64, confidence: f64) -> Self {
        Self {
            x1: a.min(c),
            y1: b.min(d),
            x2: a.max(c),
            y2: b.max(d),
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    /// Clamps the corners into `[0, width] x [0, height]`.
    pub fn clamped(self, width: f64, height: f64) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
            confidence: self.confidence,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() == 0.0
    }

    pub fn same_rect(&self, other: &Self) -> bool {
        self.x1 == other.x1 && self.y1 == other.y1 && self.x2 == other.x2 && self.y2 == other.y2
    }

    pub fn translated(self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
            confidence: self.confidence,
        }
    }

    /// Intersection over union. Two identical zero-area boxes score 1.
    pub fn iou(&self, other: &Self) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            return if self.same_rect(other) { 1.0 } else { 0.0 };
        }
        (inter / union).clamp(0.0, 1.0)
    }
}
