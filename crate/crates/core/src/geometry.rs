//! Axis-aligned domains and the uniform state grid.
//!
//! Grid points are integer multiples of a single quantization parameter `eta`,
//! anchored at the origin. All distances are measured in the infinity norm.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Default cap on the number of grid points a domain may enumerate.
pub const DEFAULT_POINT_CAP: u64 = 100_000_000;

/// Relative slack (in units of `eta`) used by every membership test.
pub const MEMBERSHIP_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box bounds have mismatched dimensions ({lower} vs {upper})")]
    DimensionMismatch { lower: usize, upper: usize },
    #[error("box is empty or degenerate in dimension {dim}: [{lower}, {upper}]")]
    EmptyBox { dim: usize, lower: f64, upper: f64 },
    #[error("grid domain needs at least one box")]
    NoBoxes,
    #[error("quantization parameter {eta} must be positive and at most the smallest side length {max}")]
    InvalidEta { eta: f64, max: f64 },
    #[error("point {point:?} is outside the grid domain")]
    OutOfDomain { point: Vec<f64> },
    #[error("domain has {count} grid points, more than the cap of {cap}")]
    DomainTooLarge { count: u64, cap: u64 },
}

/// Closed axis-aligned box `[lower_1, upper_1] x ... x [lower_n, upper_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GeometryError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(GeometryError::DimensionMismatch {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for (dim, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(GeometryError::EmptyBox { dim, lower: lo, upper: hi });
            }
        }
        Ok(Self { lower, upper })
    }

    /// One-dimensional interval `[lower, upper]`.
    pub fn interval(lower: f64, upper: f64) -> Result<Self, GeometryError> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn min_side(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Membership with an absolute slack on every side.
    pub fn contains_with_slack(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&xi, (&lo, &hi))| xi >= lo - slack && xi <= hi + slack)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_with_slack(x, 0.0)
    }

    /// Shrinks every side by `amount`. Returns `None` when nothing is left.
    pub fn deflate(&self, amount: f64) -> Option<AxisBox> {
        let lower: Vec<f64> = self.lower.iter().map(|lo| lo + amount).collect();
        let upper: Vec<f64> = self.upper.iter().map(|hi| hi - amount).collect();
        if lower.iter().zip(&upper).all(|(lo, hi)| lo <= hi) {
            Some(AxisBox { lower, upper })
        } else {
            None
        }
    }

    /// Integer grid range `k_lo..=k_hi` per dimension for points `k * eta` inside the box.
    fn index_ranges(&self, eta: f64) -> Vec<(i64, i64)> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| (ceil_index(lo / eta), floor_index(hi / eta)))
            .collect()
    }
}

impl fmt::Display for AxisBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if i > 0 {
                write!(f, " x ")?;
            }
            write!(f, "[{lo}, {hi}]")?;
        }
        Ok(())
    }
}

fn ceil_index(v: f64) -> i64 {
    (v - MEMBERSHIP_SLACK).ceil() as i64
}

fn floor_index(v: f64) -> i64 {
    (v + MEMBERSHIP_SLACK).floor() as i64
}

/// Grid point identified by its integer coordinates (multiples of `eta`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridIndex(pub Vec<i64>);

impl GridIndex {
    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn decode(&self, eta: f64) -> Vec<f64> {
        self.0.iter().map(|&k| k as f64 * eta).collect()
    }
}

/// Nearest grid coordinate; exact half-ties (up to the membership slack) round toward +inf.
pub fn round_to_grid(x: f64, eta: f64) -> i64 {
    (x / eta + 0.5 + MEMBERSHIP_SLACK).floor() as i64
}

/// All lattice points `k * eta` within infinity-norm distance `radius` of `center`,
/// in lexicographic order, ignoring any domain.
pub fn lattice_ball(center: &[f64], radius: f64, eta: f64) -> Vec<GridIndex> {
    debug_assert!(radius >= 0.0);
    let ranges: Vec<(i64, i64)> = center
        .iter()
        .map(|&c| (ceil_index((c - radius) / eta), floor_index((c + radius) / eta)))
        .collect();
    let mut out = Vec::new();
    for_each_in_ranges(&ranges, |coords| out.push(GridIndex(coords.to_vec())));
    out
}

/// Union of boxes together with the grid `[S]_eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain {
    boxes: Vec<AxisBox>,
    eta: f64,
    point_cap: u64,
}

impl GridDomain {
    pub fn new(boxes: Vec<AxisBox>, eta: f64) -> Result<Self, GeometryError> {
        let first = boxes.first().ok_or(GeometryError::NoBoxes)?;
        let dim = first.dim();
        if let Some(b) = boxes.iter().find(|b| b.dim() != dim) {
            return Err(GeometryError::DimensionMismatch { lower: dim, upper: b.dim() });
        }
        let max = boxes.iter().map(AxisBox::min_side).fold(f64::INFINITY, f64::min);
        if !(eta > 0.0) || eta > max * (1.0 + MEMBERSHIP_SLACK) {
            return Err(GeometryError::InvalidEta { eta, max });
        }
        Ok(Self { boxes, eta, point_cap: DEFAULT_POINT_CAP })
    }

    pub fn single(b: AxisBox, eta: f64) -> Result<Self, GeometryError> {
        Self::new(vec![b], eta)
    }

    pub fn with_point_cap(mut self, cap: u64) -> Self {
        self.point_cap = cap;
        self
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn boxes(&self) -> &[AxisBox] {
        &self.boxes
    }

    pub fn decode(&self, q: &GridIndex) -> Vec<f64> {
        q.decode(self.eta)
    }

    /// Membership of a real point, with the `1e-9 * eta` guard.
    pub fn contains_point(&self, x: &[f64]) -> bool {
        let slack = MEMBERSHIP_SLACK * self.eta;
        self.boxes.iter().any(|b| b.contains_with_slack(x, slack))
    }

    pub fn contains_index(&self, q: &GridIndex) -> bool {
        q.0.len() == self.dim() && self.contains_point(&self.decode(q))
    }

    /// Nearest grid point in the infinity norm.
    pub fn quantize(&self, x: &[f64]) -> Result<GridIndex, GeometryError> {
        let out_of_domain = || GeometryError::OutOfDomain { point: x.to_vec() };
        let half = 0.5 * self.eta;
        if x.len() != self.dim() || !self.boxes.iter().any(|b| b.contains_with_slack(x, half)) {
            return Err(out_of_domain());
        }
        let q = GridIndex(x.iter().map(|&xi| round_to_grid(xi, self.eta)).collect());
        if self.contains_index(&q) {
            Ok(q)
        } else {
            Err(out_of_domain())
        }
    }

    /// Grid points of the domain within infinity-norm distance `radius` of `center`, sorted.
    pub fn ball_points(&self, center: &[f64], radius: f64) -> Vec<GridIndex> {
        let mut ball = lattice_ball(center, radius, self.eta);
        ball.retain(|q| self.contains_index(q));
        ball
    }

    /// Number of grid points, counted with duplicates across overlapping boxes removed.
    pub fn point_count(&self) -> Result<u64, GeometryError> {
        if self.boxes.len() == 1 {
            let n = box_count(&self.boxes[0], self.eta);
            return if n > self.point_cap {
                Err(GeometryError::DomainTooLarge { count: n, cap: self.point_cap })
            } else {
                Ok(n)
            };
        }
        Ok(self.enumerate()?.len() as u64)
    }

    /// All grid points in lexicographic order, without duplicates.
    pub fn enumerate(&self) -> Result<Vec<GridIndex>, GeometryError> {
        let upper_bound: u64 = self
            .boxes
            .iter()
            .map(|b| box_count(b, self.eta))
            .fold(0u64, u64::saturating_add);
        if upper_bound > self.point_cap {
            return Err(GeometryError::DomainTooLarge { count: upper_bound, cap: self.point_cap });
        }
        if self.boxes.len() == 1 {
            let mut out = Vec::with_capacity(upper_bound as usize);
            for_each_in_ranges(&self.boxes[0].index_ranges(self.eta), |c| {
                out.push(GridIndex(c.to_vec()))
            });
            return Ok(out);
        }
        let mut set = BTreeSet::new();
        for b in &self.boxes {
            for_each_in_ranges(&b.index_ranges(self.eta), |c| {
                set.insert(GridIndex(c.to_vec()));
            });
        }
        Ok(set.into_iter().collect())
    }
}

fn box_count(b: &AxisBox, eta: f64) -> u64 {
    b.index_ranges(eta)
        .iter()
        .map(|&(lo, hi)| if hi >= lo { (hi - lo + 1) as u64 } else { 0 })
        .fold(1u64, u64::saturating_mul)
}

/// Visits every integer vector in the product of inclusive ranges, lexicographically.
fn for_each_in_ranges(ranges: &[(i64, i64)], mut visit: impl FnMut(&[i64])) {
    if ranges.iter().any(|&(lo, hi)| hi < lo) {
        return;
    }
    let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        visit(&cur);
        let mut d = ranges.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if cur[d] < ranges[d].1 {
                cur[d] += 1;
                for (c, r) in cur[d + 1..].iter_mut().zip(&ranges[d + 1..]) {
                    *c = r.0;
                }
                break;
            }
        }
    }
}
