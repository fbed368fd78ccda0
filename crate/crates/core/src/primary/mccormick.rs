//! Closed intervals and McCormick envelopes of bilinear products.

use std::fmt;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_empty(self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn is_point(self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Distance from `x` to the interval, zero inside.
    pub fn excess(self, x: f64) -> f64 {
        (self.lo - x).max(x - self.hi).max(0.0)
    }

    pub fn intersect(self, other: Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn hull(self, other: Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn scale(self, k: f64) -> Interval {
        if k >= 0.0 {
            Interval::new(k * self.lo, k * self.hi)
        } else {
            Interval::new(k * self.hi, k * self.lo)
        }
    }

    pub fn mul(self, other: Interval) -> Interval {
        let p = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        Interval::new(
            p.iter().copied().fold(f64::INFINITY, f64::min),
            p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Widens the interval to include `x`.
    pub fn include(self, x: f64) -> Interval {
        Interval::new(self.lo.min(x), self.hi.max(x))
    }
}

impl std::ops::Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }
}

impl std::ops::Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutSide {
    /// `w >= x_coef·x + y_coef·y + constant`
    Under,
    /// `w <= x_coef·x + y_coef·y + constant`
    Over,
}

/// One linear face of the envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCut {
    pub side: CutSide,
    pub x_coef: f64,
    pub y_coef: f64,
    pub constant: f64,
}

impl EnvelopeCut {
    pub fn rhs_at(&self, x: f64, y: f64) -> f64 {
        self.x_coef * x + self.y_coef * y + self.constant
    }

    /// Amount by which `w` violates the cut at `(x, y)`, zero if satisfied.
    pub fn violation(&self, x: f64, y: f64, w: f64) -> f64 {
        let r = self.rhs_at(x, y);
        match self.side {
            CutSide::Under => (r - w).max(0.0),
            CutSide::Over => (w - r).max(0.0),
        }
    }
}

/// The four inequalities bounding `w = x·y` over `x_box × y_box`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub w_name: String,
    pub x_box: Interval,
    pub y_box: Interval,
    pub cuts: [EnvelopeCut; 4],
}

impl Envelope {
    /// Range of `w` admitted at `(x, y)`.
    pub fn range_at(&self, x: f64, y: f64) -> Interval {
        let mut r = Interval::new(f64::NEG_INFINITY, f64::INFINITY);
        for c in &self.cuts {
            let v = c.rhs_at(x, y);
            match c.side {
                CutSide::Under => r.lo = r.lo.max(v),
                CutSide::Over => r.hi = r.hi.min(v),
            }
        }
        r
    }

    pub fn max_violation(&self, x: f64, y: f64, w: f64) -> f64 {
        self.cuts
            .iter()
            .map(|c| c.violation(x, y, w))
            .fold(0.0, f64::max)
    }

    /// When either factor's box is a single point the envelope is exactly
    /// `w = x_coef·x + y_coef·y`; returns those coefficients.
    pub fn as_equality(&self) -> Option<(f64, f64)> {
        if self.x_box.is_point() {
            Some((0.0, self.x_box.lo))
        } else if self.y_box.is_point() {
            Some((self.y_box.lo, 0.0))
        } else {
            None
        }
    }
}

/// Builds the McCormick envelope of `w = x·y`.
///
/// Underestimators pass through the (lo, lo) and (hi, hi) corners,
/// overestimators through the two mixed corners.
pub fn build_mce(w_name: impl Into<String>, x_box: Interval, y_box: Interval) -> Envelope {
    let (xl, xu, yl, yu) = (x_box.lo, x_box.hi, y_box.lo, y_box.hi);
    let cut = |side, x_coef, y_coef, constant| EnvelopeCut {
        side,
        x_coef,
        y_coef,
        constant,
    };
    Envelope {
        w_name: w_name.into(),
        x_box,
        y_box,
        cuts: [
            cut(CutSide::Under, yl, xl, -xl * yl),
            cut(CutSide::Under, yu, xu, -xu * yu),
            cut(CutSide::Over, yu, xl, -xl * yu),
            cut(CutSide::Over, yl, xu, -xu * yl),
        ],
    }
}
