//! Rectangular scheduling grids and multilinear interpolation on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced::Mode;
use crate::scalar::{lit, to_f64, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub unit: String,
}

/// Box of admissible scheduling values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulingRange {
    pub axes: Vec<Axis>,
}

impl SchedulingRange {
    /// Operating ranges of the two modes. Disk rates are in rad/s.
    pub fn default_for(mode: Mode) -> Self {
        let ang = |n: &str| Axis { name: n.into(), lo: -PI / 3.0, hi: PI / 3.0, unit: "rad".into() };
        let spin = Axis { name: "dq1".into(), lo: 30.0, hi: 60.0, unit: "rad/s".into() };
        let rate = |n: &str| Axis { name: n.into(), lo: -1.0, hi: 1.0, unit: "rad/s".into() };
        let axes = match mode {
            Mode::Om1 => vec![ang("q2"), ang("q3"), spin, rate("dq2"), rate("dq3")],
            Mode::Om2 => vec![ang("q2"), spin, rate("dq2"), rate("dq4")],
        };
        SchedulingRange { axes }
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.axes {
            if !(a.lo.is_finite() && a.hi.is_finite() && a.lo < a.hi) {
                return Err(Error::Config(format!("axis '{}' needs lo < hi, got [{}, {}]", a.name, a.lo, a.hi)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }
}

/// Tensor grid with equally spaced nodes on every axis, endpoints included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub range: SchedulingRange,
    pub points_per_axis: usize,
}

impl Grid {
    pub fn new(range: SchedulingRange, points_per_axis: usize) -> Result<Self> {
        range.validate()?;
        if points_per_axis < 2 {
            return Err(Error::Config(format!("need at least 2 grid points per axis, got {points_per_axis}")));
        }
        Ok(Grid { range, points_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.range.dim()
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `i` of axis `a`.
    pub fn node(&self, a: usize, i: usize) -> f64 {
        let ax = &self.range.axes[a];
        if i + 1 == self.points_per_axis {
            return ax.hi;
        }
        ax.lo + (ax.hi - ax.lo) * i as f64 / (self.points_per_axis - 1) as f64
    }

    /// Per-axis node indices of a flat index. The first axis varies slowest.
    pub fn multi_index(&self, mut k: usize) -> Vec<usize> {
        let p = self.points_per_axis;
        let mut idx = vec![0; self.dim()];
        for slot in idx.iter_mut().rev() {
            *slot = k % p;
            k /= p;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points_per_axis + i)
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        self.multi_index(k).iter().enumerate().map(|(a, &i)| self.node(a, i)).collect()
    }

    /// All grid points in lexicographic order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Multilinear weights of the cell containing `sigma` (clamped into the
    /// range). Returns `(flat index, weight)` pairs with nonzero weight and
    /// whether any coordinate had to be clamped.
    pub fn weights<T: Real>(&self, sigma: &[T]) -> (Vec<(usize, T)>, bool) {
        let p = self.points_per_axis;
        let mut clamped = false;
        let mut base = Vec::with_capacity(self.dim());
        let mut frac = Vec::with_capacity(self.dim());
        for (a, ax) in self.range.axes.iter().enumerate() {
            let lo: T = lit(ax.lo);
            let hi: T = lit(ax.hi);
            let mut v = sigma[a];
            if v < lo || v > hi || !v.is_finite() {
                clamped = true;
                v = if v > hi { hi } else { lo };
            }
            let pos = (v - lo) / (hi - lo) * lit::<T>((p - 1) as f64);
            let i = (to_f64(pos).floor().max(0.0) as usize).min(p - 2);
            base.push(i);
            frac.push(pos - lit::<T>(i as f64));
        }
        let d = self.dim();
        let mut out = Vec::with_capacity(1 << d);
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = T::one();
            for a in 0..d {
                let up = (corner >> (d - 1 - a)) & 1 == 1;
                idx[a] = base[a] + up as usize;
                w *= if up { frac[a] } else { T::one() - frac[a] };
            }
            if w != T::zero() {
                out.push((self.flat_index(&idx), w));
            }
        }
        (out, clamped)
    }
}
