//! Natural cubic spline interpolation and piecewise-linear knot statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{FullNetwork, SampleSet};

/// Natural cubic spline through the samples, stored by its second
/// derivatives `M_i` at the breakpoints (`M_0 = M_{s-1} = 0`). Outside the
/// sample hull it continues linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

pub fn fit_natural_cubic(data: &SampleSet) -> Result<CubicSpline> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n });
    }
    let (xs, ys) = (data.xs(), data.ys());
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let mut m = vec![0.0; n];
    let k = n - 2;
    if k > 0 {
        // Thomas algorithm on the interior equations
        // h_{i-1} M_{i-1} + 2 (h_{i-1} + h_i) M_i + h_i M_{i+1} = 6 (slope_i - slope_{i-1}).
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for r in 0..k {
            let i = r + 1;
            diag[r] = 2.0 * (h[i - 1] + h[i]);
            rhs[r] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
        }
        for r in 1..k {
            let w = h[r] / diag[r - 1];
            diag[r] -= w * h[r];
            rhs[r] -= w * rhs[r - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for r in (0..k - 1).rev() {
            m[r + 1] = (rhs[r] - h[r + 1] * m[r + 2]) / diag[r];
        }
    }
    Ok(CubicSpline {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        m,
    })
}

impl CubicSpline {
    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    /// Second derivatives at the breakpoints.
    pub fn second_derivatives(&self) -> &[f64] {
        &self.m
    }

    /// Coefficients `[c0, c1, c2, c3]` of `sum_k c_k (x - x_i)^k` on each
    /// interval `[x_i, x_{i+1}]`.
    pub fn coefficients(&self) -> Vec<[f64; 4]> {
        (0..self.xs.len() - 1)
            .map(|i| {
                let h = self.xs[i + 1] - self.xs[i];
                let (m0, m1) = (self.m[i], self.m[i + 1]);
                [
                    self.ys[i],
                    (self.ys[i + 1] - self.ys[i]) / h - h * (2.0 * m0 + m1) / 6.0,
                    0.5 * m0,
                    (m1 - m0) / (6.0 * h),
                ]
            })
            .collect()
    }

    fn interval(&self, x: f64) -> usize {
        let n = self.xs.len();
        self.xs.partition_point(|&b| b <= x).clamp(1, n - 1) - 1
    }

    fn end_slopes(&self) -> (f64, f64) {
        let n = self.xs.len();
        let h0 = self.xs[1] - self.xs[0];
        let left = (self.ys[1] - self.ys[0]) / h0 - h0 * (2.0 * self.m[0] + self.m[1]) / 6.0;
        let hn = self.xs[n - 1] - self.xs[n - 2];
        let right =
            (self.ys[n - 1] - self.ys[n - 2]) / hn + hn * (self.m[n - 2] + 2.0 * self.m[n - 1]) / 6.0;
        (left, right)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            return self.ys[0] + self.end_slopes().0 * (x - self.xs[0]);
        }
        if x > self.xs[n - 1] {
            return self.ys[n - 1] + self.end_slopes().1 * (x - self.xs[n - 1]);
        }
        let i = self.interval(x);
        let h = self.xs[i + 1] - self.xs[i];
        let (t, u) = (x - self.xs[i], self.xs[i + 1] - x);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        (m0 * u * u * u + m1 * t * t * t) / (6.0 * h)
            + (self.ys[i] / h - m0 * h / 6.0) * u
            + (self.ys[i + 1] / h - m1 * h / 6.0) * t
    }

    pub fn eval_d1(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            return self.end_slopes().0;
        }
        if x > self.xs[n - 1] {
            return self.end_slopes().1;
        }
        let i = self.interval(x);
        let h = self.xs[i + 1] - self.xs[i];
        let (t, u) = (x - self.xs[i], self.xs[i + 1] - x);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        (-m0 * u * u + m1 * t * t) / (2.0 * h) + (self.ys[i + 1] - self.ys[i]) / h
            - (m1 - m0) * h / 6.0
    }

    pub fn eval_d2(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let i = self.interval(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        self.m[i] * (1.0 - t) + self.m[i + 1] * t
    }

    /// Writes `(x, s, s2)` rows on a grid.
    pub fn write_csv(&self, grid: &[f64], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "s", "s2"])?;
        for &x in grid {
            w.write_record([x.to_string(), self.eval(x).to_string(), self.eval_d2(x).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn eval_spline(sp: &CubicSpline, x: f64) -> f64 {
    sp.eval(x)
}

pub fn eval_spline_d2(sp: &CubicSpline, x: f64) -> f64 {
    sp.eval_d2(x)
}

/// How many first-layer knots sit near the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetric {
    pub epsilon: f64,
    /// Number of defined knots whose nearest sample is `j` and lies within `epsilon`.
    pub per_sample: Vec<usize>,
    pub defined_knots: usize,
    /// Fraction of defined knots within `epsilon` of some sample; 0 when no
    /// knot is defined.
    pub clustered_fraction: f64,
}

/// `0.02 * (x_s - x_1)`.
pub fn default_cluster_epsilon(data: &SampleSet) -> f64 {
    let (lo, hi) = data.x_range();
    0.02 * (hi - lo)
}

pub fn knot_clustering(net: &FullNetwork, data: &SampleSet, eps: f64) -> Result<ClusterMetric> {
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let xs = data.xs();
    let mut per_sample = vec![0; xs.len()];
    let mut defined = 0;
    let mut near = 0;
    for e in net.knots().defined() {
        defined += 1;
        let idx = xs.partition_point(|&x| x < e);
        let mut best: Option<(usize, f64)> = None;
        for j in [idx.wrapping_sub(1), idx] {
            if let Some(&x) = xs.get(j) {
                let d = (e - x).abs();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        if let Some((j, d)) = best {
            if d <= eps {
                near += 1;
                per_sample[j] += 1;
            }
        }
    }
    Ok(ClusterMetric {
        epsilon: eps,
        per_sample,
        defined_knots: defined,
        clustered_fraction: if defined == 0 {
            0.0
        } else {
            near as f64 / defined as f64
        },
    })
}

/// `n` equispaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `max_x |f(x) - g(x)|` over the grid.
pub fn sup_distance<F, G>(f: F, g: G, grid: &[f64]) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    grid.iter().fold(0.0, |acc, &x| acc.max((f(x) - g(x)).abs()))
}

/// `max_k |a_k - b_k|` for two functions already tabulated on one grid.
pub fn sup_distance_values(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (p, q)| acc.max((p - q).abs()))
}

/// `int_lo^hi |f''|^2` from second differences of `f` on `n` intervals.
pub fn curvature_energy<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| f(lo + h * i as f64)).collect();
    let mut acc = 0.0;
    for i in 1..n {
        let d2 = (vals[i + 1] - 2.0 * vals[i] + vals[i - 1]) / (h * h);
        acc += d2 * d2 * h;
    }
    acc
}
