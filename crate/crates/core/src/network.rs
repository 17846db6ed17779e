//! Network types, evaluation, and the maps between full `(a, b, c)` weights and
//! the canonical `(r, theta)` cylinder coordinates.
//!
//! A full network computes `f(x) = (1/alpha(m)) * sum_i c_i [a_i x - b_i]_+` and
//! a canonical network computes `f(x) = (1/m) * sum_i r_i <(x, 1), d(theta_i)>_+`
//! with `d(theta) = (cos theta, sin theta)`. The two agree under
//! [`FullNetwork::to_canonical`].

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Below this magnitude `a_i` is treated as zero when locating knots.
pub const A_ZERO_TOL: f64 = 1e-12;

/// Output normalization `alpha(m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scaling {
    /// `alpha(m) = m`, the mean-field normalization.
    #[serde(rename = "M")]
    M,
    /// `alpha(m) = sqrt(m)`, the NTK normalization.
    #[serde(rename = "SQRT_M")]
    SqrtM,
    /// `alpha(m) = 1`.
    #[serde(rename = "ONE")]
    One,
}

impl Scaling {
    pub fn alpha(self, m: usize) -> f64 {
        match self {
            Scaling::M => m as f64,
            Scaling::SqrtM => (m as f64).sqrt(),
            Scaling::One => 1.0,
        }
    }

    /// The ratio `m / alpha(m)` that converts `c * |(a, b)|` into canonical `r`.
    pub fn canonical_factor(self, m: usize) -> f64 {
        match self {
            Scaling::M => 1.0,
            Scaling::SqrtM => (m as f64).sqrt(),
            Scaling::One => m as f64,
        }
    }
}

/// Unit direction `d(theta)`.
#[inline]
pub fn direction(theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c, s]
}

/// Unit tangent `t(theta) = d(theta)^perp`.
#[inline]
pub fn tangent(theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [-s, c]
}

#[inline]
pub(crate) fn dot(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[0] + u[1] * v[1]
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    // `+ 0.0` turns -0.0 into 0.0
    let w = theta.rem_euclid(TAU) + 0.0;
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Something that evaluates to a real function of one variable.
pub trait NetworkFunction {
    fn eval(&self, x: f64) -> f64;

    fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Sorted one-dimensional training set with lifted inputs `(x_j, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    xs: Vec<f64>,
    ys: Vec<f64>,
    lifted: Vec<[f64; 2]>,
}

impl SampleSet {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(invalid("sample set must not be empty"));
        }
        if xs.len() != ys.len() {
            return Err(invalid(format!(
                "xs has {} entries but ys has {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(invalid("samples must be finite"));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("xs must be strictly increasing"));
        }
        let lifted = xs.iter().map(|&x| [x, 1.0]).collect();
        Ok(Self { xs, ys, lifted })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn lifted(&self) -> &[[f64; 2]] {
        &self.lifted
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Same abscissae, new ordinates.
    pub fn with_ys(&self, ys: Vec<f64>) -> Result<Self> {
        Self::new(self.xs.clone(), ys)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }
}

/// Per-neuron weights `(a_i, b_i, c_i)` and the output normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FullSnapshot", into = "FullSnapshot")]
pub struct FullNetwork {
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) c: Vec<f64>,
    pub(crate) scaling: Scaling,
}

/// JSON layout of a full network snapshot.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FullSnapshot {
    m: usize,
    scaling: Scaling,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TryFrom<FullSnapshot> for FullNetwork {
    type Error = Error;

    fn try_from(s: FullSnapshot) -> Result<Self> {
        if s.a.len() != s.m {
            return Err(invalid(format!("m = {} but a has {} entries", s.m, s.a.len())));
        }
        FullNetwork::new(s.a, s.b, s.c, s.scaling)
    }
}

impl From<FullNetwork> for FullSnapshot {
    fn from(n: FullNetwork) -> Self {
        FullSnapshot {
            m: n.a.len(),
            scaling: n.scaling,
            a: n.a,
            b: n.b,
            c: n.c,
        }
    }
}

impl FullNetwork {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, scaling: Scaling) -> Result<Self> {
        if a.is_empty() {
            return Err(invalid("network needs at least one neuron"));
        }
        if a.len() != b.len() || a.len() != c.len() {
            return Err(invalid(format!(
                "weight vectors differ in length: a={}, b={}, c={}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c, scaling })
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn alpha(&self) -> f64 {
        self.scaling.alpha(self.width())
    }

    /// Replaces the output weights, keeping the first layer.
    pub fn with_c(&self, c: Vec<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), c, self.scaling)
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.b).chain(&self.c).all(|v| v.is_finite())
    }

    /// Function-preserving per-neuron rescale `(a, b, c) -> (k a, k b, c / k)`.
    pub fn rescaled(&self, k: &[f64]) -> Result<Self> {
        if k.len() != self.width() {
            return Err(invalid("one scale factor per neuron is required"));
        }
        if k.iter().any(|&k| !(k > 0.0)) {
            return Err(invalid("scale factors must be positive"));
        }
        let a = self.a.iter().zip(k).map(|(a, k)| a * k).collect();
        let b = self.b.iter().zip(k).map(|(b, k)| b * k).collect();
        let c = self.c.iter().zip(k).map(|(c, k)| c / k).collect();
        Self::new(a, b, c, self.scaling)
    }

    /// Maps every neuron onto the cylinder `R x S^1`.
    pub fn to_canonical(&self) -> Result<CanonicalNetwork> {
        let factor = self.scaling.canonical_factor(self.width());
        let mut r = Vec::with_capacity(self.width());
        let mut theta = Vec::with_capacity(self.width());
        for i in 0..self.width() {
            let (a, b, c) = (self.a[i], self.b[i], self.c[i]);
            let norm = a.hypot(b);
            if norm <= A_ZERO_TOL {
                return Err(Error::DegenerateNeuron { index: i });
            }
            r.push(factor * c * norm);
            // d(theta) is parallel to (a, -b) so that <(x,1), d(theta)> ~ a x - b.
            theta.push(wrap_angle((-b).atan2(a)));
        }
        Ok(CanonicalNetwork { r, theta })
    }

    /// `delta_i = c_i^2 - a_i^2 - b_i^2`, conserved by the full gradient flow.
    pub fn invariants(&self) -> InvariantVector {
        let delta = (0..self.width())
            .map(|i| self.c[i] * self.c[i] - self.a[i] * self.a[i] - self.b[i] * self.b[i])
            .collect();
        InvariantVector { delta }
    }

    pub fn knots(&self) -> KnotList {
        let knots = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| (a.abs() > A_ZERO_TOL).then(|| b / a))
            .collect();
        KnotList { knots }
    }
}

impl NetworkFunction for FullNetwork {
    fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.width() {
            let pre = self.a[i] * x - self.b[i];
            if pre > 0.0 {
                acc += self.c[i] * pre;
            }
        }
        acc / self.alpha()
    }
}

/// Canonical parameters `(r_i, theta_i)`, `theta_i` in `[0, 2pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalNetwork {
    pub(crate) r: Vec<f64>,
    pub(crate) theta: Vec<f64>,
}

impl CanonicalNetwork {
    /// Angles are wrapped into `[0, 2pi)`.
    pub fn new(r: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if r.is_empty() {
            return Err(invalid("network needs at least one neuron"));
        }
        if r.len() != theta.len() {
            return Err(invalid("r and theta differ in length"));
        }
        let theta = theta.into_iter().map(wrap_angle).collect();
        Ok(Self { r, theta })
    }

    pub fn width(&self) -> usize {
        self.r.len()
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(&self.theta).all(|v| v.is_finite())
    }

    /// Inverse of [`FullNetwork::to_canonical`] given the per-neuron invariants.
    ///
    /// With `rhat = (alpha/m) r = c |(a,b)|`, the output weight solves
    /// `c^4 - delta c^2 - rhat^2 = 0`, `sign(c) = sign(r)`. A neuron with
    /// `r = 0` and `delta < 0` gets `c = 0` and all of its magnitude
    /// `sqrt(-delta)` along `d(theta)`.
    pub fn to_full(&self, delta: &InvariantVector, scaling: Scaling) -> Result<FullNetwork> {
        let m = self.width();
        if delta.delta.len() != m {
            return Err(invalid("one invariant per neuron is required"));
        }
        let factor = scaling.canonical_factor(m);
        let mut a = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        let mut c = Vec::with_capacity(m);
        for i in 0..m {
            let (r, theta, d) = (self.r[i], self.theta[i], delta.delta[i]);
            if !(r.is_finite() && theta.is_finite() && d.is_finite()) {
                return Err(Error::UnrecoverableNeuron { index: i });
            }
            let rhat = r / factor;
            let disc = (d * d + 4.0 * rhat * rhat).sqrt();
            // Both branches equal (d + disc) / 2; the second avoids cancellation.
            let c2 = if d >= 0.0 {
                0.5 * (d + disc)
            } else {
                2.0 * rhat * rhat / (disc - d)
            };
            let ci = if r < 0.0 { -c2.sqrt() } else { c2.sqrt() };
            let norm = if ci != 0.0 { rhat.abs() / ci.abs() } else { (-d).max(0.0).sqrt() };
            let [dc, ds] = direction(theta);
            a.push(norm * dc);
            b.push(-norm * ds);
            c.push(ci);
        }
        FullNetwork::new(a, b, c, scaling)
    }

    pub fn uv_state(&self) -> UvState {
        let mut u = Vec::with_capacity(self.width());
        let mut v = Vec::with_capacity(self.width());
        let mut eps = Vec::with_capacity(self.width());
        for (&r, &theta) in self.r.iter().zip(&self.theta) {
            let [dc, ds] = direction(theta);
            u.push(r.abs() * dc);
            v.push(r.abs() * ds);
            eps.push(if r > 0.0 {
                1
            } else if r < 0.0 {
                -1
            } else {
                0
            });
        }
        UvState { u, v, eps }
    }

    /// Knot positions `e_i = b_i / a_i = -tan(theta_i)`.
    pub fn knots(&self) -> KnotList {
        let knots = self
            .theta
            .iter()
            .map(|&t| {
                let [dc, ds] = direction(t);
                (dc.abs() > A_ZERO_TOL).then(|| -ds / dc)
            })
            .collect();
        KnotList { knots }
    }
}

impl NetworkFunction for CanonicalNetwork {
    fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (&r, &theta) in self.r.iter().zip(&self.theta) {
            let pre = dot([x, 1.0], direction(theta));
            if pre > 0.0 {
                acc += r * pre;
            }
        }
        acc / self.width() as f64
    }
}

/// Per-neuron invariants `delta_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantVector {
    pub delta: Vec<f64>,
}

impl InvariantVector {
    /// `max_i |delta_i - other_i|`.
    pub fn max_drift(&self, other: &InvariantVector) -> f64 {
        self.delta
            .iter()
            .zip(&other.delta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Knot positions; `None` where `|a_i| <= A_ZERO_TOL`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotList {
    pub knots: Vec<Option<f64>>,
}

impl KnotList {
    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().filter_map(|k| *k)
    }
}

/// Phase-space picture: `(u, v) = |r| d(theta)` coloured by `sign(r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UvState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub eps: Vec<i8>,
}

/// JSON layout of a canonical snapshot, carrying the invariants needed to
/// recover the full weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalSnapshot {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl CanonicalSnapshot {
    pub fn capture(net: &FullNetwork) -> Result<Self> {
        let canon = net.to_canonical()?;
        Ok(Self {
            r: canon.r,
            theta: canon.theta,
            delta: net.invariants().delta,
        })
    }

    pub fn restore(&self, scaling: Scaling) -> Result<FullNetwork> {
        CanonicalNetwork::new(self.r.clone(), self.theta.clone())?.to_full(
            &InvariantVector {
                delta: self.delta.clone(),
            },
            scaling,
        )
    }
}

/// Residuals `f(x_j) - y_j`.
pub fn residuals<N: NetworkFunction + ?Sized>(net: &N, data: &SampleSet) -> Vec<f64> {
    data.xs()
        .iter()
        .zip(data.ys())
        .map(|(&x, &y)| net.eval(x) - y)
        .collect()
}

/// Least-squares loss `1/2 sum_j (f(x_j) - y_j)^2`.
pub fn loss<N: NetworkFunction + ?Sized>(net: &N, data: &SampleSet) -> f64 {
    0.5 * residuals(net, data).iter().map(|r| r * r).sum::<f64>()
}
