//! Eulerian picture of the canonical flow: the samples cut the circle of
//! directions into arcs with constant activation pattern, and on each arc the
//! velocity felt by a particle `(r, theta)` is linear in `r d(theta)`.
//!
//! Velocities here are in mean-field time, which runs `m` times faster than
//! the per-particle gradient flow of [`crate::flows`].

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    direction, dot, residuals, tangent, wrap_angle, CanonicalNetwork, NetworkFunction, SampleSet,
};

/// Angles closer than this to a boundary count as on it.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Residuals `rho_j = f(x_j) - y_j` of one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector {
    pub rho: Vec<f64>,
}

impl ResidualVector {
    pub fn of<N: NetworkFunction + ?Sized>(net: &N, data: &SampleSet) -> Self {
        ResidualVector {
            rho: residuals(net, data),
        }
    }
}

/// Which end of a sample's active half-circle a boundary angle is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    /// `theta = -arctan x_j`: the sample becomes active going counterclockwise.
    Enter,
    /// `theta = pi - arctan x_j`: the sample becomes inactive going counterclockwise.
    Leave,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Boundary {
    pub angle: f64,
    pub sample: usize,
    pub kind: BoundaryKind,
}

/// Arc from `start` counterclockwise to `end` (wrapping past `2pi` for the
/// last arc) with its active set.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub start: f64,
    pub end: f64,
    pub active: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionDecomposition {
    pub boundaries: Vec<Boundary>,
    /// `regions[k]` starts at `boundaries[k]`.
    pub regions: Vec<Region>,
    lifted: Vec<[f64; 2]>,
}

fn active_at(lifted: &[[f64; 2]], theta: f64) -> Vec<usize> {
    let d = direction(theta);
    (0..lifted.len()).filter(|&j| dot(lifted[j], d) >= 0.0).collect()
}

/// Shortest signed angular distance from `b` to `a`.
fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(TAU);
    if d > PI {
        d -= TAU;
    }
    d
}

impl RegionDecomposition {
    pub fn new(data: &SampleSet) -> Self {
        let mut boundaries = Vec::with_capacity(2 * data.len());
        for (j, &x) in data.xs().iter().enumerate() {
            boundaries.push(Boundary {
                angle: wrap_angle(-x.atan()),
                sample: j,
                kind: BoundaryKind::Enter,
            });
            boundaries.push(Boundary {
                angle: wrap_angle(PI - x.atan()),
                sample: j,
                kind: BoundaryKind::Leave,
            });
        }
        boundaries.sort_by(|p, q| p.angle.total_cmp(&q.angle));
        let lifted = data.lifted().to_vec();
        let n = boundaries.len();
        let regions = (0..n)
            .map(|k| {
                let start = boundaries[k].angle;
                let end = if k + 1 < n {
                    boundaries[k + 1].angle
                } else {
                    boundaries[0].angle + TAU
                };
                Region {
                    start,
                    end,
                    active: active_at(&lifted, 0.5 * (start + end)),
                }
            })
            .collect();
        RegionDecomposition {
            boundaries,
            regions,
            lifted,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Index of the arc containing `theta`; an angle equal to a boundary
    /// belongs to the arc starting there.
    pub fn region_of(&self, theta: f64) -> usize {
        let theta = wrap_angle(theta);
        let idx = self.boundaries.partition_point(|b| b.angle <= theta);
        if idx == 0 {
            self.regions.len() - 1
        } else {
            idx - 1
        }
    }

    /// The boundary within `tol` of `theta`, if any.
    pub fn boundary_near(&self, theta: f64, tol: f64) -> Option<usize> {
        self.boundaries
            .iter()
            .position(|b| angle_diff(theta, b.angle).abs() <= tol)
    }

    /// Region for a particle: like [`Self::region_of`], but a particle within
    /// [`BOUNDARY_TOL`] of a boundary goes to the arc on which the boundary's
    /// sample is active.
    pub fn region_of_particle(&self, theta: f64) -> usize {
        match self.boundary_near(theta, BOUNDARY_TOL) {
            Some(k) => match self.boundaries[k].kind {
                BoundaryKind::Enter => k,
                BoundaryKind::Leave => (k + self.len() - 1) % self.len(),
            },
            None => self.region_of(theta),
        }
    }

    fn active_sum(&self, region: usize, rho: &[f64]) -> [f64; 2] {
        let mut s = [0.0, 0.0];
        for &j in &self.regions[region].active {
            s[0] += rho[j] * self.lifted[j][0];
            s[1] += rho[j] * self.lifted[j][1];
        }
        s
    }
}

/// Splits the circle of directions by the samples' zero lines.
pub fn decompose(data: &SampleSet) -> RegionDecomposition {
    RegionDecomposition::new(data)
}

fn velocity_in(decomp: &RegionDecomposition, region: usize, r: f64, theta: f64, rho: &[f64]) -> (f64, f64) {
    let s = decomp.active_sum(region, rho);
    (-dot(s, direction(theta)), -r * dot(s, tangent(theta)))
}

/// Descent velocity `(v_r, v_theta)` of a particle at `(r, theta)`.
///
/// Fails with [`Error::BoundaryPoint`] on a boundary, carrying the limits
/// from the clockwise (`left`) and counterclockwise (`right`) sides.
pub fn velocity(r: f64, theta: f64, rho: &[f64], decomp: &RegionDecomposition) -> Result<(f64, f64)> {
    if let Some(k) = decomp.boundary_near(theta, BOUNDARY_TOL) {
        let before = (k + decomp.len() - 1) % decomp.len();
        return Err(Error::BoundaryPoint {
            left: velocity_in(decomp, before, r, theta, rho),
            right: velocity_in(decomp, k, r, theta, rho),
        });
    }
    Ok(velocity_in(decomp, decomp.region_of(theta), r, theta, rho))
}

/// Jump `(right - left)` of the velocity across the boundary line of sample
/// `sample` at angle `theta`. The radial component is continuous there since
/// `d(theta)` is orthogonal to `(x_j, 1)`.
pub fn jump_at_boundary(
    r: f64,
    theta: f64,
    rho: &[f64],
    decomp: &RegionDecomposition,
    sample: usize,
) -> Result<(f64, f64)> {
    const MATCH_TOL: f64 = 1e-9;
    let b = decomp
        .boundaries
        .iter()
        .find(|b| b.sample == sample && angle_diff(theta, b.angle).abs() <= MATCH_TOL)
        .ok_or(Error::NotABoundary { theta, sample })?;
    let x = decomp.lifted[sample];
    let sign = match b.kind {
        BoundaryKind::Enter => 1.0,
        BoundaryKind::Leave => -1.0,
    };
    let dv_theta = -r * sign * rho[sample] * dot(x, tangent(b.angle));
    Ok((0.0, dv_theta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttractorClass {
    #[serde(rename = "ATTRACTOR_OR_REPULSOR_LEFT")]
    Left,
    #[serde(rename = "ATTRACTOR_OR_REPULSOR_RIGHT")]
    Right,
    #[serde(rename = "BOTH")]
    Both,
    #[serde(rename = "NEITHER")]
    Neither,
}

/// Raw quantities behind one sample's classification.
///
/// `left_sum = sum_{i<k} rho_i rho_k <x_i, x_k>` (samples active on the
/// sample's line at `theta = pi - arctan x_k`), `right_sum` likewise over
/// `i > k` (line at `theta = -arctan x_k`). A side is flagged when
/// `threshold < sum < 0` with `threshold = -rho_k^2 ||x_k||^2`, which is
/// exactly the condition for the angular velocity to change sign across the
/// line. The one-sided angular velocities are for `r = 1` at the boundary,
/// listed as (without sample k, with sample k).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAttractor {
    pub sample: usize,
    pub x: f64,
    pub class: AttractorClass,
    pub left_sum: f64,
    pub right_sum: f64,
    pub threshold: f64,
    pub left_velocities: [f64; 2],
    pub right_velocities: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub rho: Vec<f64>,
    pub samples: Vec<SampleAttractor>,
}

impl AttractorReport {
    pub fn classes(&self) -> Vec<AttractorClass> {
        self.samples.iter().map(|s| s.class).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Flags the samples whose line reverses the angular velocity field.
pub fn classify_attractors(rho: &[f64], data: &SampleSet) -> AttractorReport {
    let xt = data.lifted();
    let s = data.len();
    let mut samples = Vec::with_capacity(s);
    for k in 0..s {
        let xk = xt[k];
        let nk2 = dot(xk, xk);
        let (mut left, mut right) = (0.0, 0.0);
        let (mut s_left, mut s_right) = ([0.0; 2], [0.0; 2]);
        for i in 0..s {
            let term = rho[i] * rho[k] * dot(xt[i], xk);
            let add = |acc: &mut [f64; 2]| {
                acc[0] += rho[i] * xt[i][0];
                acc[1] += rho[i] * xt[i][1];
            };
            if i < k {
                left += term;
                add(&mut s_left);
            } else if i > k {
                right += term;
                add(&mut s_right);
            }
        }
        let threshold = -rho[k] * rho[k] * nk2;
        let flagged = |sum: f64| threshold < sum && sum < 0.0;
        let class = match (flagged(left), flagged(right)) {
            (true, true) => AttractorClass::Both,
            (true, false) => AttractorClass::Left,
            (false, true) => AttractorClass::Right,
            (false, false) => AttractorClass::Neither,
        };
        let one_sided = |others: [f64; 2], theta: f64| {
            let t = tangent(theta);
            let without = -dot(others, t);
            let with = -(dot(others, t) + rho[k] * dot(xk, t));
            [without, with]
        };
        let x = data.xs()[k];
        samples.push(SampleAttractor {
            sample: k,
            x,
            class,
            left_sum: left,
            right_sum: right,
            threshold,
            left_velocities: one_sided(s_left, wrap_angle(PI - x.atan())),
            right_velocities: one_sided(s_right, wrap_angle(-x.atan())),
        });
    }
    AttractorReport {
        rho: rho.to_vec(),
        samples,
    }
}

/// Per-region second-moment matrices of the particle measure.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaBlocks {
    pub blocks: Vec<[[f64; 2]; 2]>,
}

/// `Sigma_k = (1/m) sum_{theta_i in A_k} (r_i^2 t t^T + d d^T)`.
pub fn sigma_blocks(net: &CanonicalNetwork, decomp: &RegionDecomposition) -> SigmaBlocks {
    let mut blocks = vec![[[0.0; 2]; 2]; decomp.len()];
    let inv_m = 1.0 / net.width() as f64;
    for (&r, &theta) in net.r().iter().zip(net.theta()) {
        let k = decomp.region_of_particle(theta);
        let d = direction(theta);
        let t = tangent(theta);
        for p in 0..2 {
            for q in 0..2 {
                blocks[k][p][q] += (r * r * t[p] * t[q] + d[p] * d[q]) * inv_m;
            }
        }
    }
    SigmaBlocks { blocks }
}

/// Mean-field residual rates `rho_j' = -x_j^T sum_{k : j in C_k} Sigma_k S_k`.
pub fn residual_ode_rhs(
    rho: &[f64],
    sigma: &SigmaBlocks,
    decomp: &RegionDecomposition,
    data: &SampleSet,
) -> Vec<f64> {
    let xt = data.lifted();
    let mut out = vec![0.0; data.len()];
    for (k, region) in decomp.regions.iter().enumerate() {
        if region.active.is_empty() {
            continue;
        }
        let s = decomp.active_sum(k, rho);
        let m = &sigma.blocks[k];
        let ms = [
            m[0][0] * s[0] + m[0][1] * s[1],
            m[1][0] * s[0] + m[1][1] * s[1],
        ];
        for &j in &region.active {
            out[j] -= dot(xt[j], ms);
        }
    }
    out
}

/// Evaluation grid in the `(u, v)` plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_grid_n")]
    pub nu: usize,
    #[serde(default = "default_grid_n")]
    pub nv: usize,
    #[serde(default = "default_grid_range")]
    pub u_range: [f64; 2],
    #[serde(default = "default_grid_range")]
    pub v_range: [f64; 2],
    /// Sign of `r` for the particles probed (`u, v` only fix `|r|`).
    #[serde(default = "default_grid_sign")]
    pub sign: i8,
}

fn default_grid_n() -> usize {
    101
}

fn default_grid_range() -> [f64; 2] {
    [-2.0, 2.0]
}

fn default_grid_sign() -> i8 {
    1
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nu: default_grid_n(),
            nv: default_grid_n(),
            u_range: default_grid_range(),
            v_range: default_grid_range(),
            sign: default_grid_sign(),
        }
    }
}

/// Points closer than this to a sample line are left out of the grid.
pub const LINE_SKIP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldPoint {
    pub u: f64,
    pub v: f64,
    pub vu: f64,
    pub vv: f64,
    pub region_id: usize,
    /// Index of the closest sample line `u x_j + v = 0`.
    pub nearest_sample_line: usize,
}

/// Velocity field transported to the `(u, v)` plane:
/// `d/dt (|r| d(theta)) = sign(r) v_r d(theta) + |r| v_theta t(theta)`.
pub fn field_grid(rho: &[f64], data: &SampleSet, spec: &GridSpec) -> Vec<FieldPoint> {
    let decomp = decompose(data);
    let eps = if spec.sign < 0 { -1.0 } else { 1.0 };
    let coord = |range: [f64; 2], n: usize, i: usize| {
        if n <= 1 {
            range[0]
        } else {
            range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(spec.nu * spec.nv);
    for iv in 0..spec.nv {
        let v = coord(spec.v_range, spec.nv, iv);
        for iu in 0..spec.nu {
            let u = coord(spec.u_range, spec.nu, iu);
            let (mut nearest, mut dist) = (0, f64::INFINITY);
            for (j, &x) in data.xs().iter().enumerate() {
                let dj = (u * x + v).abs() / (x * x + 1.0).sqrt();
                if dj < dist {
                    dist = dj;
                    nearest = j;
                }
            }
            if dist <= LINE_SKIP_TOL {
                continue;
            }
            let rabs = u.hypot(v);
            let theta = wrap_angle(v.atan2(u));
            let Ok((vr, vth)) = velocity(eps * rabs, theta, rho, &decomp) else {
                continue;
            };
            let d = direction(theta);
            let t = tangent(theta);
            out.push(FieldPoint {
                u,
                v,
                vu: eps * vr * d[0] + rabs * vth * t[0],
                vv: eps * vr * d[1] + rabs * vth * t[1],
                region_id: decomp.region_of(theta),
                nearest_sample_line: nearest,
            });
        }
    }
    out
}

pub fn write_field_csv(points: &[FieldPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["u", "v", "vu", "vv", "region_id", "nearest_sample_line"])?;
    for p in points {
        w.write_record([
            p.u.to_string(),
            p.v.to_string(),
            p.vu.to_string(),
            p.vv.to_string(),
            p.region_id.to_string(),
            p.nearest_sample_line.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
