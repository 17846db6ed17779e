//! Gradient descent in full and canonical coordinates, invariant tracking, and
//! the change-of-metric relation between the two flows.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{
    direction, dot, residuals, tangent, wrap_angle, CanonicalNetwork, FullNetwork,
    InvariantVector, SampleSet, A_ZERO_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    #[serde(rename = "EULER")]
    Euler,
    #[serde(rename = "RK4")]
    Rk4,
}

/// Which weight blocks are trained. Frozen blocks are never touched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mask {
    pub train_a: bool,
    pub train_b: bool,
    pub train_c: bool,
}

impl Mask {
    pub const ALL: Mask = Mask {
        train_a: true,
        train_b: true,
        train_c: true,
    };
    /// Output layer only: the `delta = -inf` extreme.
    pub const C_ONLY: Mask = Mask {
        train_a: false,
        train_b: false,
        train_c: true,
    };
    /// First layer only: the `delta = +inf` extreme.
    pub const AB_ONLY: Mask = Mask {
        train_a: true,
        train_b: true,
        train_c: false,
    };

    pub fn is_full(&self) -> bool {
        self.train_a && self.train_b && self.train_c
    }
}

impl Default for Mask {
    fn default() -> Self {
        Mask::ALL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    #[serde(default)]
    pub mask: Mask,
    #[serde(default)]
    pub tv_lambda: f64,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop early once `||rho||_2` falls below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_residual_norm: Option<f64>,
}

fn default_integrator() -> Integrator {
    Integrator::Euler
}

fn default_snapshot_every() -> usize {
    1000
}

impl TrainConfig {
    pub fn new(lr: f64, steps: usize) -> Self {
        TrainConfig {
            lr,
            steps,
            integrator: Integrator::Euler,
            mask: Mask::ALL,
            tv_lambda: 0.0,
            snapshot_every: default_snapshot_every(),
            seed: 0,
            stop_residual_norm: None,
        }
    }

    pub fn with_mask(mut self, mask: Mask) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    /// Checks the configuration for a full (`canonical == false`) or
    /// canonical flow.
    pub fn validate(&self, canonical: bool) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be a nonnegative number, got {}", self.lr)));
        }
        if !(self.mask.train_a || self.mask.train_b || self.mask.train_c) {
            return Err(invalid("at least one of train_a, train_b, train_c must be set"));
        }
        if !(self.tv_lambda >= 0.0 && self.tv_lambda.is_finite()) {
            return Err(invalid("tv_lambda must be nonnegative"));
        }
        if self.snapshot_every == 0 {
            return Err(invalid("snapshot_every must be positive"));
        }
        if canonical {
            if !self.mask.is_full() {
                return Err(invalid("the canonical flow trains (r, theta) jointly; masks need the full flow"));
            }
        } else if self.tv_lambda > 0.0 {
            return Err(invalid("tv_lambda is only available for the canonical flow"));
        }
        Ok(())
    }
}

/// Gradient of the loss with respect to `(a, b, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FullGradient {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Gradient of the loss with respect to `(r, theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalGradient {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Residuals of a full network. The sum over neurons runs in four
/// interleaved lanes so that it vectorizes; the order is fixed.
pub(crate) fn full_residuals(net: &FullNetwork, data: &SampleSet) -> Vec<f64> {
    let (a, b, c) = (&net.a, &net.b, &net.c);
    let m = a.len();
    let split = m - m % 4;
    let inv_alpha = 1.0 / net.alpha();
    data.xs()
        .iter()
        .zip(data.ys())
        .map(|(&x, &y)| {
            let mut lanes = [0.0; 4];
            for i in (0..split).step_by(4) {
                for l in 0..4 {
                    lanes[l] += c[i + l] * (a[i + l] * x - b[i + l]).max(0.0);
                }
            }
            let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
            for i in split..m {
                acc += c[i] * (a[i] * x - b[i]).max(0.0);
            }
            acc * inv_alpha - y
        })
        .collect()
}

fn grad_full_at(net: &FullNetwork, data: &SampleSet, rho: &[f64]) -> FullGradient {
    let m = net.width();
    let inv_alpha = 1.0 / net.alpha();
    let (a, b) = (&net.a, &net.b);
    // per-neuron sums over active samples of x rho, rho and (a x - b) rho
    let mut sx = vec![0.0; m];
    let mut s1 = vec![0.0; m];
    let mut sc = vec![0.0; m];
    for (&x, &r) in data.xs().iter().zip(rho) {
        for i in 0..m {
            let pre = a[i] * x - b[i];
            let act = if pre >= 0.0 { r } else { 0.0 };
            sx[i] += x * act;
            s1[i] += act;
            sc[i] += pre * act;
        }
    }
    for i in 0..m {
        let c = net.c[i] * inv_alpha;
        sx[i] *= c;
        s1[i] *= -c;
        sc[i] *= inv_alpha;
    }
    FullGradient {
        a: sx,
        b: s1,
        c: sc,
    }
}

/// Exact gradient of `1/2 sum_j (f(x_j) - y_j)^2` in `(a, b, c)`.
pub fn grad_full(net: &FullNetwork, data: &SampleSet) -> FullGradient {
    let rho = full_residuals(net, data);
    grad_full_at(net, data, &rho)
}

/// `S = sum over active samples of rho_j (x_j, 1)` for the direction `d`.
#[inline]
pub(crate) fn active_sum(d: [f64; 2], data: &SampleSet, rho: &[f64]) -> [f64; 2] {
    let mut s = [0.0, 0.0];
    for (x, &r) in data.lifted().iter().zip(rho) {
        if dot(*x, d) >= 0.0 {
            s[0] += r * x[0];
            s[1] += r * x[1];
        }
    }
    s
}

fn grad_canonical_at(net: &CanonicalNetwork, data: &SampleSet, rho: &[f64]) -> CanonicalGradient {
    let m = net.width();
    let inv_m = 1.0 / m as f64;
    let mut g = CanonicalGradient {
        r: vec![0.0; m],
        theta: vec![0.0; m],
    };
    for i in 0..m {
        let theta = net.theta[i];
        let s = active_sum(direction(theta), data, rho);
        g.r[i] = dot(s, direction(theta)) * inv_m;
        g.theta[i] = net.r[i] * dot(s, tangent(theta)) * inv_m;
    }
    g
}

/// Exact gradient of the loss in canonical coordinates.
pub fn grad_canonical(net: &CanonicalNetwork, data: &SampleSet) -> CanonicalGradient {
    let rho = residuals(net, data);
    grad_canonical_at(net, data, &rho)
}

/// Per-neuron diagonal metric relating the full flow to the canonical
/// gradient: `w_i' = -P_i grad_{w_i} L`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricMatrix {
    pub p_rr: Vec<f64>,
    pub p_thth: Vec<f64>,
}

pub fn metric(net: &FullNetwork) -> Result<MetricMatrix> {
    let f = net.scaling().canonical_factor(net.width());
    let mut p_rr = Vec::with_capacity(net.width());
    let mut p_thth = Vec::with_capacity(net.width());
    for i in 0..net.width() {
        let n2 = net.a[i] * net.a[i] + net.b[i] * net.b[i];
        if n2.sqrt() <= A_ZERO_TOL {
            return Err(Error::DegenerateNeuron { index: i });
        }
        p_rr.push(f * f * (n2 + net.c[i] * net.c[i]));
        p_thth.push(1.0 / n2);
    }
    Ok(MetricMatrix { p_rr, p_thth })
}

fn check_finite_full(net: &FullNetwork, step: usize) -> Result<()> {
    if net.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

fn masked_grad(net: &FullNetwork, data: &SampleSet, mask: Mask) -> (FullGradient, Vec<f64>) {
    let rho = full_residuals(net, data);
    let mut g = grad_full_at(net, data, &rho);
    if !mask.train_a {
        g.a.iter_mut().for_each(|v| *v = 0.0);
    }
    if !mask.train_b {
        g.b.iter_mut().for_each(|v| *v = 0.0);
    }
    if !mask.train_c {
        g.c.iter_mut().for_each(|v| *v = 0.0);
    }
    (g, rho)
}

fn shifted(net: &FullNetwork, g: &FullGradient, h: f64) -> FullNetwork {
    let mut out = net.clone();
    for i in 0..net.width() {
        out.a[i] -= h * g.a[i];
        out.b[i] -= h * g.b[i];
        out.c[i] -= h * g.c[i];
    }
    out
}

/// One step of the full flow; also returns the residuals at the start state.
fn step_full_inner(
    net: &FullNetwork,
    data: &SampleSet,
    cfg: &TrainConfig,
    index: usize,
) -> Result<(FullNetwork, Vec<f64>)> {
    let lr = cfg.lr;
    let (k1, rho) = masked_grad(net, data, cfg.mask);
    let mut next = match cfg.integrator {
        Integrator::Euler => shifted(net, &k1, lr),
        Integrator::Rk4 => {
            let (k2, _) = masked_grad(&shifted(net, &k1, 0.5 * lr), data, cfg.mask);
            let (k3, _) = masked_grad(&shifted(net, &k2, 0.5 * lr), data, cfg.mask);
            let (k4, _) = masked_grad(&shifted(net, &k3, lr), data, cfg.mask);
            let combine = |v1: &[f64], v2: &[f64], v3: &[f64], v4: &[f64]| -> Vec<f64> {
                (0..v1.len())
                    .map(|i| (v1[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]) / 6.0)
                    .collect()
            };
            let g = FullGradient {
                a: combine(&k1.a, &k2.a, &k3.a, &k4.a),
                b: combine(&k1.b, &k2.b, &k3.b, &k4.b),
                c: combine(&k1.c, &k2.c, &k3.c, &k4.c),
            };
            shifted(net, &g, lr)
        }
    };
    if !cfg.mask.train_a {
        next.a.copy_from_slice(&net.a);
    }
    if !cfg.mask.train_b {
        next.b.copy_from_slice(&net.b);
    }
    if !cfg.mask.train_c {
        next.c.copy_from_slice(&net.c);
    }
    check_finite_full(&next, index)?;
    Ok((next, rho))
}

/// One integrator step of the full flow `z' = -grad L(z)`.
pub fn step_full(net: &FullNetwork, data: &SampleSet, cfg: &TrainConfig) -> Result<FullNetwork> {
    cfg.validate(false)?;
    step_full_inner(net, data, cfg, 1).map(|(n, _)| n)
}

fn canonical_rates(
    net: &CanonicalNetwork,
    data: &SampleSet,
    tv_lambda: f64,
) -> (CanonicalGradient, Vec<f64>) {
    let rho = residuals(net, data);
    let mut g = grad_canonical_at(net, data, &rho);
    if tv_lambda > 0.0 {
        for (gr, &r) in g.r.iter_mut().zip(&net.r) {
            // sign(0) = 0
            if r != 0.0 {
                *gr += tv_lambda * r.signum();
            }
        }
    }
    (g, rho)
}

fn shifted_canonical(net: &CanonicalNetwork, g: &CanonicalGradient, h: f64) -> CanonicalNetwork {
    let mut out = net.clone();
    for i in 0..net.width() {
        out.r[i] -= h * g.r[i];
        out.theta[i] = wrap_angle(net.theta[i] - h * g.theta[i]);
    }
    out
}

fn step_canonical_inner(
    net: &CanonicalNetwork,
    data: &SampleSet,
    cfg: &TrainConfig,
    index: usize,
) -> Result<(CanonicalNetwork, Vec<f64>)> {
    let lr = cfg.lr;
    let lam = cfg.tv_lambda;
    let (k1, rho) = canonical_rates(net, data, lam);
    let next = match cfg.integrator {
        Integrator::Euler => shifted_canonical(net, &k1, lr),
        Integrator::Rk4 => {
            let (k2, _) = canonical_rates(&shifted_canonical(net, &k1, 0.5 * lr), data, lam);
            let (k3, _) = canonical_rates(&shifted_canonical(net, &k2, 0.5 * lr), data, lam);
            let (k4, _) = canonical_rates(&shifted_canonical(net, &k3, lr), data, lam);
            let m = net.width();
            let mut g = CanonicalGradient {
                r: vec![0.0; m],
                theta: vec![0.0; m],
            };
            for i in 0..m {
                g.r[i] = (k1.r[i] + 2.0 * k2.r[i] + 2.0 * k3.r[i] + k4.r[i]) / 6.0;
                g.theta[i] =
                    (k1.theta[i] + 2.0 * k2.theta[i] + 2.0 * k3.theta[i] + k4.theta[i]) / 6.0;
            }
            shifted_canonical(net, &g, lr)
        }
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState { step: index });
    }
    Ok((next, rho))
}

/// One integrator step of the canonical flow `w' = -grad L(w)`, with the
/// optional total-variation term `lambda sign(r)` added to the radial rate.
pub fn step_canonical(
    net: &CanonicalNetwork,
    data: &SampleSet,
    cfg: &TrainConfig,
) -> Result<CanonicalNetwork> {
    cfg.validate(true)?;
    step_canonical_inner(net, data, cfg, 1).map(|(n, _)| n)
}

/// A recorded network state.
#[derive(Clone, Debug, PartialEq)]
pub enum NetworkState {
    Full(FullNetwork),
    Canonical(CanonicalNetwork),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub time: f64,
    pub loss: f64,
    pub residual_norm: f64,
    /// `max_i |delta_i(t) - delta_i(0)|`; `None` for the canonical flow.
    pub max_delta_drift: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub snapshots: Vec<(usize, NetworkState)>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn final_drift(&self) -> Option<f64> {
        self.last().and_then(|r| r.max_delta_drift)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "time", "loss", "residual_norm", "max_delta_drift"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.time.to_string(),
                r.loss.to_string(),
                r.residual_norm.to_string(),
                r.max_delta_drift.map(|d| d.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn record(step: usize, lr: f64, rho: &[f64], drift: Option<f64>) -> TrajectoryRecord {
    let sq: f64 = rho.iter().map(|r| r * r).sum();
    TrajectoryRecord {
        step,
        time: step as f64 * lr,
        loss: 0.5 * sq,
        residual_norm: sq.sqrt(),
        max_delta_drift: drift,
    }
}

fn should_stop(cfg: &TrainConfig, rec: &TrajectoryRecord) -> bool {
    cfg.stop_residual_norm.is_some_and(|tol| rec.residual_norm < tol)
}

/// Runs the full flow for `cfg.steps` steps, recording every step and taking
/// a snapshot every `cfg.snapshot_every` steps (plus the final state).
pub fn run_full(
    net: &FullNetwork,
    data: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(FullNetwork, Trajectory)> {
    cfg.validate(false)?;
    let delta0 = net.invariants();
    let mut traj = Trajectory::default();
    let mut cur = net.clone();
    traj.snapshots.push((0, NetworkState::Full(cur.clone())));
    let mut last_step = 0;
    for k in 0..cfg.steps {
        let (next, rho) = step_full_inner(&cur, data, cfg, k + 1)?;
        let rec = record(k, cfg.lr, &rho, Some(cur.invariants().max_drift(&delta0)));
        let stop = should_stop(cfg, &rec);
        traj.records.push(rec);
        if stop {
            break;
        }
        cur = next;
        last_step = k + 1;
        if last_step % cfg.snapshot_every == 0 {
            traj.snapshots.push((last_step, NetworkState::Full(cur.clone())));
        }
    }
    if traj.records.last().map(|r| r.step) != Some(last_step) {
        let rho = full_residuals(&cur, data);
        traj.records
            .push(record(last_step, cfg.lr, &rho, Some(cur.invariants().max_drift(&delta0))));
    }
    if traj.snapshots.last().map(|s| s.0) != Some(last_step) {
        traj.snapshots.push((last_step, NetworkState::Full(cur.clone())));
    }
    Ok((cur, traj))
}

/// Canonical-coordinate counterpart of [`run_full`]; no invariant drift is
/// recorded since `delta` is not part of the state.
pub fn run_canonical(
    net: &CanonicalNetwork,
    data: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(CanonicalNetwork, Trajectory)> {
    cfg.validate(true)?;
    let mut traj = Trajectory::default();
    let mut cur = net.clone();
    traj.snapshots.push((0, NetworkState::Canonical(cur.clone())));
    let mut last_step = 0;
    for k in 0..cfg.steps {
        let (next, rho) = step_canonical_inner(&cur, data, cfg, k + 1)?;
        let rec = record(k, cfg.lr, &rho, None);
        let stop = should_stop(cfg, &rec);
        traj.records.push(rec);
        if stop {
            break;
        }
        cur = next;
        last_step = k + 1;
        if last_step % cfg.snapshot_every == 0 {
            traj.snapshots.push((last_step, NetworkState::Canonical(cur.clone())));
        }
    }
    if traj.records.last().map(|r| r.step) != Some(last_step) {
        let rho = residuals(&cur, data);
        traj.records.push(record(last_step, cfg.lr, &rho, None));
    }
    if traj.snapshots.last().map(|s| s.0) != Some(last_step) {
        traj.snapshots.push((last_step, NetworkState::Canonical(cur.clone())));
    }
    Ok((cur, traj))
}

/// Both sides of the change-of-metric relation at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop2Report {
    /// `(r', theta')` measured by differencing the canonical image of one
    /// small full-gradient step.
    pub measured_r: Vec<f64>,
    pub measured_theta: Vec<f64>,
    /// `-P_i grad_{w_i} L` from the metric and the canonical gradient.
    pub predicted_r: Vec<f64>,
    pub predicted_theta: Vec<f64>,
    /// Largest of the two componentwise `||measured - predicted||_inf / ||predicted||_inf`.
    pub discrepancy: f64,
}

/// Compares the finite-difference canonical velocity under the full flow
/// with the metric-weighted canonical gradient, using a step of size `h`.
pub fn check_prop2(net0: &FullNetwork, data: &SampleSet, h: f64) -> Result<Prop2Report> {
    let w0 = net0.to_canonical()?;
    let g = grad_full(net0, data);
    let w1 = shifted(net0, &g, h).to_canonical()?;
    let m = net0.width();
    let mut measured_r = Vec::with_capacity(m);
    let mut measured_theta = Vec::with_capacity(m);
    for i in 0..m {
        measured_r.push((w1.r[i] - w0.r[i]) / h);
        let mut dth = w1.theta[i] - w0.theta[i];
        if dth > PI {
            dth -= 2.0 * PI;
        } else if dth <= -PI {
            dth += 2.0 * PI;
        }
        measured_theta.push(dth / h);
    }
    let p = metric(net0)?;
    let gc = grad_canonical(&w0, data);
    let predicted_r: Vec<f64> = (0..m).map(|i| -p.p_rr[i] * gc.r[i]).collect();
    let predicted_theta: Vec<f64> = (0..m).map(|i| -p.p_thth[i] * gc.theta[i]).collect();

    let rel = |meas: &[f64], pred: &[f64]| -> f64 {
        let scale = pred.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let err = meas
            .iter()
            .zip(pred)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        if scale > 0.0 {
            err / scale
        } else {
            err
        }
    };
    let discrepancy = rel(&measured_r, &predicted_r).max(rel(&measured_theta, &predicted_theta));
    Ok(Prop2Report {
        measured_r,
        measured_theta,
        predicted_r,
        predicted_theta,
        discrepancy,
    })
}

/// Invariant drift of `net` relative to a captured reference.
pub fn delta_drift(net: &FullNetwork, reference: &InvariantVector) -> f64 {
    net.invariants().max_drift(reference)
}
