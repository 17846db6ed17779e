//! Random-feature and tangent kernels of the network, their infinite-width
//! limits, and kernel interpolation.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{direction, dot, FullNetwork, SampleSet};

/// Initialization measure of `(a, b)` for the analytic kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum LimitMeasure {
    /// `a = a0` and knots `b / a` uniform on `[k1, k2]`. With `mirrored`,
    /// half of the mass sits at `a = -a0` with the same knot law.
    #[serde(rename = "UNIFORM")]
    Uniform {
        a0: f64,
        k1: f64,
        k2: f64,
        #[serde(default)]
        mirrored: bool,
    },
    /// Any rotation-invariant law of `(a, b)` with `E[a^2 + b^2] = c`.
    #[serde(rename = "RADIAL")]
    Radial { c: f64 },
}

impl LimitMeasure {
    fn validate(&self) -> Result<()> {
        match *self {
            LimitMeasure::Uniform { a0, k1, k2, .. } => {
                if !(a0 > 0.0 && a0.is_finite()) {
                    return Err(invalid("a0 must be positive"));
                }
                if !(k1 < k2 && k1.is_finite() && k2.is_finite()) {
                    return Err(invalid(format!("knot interval [{k1}, {k2}] is empty")));
                }
            }
            LimitMeasure::Radial { c } => {
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(invalid("radial scale C must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    /// The random-feature kernel of this measure.
    pub fn rf(&self, x: f64, y: f64) -> f64 {
        match *self {
            LimitMeasure::Uniform {
                a0,
                k1,
                k2,
                mirrored,
            } => {
                let up = uniform_rf_branch(a0, k1, k2, x, y);
                if mirrored {
                    0.5 * (up + uniform_rf_mirror_branch(a0, k1, k2, x, y))
                } else {
                    up
                }
            }
            LimitMeasure::Radial { c } => k_radial_rf(c, x, y),
        }
    }
}

/// Which kernel to use, with the data it depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum KernelSpec {
    #[serde(rename = "EMPIRICAL_RF")]
    EmpiricalRf { network: FullNetwork },
    #[serde(rename = "UNIFORM_RF")]
    UniformRf {
        a0: f64,
        k1: f64,
        k2: f64,
        #[serde(default)]
        mirrored: bool,
    },
    #[serde(rename = "RADIAL_RF")]
    RadialRf { c: f64 },
    #[serde(rename = "EMPIRICAL_NTK")]
    EmpiricalNtk { network: FullNetwork },
    /// Infinite-width tangent kernel: the analytic RF kernel of `measure` plus
    /// `(x x' + 1) E[c^2] P(a x > b, a x' > b)`.
    #[serde(rename = "QUADRATURE_NTK")]
    QuadratureNtk {
        measure: LimitMeasure,
        c2_mean: f64,
        #[serde(default = "default_quad_tol")]
        tol: f64,
    },
}

fn default_quad_tol() -> f64 {
    1e-11
}

/// Error bound above which adaptive quadrature is reported as failed.
pub const QUAD_MAX_ERROR: f64 = 1e-8;

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::EmpiricalRf { .. } | KernelSpec::EmpiricalNtk { .. } => Ok(()),
            KernelSpec::UniformRf {
                a0,
                k1,
                k2,
                mirrored,
            } => LimitMeasure::Uniform {
                a0: *a0,
                k1: *k1,
                k2: *k2,
                mirrored: *mirrored,
            }
            .validate(),
            KernelSpec::RadialRf { c } => LimitMeasure::Radial { c: *c }.validate(),
            KernelSpec::QuadratureNtk {
                measure,
                c2_mean,
                tol,
            } => {
                if !(*c2_mean >= 0.0) {
                    return Err(invalid("E[c^2] must be nonnegative"));
                }
                if !(*tol > 0.0) {
                    return Err(invalid("quadrature tolerance must be positive"));
                }
                measure.validate()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::EmpiricalRf { .. } => "EMPIRICAL_RF",
            KernelSpec::UniformRf { .. } => "UNIFORM_RF",
            KernelSpec::RadialRf { .. } => "RADIAL_RF",
            KernelSpec::EmpiricalNtk { .. } => "EMPIRICAL_NTK",
            KernelSpec::QuadratureNtk { .. } => "QUADRATURE_NTK",
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        Ok(match self {
            KernelSpec::EmpiricalRf { network } => k_empirical_rf(network, x, y),
            KernelSpec::UniformRf {
                a0,
                k1,
                k2,
                mirrored,
            } => LimitMeasure::Uniform {
                a0: *a0,
                k1: *k1,
                k2: *k2,
                mirrored: *mirrored,
            }
            .rf(x, y),
            KernelSpec::RadialRf { c } => k_radial_rf(*c, x, y),
            KernelSpec::EmpiricalNtk { network } => k_empirical_ntk(network, x, y),
            KernelSpec::QuadratureNtk {
                measure,
                c2_mean,
                tol,
            } => k_quadrature_ntk(measure, *c2_mean, *tol, x, y)?,
        })
    }

    pub fn gram(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let n = xs.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(xs[i], xs[j])?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }
}

/// `(1/m) sum_i [a_i x - b_i]_+ [a_i x' - b_i]_+`.
pub fn k_empirical_rf(net: &FullNetwork, x: f64, y: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..net.width() {
        let (a, b) = (net.a()[i], net.b()[i]);
        acc += (a * x - b).max(0.0) * (a * y - b).max(0.0);
    }
    acc / net.width() as f64
}

/// `int (x - t)(y - t) dt`, antiderivative in `t`.
fn cubic_antiderivative(t: f64, x: f64, y: f64) -> f64 {
    t * x * y - 0.5 * t * t * (x + y) + t * t * t / 3.0
}

fn uniform_rf_branch(a0: f64, k1: f64, k2: f64, x: f64, y: f64) -> f64 {
    let hi = x.min(y).min(k2);
    if hi <= k1 {
        return 0.0;
    }
    a0 * a0 / (k2 - k1) * (cubic_antiderivative(hi, x, y) - cubic_antiderivative(k1, x, y))
}

fn uniform_rf_mirror_branch(a0: f64, k1: f64, k2: f64, x: f64, y: f64) -> f64 {
    let lo = x.max(y).max(k1);
    if lo >= k2 {
        return 0.0;
    }
    a0 * a0 / (k2 - k1) * (cubic_antiderivative(k2, x, y) - cubic_antiderivative(lo, x, y))
}

/// Infinite-width RF kernel for `a = a0`, knots uniform on `[k1, k2]`:
/// `a0^2/(k2-k1) int_{k1}^{min(x, x', k2)} (x - t)(x' - t) dt`.
pub fn k_uniform_rf(a0: f64, k1: f64, k2: f64, x: f64, y: f64) -> f64 {
    uniform_rf_branch(a0, k1, k2, x, y)
}

/// Infinite-width RF kernel of a radial measure with `E[a^2 + b^2] = c`.
///
/// For `x <= x'`:
/// `c/(4pi) * ((pi - arctan x' + arctan x)(x x' + 1) + (x' - x))`.
pub fn k_radial_rf(c: f64, x: f64, y: f64) -> f64 {
    let (x, y) = if x <= y { (x, y) } else { (y, x) };
    c / (4.0 * PI) * ((PI - y.atan() + x.atan()) * (x * y + 1.0) + (y - x))
}

/// Empirical tangent kernel at `alpha = sqrt(m)`:
/// `(1/m) sum phi_i(x) phi_i(x') + ((x x' + 1)/m) sum c_i^2 1[.>0] 1[.>0]`.
pub fn k_empirical_ntk(net: &FullNetwork, x: f64, y: f64) -> f64 {
    let mut rf = 0.0;
    let mut gate = 0.0;
    for i in 0..net.width() {
        let (a, b, c) = (net.a()[i], net.b()[i], net.c()[i]);
        let (px, py) = (a * x - b, a * y - b);
        rf += px.max(0.0) * py.max(0.0);
        if px > 0.0 && py > 0.0 {
            gate += c * c;
        }
    }
    let m = net.width() as f64;
    rf / m + (x * y + 1.0) * gate / m
}

/// `P(a x > b, a x' > b)` under the measure. Uniform knots use the exact
/// overlap length, radial measures adaptive quadrature over the angle.
fn gate_probability(measure: &LimitMeasure, tol: f64, x: f64, y: f64) -> Result<f64> {
    match *measure {
        LimitMeasure::Uniform {
            k1, k2, mirrored, ..
        } => {
            let up = (x.min(y).min(k2) - k1).max(0.0) / (k2 - k1);
            if mirrored {
                let down = (k2 - x.max(y).max(k1)).max(0.0) / (k2 - k1);
                Ok(0.5 * (up + down))
            } else {
                Ok(up)
            }
        }
        LimitMeasure::Radial { .. } => {
            let (p, q) = ([x, 1.0], [y, 1.0]);
            let f = |eta: f64| {
                let d = direction(eta);
                if dot(p, d) > 0.0 && dot(q, d) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            };
            let (val, err) = adaptive_simpson(f, 0.0, TAU, tol, 256, 60);
            if err > QUAD_MAX_ERROR {
                return Err(Error::QuadratureNotConverged { error_bound: err });
            }
            Ok(val / TAU)
        }
    }
}

/// Infinite-width tangent kernel.
pub fn k_quadrature_ntk(measure: &LimitMeasure, c2_mean: f64, tol: f64, x: f64, y: f64) -> Result<f64> {
    let rf = measure.rf(x, y);
    if c2_mean == 0.0 {
        return Ok(rf);
    }
    Ok(rf + (x * y + 1.0) * c2_mean * gate_probability(measure, tol, x, y)?)
}

/// Adaptive Simpson quadrature over `panels` equal starting panels. Each
/// leaf is accepted once its Richardson estimate drops below `leaf_tol` (an
/// absolute tolerance, so that jump discontinuities are resolved by bisection
/// down to a width proportional to `leaf_tol`). Returns the value and the sum
/// of leaf error estimates.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    leaf_tol: f64,
    panels: usize,
    max_depth: usize,
) -> (f64, f64) {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return (left + right + delta / 15.0, delta.abs() / 15.0);
        }
        let (v1, e1) = rec(f, a, m, fa, flm, fm, left, tol, depth - 1);
        let (v2, e2) = rec(f, m, b, fm, frm, fb, right, tol, depth - 1);
        (v1 + v2, e1 + e2)
    }
    let h = (b - a) / panels as f64;
    let (mut val, mut err) = (0.0, 0.0);
    for k in 0..panels {
        let lo = a + h * k as f64;
        let hi = if k + 1 == panels { b } else { lo + h };
        let mid = 0.5 * (lo + hi);
        let (fa, fm, fb) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        let (v, e) = rec(&f, lo, hi, fa, fm, fb, whole, leaf_tol, max_depth);
        val += v;
        err += e;
    }
    (val, err)
}

/// Kernel interpolant (or ridge fit when `jitter > 0`) on a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFit {
    #[serde(flatten)]
    pub spec: KernelSpec,
    pub xs: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Diagonal shift actually used in the solve.
    pub jitter: f64,
}

impl KernelFit {
    /// `sum_j alpha_j K(x_j, x)`.
    pub fn predict(&self, x: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&xj, &aj) in self.xs.iter().zip(&self.alphas) {
            acc += aj * self.spec.eval(xj, x)?;
        }
        Ok(acc)
    }

    pub fn predict_many(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.predict(x)).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn min_eigenvalue(g: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(g.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Solves `(G + jitter I) beta = y` by Cholesky. With `jitter == 0` and a
/// numerically singular `G`, retries once with `1e-10 * trace / s`.
/// Returns the solution and the jitter used.
fn spd_solve(g: &DMatrix<f64>, y: &[f64], jitter: f64) -> Result<(DVector<f64>, f64)> {
    let n = g.nrows();
    let rhs = DVector::from_column_slice(y);
    let attempt = |j: f64| {
        let mut a = g.clone();
        for i in 0..n {
            a[(i, i)] += j;
        }
        a.cholesky().map(|c| c.solve(&rhs))
    };
    if let Some(sol) = attempt(jitter) {
        return Ok((sol, jitter));
    }
    if jitter == 0.0 {
        let fallback = 1e-10 * g.trace() / n as f64;
        if fallback > 0.0 {
            if let Some(sol) = attempt(fallback) {
                return Ok((sol, fallback));
            }
        }
    }
    Err(Error::SingularGram {
        min_eigenvalue: min_eigenvalue(g),
    })
}

/// Minimum-RKHS-norm interpolant `f = sum_j alpha_j K(x_j, .)` with
/// `(K + jitter I) alpha = y`.
pub fn fit_interpolate(spec: &KernelSpec, data: &SampleSet, jitter: f64) -> Result<KernelFit> {
    spec.validate()?;
    if !(jitter >= 0.0) {
        return Err(invalid("jitter must be nonnegative"));
    }
    let g = spec.gram(data.xs())?;
    let (alpha, used) = spd_solve(&g, data.ys(), jitter)?;
    Ok(KernelFit {
        spec: spec.clone(),
        xs: data.xs().to_vec(),
        alphas: alpha.iter().copied().collect(),
        jitter: used,
    })
}

/// Kernel ridge regression; the same solve with a ridge penalty on the diagonal.
pub fn fit_ridge(spec: &KernelSpec, data: &SampleSet, ridge: f64) -> Result<KernelFit> {
    fit_interpolate(spec, data, ridge)
}

/// Training residual `f(t) - y = -exp(-t K) y` of the kernel gradient flow
/// `f' = K (y - f)` started from `f(0) = 0`.
pub fn kernel_flow_residual(spec: &KernelSpec, data: &SampleSet, t: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(t >= 0.0) {
        return Err(invalid("t must be nonnegative"));
    }
    let g = spec.gram(data.xs())?;
    let eig = SymmetricEigen::new(g);
    let y = DVector::from_column_slice(data.ys());
    let coeff = eig.eigenvectors.transpose() * &y;
    let decay = DVector::from_iterator(
        coeff.len(),
        coeff
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, &l)| -c * (-t * l).exp()),
    );
    Ok((&eig.eigenvectors * decay).iter().copied().collect())
}

/// Output weights of minimal Euclidean norm interpolating the data with the
/// first layer of `net` held fixed: `c = Phi^T (Phi Phi^T + jitter I)^{-1} y`
/// with `Phi_ji = [a_i x_j - b_i]_+ / alpha`. This is the limit of gradient
/// descent on `c` alone started from `c = 0`.
pub fn min_norm_output_weights(net: &FullNetwork, data: &SampleSet, jitter: f64) -> Result<FullNetwork> {
    let (s, m) = (data.len(), net.width());
    let inv_alpha = 1.0 / net.alpha();
    let phi = DMatrix::from_fn(s, m, |j, i| {
        (net.a()[i] * data.xs()[j] - net.b()[i]).max(0.0) * inv_alpha
    });
    let g = &phi * phi.transpose();
    let (beta, _) = spd_solve(&g, data.ys(), jitter)?;
    let c = phi.transpose() * beta;
    net.with_c(c.iter().copied().collect())
}

/// Writes `(x, f)` rows for a prediction grid.
pub fn write_prediction_csv(xs: &[f64], fs: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "f"])?;
    for (x, f) in xs.iter().zip(fs) {
        w.write_record([x.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
