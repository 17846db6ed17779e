//! Experiment descriptions: tasks, initial weight laws and the config file
//! schema read by the command line runner.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DeltaFailure, Error, Result};
use crate::flows::{Mask, TrainConfig};
use crate::kernels::{KernelSpec, LimitMeasure};
use crate::meanfield::GridSpec;
use crate::network::{FullNetwork, SampleSet, Scaling};
use crate::splines::linspace;

/// Training data recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Task {
    /// `s` equispaced points with `y = sign(sin(2 pi x))`, zeros mapped to +1.
    #[serde(rename = "SQUARE_WAVE")]
    SquareWave {
        s: usize,
        #[serde(default = "default_x_range")]
        x_range: [f64; 2],
    },
    /// `s` equispaced points with `y = sin(2 pi x)`.
    #[serde(rename = "SINE")]
    Sine {
        s: usize,
        #[serde(default = "default_x_range")]
        x_range: [f64; 2],
    },
    #[serde(rename = "CUSTOM_POINTS")]
    CustomPoints { xs: Vec<f64>, ys: Vec<f64> },
}

fn default_x_range() -> [f64; 2] {
    [-1.0, 1.0]
}

/// `sin(2 pi x)` at the sample points is only zero up to rounding.
const SQUARE_ZERO_TOL: f64 = 1e-12;

pub fn square_wave(x: f64) -> f64 {
    let v = (TAU * x).sin();
    if v.abs() < SQUARE_ZERO_TOL || v > 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl Task {
    pub fn samples(&self) -> Result<SampleSet> {
        match self {
            Task::SquareWave { s, x_range } | Task::Sine { s, x_range } => {
                if *s == 0 {
                    return Err(Error::Config("task.s must be positive".into()));
                }
                if !(x_range[0] < x_range[1]) {
                    return Err(Error::Config("task.x_range must be increasing".into()));
                }
                let xs = linspace(x_range[0], x_range[1], *s);
                let ys = match self {
                    Task::SquareWave { .. } => xs.iter().map(|&x| square_wave(x)).collect(),
                    _ => xs.iter().map(|&x| (TAU * x).sin()).collect(),
                };
                SampleSet::new(xs, ys)
            }
            Task::CustomPoints { xs, ys } => SampleSet::new(xs.clone(), ys.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignMode {
    #[serde(rename = "BOTH")]
    Both,
    #[serde(rename = "POSITIVE")]
    Positive,
}

/// Law of the initial weights, iid over neurons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum InitDist {
    /// Independent uniforms on the given closed ranges.
    #[serde(rename = "UNIFORM")]
    Uniform {
        a: [f64; 2],
        b: [f64; 2],
        c: [f64; 2],
    },
    /// Independent centred normals with the given standard deviations.
    #[serde(rename = "GAUSSIAN")]
    Gaussian { a: f64, b: f64, c: f64 },
    /// `|a| = a_abs` with a random or positive sign, knot `b / a` uniform
    /// on `knots`, `c` uniform on its range.
    #[serde(rename = "UNIFORM_KNOTS")]
    UniformKnots {
        a_abs: f64,
        #[serde(default = "default_sign_mode")]
        sign: SignMode,
        knots: [f64; 2],
        #[serde(default)]
        c: [f64; 2],
    },
}

fn default_sign_mode() -> SignMode {
    SignMode::Both
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub dist: InitDist,
    /// Multiplies `(a, b, c)` blockwise after sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<[f64; 3]>,
    /// Per-neuron function-preserving rescale to this invariant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_target: Option<f64>,
}

fn uniform_in(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0] <= r[1] && r[0].is_finite() && r[1].is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("init range {name} = {r:?} is not a valid interval")))
    }
}

impl InitDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitDist::Uniform { a, b, c } => {
                check_range("a", a)?;
                check_range("b", b)?;
                check_range("c", c)
            }
            InitDist::Gaussian { a, b, c } => {
                if [a, b, c].iter().all(|s| *s >= 0.0 && s.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Config("Gaussian standard deviations must be nonnegative".into()))
                }
            }
            InitDist::UniformKnots { a_abs, knots, c, .. } => {
                if !(a_abs > 0.0 && a_abs.is_finite()) {
                    return Err(Error::Config("a_abs must be positive".into()));
                }
                check_range("knots", knots)?;
                check_range("c", c)
            }
        }
    }

    /// Draws `m` neurons; the stream is consumed neuron by neuron in the
    /// order `a, b, c`.
    pub fn sample(&self, m: usize, scaling: Scaling, rng: &mut ChaCha8Rng) -> Result<FullNetwork> {
        self.validate()?;
        let (mut a, mut b, mut c) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
        for _ in 0..m {
            let (ai, bi, ci) = match *self {
                InitDist::Uniform { a, b, c } => {
                    (uniform_in(rng, a), uniform_in(rng, b), uniform_in(rng, c))
                }
                InitDist::Gaussian { a, b, c } => {
                    let z: [f64; 3] = [
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ];
                    (a * z[0], b * z[1], c * z[2])
                }
                InitDist::UniformKnots {
                    a_abs,
                    sign,
                    knots,
                    c,
                } => {
                    let s = match sign {
                        SignMode::Both => {
                            if rng.random::<bool>() {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        SignMode::Positive => 1.0,
                    };
                    let ai = s * a_abs;
                    let e = uniform_in(rng, knots);
                    (ai, ai * e, uniform_in(rng, c))
                }
            };
            a.push(ai);
            b.push(bi);
            c.push(ci);
        }
        FullNetwork::new(a, b, c, scaling)
    }
}

/// Rescales each neuron by `(k a, k b, c / k)`, `k > 0`, so that
/// `c^2 - a^2 - b^2 = delta`. The function computed is unchanged.
pub fn apply_delta_target(net: &FullNetwork, delta: f64) -> Result<FullNetwork> {
    if !delta.is_finite() {
        return Err(Error::Config("delta_target must be finite; use masks for the extremes".into()));
    }
    let m = net.width();
    let mut k = vec![1.0; m];
    let mut failures = Vec::new();
    for i in 0..m {
        let (a, b, c) = (net.a()[i], net.b()[i], net.c()[i]);
        let n2 = a * a + b * b;
        let c2 = c * c;
        // u = k^2 solves n2 u^2 + delta u - c2 = 0
        let u = if n2 > 0.0 && c2 > 0.0 {
            let disc = (delta * delta + 4.0 * n2 * c2).sqrt();
            if delta > 0.0 {
                Some(2.0 * c2 / (delta + disc))
            } else {
                Some((disc - delta) / (2.0 * n2))
            }
        } else if n2 > 0.0 {
            (delta < 0.0).then(|| -delta / n2)
        } else if c2 > 0.0 {
            (delta > 0.0).then(|| c2 / delta)
        } else {
            (delta == 0.0).then_some(1.0)
        };
        match u {
            Some(u) if u > 0.0 && u.is_finite() => k[i] = u.sqrt(),
            _ => failures.push(DeltaFailure {
                index: i,
                achieved: c2 - n2,
            }),
        }
    }
    if !failures.is_empty() {
        return Err(Error::UnreachableDelta { failures });
    }
    net.rescaled(&k)
}

impl InitSpec {
    pub fn build(&self, m: usize, scaling: Scaling, seed: u64) -> Result<FullNetwork> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = self.dist.sample(m, scaling, &mut rng)?;
        let net = match self.rescale {
            Some(k) => blockwise_rescale(&net, k)?,
            None => net,
        };
        match self.delta_target {
            Some(d) => apply_delta_target(&net, d),
            None => Ok(net),
        }
    }
}

/// `(a, b, c) -> (ka a, kb b, kc c)`.
pub fn blockwise_rescale(net: &FullNetwork, k: [f64; 3]) -> Result<FullNetwork> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("rescale factors must be finite".into()));
    }
    FullNetwork::new(
        net.a().iter().map(|v| v * k[0]).collect(),
        net.b().iter().map(|v| v * k[1]).collect(),
        net.c().iter().map(|v| v * k[2]).collect(),
        net.scaling(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "CANONICAL")]
    Canonical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Trajectory,
    Snapshots,
    Uv,
    Field,
    Attractors,
    KernelFit,
    SplineFit,
    NetworkFit,
    Compare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "EMPIRICAL_RF")]
    EmpiricalRf,
    #[serde(rename = "UNIFORM_RF")]
    UniformRf,
    #[serde(rename = "RADIAL_RF")]
    RadialRf,
    #[serde(rename = "EMPIRICAL_NTK")]
    EmpiricalNtk,
    #[serde(rename = "QUADRATURE_NTK")]
    QuadratureNtk,
}

/// `[kernel]` table. The empirical kernels use the initial network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default)]
    pub mirrored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<LimitMeasure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

impl KernelConfig {
    pub fn spec(&self, init: &FullNetwork) -> Result<KernelSpec> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("kernel.{name} is required for this kind")))
        };
        let spec = match self.kind {
            KernelKind::EmpiricalRf => KernelSpec::EmpiricalRf {
                network: init.clone(),
            },
            KernelKind::EmpiricalNtk => KernelSpec::EmpiricalNtk {
                network: init.clone(),
            },
            KernelKind::UniformRf => KernelSpec::UniformRf {
                a0: self.a0.unwrap_or(1.0),
                k1: need(self.k1, "k1")?,
                k2: need(self.k2, "k2")?,
                mirrored: self.mirrored,
            },
            KernelKind::RadialRf => KernelSpec::RadialRf { c: need(self.c, "c")? },
            KernelKind::QuadratureNtk => KernelSpec::QuadratureNtk {
                measure: self
                    .measure
                    .clone()
                    .ok_or_else(|| Error::Config("kernel.measure is required for QUADRATURE_NTK".into()))?,
                c2_mean: need(self.c2_mean, "c2_mean")?,
                tol: self.tol.unwrap_or(1e-11),
            },
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

/// Evaluation grid for fitted functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Defaults to the sample hull.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_range: Option<[f64; 2]>,
}

fn default_grid_n() -> usize {
    401
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions {
            grid_n: default_grid_n(),
            grid_range: None,
        }
    }
}

/// A rerun from the same sampled initialization with modified weights or
/// step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub m: usize,
    pub scaling: Scaling,
    #[serde(default = "default_flow")]
    pub flow: FlowKind,
    pub task: Task,
    pub init: InitSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub outputs: Vec<OutputKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<GridSpec>,
    #[serde(default)]
    pub output: OutputOptions,
    #[serde(default, rename = "variant", skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
}

fn default_flow() -> FlowKind {
    FlowKind::Full
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scn: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn wants(&self, kind: OutputKind) -> bool {
        self.outputs.contains(&kind)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return cfg(format!("name {:?} cannot be used as a directory name", self.name));
        }
        if self.m == 0 {
            return cfg("m must be positive".into());
        }
        self.init.dist.validate()?;
        self.train
            .validate(self.flow == FlowKind::Canonical)
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        if self.wants(OutputKind::KernelFit) && self.kernel.is_none() {
            return cfg("output kernel_fit needs a [kernel] table".into());
        }
        if self.output.grid_n < 2 {
            return cfg("output.grid_n must be at least 2".into());
        }
        if let Some(r) = self.output.grid_range {
            if !(r[0] < r[1]) {
                return cfg("output.grid_range must be increasing".into());
            }
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return cfg("variant names must be unique".into());
        }
        for v in &self.variants {
            if v.name.is_empty() || v.name.contains(['/', '\\']) {
                return cfg(format!("variant name {:?} cannot be used as a directory name", v.name));
            }
        }
        if self.flow == FlowKind::Canonical && self.variants.iter().any(|v| v.mask.is_some()) {
            return cfg("variant masks need the full flow".into());
        }
        Ok(())
    }

    pub fn samples(&self) -> Result<SampleSet> {
        self.task.samples().map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Config(format!("task: {msg}")),
            other => other,
        })
    }

    pub fn init_network(&self) -> Result<FullNetwork> {
        self.init.build(self.m, self.scaling, self.seed)
    }

    pub fn grid(&self, data: &SampleSet) -> Vec<f64> {
        let [lo, hi] = self.output.grid_range.unwrap_or_else(|| {
            let (lo, hi) = data.x_range();
            [lo, hi]
        });
        linspace(lo, hi, self.output.grid_n)
    }
}
