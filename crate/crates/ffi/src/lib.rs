//! C interface to `relu1d`.
//!
//! Every object crosses the boundary as an opaque handle owned by the
//! caller and released with the matching `*_free`. Fallible functions return
//! a [`Relu1dStatus`]; the message of the last failure on the calling thread
//! is available from [`relu1d_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use relu1d::flows::{run_full, Integrator, Mask, TrainConfig};
use relu1d::kernels::{fit_interpolate, fit_ridge, KernelFit, KernelSpec};
use relu1d::meanfield::{classify_attractors, AttractorClass};
use relu1d::runner::run_scenario;
use relu1d::scenario::Scenario;
use relu1d::splines::{fit_natural_cubic, CubicSpline};
use relu1d::{Error, FullNetwork, NetworkFunction, SampleSet, Scaling};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relu1dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Io = 4,
    Degenerate = 5,
    Diverged = 6,
    SingularGram = 7,
    Numerical = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relu1dScaling {
    M = 0,
    SqrtM = 1,
    One = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relu1dIntegrator {
    Euler = 0,
    Rk4 = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relu1dKernelKind {
    /// Features of the given network.
    EmpiricalRf = 0,
    /// Tangent kernel of the given network.
    EmpiricalNtk = 1,
    /// Uniform knots on `[k1, k2]` with `|a| = a0`.
    UniformRf = 2,
    /// Rotation-invariant first layer with `E[a^2 + b^2] = c`.
    RadialRf = 3,
}

/// Kernel description. Fields not used by `kind` are ignored.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct Relu1dKernelParams {
    pub kind: Relu1dKernelKind,
    pub a0: f64,
    pub k1: f64,
    pub k2: f64,
    pub mirrored: bool,
    pub c: f64,
    /// Required for the empirical kernels, otherwise may be null.
    pub network: *const Relu1dNetwork,
}

/// Training options for [`relu1d_network_train`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct Relu1dTrainParams {
    pub lr: f64,
    pub steps: usize,
    pub integrator: Relu1dIntegrator,
    pub train_a: bool,
    pub train_b: bool,
    pub train_c: bool,
    pub tv_lambda: f64,
    /// Stop once the residual norm drops below this; `<= 0` disables.
    pub stop_residual_norm: f64,
}

/// Attractor class codes written by [`relu1d_classify_attractors`].
pub const RELU1D_ATTRACTOR_NEITHER: i32 = 0;
pub const RELU1D_ATTRACTOR_LEFT: i32 = 1;
pub const RELU1D_ATTRACTOR_RIGHT: i32 = 2;
pub const RELU1D_ATTRACTOR_BOTH: i32 = 3;

pub struct Relu1dSamples(SampleSet);
pub struct Relu1dNetwork(FullNetwork);
pub struct Relu1dKernelFit(KernelFit);
pub struct Relu1dSpline(CubicSpline);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Relu1dStatus {
    match e {
        Error::InvalidInput(_) | Error::TooFewSamples { .. } | Error::UnreachableDelta { .. } => {
            Relu1dStatus::InvalidInput
        }
        Error::Config(_) | Error::Json(_) => Relu1dStatus::Config,
        Error::Io(_) | Error::Csv(_) => Relu1dStatus::Io,
        Error::DegenerateNeuron { .. } | Error::UnrecoverableNeuron { .. } => Relu1dStatus::Degenerate,
        Error::NonFiniteState { .. } => Relu1dStatus::Diverged,
        Error::SingularGram { .. } => Relu1dStatus::SingularGram,
        Error::BoundaryPoint { .. } | Error::NotABoundary { .. } | Error::QuadratureNotConverged { .. } => {
            Relu1dStatus::Numerical
        }
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> Relu1dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Relu1dStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            Relu1dStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            Relu1dStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a, T>(p: *mut T, n: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidInput(format!("{what} is not valid UTF-8"))))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn relu1d_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relu1d_samples_new(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut *mut Relu1dSamples,
) -> Relu1dStatus {
    guard(|| {
        let xs = input(xs, n, "xs")?.to_vec();
        let ys = input(ys, n, "ys")?.to_vec();
        put(out, Relu1dSamples(SampleSet::new(xs, ys)?))
    })
}

/// # Safety
/// `samples` must come from [`relu1d_samples_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn relu1d_samples_free(samples: *mut Relu1dSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}

/// # Safety
/// `samples` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn relu1d_samples_len(samples: *const Relu1dSamples) -> usize {
    samples.as_ref().map_or(0, |s| s.0.len())
}

/// Builds `f(x) = (1/alpha) sum c_i [a_i x - b_i]_+` with `m` neurons.
///
/// # Safety
/// `a`, `b`, `c` must point to `m` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_new(
    a: *const f64,
    b: *const f64,
    c: *const f64,
    m: usize,
    scaling: Relu1dScaling,
    out: *mut *mut Relu1dNetwork,
) -> Relu1dStatus {
    guard(|| {
        let scaling = match scaling {
            Relu1dScaling::M => Scaling::M,
            Relu1dScaling::SqrtM => Scaling::SqrtM,
            Relu1dScaling::One => Scaling::One,
        };
        let net = FullNetwork::new(
            input(a, m, "a")?.to_vec(),
            input(b, m, "b")?.to_vec(),
            input(c, m, "c")?.to_vec(),
            scaling,
        )?;
        put(out, Relu1dNetwork(net))
    })
}

/// # Safety
/// `net` must come from [`relu1d_network_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_free(net: *mut Relu1dNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_width(net: *const Relu1dNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.width())
}

/// Copies the weights into caller buffers of length `width`. Any of the
/// buffers may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold `width` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_weights(
    net: *const Relu1dNetwork,
    a: *mut f64,
    b: *mut f64,
    c: *mut f64,
) -> Relu1dStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        let m = net.width();
        for (dst, src) in [(a, net.a()), (b, net.b()), (c, net.c())] {
            if !dst.is_null() {
                output(dst, m, "weights")?.copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Per-neuron invariant `c^2 - a^2 - b^2`.
///
/// # Safety
/// `out` must hold `width` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_delta(net: *const Relu1dNetwork, out: *mut f64) -> Relu1dStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        output(out, net.width(), "out")?.copy_from_slice(&net.invariants().delta);
        Ok(())
    })
}

/// Canonical coordinates `(r_i, theta_i)`.
///
/// # Safety
/// `r` and `theta` must each hold `width` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_canonical(
    net: *const Relu1dNetwork,
    r: *mut f64,
    theta: *mut f64,
) -> Relu1dStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        let can = net.to_canonical()?;
        output(r, net.width(), "r")?.copy_from_slice(can.r());
        output(theta, net.width(), "theta")?.copy_from_slice(can.theta());
        Ok(())
    })
}

/// # Safety
/// `xs` must hold `n` readable and `out` `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_eval(
    net: *const Relu1dNetwork,
    xs: *const f64,
    n: usize,
    out: *mut f64,
) -> Relu1dStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        let xs = input(xs, n, "xs")?;
        for (o, &x) in output(out, n, "out")?.iter_mut().zip(xs) {
            *o = net.eval(x);
        }
        Ok(())
    })
}

/// Runs gradient descent on the squared loss and replaces the network's
/// weights with the result. `final_loss` may be null.
///
/// # Safety
/// `net` and `samples` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn relu1d_network_train(
    net: *mut Relu1dNetwork,
    samples: *const Relu1dSamples,
    params: Relu1dTrainParams,
    final_loss: *mut f64,
) -> Relu1dStatus {
    guard(|| {
        let data = &handle(samples, "samples")?.0;
        let net = net.as_mut().ok_or(Fail::Null("net"))?;
        let mut cfg = TrainConfig::new(params.lr, params.steps)
            .with_mask(Mask {
                train_a: params.train_a,
                train_b: params.train_b,
                train_c: params.train_c,
            })
            .with_integrator(match params.integrator {
                Relu1dIntegrator::Euler => Integrator::Euler,
                Relu1dIntegrator::Rk4 => Integrator::Rk4,
            });
        cfg.tv_lambda = params.tv_lambda;
        cfg.snapshot_every = usize::MAX;
        if params.stop_residual_norm > 0.0 {
            cfg.stop_residual_norm = Some(params.stop_residual_norm);
        }
        let (trained, traj) = run_full(&net.0, data, &cfg)?;
        if !final_loss.is_null() {
            *final_loss = traj.last().map_or(f64::NAN, |r| r.loss);
        }
        net.0 = trained;
        Ok(())
    })
}

unsafe fn kernel_spec(p: &Relu1dKernelParams) -> Result<KernelSpec, Fail> {
    let spec = match p.kind {
        Relu1dKernelKind::EmpiricalRf => KernelSpec::EmpiricalRf {
            network: handle(p.network, "network")?.0.clone(),
        },
        Relu1dKernelKind::EmpiricalNtk => KernelSpec::EmpiricalNtk {
            network: handle(p.network, "network")?.0.clone(),
        },
        Relu1dKernelKind::UniformRf => KernelSpec::UniformRf {
            a0: p.a0,
            k1: p.k1,
            k2: p.k2,
            mirrored: p.mirrored,
        },
        Relu1dKernelKind::RadialRf => KernelSpec::RadialRf { c: p.c },
    };
    spec.validate()?;
    Ok(spec)
}

/// Kernel regression on the samples: interpolation when `ridge == 0`,
/// ridge regression otherwise.
///
/// # Safety
/// `params` and `samples` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relu1d_kernel_fit_new(
    params: *const Relu1dKernelParams,
    samples: *const Relu1dSamples,
    ridge: f64,
    out: *mut *mut Relu1dKernelFit,
) -> Relu1dStatus {
    guard(|| {
        let spec = kernel_spec(handle(params, "params")?)?;
        let data = &handle(samples, "samples")?.0;
        let fit = if ridge == 0.0 {
            fit_interpolate(&spec, data, 0.0)?
        } else {
            fit_ridge(&spec, data, ridge)?
        };
        put(out, Relu1dKernelFit(fit))
    })
}

/// # Safety
/// `fit` must come from [`relu1d_kernel_fit_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn relu1d_kernel_fit_free(fit: *mut Relu1dKernelFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `xs` must hold `n` readable and `out` `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relu1d_kernel_fit_predict(
    fit: *const Relu1dKernelFit,
    xs: *const f64,
    n: usize,
    out: *mut f64,
) -> Relu1dStatus {
    guard(|| {
        let fit = &handle(fit, "fit")?.0;
        let xs = input(xs, n, "xs")?;
        output(out, n, "out")?.copy_from_slice(&fit.predict_many(xs)?);
        Ok(())
    })
}

/// Natural cubic spline through the samples.
///
/// # Safety
/// `samples` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relu1d_spline_new(
    samples: *const Relu1dSamples,
    out: *mut *mut Relu1dSpline,
) -> Relu1dStatus {
    guard(|| {
        let sp = fit_natural_cubic(&handle(samples, "samples")?.0)?;
        put(out, Relu1dSpline(sp))
    })
}

/// # Safety
/// `spline` must come from [`relu1d_spline_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn relu1d_spline_free(spline: *mut Relu1dSpline) {
    if !spline.is_null() {
        drop(Box::from_raw(spline));
    }
}

/// Values and, when `d2` is non-null, second derivatives at `xs`.
///
/// # Safety
/// `xs` must hold `n` readable doubles; `out` and non-null `d2` `n` writable.
#[no_mangle]
pub unsafe extern "C" fn relu1d_spline_eval(
    spline: *const Relu1dSpline,
    xs: *const f64,
    n: usize,
    out: *mut f64,
    d2: *mut f64,
) -> Relu1dStatus {
    guard(|| {
        let sp = &handle(spline, "spline")?.0;
        let xs = input(xs, n, "xs")?;
        for (o, &x) in output(out, n, "out")?.iter_mut().zip(xs) {
            *o = sp.eval(x);
        }
        if !d2.is_null() {
            for (o, &x) in output(d2, n, "d2")?.iter_mut().zip(xs) {
                *o = sp.eval_d2(x);
            }
        }
        Ok(())
    })
}

/// Classifies each sample's lines given the residual `rho`, writing one
/// `RELU1D_ATTRACTOR_*` code per sample.
///
/// # Safety
/// `rho` must hold `len(samples)` readable doubles and `classes` as many
/// writable ints.
#[no_mangle]
pub unsafe extern "C" fn relu1d_classify_attractors(
    samples: *const Relu1dSamples,
    rho: *const f64,
    classes: *mut i32,
) -> Relu1dStatus {
    guard(|| {
        let data = &handle(samples, "samples")?.0;
        let rho = input(rho, data.len(), "rho")?;
        let rep = classify_attractors(rho, data);
        for (o, c) in output(classes, data.len(), "classes")?.iter_mut().zip(rep.classes()) {
            *o = match c {
                AttractorClass::Neither => RELU1D_ATTRACTOR_NEITHER,
                AttractorClass::Left => RELU1D_ATTRACTOR_LEFT,
                AttractorClass::Right => RELU1D_ATTRACTOR_RIGHT,
                AttractorClass::Both => RELU1D_ATTRACTOR_BOTH,
            };
        }
        Ok(())
    })
}

/// Runs a TOML scenario file, writing its run directory under `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn relu1d_run_scenario(config_path: *const c_char, out_dir: *const c_char) -> Relu1dStatus {
    guard(|| {
        let scn = Scenario::from_path(Path::new(c_str(config_path, "config_path")?))?;
        run_scenario(&scn, Path::new(c_str(out_dir, "out_dir")?))?;
        Ok(())
    })
}
