//! Built-in scenarios for the standard experiments.
//!
//! The sample coordinates are equispaced on `[-1, 1]`; step sizes and step
//! counts were chosen so that every preset finishes in seconds.

use crate::flows::{Integrator, Mask, TrainConfig};
use crate::meanfield::GridSpec;
use crate::scenario::{
    FlowKind, InitDist, InitSpec, KernelConfig, KernelKind, OutputKind, OutputOptions, Scenario,
    SignMode, Task, Variant,
};
use crate::network::Scaling;

pub const PRESET_NAMES: &[&str] = &[
    "figure3_100",
    "figure3_1000",
    "figure3_10000",
    "figure5_neg_inf",
    "figure5_neg1",
    "figure5_0",
    "figure5_1",
    "figure5_pos_inf",
    "figure6_neg_inf",
    "figure6_pos_inf",
    "figure7",
    "figure8_20",
    "figure8_200",
    "figure8_2000",
    "figure9",
];

pub fn presets() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

fn train(lr: f64, steps: usize, mask: Mask, snapshot_every: usize) -> TrainConfig {
    TrainConfig {
        lr,
        steps,
        integrator: Integrator::Euler,
        mask,
        tv_lambda: 0.0,
        snapshot_every,
        seed: 0,
        stop_residual_norm: None,
    }
}

/// Knots of the kernel-regime experiment cover the sample hull widened by
/// 20% of its length on each side.
pub const FIGURE3_KNOT_RANGE: [f64; 2] = [-1.4, 1.4];

fn figure3(m: usize) -> Scenario {
    Scenario {
        name: format!("figure3_{m}"),
        seed: 0,
        m,
        scaling: Scaling::SqrtM,
        flow: FlowKind::Full,
        task: Task::SquareWave {
            s: 10,
            x_range: [-1.0, 1.0],
        },
        init: InitSpec {
            dist: InitDist::UniformKnots {
                a_abs: 1.0,
                sign: SignMode::Both,
                knots: FIGURE3_KNOT_RANGE,
                c: [0.0, 0.0],
            },
            rescale: None,
            delta_target: None,
        },
        train: train(0.4, 20_000, Mask::C_ONLY, 20_000),
        outputs: vec![
            OutputKind::Trajectory,
            OutputKind::NetworkFit,
            OutputKind::KernelFit,
            OutputKind::SplineFit,
            OutputKind::Compare,
        ],
        kernel: Some(KernelConfig {
            kind: KernelKind::UniformRf,
            jitter: 0.0,
            a0: Some(1.0),
            k1: Some(FIGURE3_KNOT_RANGE[0]),
            k2: Some(FIGURE3_KNOT_RANGE[1]),
            mirrored: true,
            c: None,
            measure: None,
            c2_mean: None,
            tol: None,
        }),
        field: None,
        output: OutputOptions::default(),
        variants: Vec::new(),
    }
}

/// Small first layer, order-one output layer: the shared initialization of
/// the varying-delta experiments.
fn adaptive_init() -> InitDist {
    InitDist::Uniform {
        a: [-0.1, 0.1],
        b: [-0.1, 0.1],
        c: [-1.0, 1.0],
    }
}

fn figure5(tag: &str, delta: Option<f64>, mask: Mask) -> Scenario {
    Scenario {
        name: format!("figure5_{tag}"),
        seed: 0,
        m: 1000,
        scaling: Scaling::SqrtM,
        flow: FlowKind::Full,
        task: Task::Sine {
            s: 10,
            x_range: [-1.0, 1.0],
        },
        init: InitSpec {
            dist: adaptive_init(),
            rescale: None,
            delta_target: delta,
        },
        train: train(0.03, 10_000, mask, 2_500),
        outputs: vec![
            OutputKind::Trajectory,
            OutputKind::Snapshots,
            OutputKind::Uv,
            OutputKind::Attractors,
            OutputKind::NetworkFit,
            OutputKind::SplineFit,
            OutputKind::Compare,
        ],
        kernel: None,
        field: None,
        output: OutputOptions::default(),
        variants: Vec::new(),
    }
}

fn figure6(tag: &str, mask: Mask) -> Scenario {
    Scenario {
        name: format!("figure6_{tag}"),
        seed: 0,
        m: 1000,
        scaling: Scaling::SqrtM,
        flow: FlowKind::Full,
        task: Task::SquareWave {
            s: 10,
            x_range: [-1.0, 1.0],
        },
        init: InitSpec {
            dist: adaptive_init(),
            rescale: None,
            delta_target: None,
        },
        train: train(0.03, 10_000, mask, 1_000),
        outputs: vec![
            OutputKind::Trajectory,
            OutputKind::Snapshots,
            OutputKind::Uv,
            OutputKind::NetworkFit,
            OutputKind::Compare,
        ],
        kernel: None,
        field: None,
        output: OutputOptions::default(),
        variants: Vec::new(),
    }
}

/// Learning rate of the `(1e3 a, 1e3 b, 1e-3 c)` run: the output-layer
/// curvature grows by `1e6`, so the step shrinks by the same factor.
pub const FIGURE7_SCALED_LR: f64 = 0.03e-6;

fn figure7() -> Scenario {
    Scenario {
        name: "figure7".into(),
        seed: 0,
        m: 1000,
        scaling: Scaling::SqrtM,
        flow: FlowKind::Full,
        task: Task::SquareWave {
            s: 10,
            x_range: [-1.0, 1.0],
        },
        init: InitSpec {
            dist: adaptive_init(),
            rescale: None,
            delta_target: None,
        },
        train: train(0.03, 10_000, Mask::ALL, 10_000),
        outputs: vec![
            OutputKind::Trajectory,
            OutputKind::Snapshots,
            OutputKind::NetworkFit,
            OutputKind::Compare,
        ],
        kernel: None,
        field: None,
        output: OutputOptions::default(),
        variants: vec![Variant {
            name: "scaled".into(),
            rescale: Some([1e3, 1e3, 1e-3]),
            lr: Some(FIGURE7_SCALED_LR),
            steps: None,
            mask: None,
        }],
    }
}

/// With `alpha = 1` the output-layer curvature grows linearly in `m`, so the
/// step is `FIGURE8_LR_TIMES_M / m`, capped for small widths where larger
/// steps visibly break the conservation of `delta`.
pub const FIGURE8_LR_TIMES_M: f64 = 0.2;
pub const FIGURE8_LR_CAP: f64 = 0.0025;

fn figure8(m: usize) -> Scenario {
    let mf = m as f64;
    Scenario {
        name: format!("figure8_{m}"),
        seed: 0,
        m,
        scaling: Scaling::One,
        flow: FlowKind::Full,
        task: Task::Sine {
            s: 20,
            x_range: [-1.0, 1.0],
        },
        init: InitSpec {
            dist: InitDist::Uniform {
                a: [-1.0, 1.0],
                b: [-1.0, 1.0],
                c: [-1.0 / mf, 1.0 / mf],
            },
            rescale: None,
            delta_target: None,
        },
        train: train((FIGURE8_LR_TIMES_M / mf).min(FIGURE8_LR_CAP), 10_000, Mask::ALL, 5_000),
        outputs: vec![
            OutputKind::Trajectory,
            OutputKind::Snapshots,
            OutputKind::Uv,
            OutputKind::NetworkFit,
            OutputKind::Compare,
        ],
        kernel: None,
        field: None,
        output: OutputOptions::default(),
        variants: Vec::new(),
    }
}

fn figure9() -> Scenario {
    Scenario {
        name: "figure9".into(),
        seed: 0,
        m: 1000,
        scaling: Scaling::SqrtM,
        flow: FlowKind::Full,
        task: Task::Sine {
            s: 10,
            x_range: [-1.0, 1.0],
        },
        init: InitSpec {
            dist: adaptive_init(),
            rescale: None,
            delta_target: None,
        },
        train: train(0.03, 2_000, Mask::AB_ONLY, 500),
        outputs: vec![
            OutputKind::Trajectory,
            OutputKind::Uv,
            OutputKind::Field,
            OutputKind::Attractors,
        ],
        kernel: None,
        field: Some(GridSpec::default()),
        output: OutputOptions::default(),
        variants: Vec::new(),
    }
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Option<Scenario> {
    Some(match name {
        "figure3_100" => figure3(100),
        "figure3_1000" => figure3(1000),
        "figure3_10000" => figure3(10_000),
        "figure5_neg_inf" => figure5("neg_inf", None, Mask::C_ONLY),
        "figure5_neg1" => figure5("neg1", Some(-1.0), Mask::ALL),
        "figure5_0" => figure5("0", Some(0.0), Mask::ALL),
        "figure5_1" => figure5("1", Some(1.0), Mask::ALL),
        "figure5_pos_inf" => figure5("pos_inf", None, Mask::AB_ONLY),
        "figure6_neg_inf" => figure6("neg_inf", Mask::C_ONLY),
        "figure6_pos_inf" => figure6("pos_inf", Mask::AB_ONLY),
        "figure7" => figure7(),
        "figure8_20" => figure8(20),
        "figure8_200" => figure8(200),
        "figure8_2000" => figure8(2000),
        "figure9" => figure9(),
        _ => return None,
    })
}
