//! Exit-gate checks. Each criterion prints one PASS/FAIL line; the test
//! fails if any gated criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use relu1d::flows::{check_prop2, grad_canonical, run_full, Mask, TrainConfig};
use relu1d::kernels::{
    fit_interpolate, k_empirical_ntk, k_radial_rf, k_uniform_rf,
    min_norm_output_weights, KernelSpec,
};
use relu1d::meanfield::{classify_attractors, decompose, residual_ode_rhs, sigma_blocks, AttractorClass};
use relu1d::presets::{preset, FIGURE3_KNOT_RANGE, PRESET_NAMES};
use relu1d::runner::run_scenario;
use relu1d::scenario::{InitDist, SignMode};
use relu1d::splines::{fit_natural_cubic, linspace, sup_distance};
use relu1d::{residuals, CanonicalNetwork, FullNetwork, NetworkFunction, SampleSet, Scaling};

// straight to the stdout handle so the lines show without --nocapture
fn report(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

struct Report {
    failures: Vec<usize>,
}

impl Report {
    fn line(&mut self, id: usize, pass: bool, secs: f64, detail: String) {
        report(format!(
            "ACCEPTANCE {id:>2}: {} ({secs:.2} s) {detail}",
            if pass { "PASS" } else { "FAIL" }
        ));
        if !pass {
            self.failures.push(id);
        }
    }
}

fn random_data(rng: &mut ChaCha8Rng, s: usize, span: f64) -> SampleSet {
    let mut xs: Vec<f64> = (0..s).map(|_| rng.random_range(-span..span)).collect();
    xs.sort_by(f64::total_cmp);
    let ys = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    SampleSet::new(xs, ys).unwrap()
}

fn random_net(rng: &mut ChaCha8Rng, m: usize, scaling: Scaling) -> FullNetwork {
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (a, b, c) = (draw(m), draw(m), draw(m));
    FullNetwork::new(a, b, c, scaling).unwrap()
}

fn final_drift(net: &FullNetwork, data: &SampleSet, lr: f64, steps: usize) -> f64 {
    let (_, traj) = run_full(net, data, &TrainConfig::new(lr, steps)).unwrap();
    traj.final_drift().unwrap()
}

fn criterion_1(rep: &mut Report) {
    let t = Instant::now();
    let scn = preset("figure5_0").unwrap();
    let (net, data) = (scn.init_network().unwrap(), scn.samples().unwrap());
    assert_eq!((net.width(), data.len()), (1000, 10));
    let scale = net.invariants().delta.iter().fold(0.0f64, |a, d| a.max(1.0 + d.abs()));
    let d1 = final_drift(&net, &data, 1e-3, 10_000);
    // same horizon with half the step
    let d2 = final_drift(&net, &data, 5e-4, 20_000);
    let secs = t.elapsed().as_secs_f64();
    let ratio = d1 / d2;
    let pass = d1 <= 1e-3 * scale && ratio >= 1.8 && secs < 10.0;
    rep.line(
        1,
        pass,
        secs,
        format!("drift {d1:.3e} <= {:.3e}, halved-step ratio {ratio:.3} >= 1.8", 1e-3 * scale),
    );
}

fn criterion_2(rep: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let data = random_data(&mut rng, 5, 1.0);
        let scaling = [Scaling::M, Scaling::SqrtM, Scaling::One][k % 3];
        let net = random_net(&mut rng, 8, scaling);
        worst = worst.max(check_prop2(&net, &data, 1e-7).unwrap().discrepancy);
    }
    let secs = t.elapsed().as_secs_f64();
    rep.line(2, worst < 1e-4 && secs < 1.0, secs, format!("max relative discrepancy {worst:.3e} < 1e-4"));
}

fn criterion_3(rep: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut states) = (0.0f64, 0);
    while states < 20 {
        let data = random_data(&mut rng, 6, 1.0);
        let r: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
        let th: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..TAU)).collect();
        let net = CanonicalNetwork::new(r, th).unwrap();
        // keep particles off the sample lines so the difference quotient is smooth
        let near_line = net.theta().iter().any(|&t| {
            data.xs().iter().any(|&x| (x * t.cos() + t.sin()).abs() < 1e-4)
        });
        if near_line {
            continue;
        }
        states += 1;
        let rho = residuals(&net, &data);
        let decomp = decompose(&data);
        let rhs = residual_ode_rhs(&rho, &sigma_blocks(&net, &decomp), &decomp, &data);
        let g = grad_canonical(&net, &data);
        let h = 1e-7;
        let shifted = |sgn: f64| {
            let r = net.r().iter().zip(&g.r).map(|(r, d)| r - sgn * h * d).collect();
            let t = net.theta().iter().zip(&g.theta).map(|(t, d)| t - sgn * h * d).collect();
            residuals(&CanonicalNetwork::new(r, t).unwrap(), &data)
        };
        let (p, q) = (shifted(1.0), shifted(-1.0));
        // mean-field time runs m times faster than the per-particle flow
        let m = net.width() as f64;
        for j in 0..data.len() {
            let fd = m * (p[j] - q[j]) / (2.0 * h);
            worst = worst.max((rhs[j] - fd).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    rep.line(3, worst < 1e-4 && secs < 1.0, secs, format!("max |rhs - fd| {worst:.3e} < 1e-4"));
}

/// Sup distance between the limit of output-layer training from `c = 0` and
/// the natural cubic spline, on the preset's grid.
fn spline_gap(m: usize, sign: SignMode) -> f64 {
    let mut scn = preset(&format!("figure3_{m}")).unwrap();
    if let InitDist::UniformKnots { sign: s, .. } = &mut scn.init.dist {
        *s = sign;
    }
    let data = scn.samples().unwrap();
    let net = scn.init_network().unwrap();
    assert!(net.c().iter().all(|&c| c == 0.0));
    let lim = min_norm_output_weights(&net, &data, 0.0).unwrap();
    let sp = fit_natural_cubic(&data).unwrap();
    sup_distance(|x| lim.eval(x), |x| sp.eval(x), &scn.grid(&data))
}

fn criterion_4(rep: &mut Report) {
    let t = Instant::now();
    let ms = [100, 1000, 10_000];
    let gaps: Vec<f64> = ms.iter().map(|&m| spline_gap(m, SignMode::Both)).collect();
    let secs = t.elapsed().as_secs_f64();
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let pass = monotone && gaps[2] < 5e-2 && secs < 60.0;
    rep.line(
        4,
        pass,
        secs,
        format!(
            "|a| = 1, knots U{FIGURE3_KNOT_RANGE:?}: gaps {:.4} > {:.4} > {:.4}, last < 0.05",
            gaps[0], gaps[1], gaps[2]
        ),
    );
    // one-sided a = +1 for reference; its limit carries f = f' = 0 at the
    // left end of the knot interval instead of natural end conditions
    let one_sided: Vec<f64> = ms.iter().map(|&m| spline_gap(m, SignMode::Positive)).collect();
    report(format!(
        "ACCEPTANCE  4 (info): a = +1 only gives {:.4}, {:.4}, {:.4}",
        one_sided[0], one_sided[1], one_sided[2]
    ));
}

fn criterion_5(rep: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 200;
    let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let net = FullNetwork::new(a, b, vec![0.0; m], Scaling::SqrtM).unwrap();
    let xs = linspace(-1.0, 1.0, 8);
    let ys: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x).sin()).collect();
    let data = SampleSet::new(xs, ys).unwrap();
    let spec = KernelSpec::EmpiricalRf { network: net.clone() };
    // step just under the stability limit 2 / lambda_max of the output-layer Hessian
    let lmax = nalgebra::SymmetricEigen::new(spec.gram(data.xs()).unwrap()).eigenvalues.max();
    let mut cfg = TrainConfig::new(1.9 / lmax, 2_000_000).with_mask(Mask::C_ONLY);
    cfg.stop_residual_norm = Some(1e-6);
    cfg.snapshot_every = usize::MAX;
    let (trained, traj) = run_full(&net, &data, &cfg).unwrap();
    let last = traj.last().unwrap();
    let fit = fit_interpolate(&spec, &data, 0.0).unwrap();
    let grid = linspace(-1.5, 1.5, 601);
    let gap = sup_distance(|x| trained.eval(x), |x| fit.predict(x).unwrap(), &grid);
    let secs = t.elapsed().as_secs_f64();
    let pass = last.residual_norm < 1e-6 && gap < 1e-3 && secs < 30.0;
    rep.line(
        5,
        pass,
        secs,
        format!(
            "after {} steps ||rho|| {:.2e}, sup gap to Gram solve {gap:.3e} < 1e-3",
            last.step, last.residual_norm
        ),
    );
}

fn criterion_6(rep: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let ab: Vec<(f64, f64)> = (0..n).map(|_| (normal.sample(&mut rng), normal.sample(&mut rng))).collect();
    let pts = linspace(-2.0, 2.0, 9);
    let mut worst_z = 0.0f64;
    for &x in &pts {
        for &y in &pts {
            let vals: Vec<f64> = ab.iter().map(|&(a, b)| (a * x - b).max(0.0) * (a * y - b).max(0.0)).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            // E[a^2 + b^2] = 2 for standard normal a, b
            worst_z = worst_z.max((k_radial_rf(2.0, x, y) - mean).abs() / se);
        }
    }
    // uniform kernel against the integral of the feature product, exact
    // Simpson on each polynomial piece
    let (a0, k1, k2) = (1.0, -1.4, 1.4);
    let mut worst_u = 0.0f64;
    for &x in &pts {
        for &y in &pts {
            let g = |u: f64| a0 * a0 * (x - u).max(0.0) * (y - u).max(0.0);
            let mut cuts = [k1, k2, x.clamp(k1, k2), y.clamp(k1, k2)];
            cuts.sort_by(f64::total_cmp);
            let q: f64 = cuts
                .windows(2)
                .map(|w| (w[1] - w[0]) / 6.0 * (g(w[0]) + 4.0 * g(0.5 * (w[0] + w[1])) + g(w[1])))
                .sum::<f64>()
                / (k2 - k1);
            worst_u = worst_u.max((k_uniform_rf(a0, k1, k2, x, y) - q).abs());
        }
    }
    // tangent kernel = inner product of parameter gradients at alpha = sqrt(m)
    let net = random_net(&mut rng, 100, Scaling::SqrtM);
    let sm = 10.0;
    let grad = |i: usize, x: f64| {
        let (a, b, c) = (net.a()[i], net.b()[i], net.c()[i]);
        let on = (a * x - b > 0.0) as u8 as f64;
        [c * x * on / sm, -c * on / sm, (a * x - b).max(0.0) / sm]
    };
    let mut worst_ntk = 0.0f64;
    for &x in &pts {
        for &y in &pts {
            let want: f64 = (0..100)
                .map(|i| {
                    let (gx, gy) = (grad(i, x), grad(i, y));
                    gx[0] * gy[0] + gx[1] * gy[1] + gx[2] * gy[2]
                })
                .sum();
            worst_ntk = worst_ntk.max((k_empirical_ntk(&net, x, y) - want).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_z < 4.0 && worst_u < 1e-8 && worst_ntk < 1e-12 && secs < 30.0;
    rep.line(
        6,
        pass,
        secs,
        format!("radial max |z| {worst_z:.2} < 4, uniform {worst_u:.1e} < 1e-8, ntk identity {worst_ntk:.1e} < 1e-12"),
    );
}

fn criterion_7(rep: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut agree, mut checked, mut skipped) = (0usize, 0usize, 0usize);
    let angular = |rho: &[f64], data: &SampleSet, theta: f64| {
        let (mut s0, mut s1) = (0.0, 0.0);
        for (j, &x) in data.xs().iter().enumerate() {
            if x * theta.cos() + theta.sin() >= 0.0 {
                s0 += rho[j] * x;
                s1 += rho[j];
            }
        }
        -(-s0 * theta.sin() + s1 * theta.cos())
    };
    for _ in 0..1000 {
        let s = rng.random_range(2..12);
        let data = random_data(&mut rng, s, 2.0);
        let rho: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rep7 = classify_attractors(&rho, &data);
        for (k, sa) in rep7.samples.iter().enumerate() {
            let x = data.xs()[k];
            let scale = sa.threshold.abs() + sa.left_sum.abs() + sa.right_sum.abs();
            let sides = [
                (sa.left_sum, PI - x.atan(), matches!(sa.class, AttractorClass::Left | AttractorClass::Both)),
                (sa.right_sum, -x.atan(), matches!(sa.class, AttractorClass::Right | AttractorClass::Both)),
            ];
            for (sum, angle, flagged) in sides {
                let slack = sum.abs().min((sum - sa.threshold).abs());
                if slack <= 1e-8 * scale {
                    skipped += 1;
                    continue;
                }
                checked += 1;
                let eps = 1e-11;
                let flip = angular(&rho, &data, angle - eps) * angular(&rho, &data, angle + eps) < 0.0;
                agree += (flip == flagged) as usize;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    rep.line(
        7,
        agree == checked && secs < 5.0,
        secs,
        format!("{agree}/{checked} sides agree ({skipped} borderline skipped)"),
    );
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_8(rep: &mut Report, root: &Path, timings: &BTreeMap<String, f64>) {
    let t = Instant::now();
    let fraction = |name: &str| {
        let c = read_json(&root.join(format!("{name}_0/compare.json")));
        (
            c["clustering"]["initial_fraction"].as_f64().unwrap(),
            c["clustering"]["final_fraction"].as_f64().unwrap(),
        )
    };
    let (p0, p1) = fraction("figure5_pos_inf");
    let (n0, n1) = fraction("figure5_neg_inf");
    let secs = t.elapsed().as_secs_f64() + timings["figure5_pos_inf"].max(timings["figure5_neg_inf"]);
    let pass = p1 - p0 >= 0.3 && (n1 - n0).abs() < 0.05 && secs < 60.0;
    rep.line(
        8,
        pass,
        secs,
        format!("delta=+inf {p0:.3} -> {p1:.3} (gain >= 0.3), delta=-inf {n0:.3} -> {n1:.3} (change < 0.05)"),
    );
}

fn criterion_9(rep: &mut Report, root: &Path, timings: &BTreeMap<String, f64>) {
    let c = read_json(&root.join("figure7_0/compare.json"));
    let v = &c["variants"][0];
    let (d0, d1) = (
        v["initial_sup_distance"].as_f64().unwrap(),
        v["final_sup_distance"].as_f64().unwrap(),
    );
    let secs = timings["figure7"];
    rep.line(
        9,
        d0 < 1e-10 && d1 > 0.1 && secs < 30.0,
        secs,
        format!("initial gap {d0:.2e} < 1e-10, final gap {d1:.3} > 0.1"),
    );
}

#[test]
fn acceptance() {
    let mut rep = Report { failures: Vec::new() };
    criterion_1(&mut rep);
    criterion_2(&mut rep);
    criterion_3(&mut rep);
    criterion_4(&mut rep);
    criterion_5(&mut rep);
    criterion_6(&mut rep);
    criterion_7(&mut rep);

    let tmp = tempfile::tempdir().unwrap();
    let (r1, r2) = (tmp.path().join("run1"), tmp.path().join("run2"));
    let t = Instant::now();
    let timings: BTreeMap<String, f64> = std::thread::scope(|s| {
        let handles: Vec<_> = PRESET_NAMES
            .iter()
            .map(|&name| {
                let (r1, r2) = (&r1, &r2);
                s.spawn(move || {
                    let scn = preset(name).unwrap();
                    let t = Instant::now();
                    run_scenario(&scn, r1).unwrap();
                    let secs = t.elapsed().as_secs_f64();
                    run_scenario(&scn, r2).unwrap();
                    (name.to_string(), secs)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let wall = t.elapsed().as_secs_f64();

    criterion_8(&mut rep, &r1, &timings);
    criterion_9(&mut rep, &r1, &timings);

    let mut differing = Vec::new();
    let mut compared = 0;
    for name in PRESET_NAMES {
        let dir = format!("{name}_0");
        let (a, b) = (csv_bytes(&r1.join(&dir)), csv_bytes(&r2.join(&dir)));
        if a.keys().ne(b.keys()) {
            differing.push(format!("{name}: file sets differ"));
            continue;
        }
        for (k, v) in &a {
            compared += 1;
            if b[k] != *v {
                differing.push(format!("{name}/{k}"));
            }
        }
    }
    rep.line(
        10,
        differing.is_empty() && compared > 0,
        wall,
        format!("{compared} CSVs over {} presets byte-identical; differing: {differing:?}", PRESET_NAMES.len()),
    );

    assert!(rep.failures.is_empty(), "failed criteria: {:?}", rep.failures);
}
