use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relu1d::flows::{
    check_prop2, grad_canonical, grad_full, metric, run_canonical, run_full, step_full, Integrator,
    Mask, TrainConfig,
};
use relu1d::{loss, CanonicalNetwork, Error, FullNetwork, InvariantVector, SampleSet, Scaling};

fn full_loss(a: &[f64], b: &[f64], c: &[f64], alpha: f64, data: &SampleSet) -> f64 {
    let mut l = 0.0;
    for (&x, &y) in data.xs().iter().zip(data.ys()) {
        let mut f = 0.0;
        for i in 0..a.len() {
            f += c[i] * f64::max(a[i] * x - b[i], 0.0);
        }
        l += 0.5 * (f / alpha - y).powi(2);
    }
    l
}

fn canonical_loss(r: &[f64], theta: &[f64], data: &SampleSet) -> f64 {
    let m = r.len() as f64;
    let mut l = 0.0;
    for (&x, &y) in data.xs().iter().zip(data.ys()) {
        let mut f = 0.0;
        for i in 0..r.len() {
            f += r[i] * f64::max(x * theta[i].cos() + theta[i].sin(), 0.0);
        }
        l += 0.5 * (f / m - y).powi(2);
    }
    l
}

fn random_data(rng: &mut ChaCha8Rng, s: usize) -> SampleSet {
    let mut xs: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    xs.sort_by(f64::total_cmp);
    let ys = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    SampleSet::new(xs, ys).unwrap()
}

fn random_net(rng: &mut ChaCha8Rng, m: usize, scaling: Scaling) -> FullNetwork {
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (a, b, c) = (draw(m), draw(m), draw(m));
    FullNetwork::new(a, b, c, scaling).unwrap()
}

// Smallest distance from a sample to a knot, so finite differences stay on one linear piece.
fn kink_margin(net: &FullNetwork, data: &SampleSet) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..net.width() {
        for &x in data.xs() {
            best = best.min((net.a()[i] * x - net.b()[i]).abs());
        }
    }
    best
}

#[test]
fn full_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 30 {
        let data = random_data(&mut rng, 6);
        let scaling = [Scaling::M, Scaling::SqrtM, Scaling::One][checked % 3];
        let net = random_net(&mut rng, 7, scaling);
        if kink_margin(&net, &data) < 1e-3 {
            continue;
        }
        checked += 1;
        let g = grad_full(&net, &data);
        let h = 1e-6;
        let alpha = net.alpha();
        let (a, b, c) = (net.a().to_vec(), net.b().to_vec(), net.c().to_vec());
        for i in 0..net.width() {
            let fd = |which: usize| {
                let mut p = [a.clone(), b.clone(), c.clone()];
                let mut q = [a.clone(), b.clone(), c.clone()];
                p[which][i] += h;
                q[which][i] -= h;
                (full_loss(&p[0], &p[1], &p[2], alpha, &data) - full_loss(&q[0], &q[1], &q[2], alpha, &data))
                    / (2.0 * h)
            };
            assert!((g.a[i] - fd(0)).abs() < 1e-7, "a[{i}] {} vs {}", g.a[i], fd(0));
            assert!((g.b[i] - fd(1)).abs() < 1e-7, "b[{i}]");
            assert!((g.c[i] - fd(2)).abs() < 1e-7, "c[{i}]");
        }
    }
}

#[test]
fn canonical_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 30 {
        let data = random_data(&mut rng, 5);
        let net = random_net(&mut rng, 6, Scaling::SqrtM);
        if kink_margin(&net, &data) < 1e-3 {
            continue;
        }
        checked += 1;
        let canon = net.to_canonical().unwrap();
        let g = grad_canonical(&canon, &data);
        let (r, th) = (canon.r().to_vec(), canon.theta().to_vec());
        let h = 1e-6;
        for i in 0..canon.width() {
            let (mut rp, mut rq) = (r.clone(), r.clone());
            rp[i] += h;
            rq[i] -= h;
            let fd_r = (canonical_loss(&rp, &th, &data) - canonical_loss(&rq, &th, &data)) / (2.0 * h);
            let (mut tp, mut tq) = (th.clone(), th.clone());
            tp[i] += h;
            tq[i] -= h;
            let fd_t = (canonical_loss(&r, &tp, &data) - canonical_loss(&r, &tq, &data)) / (2.0 * h);
            assert!((g.r[i] - fd_r).abs() < 1e-8);
            assert!((g.theta[i] - fd_t).abs() < 1e-8);
        }
    }
}

#[test]
fn euler_step_is_a_plain_gradient_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = random_data(&mut rng, 5);
    let net = random_net(&mut rng, 9, Scaling::SqrtM);
    let g = grad_full(&net, &data);
    let lr = 0.01;
    let next = step_full(&net, &data, &TrainConfig::new(lr, 1)).unwrap();
    for i in 0..9 {
        assert!((next.a()[i] - (net.a()[i] - lr * g.a[i])).abs() < 1e-15);
        assert!((next.b()[i] - (net.b()[i] - lr * g.b[i])).abs() < 1e-15);
        assert!((next.c()[i] - (net.c()[i] - lr * g.c[i])).abs() < 1e-15);
    }
}

#[test]
fn frozen_blocks_stay_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = random_data(&mut rng, 6);
    let net = random_net(&mut rng, 20, Scaling::SqrtM);
    for integrator in [Integrator::Euler, Integrator::Rk4] {
        let cfg = TrainConfig::new(0.05, 200).with_integrator(integrator);
        let (end, _) = run_full(&net, &data, &cfg.clone().with_mask(Mask::C_ONLY)).unwrap();
        assert_eq!(end.a(), net.a());
        assert_eq!(end.b(), net.b());
        assert_ne!(end.c(), net.c());
        let (end, _) = run_full(&net, &data, &cfg.with_mask(Mask::AB_ONLY)).unwrap();
        assert_eq!(end.c(), net.c());
        assert_ne!(end.a(), net.a());
    }
}

#[test]
fn small_steps_decrease_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let data = random_data(&mut rng, 8);
    let net = random_net(&mut rng, 50, Scaling::SqrtM);
    let (_, traj) = run_full(&net, &data, &TrainConfig::new(0.01, 500)).unwrap();
    let losses = traj.losses();
    assert_eq!(losses.len(), 501);
    assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    assert!((losses[0] - loss(&net, &data)).abs() < 1e-12);
}

fn drift_at_horizon(net: &FullNetwork, data: &SampleSet, lr: f64, horizon: f64, integrator: Integrator) -> f64 {
    let steps = (horizon / lr).round() as usize;
    let cfg = TrainConfig::new(lr, steps).with_integrator(integrator);
    let (_, traj) = run_full(net, data, &cfg).unwrap();
    traj.final_drift().unwrap()
}

#[test]
fn euler_drift_is_first_order_and_rk4_is_much_smaller() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let data = random_data(&mut rng, 6);
    let net = random_net(&mut rng, 40, Scaling::SqrtM);
    let d1 = drift_at_horizon(&net, &data, 0.02, 2.0, Integrator::Euler);
    let d2 = drift_at_horizon(&net, &data, 0.01, 2.0, Integrator::Euler);
    assert!(d1 > 0.0 && d1 / d2 >= 1.8, "{d1} {d2}");
    let rk = drift_at_horizon(&net, &data, 0.02, 2.0, Integrator::Rk4);
    assert!(rk < 1e-2 * d1, "{rk} vs {d1}");
}

#[test]
fn metric_identity_holds_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in 0..50 {
        let data = random_data(&mut rng, 5);
        let scaling = [Scaling::M, Scaling::SqrtM, Scaling::One][k % 3];
        let net = random_net(&mut rng, 8, scaling);
        let rep = check_prop2(&net, &data, 1e-7).unwrap();
        assert!(rep.discrepancy < 1e-4, "state {k}: {}", rep.discrepancy);
    }
}

#[test]
fn delta_orders_radial_against_angular_speed() {
    // same canonical point, two splits of the weights
    let canon = CanonicalNetwork::new(vec![1.5, -0.7], vec![0.4, 2.5]).unwrap();
    let lo = canon
        .to_full(&InvariantVector { delta: vec![-100.0, -100.0] }, Scaling::SqrtM)
        .unwrap();
    let hi = canon
        .to_full(&InvariantVector { delta: vec![100.0, 100.0] }, Scaling::SqrtM)
        .unwrap();
    let (p_lo, p_hi) = (metric(&lo).unwrap(), metric(&hi).unwrap());
    for i in 0..2 {
        let ratio_lo = p_lo.p_thth[i] / p_lo.p_rr[i];
        let ratio_hi = p_hi.p_thth[i] / p_hi.p_rr[i];
        // delta << 0: angles nearly frozen; delta >> 0: angles move fast
        assert!(ratio_lo < 1e-3 * ratio_hi, "{ratio_lo} {ratio_hi}");
        assert!(p_lo.p_thth[i] < 0.02 && p_hi.p_thth[i] > 1.0);
    }
}

#[test]
fn degenerate_neuron_has_no_metric() {
    let net = FullNetwork::new(vec![0.0], vec![0.0], vec![1.0], Scaling::M).unwrap();
    assert!(matches!(metric(&net), Err(Error::DegenerateNeuron { index: 0 })));
}

#[test]
fn divergence_reports_the_step() {
    let data = SampleSet::new(vec![-1.0, 0.0, 1.0], vec![1e3, -1e3, 1e3]).unwrap();
    // both neurons active on every sample, so the c-only flow is linear and unstable
    let net = FullNetwork::new(vec![0.1, -0.1], vec![-2.0, -3.0], vec![1.0, 1.0], Scaling::M).unwrap();
    let cfg = TrainConfig::new(10.0, 10_000).with_mask(Mask::C_ONLY);
    let err = run_full(&net, &data, &cfg).unwrap_err();
    assert!(matches!(err, Error::NonFiniteState { step } if step > 1));
}

#[test]
fn total_variation_term_shrinks_radii_at_zero_residual() {
    let canon = CanonicalNetwork::new(vec![1.0, -2.0, 0.0], vec![0.3, 1.9, 4.0]).unwrap();
    // targets equal to the network output: only the penalty acts
    let xs = vec![-0.5, 0.5];
    let ys = xs.iter().map(|&x| relu1d::NetworkFunction::eval(&canon, x)).collect();
    let data = SampleSet::new(xs, ys).unwrap();
    let mut cfg = TrainConfig::new(0.01, 1);
    cfg.tv_lambda = 1.0;
    let (end, _) = run_canonical(&canon, &data, &cfg).unwrap();
    assert!((end.r()[0] - 0.99).abs() < 1e-12);
    assert!((end.r()[1] + 1.99).abs() < 1e-12);
    assert_eq!(end.r()[2], 0.0);
    assert_eq!(end.theta(), canon.theta());
}

#[test]
fn config_validation() {
    let cfg = TrainConfig::new(0.1, 1).with_mask(Mask::C_ONLY);
    assert!(cfg.validate(false).is_ok());
    assert!(cfg.validate(true).is_err());
    let mut cfg = TrainConfig::new(0.1, 1);
    cfg.tv_lambda = 0.5;
    assert!(cfg.validate(true).is_ok());
    assert!(cfg.validate(false).is_err());
    assert!(TrainConfig::new(-1.0, 1).validate(false).is_err());
    let none = Mask {
        train_a: false,
        train_b: false,
        train_c: false,
    };
    assert!(TrainConfig::new(0.1, 1).with_mask(none).validate(false).is_err());
}

#[test]
fn early_stop_and_snapshots() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let data = random_data(&mut rng, 4);
    let net = random_net(&mut rng, 100, Scaling::SqrtM);
    let start = relu1d::residuals(&net, &data).iter().map(|r| r * r).sum::<f64>().sqrt();
    let mut cfg = TrainConfig::new(0.05, 50_000).with_mask(Mask::C_ONLY);
    cfg.stop_residual_norm = Some(0.9 * start);
    cfg.snapshot_every = 100;
    let (_, traj) = run_full(&net, &data, &cfg).unwrap();
    let last = traj.last().unwrap();
    assert!(last.residual_norm < 0.9 * start, "{} {} {}", last.residual_norm, start, last.step);
    assert!(last.step < 50_000);
    let steps: Vec<usize> = traj.snapshots.iter().map(|s| s.0).collect();
    assert_eq!(steps[0], 0);
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*steps.last().unwrap(), last.step);
}

#[test]
fn trajectory_csv_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let data = random_data(&mut rng, 4);
    let net = random_net(&mut rng, 5, Scaling::SqrtM);
    let dir = tempfile::tempdir().unwrap();
    let (_, traj) = run_full(&net, &data, &TrainConfig::new(0.01, 3)).unwrap();
    let p = dir.path().join("t.csv");
    traj.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,time,loss,residual_norm,max_delta_drift");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0,0,"));

    let (_, traj) = run_canonical(&net.to_canonical().unwrap(), &data, &TrainConfig::new(0.01, 2)).unwrap();
    traj.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(',')));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // reflecting the data in x together with a -> -a mirrors the gradient
    #[test]
    fn reflection_equivariance(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(&mut rng, 5);
        let net = random_net(&mut rng, 6, Scaling::SqrtM);
        let xs: Vec<f64> = data.xs().iter().rev().map(|x| -x).collect();
        let ys: Vec<f64> = data.ys().iter().rev().copied().collect();
        let mirrored = SampleSet::new(xs, ys).unwrap();
        let neg_a: Vec<f64> = net.a().iter().map(|a| -a).collect();
        let net_m = FullNetwork::new(neg_a, net.b().to_vec(), net.c().to_vec(), Scaling::SqrtM).unwrap();
        let (g, gm) = (grad_full(&net, &data), grad_full(&net_m, &mirrored));
        for i in 0..6 {
            prop_assert!((g.a[i] + gm.a[i]).abs() < 1e-12);
            prop_assert!((g.b[i] - gm.b[i]).abs() < 1e-12);
            prop_assert!((g.c[i] - gm.c[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conservation_improves_with_smaller_steps(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(&mut rng, 4);
        let net = random_net(&mut rng, 5, Scaling::M);
        let d1 = drift_at_horizon(&net, &data, 0.02, 0.2, Integrator::Euler);
        let d2 = drift_at_horizon(&net, &data, 0.01, 0.2, Integrator::Euler);
        prop_assert!(d2 <= d1 * 0.75 + 1e-14, "{} {}", d1, d2);
    }
}
