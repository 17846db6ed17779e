//! Executes a [`Scenario`] and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::flows::{run_canonical, run_full, Mask, NetworkState, TrainConfig, Trajectory};
use crate::kernels::{fit_interpolate, min_norm_output_weights, write_prediction_csv};
use crate::meanfield::{classify_attractors, field_grid, write_field_csv};
use crate::network::{
    loss, residuals, CanonicalSnapshot, FullNetwork, NetworkFunction, SampleSet, UvState,
};
use crate::scenario::{blockwise_rescale, FlowKind, OutputKind, Scenario};
use crate::splines::{default_cluster_epsilon, fit_natural_cubic, knot_clustering, sup_distance_values};

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    /// Paths relative to `dir`, in the order written.
    pub files: Vec<String>,
    /// Contents of `compare.json` (written only when requested).
    pub compare: Value,
}

struct Writer<'a> {
    root: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }
}

/// Result of one training run (the base run or a variant).
struct RunOutcome {
    initial: Vec<f64>,
    fitted: Vec<f64>,
    initial_loss: f64,
    final_loss: f64,
    final_full: FullNetwork,
    traj: Trajectory,
}

fn write_uv_csv(uv: &UvState, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["u", "v", "eps"])?;
    for i in 0..uv.u.len() {
        w.write_record([uv.u[i].to_string(), uv.v[i].to_string(), uv.eps[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn pad_width(steps: usize) -> usize {
    steps.to_string().len()
}

#[allow(clippy::too_many_arguments)]
fn train_and_record(
    scn: &Scenario,
    data: &SampleSet,
    net0: &FullNetwork,
    train: &TrainConfig,
    grid: &[f64],
    prefix: &str,
    out: &mut Writer<'_>,
) -> Result<RunOutcome> {
    let delta0 = net0.invariants();
    let (final_full, final_eval, traj): (FullNetwork, Box<dyn NetworkFunction>, Trajectory) =
        match scn.flow {
            FlowKind::Full => {
                let (net, traj) = run_full(net0, data, train)?;
                (net.clone(), Box::new(net), traj)
            }
            FlowKind::Canonical => {
                let w0 = net0.to_canonical()?;
                let (w, traj) = run_canonical(&w0, data, train)?;
                (w.to_full(&delta0, scn.scaling)?, Box::new(w), traj)
            }
        };

    if scn.wants(OutputKind::Trajectory) {
        let p = out.path(&format!("{prefix}trajectory.csv"))?;
        traj.write_csv(&p)?;
    }
    let width = pad_width(train.steps);
    let field_spec = scn.field.clone().unwrap_or_default();
    for (step, state) in &traj.snapshots {
        let tag = format!("{step:0width$}");
        let eval: &dyn NetworkFunction = match state {
            NetworkState::Full(n) => n,
            NetworkState::Canonical(w) => w,
        };
        if scn.wants(OutputKind::Snapshots) {
            match state {
                NetworkState::Full(n) => out.json(&format!("{prefix}snap_{tag}.json"), n)?,
                NetworkState::Canonical(w) => out.json(
                    &format!("{prefix}snap_{tag}.json"),
                    &CanonicalSnapshot {
                        r: w.r().to_vec(),
                        theta: w.theta().to_vec(),
                        delta: delta0.delta.clone(),
                    },
                )?,
            }
        }
        if scn.wants(OutputKind::Uv) {
            let uv = match state {
                NetworkState::Full(n) => n.to_canonical()?.uv_state(),
                NetworkState::Canonical(w) => w.uv_state(),
            };
            let p = out.path(&format!("{prefix}uv_{tag}.csv"))?;
            write_uv_csv(&uv, &p)?;
        }
        if scn.wants(OutputKind::Field) || scn.wants(OutputKind::Attractors) {
            let rho = residuals(eval, data);
            if scn.wants(OutputKind::Field) {
                let p = out.path(&format!("{prefix}field_{tag}.csv"))?;
                write_field_csv(&field_grid(&rho, data, &field_spec), &p)?;
            }
            if scn.wants(OutputKind::Attractors) {
                out.json(
                    &format!("{prefix}attractors_{tag}.json"),
                    &classify_attractors(&rho, data),
                )?;
            }
        }
    }

    let fitted = final_eval.eval_many(grid);
    if scn.wants(OutputKind::NetworkFit) {
        let p = out.path(&format!("{prefix}fit_network.csv"))?;
        write_prediction_csv(grid, &fitted, &p)?;
    }
    Ok(RunOutcome {
        initial: net0.eval_many(grid),
        fitted,
        initial_loss: loss(net0, data),
        final_loss: loss(final_eval.as_ref(), data),
        final_full,
        traj,
    })
}

fn clustering_json(net0: &FullNetwork, net1: &FullNetwork, data: &SampleSet) -> Result<Value> {
    let eps = default_cluster_epsilon(data);
    if !(eps > 0.0) {
        return Ok(Value::Null);
    }
    let c0 = knot_clustering(net0, data, eps)?;
    let c1 = knot_clustering(net1, data, eps)?;
    Ok(json!({
        "epsilon": eps,
        "initial_fraction": c0.clustered_fraction,
        "final_fraction": c1.clustered_fraction,
    }))
}

fn variant_train(base: &TrainConfig, v: &crate::scenario::Variant) -> TrainConfig {
    let mut t = base.clone();
    if let Some(lr) = v.lr {
        t.lr = lr;
    }
    if let Some(steps) = v.steps {
        t.steps = steps;
    }
    if let Some(mask) = v.mask {
        t.mask = mask;
    }
    t
}

/// Runs the scenario, writing into `out_root/<name>_<seed>/`.
pub fn run_scenario(scn: &Scenario, out_root: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    scn.validate()?;
    let data = scn.samples()?;
    let net0 = scn.init_network()?;
    let grid = scn.grid(&data);
    let dir = out_root.join(format!("{}_{}", scn.name, scn.seed));
    fs::create_dir_all(&dir)?;
    let mut out = Writer {
        root: &dir,
        files: Vec::new(),
    };
    let mut train = scn.train.clone();
    train.seed = scn.seed;

    let base = train_and_record(scn, &data, &net0, &train, &grid, "", &mut out)?;

    let kernel_values = match (&scn.kernel, scn.wants(OutputKind::KernelFit)) {
        (Some(kc), true) => {
            let spec = kc.spec(&net0)?;
            let fit = fit_interpolate(&spec, &data, kc.jitter)?;
            let values = fit.predict_many(&grid)?;
            let p = out.path("fit_kernel.csv")?;
            write_prediction_csv(&grid, &values, &p)?;
            Some((values, fit.jitter))
        }
        _ => None,
    };
    let spline_values = if scn.wants(OutputKind::SplineFit) {
        let sp = fit_natural_cubic(&data)?;
        let p = out.path("fit_spline.csv")?;
        sp.write_csv(&grid, &p)?;
        Some(grid.iter().map(|&x| sp.eval(x)).collect::<Vec<f64>>())
    } else {
        None
    };

    let mut variants = Vec::new();
    for v in &scn.variants {
        let net_v = match v.rescale {
            Some(k) => blockwise_rescale(&net0, k)?,
            None => net0.clone(),
        };
        let train_v = variant_train(&train, v);
        train_v
            .validate(scn.flow == FlowKind::Canonical)
            .map_err(|e| Error::Config(format!("variant {}: {e}", v.name)))?;
        let res = train_and_record(scn, &data, &net_v, &train_v, &grid, &format!("{}/", v.name), &mut out)?;
        variants.push(json!({
            "name": v.name,
            "lr": train_v.lr,
            "steps": train_v.steps,
            "initial_sup_distance": sup_distance_values(&res.initial, &base.initial),
            "final_sup_distance": sup_distance_values(&res.fitted, &base.fitted),
            "initial_loss": res.initial_loss,
            "final_loss": res.final_loss,
            "clustering": clustering_json(&net_v, &res.final_full, &data)?,
        }));
    }

    let mut compare = json!({
        "scenario": scn.name,
        "seed": scn.seed,
        "m": scn.m,
        "initial_loss": base.initial_loss,
        "final_loss": base.final_loss,
        "final_residual_norm": base.traj.last().map(|r| r.residual_norm),
        "max_delta_drift": base.traj.final_drift(),
        "clustering": clustering_json(&net0, &base.final_full, &data)?,
    });
    if let Some(sp) = &spline_values {
        compare["network_vs_spline"] = json!(sup_distance_values(&base.fitted, sp));
    }
    if let Some((kv, jitter)) = &kernel_values {
        compare["network_vs_kernel"] = json!(sup_distance_values(&base.fitted, kv));
        compare["kernel_jitter"] = json!(jitter);
        if let Some(sp) = &spline_values {
            compare["kernel_vs_spline"] = json!(sup_distance_values(kv, sp));
        }
    }
    // from c = 0 the output-layer flow converges to the minimum-norm
    // interpolant, which can be computed directly
    let c_only = scn.flow == FlowKind::Full && train.mask == Mask::C_ONLY;
    if c_only && net0.c().iter().all(|&c| c == 0.0) {
        if let Ok(lim) = min_norm_output_weights(&net0, &data, 0.0) {
            let lv = lim.eval_many(&grid);
            compare["limit_vs_network"] = json!(sup_distance_values(&lv, &base.fitted));
            if let Some(sp) = &spline_values {
                compare["limit_vs_spline"] = json!(sup_distance_values(&lv, sp));
            }
            if let Some((kv, _)) = &kernel_values {
                compare["limit_vs_kernel"] = json!(sup_distance_values(&lv, kv));
            }
        }
    }
    if !variants.is_empty() {
        compare["variants"] = Value::Array(variants);
    }
    if scn.wants(OutputKind::Compare) {
        out.json("compare.json", &compare)?;
    }

    let mut files = out.files.clone();
    files.push("manifest.json".to_string());
    let manifest = json!({
        "scenario": scn.name,
        "seed": scn.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(scn)?,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "files": files,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;

    Ok(RunSummary { dir, files, compare })
}

/// Reads a two-column `(x, value)` CSV with a header row.
pub fn read_fit_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let (mut xs, mut fs) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::InvalidInput(format!("{}: bad value on data row {}", path.display(), line + 1))
                })
        };
        xs.push(parse(0)?);
        fs.push(parse(1)?);
    }
    Ok((xs, fs))
}

/// Sup distance between two fit files sampled on the same grid.
pub fn compare_fit_files(a: &Path, b: &Path) -> Result<Value> {
    let (xa, fa) = read_fit_csv(a)?;
    let (xb, fb) = read_fit_csv(b)?;
    if xa.len() != xb.len() || xa.iter().zip(&xb).any(|(p, q)| (p - q).abs() > 1e-12 * (1.0 + p.abs())) {
        return Err(Error::InvalidInput("the two files are not on the same x grid".into()));
    }
    Ok(json!({
        "points": xa.len(),
        "sup_distance": sup_distance_values(&fa, &fb),
    }))
}

/// Exit status for an error: 2 for bad input or configuration, 3 for
/// numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::UnreachableDelta { .. }
        | Error::TooFewSamples { .. } => 2,
        Error::DegenerateNeuron { .. }
        | Error::UnrecoverableNeuron { .. }
        | Error::NonFiniteState { .. }
        | Error::BoundaryPoint { .. }
        | Error::NotABoundary { .. }
        | Error::SingularGram { .. }
        | Error::QuadratureNotConverged { .. } => 3,
    }
}
