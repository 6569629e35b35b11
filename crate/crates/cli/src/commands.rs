// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dynahull::cloud::{
    load_cloud, load_labels_sidecar, save_cloud, CloudFormat, MotionLabel, PointCloud,
};
use dynahull::filter::{filter_map, DynaHullParams, FilterResult};
use dynahull::ground::{segment_ceiling, segment_ground, GroundParams};
use dynahull::metrics::{confusion, evaluate, EvalOptions, MetricsReport};
use dynahull::scenegen::{generate_scene, ground_truth_cloud, ScenarioConfig};
use serde_json::{json, Value};

use crate::config::{EvalConfig, RunConfig};
use crate::{
    Axis, BenchArgs, Cli, CliError, Command, EvalArgs, FilterArgs, GenArgs, MetricArgs, ParamArgs,
    VERSION,
};

pub(crate) fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cfg.seed {
        cfg.apply_seed(s);
    }
    if let Some(s) = cli.seed {
        cfg.apply_seed(s);
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    match cfg.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Gen(a) => cmd_gen(&a, cfg),
        Command::Filter(a) => cmd_filter(&a, cfg),
        Command::Eval(a) => cmd_eval(&a, cfg),
        Command::Bench(a) => cmd_bench(&a, cfg),
    })
}

/// `dir/stem<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, value: &Value) -> Result<(), CliError> {
    match path {
        Some(p) if p != Path::new("-") => write_json(p, value),
        _ => {
            let text = serde_json::to_string_pretty(value).expect("json values serialize");
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError::Io(format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("bad scenario {}: {e}", path.display())))
}

fn resolve_scenario(path: Option<&PathBuf>, cfg: &RunConfig) -> Result<ScenarioConfig, CliError> {
    let mut sc = match path {
        Some(p) => load_scenario(p)?,
        None => cfg
            .scenario
            .clone()
            .unwrap_or_else(ScenarioConfig::reference),
    };
    if let Some(s) = cfg.seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn cmd_gen(args: &GenArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    let mut sc = resolve_scenario(args.scenario.as_ref(), &cfg)?;
    if let Some(f) = args.frames {
        sc.n_frames = f;
    }
    if let Some(a) = args.actors {
        sc.n_actors = a;
    }
    let scene = generate_scene(&sc).map_err(|e| CliError::Config(e.to_string()))?;
    save_cloud(&scene.cloud, &args.out, args.format.into())?;
    let provenance = sibling(&args.out, ".provenance.json");
    write_json(&provenance, &scene.provenance_json(&sc))?;
    if let Some(t) = &args.truth_out {
        save_cloud(&ground_truth_cloud(&scene), t, args.format.into())?;
    }
    let (n_static, n_dynamic) = scene.label_counts();
    cfg.scenario = Some(sc);
    emit(
        None,
        &json!({
            "version": VERSION,
            "config": cfg,
            "out": args.out,
            "provenance": provenance,
            "points": scene.cloud.len(),
            "static": n_static,
            "dynamic": n_dynamic,
        }),
    )
}

fn apply_params(base: &DynaHullParams, a: &ParamArgs) -> DynaHullParams {
    let mut p = base.clone();
    if let Some(v) = a.k {
        p.k_neighbors = v;
    }
    if let Some(v) = a.clusters {
        p.n_clusters = v;
    }
    if let Some(v) = a.remove_min {
        p.min_remove = v;
    }
    if let Some(v) = a.remove_max {
        p.max_remove = v;
    }
    if let Some(v) = a.threshold_mode {
        p.threshold_mode = v.into();
    }
    if let Some(v) = a.iter_step_frac {
        p.iter_step_frac = v;
    }
    if a.per_cluster_knn {
        p.per_cluster_knn = true;
    }
    if let Some(v) = a.vol_floor {
        p.vol_floor = v;
    }
    if a.no_ground {
        p.ground.enabled = false;
    }
    if let Some(v) = a.ground_band {
        p.ground.seed_band = v;
    }
    if let Some(v) = a.ground_eps {
        p.ground.inlier_eps = v;
    }
    if let Some(v) = a.ground_max_slope {
        p.ground.max_slope_deg = v;
    }
    if let Some(v) = a.ground_iters {
        p.ground.ransac_iters = v;
    }
    p
}

fn apply_metrics(base: &EvalConfig, a: &MetricArgs) -> EvalConfig {
    let mut e = base.clone();
    e.strip_ground |= a.strip_ground;
    e.strip_ceiling |= a.strip_ceiling;
    if let Some(n) = a.emd_samples {
        e.emd_samples = n;
    }
    e
}

fn validate_eval(e: &EvalConfig) -> Result<(), CliError> {
    if e.emd_samples == 0 {
        return Err(CliError::Config("--emd-samples must be at least 1".into()));
    }
    Ok(())
}

fn confusion_json(labels: Option<&[MotionLabel]>, removed: &[usize]) -> Result<Value, CliError> {
    match labels {
        Some(l) => Ok(confusion(l, removed)
            .map_err(|e| CliError::Pipeline(e.to_string()))?
            .to_json()),
        None => Ok(Value::Null),
    }
}

fn cmd_filter(args: &FilterArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    let params = apply_params(&cfg.filter, &args.params);
    params.validate()?;
    cfg.filter = params;

    let mut cloud = load_cloud(&args.input, None)?;
    if let Some(p) = &args.labels {
        cloud.set_labels(Some(load_labels_sidecar(p)?))?;
    }
    let result = filter_map(&cloud, &cfg.filter)?;

    let format: CloudFormat = args.format.into();
    let removed_path = args
        .removed
        .clone()
        .unwrap_or_else(|| sibling(&args.out, ".removed.json"));
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| sibling(&args.out, ".report.json"));
    save_cloud(&result.filtered, &args.out, format)?;
    write_json(&removed_path, &json!(result.removed_indices))?;

    let report = filter_report(&cfg, args, &removed_path, format, &cloud, &result)?;
    write_json(&report_path, &report)?;
    let t = result.timings;
    write_json(
        &sibling(&report_path, ".timings.json"),
        &json!({
            "version": VERSION,
            "threads": rayon::current_num_threads(),
            "timings": {
                "ground_s": t.ground_s,
                "cluster_s": t.cluster_s,
                "density_s": t.density_s,
                "threshold_s": t.threshold_s,
                "total_s": t.total_s,
            },
        }),
    )
}

fn filter_report(
    cfg: &RunConfig,
    args: &FilterArgs,
    removed_path: &Path,
    format: CloudFormat,
    cloud: &PointCloud,
    r: &FilterResult,
) -> Result<Value, CliError> {
    let clusters: Vec<Value> = r
        .plan
        .iter()
        .map(|p| {
            json!({
                "cluster": p.cluster,
                "count": p.count,
                "removal_pct": p.removal_pct,
                "threshold": p.threshold,
                "removed": p.removed,
            })
        })
        .collect();
    Ok(json!({
        "version": VERSION,
        "command": "filter",
        "config": {
            "run": cfg,
            "input": args.input,
            "output": args.out,
            "removed": removed_path,
            "format": format,
        },
        "points": {
            "input": cloud.len(),
            "output": r.filtered.len(),
            "removed": r.removed_indices.len(),
            "ground": r.ground.ground_indices.len(),
        },
        "ground_found": r.ground_found,
        "ground_plane": r.ground.plane,
        "clusters": clusters,
        "confusion": confusion_json(cloud.labels(), &r.removed_indices)?,
    }))
}

fn strip(cloud: PointCloud, e: &EvalConfig, ground: &GroundParams) -> PointCloud {
    let mut c = cloud;
    if e.strip_ground {
        match segment_ground(&c, ground) {
            Ok(s) => c = c.select(&s.nonground_indices),
            Err(err) => log::warn!("ground strip skipped: {err}"),
        }
    }
    if e.strip_ceiling {
        match segment_ceiling(&c, ground) {
            Ok(s) => c = c.select(&s.nonground_indices),
            Err(err) => log::warn!("ceiling strip skipped: {err}"),
        }
    }
    c
}

fn measure(
    pred: &PointCloud,
    truth: &PointCloud,
    e: &EvalConfig,
) -> Result<MetricsReport, CliError> {
    let opts = EvalOptions {
        emd_samples: e.emd_samples,
        emd_seed: e.emd_seed,
    };
    evaluate(pred, truth, &opts).map_err(|err| CliError::Pipeline(err.to_string()))
}

/// Labels of the unfiltered map from a JSON sidecar or a labeled cloud.
fn load_any_labels(path: &Path) -> Result<Vec<MotionLabel>, CliError> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        return Ok(load_labels_sidecar(path)?);
    }
    let (_, labels) = load_cloud(path, None)?.into_parts();
    labels.ok_or_else(|| CliError::MissingLabels(format!("{} has no label field", path.display())))
}

fn read_indices(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn with_header(metrics: Value, config: Value) -> Value {
    let mut obj = metrics;
    let map = obj.as_object_mut().expect("metrics report is an object");
    map.insert("version".into(), json!(VERSION));
    map.insert("config".into(), config);
    obj
}

fn cmd_eval(args: &EvalArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    cfg.eval = apply_metrics(&cfg.eval, &args.metrics);
    validate_eval(&cfg.eval)?;
    let confusion_block = match &args.removed {
        Some(removed_path) => {
            let labels_path = args.labels.as_ref().ok_or_else(|| {
                CliError::MissingLabels("--removed needs --labels for the unfiltered map".into())
            })?;
            let labels = load_any_labels(labels_path)?;
            let removed = read_indices(removed_path)?;
            Some(confusion_json(Some(&labels), &removed)?)
        }
        None => None,
    };
    let pred = strip(load_cloud(&args.pred, None)?, &cfg.eval, &cfg.filter.ground);
    let truth = strip(
        load_cloud(&args.truth, None)?,
        &cfg.eval,
        &cfg.filter.ground,
    );
    let report = measure(&pred, &truth, &cfg.eval)?;
    let report = MetricsReport {
        runtime_s: start.elapsed().as_secs_f64(),
        ..report
    };
    let mut out = report.to_json();
    out["confusion"] = confusion_block.unwrap_or(Value::Null);
    let config = json!({
        "run": cfg,
        "pred": args.pred,
        "truth": args.truth,
        "removed": args.removed,
        "labels": args.labels,
    });
    emit(args.report.as_deref(), &with_header(out, config))
}

fn cmd_bench(args: &BenchArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    if args.values.is_empty() {
        return Err(CliError::Config("--values needs at least one entry".into()));
    }
    let base = apply_params(&cfg.filter, &args.params);
    let runs: Vec<DynaHullParams> = args
        .values
        .iter()
        .map(|&v| {
            let mut p = base.clone();
            match args.axis {
                Axis::K => p.k_neighbors = v,
                Axis::Clusters => p.n_clusters = v,
            }
            p
        })
        .collect();
    for p in &runs {
        p.validate()?;
    }
    cfg.filter = base;
    cfg.eval = apply_metrics(&cfg.eval, &args.metrics);
    validate_eval(&cfg.eval)?;

    let (cloud, truth, source) = match &args.input {
        Some(input) => {
            let truth_path = args
                .truth
                .as_ref()
                .ok_or_else(|| CliError::Config("--in needs --truth".into()))?;
            let source = json!({ "input": input, "truth": truth_path });
            (
                load_cloud(input, None)?,
                load_cloud(truth_path, None)?,
                source,
            )
        }
        None => {
            let sc = resolve_scenario(args.scenario.as_ref(), &cfg)?;
            let scene = generate_scene(&sc).map_err(|e| CliError::Config(e.to_string()))?;
            let truth = ground_truth_cloud(&scene);
            cfg.scenario = Some(sc);
            (scene.cloud, truth, json!({ "scenario": args.scenario }))
        }
    };
    let truth = strip(truth, &cfg.eval, &cfg.filter.ground);

    let mut rows = Vec::with_capacity(runs.len());
    for (&value, params) in args.values.iter().zip(&runs) {
        let t = Instant::now();
        let r = filter_map(&cloud, params)?;
        let runtime = t.elapsed().as_secs_f64();
        let pred = strip(r.filtered, &cfg.eval, &cfg.filter.ground);
        let metrics = MetricsReport {
            runtime_s: runtime,
            ..measure(&pred, &truth, &cfg.eval)?
        };
        let mut m = metrics.to_json();
        m["confusion"] = confusion_json(cloud.labels(), &r.removed_indices)?;
        log::info!("bench {:?}={value}: {runtime:.3}s", args.axis);
        rows.push(json!({
            "value": value,
            "metrics": m,
            "mean": metrics.distance.mean,
            "variance": metrics.distance.variance,
            "removed_points": r.removed_indices.len(),
            "runtime_s": runtime,
        }));
    }
    let axis = match args.axis {
        Axis::K => "k",
        Axis::Clusters => "clusters",
    };
    emit(
        args.report.as_deref(),
        &json!({
            "version": VERSION,
            "config": { "run": cfg, "source": source, "values": args.values },
            "axis": axis,
            "rows": rows,
        }),
    )
}
