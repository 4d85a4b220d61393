use std::time::Instant;

use hope_core::analysis::{bounds_1d, convergence_ratios, heatmap as heatmap_from_stack};
use hope_core::format::{load_network, load_polynomial, save_network, save_polynomial};
use hope_core::layers::Shape;
use hope_core::oracle::{finite_diff, finite_diff_noise, jet_unmixed, perturbation_map};
use hope_core::random::MlpConfig;
use hope_core::{DerivStack, Mode, NetworkSpec, TaylorPolynomial};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::io::{fmt, parse_point, read_batch, write_csv};
use crate::{HeatmapMethod, ModeArg, ModelArgs, OracleMethod, OutputFormat};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hope_core::Error),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => e.category().exit_code() as u8,
            CliError::Input(_) | CliError::Csv(_) => 2,
            CliError::Check(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_model(args: &ModelArgs) -> Result<NetworkSpec> {
    let net = load_network(&args.model)?;
    let outputs = net.output_shape().len();
    match args.output_index {
        Some(i) => {
            let mut parts = net.split_outputs()?;
            if i >= parts.len() {
                return Err(CliError::Input(format!(
                    "--output-index {i} is out of range for {} outputs",
                    parts.len()
                )));
            }
            Ok(parts.swap_remove(i))
        }
        None if outputs != 1 => Err(CliError::Input(format!(
            "network has {outputs} outputs; choose one with --output-index"
        ))),
        None => Ok(net),
    }
}

fn point_for(net: &NetworkSpec, spec: &str) -> Result<Vec<f64>> {
    let x = parse_point(spec)?;
    if x.len() != net.input_len() {
        return Err(CliError::Input(format!(
            "point has {} values, network expects {} ({:?})",
            x.len(),
            net.input_len(),
            net.input_shape().dims()
        )));
    }
    Ok(x)
}

fn warn(msg: impl AsRef<str>) {
    eprintln!("warning: {}", msg.as_ref());
}

fn warn_effective_order(net: &NetworkSpec, order: usize) {
    if net.is_piecewise_linear() && order > 1 {
        warn("network is piecewise linear: effective order 1 (all derivatives above the first vanish)");
    }
}

fn warn_exactness(net: &NetworkSpec, mode: Mode) {
    let e = net.exactness();
    let exact = match mode {
        Mode::Unmixed => e.unmixed_exact(),
        Mode::Mixed => net
            .first_linear_module()
            .map(|m| e.mixed_exact(m))
            .unwrap_or(true),
    };
    if !exact {
        warn(format!(
            "higher-order coefficients are approximate: cross derivatives are dropped at module(s) {:?}",
            e.inexact_modules
        ));
    }
}

fn warn_divergence(stack: &DerivStack) {
    if let Ok(report) = convergence_ratios(stack) {
        if report.divergent {
            let tail: Vec<String> = report
                .ratios
                .iter()
                .rev()
                .take(3)
                .rev()
                .map(|r| format!("{r:.3e}"))
                .collect();
            warn(format!(
                "derivative ratios grow over the last three orders ({}); the series may not converge",
                tail.join(", ")
            ));
        }
    }
}

fn print_json(value: serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(&value).expect("json value serializes")
    );
}

pub fn expand(
    args: &ModelArgs,
    x0: &str,
    order: usize,
    mode: ModeArg,
    out: &str,
    format: OutputFormat,
) -> Result<()> {
    let net = load_model(args)?;
    let x0 = point_for(&net, x0)?;
    let (poly, diag) = match mode {
        ModeArg::Unmixed => {
            let (f0, stack) = net.unmixed_stack(&x0, order)?;
            (TaylorPolynomial::from_unmixed(&x0, f0, &stack)?, stack)
        }
        ModeArg::Mixed => {
            let (f0, stack) = net.mixed_stack(&x0, order)?;
            (
                TaylorPolynomial::from_mixed(&x0, f0, &stack)?,
                stack.diagonal(),
            )
        }
    };
    warn_effective_order(&net, order);
    warn_exactness(&net, poly.mode());
    warn_divergence(&diag);
    save_polynomial(&poly, out)?;
    match format {
        OutputFormat::Text => {
            println!("f0 = {}", fmt(poly.f0()));
            println!("terms = {}", poly.len());
        }
        OutputFormat::Json => print_json(json!({
            "f0": poly.f0(),
            "terms": poly.len(),
            "order": poly.order(),
            "mode": poly.mode().name(),
            "out": out,
        })),
    }
    Ok(())
}

pub fn eval(
    poly: &str,
    input: Option<&str>,
    batch: Option<&str>,
    out: Option<&str>,
    format: OutputFormat,
) -> Result<()> {
    let poly = load_polynomial(poly)?;
    let points = match (input, batch) {
        (Some(p), None) => vec![parse_point(p)?],
        (None, Some(b)) => read_batch(b)?,
        _ => {
            return Err(CliError::Input(
                "give exactly one of --input or --batch".into(),
            ))
        }
    };
    let values = poly.evaluate_batch(&points)?;
    if let Some(out) = out {
        write_csv(
            out,
            &["index", "value"],
            values
                .iter()
                .enumerate()
                .map(|(i, v)| vec![i.to_string(), fmt(*v)]),
        )?;
    }
    match format {
        OutputFormat::Text => values.iter().for_each(|v| println!("{}", fmt(*v))),
        OutputFormat::Json => print_json(json!({ "values": values })),
    }
    Ok(())
}

fn grid_points(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Input(format!("grid must look like a:b:steps, got `{spec}`"));
    let [a, b, steps] = parts.as_slice() else {
        return Err(bad());
    };
    let a: f64 = a.parse().map_err(|_| bad())?;
    let b: f64 = b.parse().map_err(|_| bad())?;
    let steps: usize = steps.parse().map_err(|_| bad())?;
    if steps < 2 || a >= b || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok((0..steps)
        .map(|i| a + (b - a) * i as f64 / (steps - 1) as f64)
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    args: &ModelArgs,
    poly: &str,
    grid: Option<&str>,
    samples: Option<usize>,
    radius: f64,
    seed: u64,
    out: &str,
    format: OutputFormat,
) -> Result<()> {
    let net = load_model(args)?;
    let poly = load_polynomial(poly)?;
    let p = net.input_len();
    if poly.input_dim() != p {
        return Err(CliError::Input(format!(
            "polynomial has {} inputs, network has {p}",
            poly.input_dim()
        )));
    }
    let points: Vec<Vec<f64>> = match (grid, samples) {
        (Some(g), None) => {
            if p != 1 {
                return Err(CliError::Input(
                    "--grid needs a 1-D network; use --samples".into(),
                ));
            }
            grid_points(g)?.into_iter().map(|x| vec![x]).collect()
        }
        (None, Some(n)) => {
            eprintln!("seed: {seed}");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let offset = Uniform::new_inclusive(-radius.abs(), radius.abs());
            (0..n)
                .map(|_| {
                    poly.x0()
                        .iter()
                        .map(|c| c + offset.sample(&mut rng))
                        .collect()
                })
                .collect()
        }
        _ => {
            return Err(CliError::Input(
                "give exactly one of --grid or --samples".into(),
            ))
        }
    };
    warn_effective_order(&net, poly.order());
    let net_values = net.forward_batch(&points)?;
    let poly_values = poly.evaluate_batch(&points)?;
    let errors: Vec<f64> = net_values
        .iter()
        .zip(&poly_values)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let mut header: Vec<String> = if p == 1 {
        vec!["x".into()]
    } else {
        (0..p).map(|i| format!("x{i}")).collect()
    };
    header.extend(["network", "poly", "abs_error"].map(String::from));
    write_csv(
        out,
        &header,
        points.iter().enumerate().map(|(i, x)| {
            let mut row: Vec<String> = x.iter().map(|v| fmt(*v)).collect();
            row.extend([fmt(net_values[i]), fmt(poly_values[i]), fmt(errors[i])]);
            row
        }),
    )?;
    let max = errors.iter().fold(0.0f64, |m, e| m.max(*e));
    let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    match format {
        OutputFormat::Text => println!(
            "points = {}  max_error = {max:e}  mean_error = {mean:e}",
            errors.len()
        ),
        OutputFormat::Json => {
            print_json(json!({ "points": errors.len(), "max_error": max, "mean_error": mean }))
        }
    }
    Ok(())
}

pub fn bounds(
    args: &ModelArgs,
    x0: &str,
    order: usize,
    interval: (f64, f64),
    grid: usize,
    out: &str,
    format: OutputFormat,
) -> Result<()> {
    let net = load_model(args)?;
    let x0 = point_for(&net, x0)?;
    let report = bounds_1d(&net, x0[0], order, interval, grid)?;
    warn_exactness(&net, Mode::Unmixed);
    write_csv(
        out,
        &["x", "f", "poly", "f1", "f2", "f_u", "f_d"],
        report.samples.iter().map(|s| {
            [s.x, s.f, s.poly, s.f1, s.f2, s.f_u, s.f_d]
                .iter()
                .map(|v| fmt(*v))
                .collect()
        }),
    )?;
    if !report.e1_within_e2() {
        warn(format!(
            "empirical error e1 = {:e} exceeds the bound e2 = {:e}",
            report.e1, report.e2
        ));
    }
    match format {
        OutputFormat::Text => println!(
            "order = {order}  e1 = {:e}  e2 = {:e}  dmax = {:e}  dmin = {:e}",
            report.e1, report.e2, report.dmax, report.dmin
        ),
        OutputFormat::Json => print_json(json!({
            "order": order,
            "e1": report.e1,
            "e2": report.e2,
            "dmax": report.dmax,
            "dmin": report.dmin,
        })),
    }
    Ok(())
}

fn shaped_rows(shape: Shape, values: &[f64]) -> (Vec<String>, Vec<Vec<String>>) {
    let (c, h, w) = match shape {
        Shape::Flat(n) => (1, 1, n),
        Shape::Map {
            channels,
            height,
            width,
        } => (channels, height, width),
    };
    let mut header = vec!["channel".to_string(), "row".to_string()];
    header.extend((0..w).map(|j| format!("col{j}")));
    let rows = (0..c * h)
        .map(|r| {
            let mut row = vec![(r / h).to_string(), (r % h).to_string()];
            row.extend(values[r * w..(r + 1) * w].iter().map(|v| fmt(*v)));
            row
        })
        .collect();
    (header, rows)
}

pub fn heatmap(
    args: &ModelArgs,
    x0: &str,
    order: usize,
    dx: f64,
    method: HeatmapMethod,
    out: &str,
    per_order_out: Option<&str>,
) -> Result<()> {
    let net = load_model(args)?;
    let x0 = point_for(&net, x0)?;
    let shape = net.input_shape();
    let (values, per_order) = match method {
        HeatmapMethod::Hope => {
            let (_, stack) = net.unmixed_stack(&x0, order)?;
            warn_exactness(&net, Mode::Unmixed);
            let map = heatmap_from_stack(&stack, shape, &vec![dx; x0.len()])?;
            (map.values, Some(map.per_order))
        }
        HeatmapMethod::Gradient => (net.gradient(&x0)?, None),
        HeatmapMethod::Perturbation => (perturbation_map(&net, &x0, dx)?, None),
    };
    let (header, rows) = shaped_rows(shape, &values);
    write_csv(out, &header, rows)?;
    if let Some(path) = per_order_out {
        let per_order = per_order
            .ok_or_else(|| CliError::Input("--per-order-out needs --method hope".into()))?;
        let dims = shape.dims();
        let (h, w) = if dims.len() == 3 {
            (dims[1], dims[2])
        } else {
            (1, dims[0])
        };
        let rows = per_order.iter().enumerate().flat_map(|(k, map)| {
            map.iter().enumerate().map(move |(i, v)| {
                vec![
                    (k + 1).to_string(),
                    (i / (h * w)).to_string(),
                    (i / w % h).to_string(),
                    (i % w).to_string(),
                    fmt(*v),
                ]
            })
        });
        write_csv(path, &["order", "channel", "row", "col", "value"], rows)?;
    }
    Ok(())
}

pub fn convergence(args: &ModelArgs, x0: &str, order: usize, format: OutputFormat) -> Result<()> {
    let net = load_model(args)?;
    let x0 = point_for(&net, x0)?;
    let (_, stack) = net.unmixed_stack(&x0, order)?;
    warn_exactness(&net, Mode::Unmixed);
    let report = convergence_ratios(&stack)?;
    if report.divergent {
        warn("ratios grow over the last three orders: the Taylor series is likely divergent here");
    }
    match format {
        OutputFormat::Text => {
            println!("order  ratio");
            for (k, r) in report.ratios.iter().enumerate() {
                println!("{:>5}  {r:.6e}", k + 1);
            }
            println!("divergent = {}", report.divergent);
        }
        OutputFormat::Json => {
            print_json(json!({ "ratios": report.ratios, "divergent": report.divergent }))
        }
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[allow(clippy::too_many_arguments)]
pub fn bench(
    args: &ModelArgs,
    poly: &str,
    batches: &[usize],
    repeat: usize,
    seed: u64,
    out: Option<&str>,
    format: OutputFormat,
) -> Result<()> {
    let net = load_model(args)?;
    let poly = load_polynomial(poly)?;
    if poly.input_dim() != net.input_len() {
        return Err(CliError::Input(
            "polynomial and network input sizes differ".into(),
        ));
    }
    if repeat == 0 || batches.contains(&0) {
        return Err(CliError::Input(
            "--repeat and every batch size must be positive".into(),
        ));
    }
    eprintln!("seed: {seed}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = Uniform::new_inclusive(-1.0, 1.0);
    let mut rows = Vec::new();
    for &b in batches {
        let points: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                poly.x0()
                    .iter()
                    .map(|c| c + offset.sample(&mut rng))
                    .collect()
            })
            .collect();
        let mut t_net = Vec::with_capacity(repeat);
        let mut t_poly = Vec::with_capacity(repeat);
        for _ in 0..repeat {
            let start = Instant::now();
            std::hint::black_box(net.forward_batch(&points)?);
            t_net.push(start.elapsed().as_secs_f64());
            let start = Instant::now();
            std::hint::black_box(poly.evaluate_batch(&points)?);
            t_poly.push(start.elapsed().as_secs_f64());
        }
        let (n, p) = (median(t_net), median(t_poly));
        rows.push((b, n, p, n / p.max(1e-12)));
    }
    if let Some(out) = out {
        write_csv(
            out,
            &["batch", "network_median_s", "poly_median_s", "speedup"],
            rows.iter()
                .map(|&(b, n, p, s)| vec![b.to_string(), fmt(n), fmt(p), fmt(s)]),
        )?;
    }
    match format {
        OutputFormat::Text => {
            println!("{:>6}  {:>14}  {:>14}  {:>9}", "batch", "network_s", "poly_s", "speedup");
            for (b, n, p, s) in &rows {
                println!("{b:>6}  {n:>14.6e}  {p:>14.6e}  {s:>9.1}");
            }
        }
        OutputFormat::Json => print_json(json!(rows
            .iter()
            .map(|&(b, n, p, s)| json!({ "batch": b, "network_median_s": n, "poly_median_s": p, "speedup": s }))
            .collect::<Vec<_>>())),
    }
    Ok(())
}

pub const JET_TOLERANCE: f64 = 1e-8;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn oracle(
    args: &ModelArgs,
    x0: &str,
    order: usize,
    method: OracleMethod,
    report: Option<&str>,
    format: OutputFormat,
) -> Result<()> {
    let net = load_model(args)?;
    let x0 = point_for(&net, x0)?;
    if method == OracleMethod::Fd && order > hope_core::oracle::MAX_FD_ORDER {
        return Err(CliError::Input(format!(
            "finite differences support orders up to {}, got {order}",
            hope_core::oracle::MAX_FD_ORDER
        )));
    }
    warn_exactness(&net, Mode::Unmixed);
    let (f0, stack) = net.unmixed_stack(&x0, order)?;
    let x_scale = x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (reference, tolerance) = match method {
        OracleMethod::Jet => (jet_unmixed(&net, &x0, order)?, JET_TOLERANCE),
        OracleMethod::Fd => {
            let reference = (1..=order)
                .map(|k| {
                    (0..x0.len())
                        .map(|i| finite_diff(&net, &x0, i, k))
                        .collect::<hope_core::Result<Vec<f64>>>()
                })
                .collect::<hope_core::Result<Vec<_>>>()?;
            (reference, FD_TOLERANCE)
        }
    };
    let mut rows = Vec::new();
    for k in 1..=order {
        let (ours, theirs) = (stack.block(k), &reference[k - 1]);
        let diff = ours
            .iter()
            .zip(theirs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = ours
            .iter()
            .chain(theirs)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-30);
        let rel = diff / scale;
        let noise = match method {
            OracleMethod::Jet => 0.0,
            OracleMethod::Fd => finite_diff_noise(k, f0, x_scale),
        };
        rows.push((k, diff, scale, rel, diff <= tolerance * scale + noise));
    }
    if let Some(path) = report {
        write_csv(
            path,
            &[
                "order",
                "max_abs_diff",
                "scale",
                "rel_error",
                "tolerance",
                "pass",
            ],
            rows.iter().map(|&(k, d, s, r, ok)| {
                vec![
                    k.to_string(),
                    fmt(d),
                    fmt(s),
                    fmt(r),
                    fmt(tolerance),
                    ok.to_string(),
                ]
            }),
        )?;
    }
    match format {
        OutputFormat::Text => {
            for (k, _, _, rel, ok) in &rows {
                println!("order {k:>2}  rel_error {rel:.3e}  {}", if *ok { "pass" } else { "FAIL" });
            }
        }
        OutputFormat::Json => print_json(json!(rows
            .iter()
            .map(|&(k, d, s, r, ok)| json!({
                "order": k, "max_abs_diff": d, "scale": s, "rel_error": r, "tolerance": tolerance, "pass": ok
            }))
            .collect::<Vec<_>>())),
    }
    let failed: Vec<usize> = rows.iter().filter(|r| !r.4).map(|r| r.0).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "oracle disagreement above {tolerance:e} at order(s) {failed:?}"
        )))
    }
}

pub fn random_mlp(
    input: usize,
    hidden: Vec<usize>,
    output: usize,
    activation: &str,
    w0: f64,
    seed: u64,
    out: &str,
) -> Result<()> {
    eprintln!("seed: {seed}");
    let cfg = MlpConfig {
        input,
        hidden,
        output,
        activation: activation.parse()?,
        w0,
        seed,
    };
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("name".to_string(), "random_mlp".to_string());
    metadata.insert("seed".to_string(), seed.to_string());
    metadata.insert("w0".to_string(), w0.to_string());
    let net = hope_core::random::random_mlp(&cfg)?.with_metadata(metadata);
    save_network(&net, out)?;
    println!("wrote {out}");
    Ok(())
}
