//! Command implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use latmorph_core::analysis::{
    ols_fit, pca_project, regression_csv, significance_table, RegressionDesign, RegressionResult,
};
use latmorph_core::dataset::{
    default_family_weights, encode_dataset, FamilyWeights, StiffnessPrecision,
};
use latmorph_core::latent::{
    encode_dataset as encode_latents, interpolate_linear, mesh_interpolate, parse_sweep_csv,
    score_transition, sweep_csv, MetricOptions, PairAveraging, SweepConfig, SweepRecord,
};
use latmorph_core::render::{pgm_grid, pgm_strip, svg_chart, svg_grid, ChartLabels, Mark, Series};
use latmorph_core::vae::{build_model, reconstruction_report, train, EpochRecord};
use latmorph_core::{
    cluster_latent, encode_cell, generate_synthetic_dataset, load_dataset, normalize_stiffness,
    run_sweep, split_dataset, Architecture, Dataset, Family, ModelCheckpoint, SplitSpec,
    TrainConfig,
};
use log::info;
use serde_json::{json, Map, Value};

use crate::config::{load_config, manifest_beside, overlay, resolve_seed, write_output, Manifest};
use crate::error::{CliError, CliResult};
use crate::{
    Cli, Command, GenDataArgs, InterpolateArgs, RegressArgs, ReportArgs, SweepArgs, TrainArgs,
};

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let config = cli.config.as_deref().map(load_config).transpose()?;
    let cfg = config.as_ref();
    match &cli.command {
        Command::GenData(a) => gen_data(&overlay(a, cfg, "gen-data")?),
        Command::Train(a) => train_cmd(&overlay(a, cfg, "train")?),
        Command::Sweep(a) => sweep(&overlay(a, cfg, "sweep")?),
        Command::Interpolate(a) => interpolate(&overlay(a, cfg, "interpolate")?),
        Command::Regress(a) => regress(&overlay(a, cfg, "regress")?),
        Command::Report(a) => report(&overlay(a, cfg, "report")?),
    }
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    load_dataset(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> CliResult<ModelCheckpoint> {
    ModelCheckpoint::load(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::usage(format!("invalid {what} `{}`", s.trim())))
        })
        .collect()
}

fn parse_families(text: &str) -> CliResult<FamilyWeights> {
    let mut weights = FamilyWeights::new();
    for part in text.split(',') {
        let (name, w) = part.split_once('=').ok_or_else(|| {
            CliError::usage(format!("family weight `{part}` must look like name=weight"))
        })?;
        let family = Family::parse(name.trim())?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("invalid weight `{w}`")))?;
        weights.insert(family, w);
    }
    Ok(weights)
}

fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let count = *required(&args.count, "count")?;
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let out = required(&args.out, "out")?;
    let seed = resolve_seed(args.seed)?;
    let weights = match &args.families {
        Some(f) => parse_families(f)?,
        None => default_family_weights(),
    };
    let precision = match args.stiffness_dtype.as_deref().unwrap_or("f32") {
        "f32" => StiffnessPrecision::F32,
        "f64" => StiffnessPrecision::F64,
        other => {
            return Err(CliError::usage(format!(
                "unknown stiffness dtype `{other}`"
            )))
        }
    };
    let data = generate_synthetic_dataset(count, seed, &weights)?;
    write_output(out, &encode_dataset(&data, precision))?;

    let mut hist = [0usize; 10];
    for r in &data.records {
        let vf = r.cell.volume_fraction();
        hist[((vf * 10.0) as usize).min(9)] += 1;
    }
    println!("wrote {} cells to {}", data.len(), out.display());
    println!("volume fraction histogram:");
    for (i, h) in hist.iter().enumerate() {
        let bar = "#".repeat((h * 50).div_ceil(count.max(1)));
        println!(
            "  [{:.1}, {:.1}) {:>6} {bar}",
            i as f64 / 10.0,
            (i + 1) as f64 / 10.0,
            h
        );
    }
    println!("duplicate rate: {:.2}%", data.duplicate_rate() * 100.0);

    let mut manifest = Manifest::new("gen-data", args, Some(seed))?;
    manifest.output(out);
    manifest.summary = Some(json!({
        "count": data.len(),
        "volume_fraction_histogram": hist,
        "duplicate_rate": data.duplicate_rate(),
        "content_hash": data.content_hash(),
    }));
    manifest.write(&manifest_beside(out))
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(
        "epoch,train_loss,train_mse,train_kl,train_r2,test_loss,test_mse,test_kl,test_r2,test_pixel_accuracy,seconds\n",
    );
    for h in history {
        let _ = writeln!(
            s,
            "{},{:.8},{:.8},{:.8},{:.6},{:.8},{:.8},{:.8},{:.6},{:.6},{:.3}",
            h.epoch,
            h.train_loss,
            h.train_mse,
            h.train_kl,
            h.train_r2,
            h.test_loss,
            h.test_mse,
            h.test_kl,
            h.test_r2,
            h.test_pixel_accuracy,
            h.seconds
        );
    }
    s
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let arch = Architecture::parse(required(&args.arch, "arch")?)?;
    let data_path = required(&args.data, "data")?;
    let out = required(&args.out, "out")?;
    let seed = resolve_seed(args.seed)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        max_epochs: args.epochs.unwrap_or(defaults.max_epochs),
        patience_epochs: args.patience.unwrap_or(defaults.patience_epochs),
        beta: args.beta.unwrap_or(defaults.beta),
        split: SplitSpec {
            train_fraction: args.train_fraction.unwrap_or(defaults.split.train_fraction),
            seed,
        },
        seed,
        ..defaults
    };
    config.validate()?;
    if !(config.split.train_fraction > 0.0 && config.split.train_fraction < 1.0) {
        return Err(CliError::usage(
            "--train-fraction must lie strictly between 0 and 1",
        ));
    }

    let data = load_data(data_path)?;
    let (train_set, test_set) = split_dataset(&data, &config.split)?;
    let model = build_model(arch, &config, seed)?;
    println!(
        "training {arch} VAE: {} train / {} test cells, beta_norm {:.6}",
        train_set.len(),
        test_set.len(),
        config.beta_norm()
    );
    let ck = train(
        model,
        &train_set,
        &test_set,
        &config,
        &data.content_hash(),
        |r| {
            eprintln!(
                "epoch {:>3}  train {:.5}  test {:.5}  R² {:.4}  acc {:.4}  ({:.1}s)",
                r.epoch, r.train_loss, r.test_loss, r.test_r2, r.test_pixel_accuracy, r.seconds
            );
        },
    )?;
    ck.save(out)
        .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let rep = reconstruction_report(&ck, &test_set)?;
    println!(
        "best epoch {} of {}: test R² {:.4}, pixel accuracy {:.4}",
        ck.best_epoch,
        ck.history.len(),
        rep.r_squared,
        rep.pixel_accuracy
    );

    let hist_path = with_suffix(out, ".history.csv");
    write_output(&hist_path, history_csv(&ck.history).as_bytes())?;
    let epochs =
        |f: fn(&EpochRecord) -> f64| ck.history.iter().map(|h| (h.epoch as f64, f(h))).collect();
    let loss_svg = svg_chart(
        &[
            Series {
                label: "train loss".into(),
                points: epochs(|h| h.train_loss),
            },
            Series {
                label: "test loss".into(),
                points: epochs(|h| h.test_loss),
            },
        ],
        &ChartLabels {
            title: &format!("{arch} VAE loss"),
            x: "epoch",
            y: "loss",
        },
        Mark::Lines,
    );
    let r2_svg = svg_chart(
        &[
            Series {
                label: "train R²".into(),
                points: epochs(|h| h.train_r2),
            },
            Series {
                label: "test R²".into(),
                points: epochs(|h| h.test_r2),
            },
        ],
        &ChartLabels {
            title: &format!("{arch} VAE reconstruction R²"),
            x: "epoch",
            y: "R²",
        },
        Mark::Lines,
    );
    let loss_path = with_suffix(out, ".loss.svg");
    let r2_path = with_suffix(out, ".r2.svg");
    write_output(&loss_path, loss_svg.as_bytes())?;
    write_output(&r2_path, r2_svg.as_bytes())?;

    let mut manifest = Manifest::new("train", args, Some(seed))?;
    manifest.input(data_path)?;
    for p in [out, &hist_path, &loss_path, &r2_path] {
        manifest.output(p);
    }
    manifest.summary = Some(json!({
        "architecture": arch,
        "train_config": config,
        "beta_norm": config.beta_norm(),
        "best_epoch": ck.best_epoch,
        "epochs_run": ck.history.len(),
        "test_r_squared": rep.r_squared,
        "test_pixel_accuracy": rep.pixel_accuracy,
    }));
    manifest.write(&manifest_beside(out))
}

fn check_compatible(ck: &ModelCheckpoint, data: &Dataset, what: &Path) -> CliResult<()> {
    if data.content_hash() != ck.dataset_hash {
        return Err(CliError::Incompatible(format!(
            "{} is not the dataset this checkpoint was trained on (hash mismatch)",
            what.display()
        )));
    }
    Ok(())
}

fn sweep_config(
    distances: &Option<String>,
    lengths: &Option<String>,
    directions: Option<usize>,
    seed: u64,
    metrics: MetricOptions,
) -> CliResult<SweepConfig> {
    let defaults = SweepConfig::default();
    let cfg = SweepConfig {
        distances: match distances {
            Some(d) => parse_list(d, "distance")?,
            None => defaults.distances,
        },
        lengths: match lengths {
            Some(l) => parse_list(l, "length")?,
            None => defaults.lengths,
        },
        directions_per_config: directions.unwrap_or(defaults.directions_per_config),
        seed,
        metrics,
        ..defaults
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Scatter of one metric against distance, one series per length. Points
/// are offset slightly by length so overlapping columns stay readable.
fn metric_scatter(
    records: &[SweepRecord],
    metric: fn(&SweepRecord) -> f64,
    title: &str,
    y: &str,
) -> String {
    let mut lengths: Vec<usize> = records.iter().map(|r| r.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mid = (lengths.len() as f64 - 1.0) / 2.0;
    let series: Vec<Series> = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| Series {
            label: format!("{n} cells"),
            points: records
                .iter()
                .filter(|r| r.length == n)
                .map(|r| (r.distance_std + (i as f64 - mid) * 0.08, metric(r)))
                .collect(),
        })
        .collect();
    svg_chart(
        &series,
        &ChartLabels {
            title,
            x: "latent distance (standard deviations)",
            y,
        },
        Mark::Dots,
    )
}

struct SweepOutputs {
    records: Vec<SweepRecord>,
    paths: Vec<PathBuf>,
}

fn sweep_and_write(
    ck: &ModelCheckpoint,
    cfg: &SweepConfig,
    out_dir: &Path,
) -> CliResult<SweepOutputs> {
    let arch = ck.architecture();
    info!("sweeping {arch}: {} transitions", cfg.record_count());
    let records = run_sweep(ck, &ck.latent_stats, cfg)?;
    let csv_path = out_dir.join(format!("sweep-{arch}.csv"));
    write_output(&csv_path, sweep_csv(&records).as_bytes())?;
    let cs_path = out_dir.join(format!("cs-vs-distance-{arch}.svg"));
    let ck_path = out_dir.join(format!("ck-vs-distance-{arch}.svg"));
    write_output(
        &cs_path,
        metric_scatter(
            &records,
            |r| r.c_s_percent,
            &format!("{arch}: geometric smoothness"),
            "C_s (%)",
        )
        .as_bytes(),
    )?;
    write_output(
        &ck_path,
        metric_scatter(
            &records,
            |r| r.c_k_percent,
            &format!("{arch}: stiffness continuity"),
            "C_K (%)",
        )
        .as_bytes(),
    )?;
    Ok(SweepOutputs {
        records,
        paths: vec![csv_path, cs_path, ck_path],
    })
}

fn per_distance_means(records: &[SweepRecord]) -> BTreeMap<String, (f64, f64)> {
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(format!("{:.6}", r.distance_std)).or_default();
        e.0 += r.c_s_percent;
        e.1 += r.c_k_percent;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, c, n))| (k, (s / n as f64, c / n as f64)))
        .collect()
}

fn sweep(args: &SweepArgs) -> CliResult<()> {
    let ck_path = required(&args.checkpoint, "checkpoint")?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = resolve_seed(args.seed)?;
    let metrics = MetricOptions {
        threshold_smoothness: args.threshold_smoothness,
        threshold_stiffness: !args.grayscale_stiffness,
        pair_averaging: if args.ck_first_n_minus_3 {
            PairAveraging::FirstNMinus3
        } else {
            PairAveraging::AllPairs
        },
    };
    let cfg = sweep_config(
        &args.distances,
        &args.lengths,
        args.directions,
        seed,
        metrics,
    )?;
    let ck = load_checkpoint(ck_path)?;
    let mut manifest = Manifest::new("sweep", args, Some(seed))?;
    manifest.input(ck_path)?;
    if let Some(dp) = &args.data {
        check_compatible(&ck, &load_data(dp)?, dp)?;
        manifest.input(dp)?;
    }
    let out = sweep_and_write(&ck, &cfg, &out_dir)?;
    println!(
        "{} transitions written to {}",
        out.records.len(),
        out.paths[0].display()
    );
    for (d, (cs, ckm)) in per_distance_means(&out.records) {
        println!("  d = {d}: mean C_s {cs:.3}%  mean C_K {ckm:.3}%");
    }
    for p in &out.paths {
        manifest.output(p);
    }
    manifest.write(&out_dir.join("sweep.manifest.json"))
}

fn parse_latent(text: &str, dim: usize) -> CliResult<Vec<f64>> {
    let v: Vec<f64> = parse_list(text, "latent value")?;
    if v.len() != dim {
        return Err(CliError::usage(format!(
            "latent vector needs {dim} values, got {}",
            v.len()
        )));
    }
    Ok(v)
}

fn record_index(data: &Dataset, id: u64) -> CliResult<usize> {
    data.records
        .iter()
        .position(|r| r.id == id)
        .ok_or_else(|| CliError::usage(format!("unknown dataset id {id}")))
}

fn encode_id(ck: &ModelCheckpoint, data: &Dataset, id: u64) -> CliResult<Vec<f64>> {
    let r = &data.records[record_index(data, id)?];
    let stiffness = (ck.architecture() == Architecture::Hybrid).then_some(&r.stiffness);
    Ok(encode_cell(ck, &r.cell, stiffness)?)
}

fn interpolate(args: &InterpolateArgs) -> CliResult<()> {
    let ck_path = required(&args.checkpoint, "checkpoint")?;
    let ck = load_checkpoint(ck_path)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = resolve_seed(args.seed)?;
    let dim = ck.latent_stats.dim();
    let data = args.data.as_deref().map(load_data).transpose()?;
    let need_data = || {
        data.as_ref()
            .ok_or_else(|| CliError::usage("--data is required for dataset ids"))
    };
    let mut manifest = Manifest::new("interpolate", args, Some(seed))?;
    manifest.input(ck_path)?;
    if let Some(dp) = &args.data {
        manifest.input(dp)?;
    }

    if args.mesh {
        let corners_text = required(&args.corners, "corners")?;
        let ids: Vec<u64> = parse_list(corners_text, "corner id")?;
        if ids.len() != 4 {
            return Err(CliError::usage("--corners needs exactly four ids"));
        }
        let data = need_data()?;
        let mut corners: [Vec<f64>; 4] = Default::default();
        for (c, id) in corners.iter_mut().zip(&ids) {
            *c = encode_id(&ck, data, *id)?;
        }
        let rows = args.rows.unwrap_or(5);
        let cols = args.cols.unwrap_or(5);
        let grid = mesh_interpolate(&ck, &corners, rows, cols)?;
        let pgm = out_dir.join("mesh.pgm");
        let svg = out_dir.join("mesh.svg");
        write_output(&pgm, &pgm_grid(&grid, 2))?;
        write_output(
            &svg,
            svg_grid(
                &grid,
                2,
                &format!("{rows}×{cols} mesh between cells {corners_text}"),
            )
            .as_bytes(),
        )?;
        println!("wrote {rows}×{cols} mesh to {}", pgm.display());
        manifest.output(&pgm);
        manifest.output(&svg);
        return manifest.write(&out_dir.join("interpolate.manifest.json"));
    }

    let n = args.length.unwrap_or(10);
    let (z_a, z_b, label) = if args.intra_cluster || args.inter_cluster {
        let data = need_data()?;
        let k = args.clusters.unwrap_or(4);
        let clusters = cluster_latent(&ck, data, k, seed)?;
        let (a, b) = clusters.endpoint_pair(args.intra_cluster, seed)?;
        let (ia, ib) = (data.records[a].id, data.records[b].id);
        let kind = if args.intra_cluster {
            "intra-cluster"
        } else {
            "inter-cluster"
        };
        println!(
            "{kind} endpoints: cells {ia} (cluster {}) and {ib} (cluster {})",
            clusters.labels[a], clusters.labels[b]
        );
        (
            encode_id(&ck, data, ia)?,
            encode_id(&ck, data, ib)?,
            format!("{kind} {ia} → {ib}"),
        )
    } else if let (Some(fa), Some(fb)) = (&args.from_latent, &args.to_latent) {
        (
            parse_latent(fa, dim)?,
            parse_latent(fb, dim)?,
            "latent endpoints".to_string(),
        )
    } else {
        let (a, b) = match (args.from, args.to) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(CliError::usage(
                    "give --from/--to ids, --from-latent/--to-latent, --intra-cluster or --inter-cluster",
                ))
            }
        };
        let data = need_data()?;
        (
            encode_id(&ck, data, a)?,
            encode_id(&ck, data, b)?,
            format!("cells {a} → {b}"),
        )
    };
    let latents = interpolate_linear(&z_a, &z_b, n)?;
    if n < 4 {
        return Err(CliError::usage(
            "--length must be at least 4 so smoothness is defined",
        ));
    }
    let (region, c_s, c_k) = score_transition(&ck, &latents, MetricOptions::default())?;
    let caption = format!("{label}: n = {n}, C_s = {c_s:.2}%, C_K = {c_k:.2}%");
    println!("{caption}");

    let pgm = out_dir.join("transition.pgm");
    let svg = out_dir.join("transition.svg");
    let csv = out_dir.join("transition-stiffness.csv");
    let json_path = out_dir.join("transition.json");
    write_output(&pgm, &pgm_strip(&region.cells, 2))?;
    write_output(
        &svg,
        svg_grid(std::slice::from_ref(&region.cells), 2, &caption).as_bytes(),
    )?;
    let tensors = region.stiffnesses.clone().unwrap_or_default();
    let mut table =
        String::from("index,c11,c12,c13,c21,c22,c23,c31,c32,c33,normalized_rmse_to_next\n");
    for (i, t) in tensors.iter().enumerate() {
        let flat = t.flat();
        let next = tensors.get(i + 1).map(|u| {
            let a = normalize_stiffness(t, &ck.stiffness_stats);
            let b = normalize_stiffness(u, &ck.stiffness_stats);
            (a.iter()
                .zip(&b)
                .map(|(p, q)| (q - p) * (q - p))
                .sum::<f64>()
                / 9.0)
                .sqrt()
        });
        let _ = write!(table, "{i}");
        for v in flat {
            let _ = write!(table, ",{v:.9e}");
        }
        match next {
            Some(r) => {
                let _ = writeln!(table, ",{r:.6}");
            }
            None => table.push_str(",\n"),
        }
    }
    write_output(&csv, table.as_bytes())?;
    let report = json!({
        "label": label,
        "length": n,
        "c_s_percent": c_s,
        "c_k_percent": c_k,
        "z_a": z_a,
        "z_b": z_b,
    });
    write_output(
        &json_path,
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    for p in [&pgm, &svg, &csv, &json_path] {
        manifest.output(p);
    }
    manifest.summary = Some(report);
    manifest.write(&out_dir.join("interpolate.manifest.json"))
}

/// Fits of C_s and C_K for one model.
struct ModelFits {
    model: String,
    c_s: RegressionResult,
    c_k: RegressionResult,
}

fn fit_records(model: &str, records: &[&SweepRecord], aggregate: bool) -> CliResult<ModelFits> {
    let design = |f: fn(&SweepRecord) -> f64| {
        let d = RegressionDesign::new(
            records
                .iter()
                .map(|r| (r.distance_std, r.length as f64, f(r)))
                .collect(),
        )?;
        if aggregate {
            d.aggregated()
        } else {
            Ok(d)
        }
    };
    Ok(ModelFits {
        model: model.to_string(),
        c_s: ols_fit(&design(|r| r.c_s_percent)?)?,
        c_k: ols_fit(&design(|r| r.c_k_percent)?)?,
    })
}

fn group_by_model(records: &[SweepRecord]) -> BTreeMap<String, Vec<&SweepRecord>> {
    let mut groups: BTreeMap<String, Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.model.clone()).or_default().push(r);
    }
    groups
}

/// Text report plus a JSON summary of every fit.
fn regression_report(fits: &[ModelFits], alpha: f64) -> (String, Value) {
    let mut columns: Vec<(String, &RegressionResult)> = Vec::new();
    for f in fits {
        columns.push((format!("{} C_s", f.model), &f.c_s));
        columns.push((format!("{} C_K", f.model), &f.c_k));
    }
    let refs: Vec<(&str, &RegressionResult)> =
        columns.iter().map(|(n, r)| (n.as_str(), *r)).collect();
    let mut text =
        String::from("Ordinary least squares: metric ~ distance + length + distance×length\n\n");
    text.push_str(&significance_table(&refs, alpha));
    text.push('\n');

    let geo = fits.iter().find(|f| f.model == "geometry");
    let hyb = fits.iter().find(|f| f.model == "hybrid");
    let mut comparison = Value::Null;
    if let (Some(g), Some(h)) = (geo, hyb) {
        let (gc, hc) = (g.c_k.distance().coefficient, h.c_k.distance().coefficient);
        let smaller = if hc.abs() < gc.abs() {
            "hybrid"
        } else {
            "geometry"
        };
        let (glo, ghi) = g.c_k.confidence_interval(1, 0.05);
        let (hlo, hhi) = h.c_k.confidence_interval(1, 0.05);
        let overlap = glo <= hhi && hlo <= ghi;
        let _ = writeln!(
            text,
            "\nC_K distance coefficient: geometry {gc:.4} (95% CI {glo:.4}..{ghi:.4}), hybrid {hc:.4} (95% CI {hlo:.4}..{hhi:.4})"
        );
        let _ = writeln!(text, "smaller |distance coefficient| for C_K: {smaller}");
        if overlap {
            let _ = writeln!(
                text,
                "WARNING: the 95% intervals of the two coefficients overlap"
            );
        }
        comparison = json!({
            "geometry": gc, "hybrid": hc, "smaller": smaller, "intervals_overlap": overlap,
        });
    }
    let fits_json: Map<String, Value> = fits
        .iter()
        .map(|f| {
            let term = |r: &RegressionResult| {
                json!({
                    "r_squared": r.r_squared,
                    "n_rows": r.n_rows,
                    "terms": latmorph_core::analysis::TERM_NAMES.iter().zip(&r.terms).map(|(n, t)| {
                        json!({"term": n, "coefficient": t.coefficient, "std_error": t.std_error, "t": t.t, "p": t.p})
                    }).collect::<Vec<_>>(),
                })
            };
            (f.model.clone(), json!({"c_s": term(&f.c_s), "c_k": term(&f.c_k)}))
        })
        .collect();
    (
        text,
        json!({"alpha": alpha, "fits": fits_json, "c_k_distance_comparison": comparison}),
    )
}

fn read_sweep_csv(path: &Path) -> CliResult<Vec<SweepRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let records =
        parse_sweep_csv(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(CliError::Io(format!(
            "{}: sweep CSV has no records",
            path.display()
        )));
    }
    Ok(records)
}

fn regress(args: &RegressArgs) -> CliResult<()> {
    if args.input.is_empty() || args.input.len() > 2 {
        return Err(CliError::usage("give one or two --input sweep CSVs"));
    }
    let alpha = args.alpha.unwrap_or(0.05);
    let mut records = Vec::new();
    let mut manifest = Manifest::new("regress", args, None)?;
    for p in &args.input {
        records.extend(read_sweep_csv(p)?);
        manifest.input(p)?;
    }
    let fits = group_by_model(&records)
        .into_iter()
        .map(|(m, rs)| fit_records(&m, &rs, args.aggregate))
        .collect::<CliResult<Vec<_>>>()?;
    let (text, summary) = regression_report(&fits, alpha);
    print!("{text}");
    if let Some(out) = &args.out {
        write_output(out, text.as_bytes())?;
        let json_path = with_suffix(out, ".json");
        write_output(
            &json_path,
            (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
        )?;
        manifest.output(out);
        manifest.output(&json_path);
        manifest.summary = Some(summary);
        manifest.write(&manifest_beside(out))?;
    }
    Ok(())
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let geo_path = required(&args.geometry, "geometry")?;
    let hyb_path = required(&args.hybrid, "hybrid")?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = resolve_seed(args.seed)?;
    let alpha = args.alpha.unwrap_or(0.05);
    let metrics = MetricOptions {
        threshold_smoothness: args.threshold_smoothness,
        threshold_stiffness: !args.grayscale_stiffness,
        pair_averaging: if args.ck_first_n_minus_3 {
            PairAveraging::FirstNMinus3
        } else {
            PairAveraging::AllPairs
        },
    };
    let cfg = sweep_config(
        &args.distances,
        &args.lengths,
        args.directions,
        seed,
        metrics,
    )?;
    let mut manifest = Manifest::new("report", args, Some(seed))?;
    let checkpoints = [load_checkpoint(geo_path)?, load_checkpoint(hyb_path)?];
    manifest.input(geo_path)?;
    manifest.input(hyb_path)?;
    for (ck, want) in checkpoints
        .iter()
        .zip([Architecture::Geometry, Architecture::Hybrid])
    {
        if ck.architecture() != want {
            return Err(CliError::Incompatible(format!(
                "expected a {want} checkpoint, found {}",
                ck.architecture()
            )));
        }
    }
    let mut summary = Map::new();
    if let Some(dp) = &args.data {
        let data = load_data(dp)?;
        manifest.input(dp)?;
        for ck in &checkpoints {
            check_compatible(ck, &data, dp)?;
            let (_, test) = split_dataset(&data, &ck.config.split)?;
            let rep = reconstruction_report(ck, &test)?;
            println!(
                "{}: test R² {:.4}, pixel accuracy {:.4}",
                ck.architecture(),
                rep.r_squared,
                rep.pixel_accuracy
            );
            summary.insert(
                format!("{}_reconstruction", ck.architecture()),
                serde_json::to_value(rep)?,
            );
            let latents = encode_latents(ck, &data)?;
            let pca = pca_project(&latents, 2)?;
            // Coloured by volume-fraction band.
            let mut by_band: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for (r, c) in data.records.iter().zip(&pca.coords) {
                let band = ((r.cell.volume_fraction() * 4.0) as usize).min(3);
                by_band.entry(band).or_default().push((c[0], c[1]));
            }
            let series: Vec<Series> = by_band
                .into_iter()
                .map(|(band, points)| Series {
                    label: format!("vf {:.2}-{:.2}", band as f64 / 4.0, (band + 1) as f64 / 4.0),
                    points,
                })
                .collect();
            let ratio = &pca.explained_variance_ratio;
            let svg = svg_chart(
                &series,
                &ChartLabels {
                    title: &format!("{} latent space, PCA projection", ck.architecture()),
                    x: &format!("PC1 ({:.1}% variance)", ratio[0] * 100.0),
                    y: &format!("PC2 ({:.1}% variance)", ratio[1] * 100.0),
                },
                Mark::Dots,
            );
            let p = out_dir.join(format!("latent-pca-{}.svg", ck.architecture()));
            write_output(&p, svg.as_bytes())?;
            manifest.output(&p);
            summary.insert(
                format!("{}_pca_explained_variance", ck.architecture()),
                json!(ratio),
            );
        }
    }
    let mut fits = Vec::new();
    for ck in &checkpoints {
        let out = sweep_and_write(ck, &cfg, &out_dir)?;
        for p in &out.paths {
            manifest.output(p);
        }
        let means = per_distance_means(&out.records);
        summary.insert(
            format!("{}_per_distance_means", ck.architecture()),
            json!(means),
        );
        let refs: Vec<&SweepRecord> = out.records.iter().collect();
        fits.push(fit_records(
            ck.architecture().name(),
            &refs,
            args.aggregate,
        )?);
    }
    let (text, reg) = regression_report(&fits, alpha);
    print!("{text}");
    let txt = out_dir.join("regression.txt");
    write_output(&txt, text.as_bytes())?;
    manifest.output(&txt);
    for f in &fits {
        for (metric, r) in [("cs", &f.c_s), ("ck", &f.c_k)] {
            let p = out_dir.join(format!("regression-{}-{metric}.csv", f.model));
            write_output(&p, regression_csv(r, alpha).as_bytes())?;
            manifest.output(&p);
        }
    }
    summary.insert("regression".into(), reg);
    manifest.summary = Some(Value::Object(summary));
    manifest.write(&out_dir.join("report.manifest.json"))
}
