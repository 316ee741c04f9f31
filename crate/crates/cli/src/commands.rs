use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use log::info;
use rayon::prelude::*;
use vein_origin::dataset::{
    default_profiles, generate_synthetic_dataset, merge_manifests, scan_directory, validate_manifest, DatasetManifest,
    SampleKind, SampleRecord,
};
use vein_origin::evaluate::{
    aggregate_by_sample, per_sensor_report, roc_csv, summary_table, Aggregation, EvalReport, PerSensorReport, ReportFormat,
    ReportMetadata, ScoreMatrix,
};
use vein_origin::model::{build_architecture, complexity_csv, complexity_table, complexity_text, ArchName, Network};
use vein_origin::preprocess::{
    dataset_stats, patch_count, preprocess_image, ClaheOrder, ClaheParams, PreprocessConfig, RoiParams, StatsTable,
};
use vein_origin::train::{
    load_checkpoint, load_patch_store, make_splits, predict_set, save_checkpoint, train_with, SplitAssignment, TrainConfig,
    TrainOverrides, DEFAULT_RATIOS,
};
use vein_origin::{Error, GrayImage, SensorClass};

use crate::args::*;
use crate::run_dir::RunDir;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ensure_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))
}

pub fn synth(a: &SynthArgs) -> Result<PathBuf> {
    ensure_dir(&a.out)?;
    let m = generate_synthetic_dataset(&default_profiles(), a.per_class, a.size, a.seed, &a.out)?;
    let path = a.out.join("manifest.json");
    m.save(&path)?;
    println!(
        "synthesised {} images ({} per sensor, {}x{}) -> {}",
        m.len(),
        a.per_class,
        a.size.0,
        a.size.1,
        path.display()
    );
    Ok(path)
}

pub fn ingest(a: &IngestArgs) -> Result<usize> {
    let outcome = scan_directory(&a.root, a.sensor, a.kind)?;
    for e in &outcome.errors {
        eprintln!("skipped {}: {}", e.path.display(), e.message);
    }
    let mut all = Vec::new();
    for p in &a.manifest {
        all.push(load_manifest(p)?);
    }
    all.push(outcome.manifest);
    let merged = merge_manifests(&all)?;
    let check = validate_manifest(&merged);
    if !check.valid {
        eprintln!(
            "validation: {} duplicate ids, {} missing files, {} dimension anomalies",
            check.duplicate_ids.len(),
            check.missing_files.len(),
            check.dimension_anomalies.len()
        );
    }
    ensure_parent(&a.out)?;
    merged.save(&a.out)?;
    let counts = merged.by_sensor();
    println!("{:<10} {:>7}", "Sensor", "Samples");
    for s in SensorClass::ALL {
        if let Some(r) = counts.get(&s) {
            println!("{:<10} {:>7}", s.name(), r.len());
        }
    }
    println!("manifest -> {}", a.out.display());
    Ok(outcome.errors.len() + usize::from(!check.valid))
}

fn stats_text(t: &StatsTable) -> String {
    let mut out = format!(
        "{:<10} {:>6} {:>9} {:>23} {:>26}\n",
        "Sensor", "Images", "Mean lum", "Luminance q1/med/q3", "Variance q1/med/q3"
    );
    for r in &t.rows {
        let l = &r.luminance;
        let v = &r.variance;
        out.push_str(&format!(
            "{:<10} {:>6} {:>9.2} {:>23} {:>26}\n",
            r.sensor.name(),
            r.images,
            r.mean_luminance,
            format!("{:.1}/{:.1}/{:.1}", l.q1, l.median, l.q3),
            format!("{:.1}/{:.1}/{:.1}", v.q1, v.median, v.q3)
        ));
    }
    out
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let table = dataset_stats(&load_manifest(&a.manifest)?)?;
    ensure_parent(&a.out)?;
    table.save_csv(&a.out)?;
    print!("{}", stats_text(&table));
    println!("stats -> {}", a.out.display());
    Ok(())
}

pub fn preprocess_config(o: &PreprocessOpts) -> Result<PreprocessConfig> {
    if !(o.clahe_clip.is_finite() && o.clahe_clip > 0.0) {
        return Err(Error::InvalidConfig(format!("--clahe-clip must be positive, got {}", o.clahe_clip)).into());
    }
    if o.patch == 0 {
        return Err(Error::InvalidConfig("--patch must be positive".into()).into());
    }
    let use_clahe = o.clahe || !o.no_clahe;
    Ok(PreprocessConfig {
        clahe: use_clahe.then_some(ClaheParams {
            clip_limit: o.clahe_clip,
            tile_grid: o.tile_grid,
        }),
        clahe_order: ClaheOrder::AfterRoi,
        roi: o.roi.then(RoiParams::default),
        resize: o.resize,
    })
}

/// Processes every image into `out_dir/<sample id>.png` and returns the new manifest.
pub fn preprocess_manifest(m: &DatasetManifest, cfg: &PreprocessConfig, patch: usize, out_dir: &Path) -> Result<DatasetManifest> {
    let kind_after = |k: SampleKind| if cfg.roi.is_some() { SampleKind::Roi } else { k };
    let records = m
        .records()
        .par_iter()
        .map(|r| -> Result<SampleRecord> {
            let img = GrayImage::load(&r.path).with_context(|| format!("loading {}", r.path.display()))?;
            let out = preprocess_image(&img, cfg).with_context(|| format!("preprocessing {}", r.sample_id))?;
            if patch_count(out.width(), out.height(), patch) == 0 {
                return Err(Error::TooSmall {
                    width: out.width(),
                    height: out.height(),
                    patch,
                }
                .into());
            }
            let path = out_dir.join(&r.sample_id).with_extension("png");
            ensure_parent(&path)?;
            out.save_png(&path)?;
            Ok(SampleRecord {
                sample_id: r.sample_id.clone(),
                sensor: r.sensor,
                path,
                kind: kind_after(r.kind),
                width: out.width(),
                height: out.height(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest::new(records, m.created_with_seed()))
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let cfg = preprocess_config(&a.opts)?;
    let m = load_manifest(&a.manifest)?;
    ensure_dir(&a.out)?;
    let out = preprocess_manifest(&m, &cfg, a.opts.patch, &a.out)?;
    let path = a.out.join("manifest.json");
    out.save(&path)?;
    let patches: usize = out.records().iter().map(|r| patch_count(r.width, r.height, a.opts.patch)).sum();
    println!("preprocessed {} images ({} patches of {}px) -> {}", out.len(), patches, a.opts.patch, path.display());
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let s = make_splits(&load_manifest(&a.manifest)?, DEFAULT_RATIOS, a.seed)?;
    ensure_parent(&a.out)?;
    s.save(&a.out)?;
    println!(
        "train {} / val {} / test {} samples -> {}",
        s.train_ids.len(),
        s.val_ids.len(),
        s.test_ids.len(),
        a.out.display()
    );
    Ok(())
}

pub fn params(a: &ParamsArgs) -> Result<()> {
    let names: Vec<&str> = match a.arch {
        Some(n) if !a.all => vec![n.as_str()],
        _ => ArchName::ALL.iter().map(|n| n.as_str()).collect(),
    };
    let rows = complexity_table(&names)?;
    print!("{}", complexity_text(&rows));
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        fs::write(out, complexity_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

/// Built-in defaults, then the config file, then flags; logs each key's origin.
pub fn resolve_train_config(arch: ArchName, o: &TrainOpts) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::for_arch(arch.as_str())?;
    let file = match &o.config {
        Some(p) => TrainOverrides::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainOverrides::default(),
    };
    let flags = TrainOverrides {
        seed: o.seed,
        max_epochs: o.epochs,
        batch_size: o.batch_size,
        learning_rate: o.learning_rate,
        ..Default::default()
    };
    cfg.apply(&file);
    cfg.apply(&flags);
    cfg.validate()?;
    let (file_v, flag_v) = (serde_json::to_value(&file)?, serde_json::to_value(&flags)?);
    for line in cfg.to_toml().lines() {
        let key = line.split('=').next().unwrap_or("").trim();
        let origin = if !flag_v[key].is_null() {
            "flag"
        } else if !file_v[key].is_null() {
            "config file"
        } else {
            "default"
        };
        info!("train config: {line} ({origin})");
    }
    Ok(cfg)
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub config: PathBuf,
}

pub fn train_to(
    arch: ArchName,
    manifest: &DatasetManifest,
    splits: &SplitAssignment,
    cfg: &TrainConfig,
    patch: usize,
    checkpoint: PathBuf,
    report_dir: &Path,
) -> Result<TrainOutputs> {
    let store = load_patch_store(manifest, None, patch)?;
    let graph = build_architecture(arch.as_str(), SensorClass::COUNT, (patch, patch, 1))?;
    info!("training {} on {} samples ({} patches total)", arch.label(), splits.train_ids.len(), store.patch_total());
    let run = train_with(&graph, splits, &store, cfg, &mut |m| {
        info!(
            "epoch {:>3}: train_loss {:.5} train_acc {:.4} val_loss {} val_acc {}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.val_loss.map_or("-".into(), |v| format!("{v:.5}")),
            m.val_acc.map_or("-".into(), |v| format!("{v:.4}"))
        )
    })?;
    ensure_parent(&checkpoint)?;
    ensure_dir(report_dir)?;
    save_checkpoint(&run.network, &checkpoint)?;
    let history = report_dir.join("history.csv");
    run.save_history(&history)?;
    let config = report_dir.join("train_config.toml");
    fs::write(&config, cfg.to_toml()).with_context(|| format!("writing {}", config.display()))?;
    match run.best_epoch {
        Some(e) => println!(
            "trained {} for {} epochs{}, kept epoch {e} -> {}",
            arch.label(),
            run.history.len(),
            if run.stopped_early { " (early stop)" } else { "" },
            checkpoint.display()
        ),
        None => println!("no epochs run; saved initial weights -> {}", checkpoint.display()),
    }
    Ok(TrainOutputs {
        checkpoint,
        history,
        config,
    })
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(a.arch, &a.train)?;
    let manifest = load_manifest(&a.manifest)?;
    let splits = SplitAssignment::load(&a.splits).with_context(|| format!("reading splits {}", a.splits.display()))?;
    train_to(a.arch, &manifest, &splits, &cfg, a.patch, a.out.join("model.ckpt"), &a.out)?;
    Ok(())
}

fn data_kind(m: &DatasetManifest) -> Option<SampleKind> {
    let first = m.records().first()?.kind;
    m.records().iter().all(|r| r.kind == first).then_some(first)
}

#[allow(clippy::too_many_arguments)]
pub fn eval_to(
    net: &Network<f32>,
    manifest: &DatasetManifest,
    splits: &SplitAssignment,
    part: Part,
    agg: Aggregation,
    patch: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let ids = match part {
        Part::Train => &splits.train_ids,
        Part::Val => &splits.val_ids,
        Part::Test => &splits.test_ids,
    };
    let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    let subset = DatasetManifest::new(
        manifest.records().iter().filter(|r| keep.contains(r.sample_id.as_str())).cloned().collect(),
        manifest.created_with_seed(),
    );
    let store = load_patch_store(&subset, None, patch)?;
    let set = store.gather(ids)?;
    if set.is_empty() {
        return Err(Error::InvalidInput(format!("the {part:?} split has no patches")).into());
    }
    let probs = predict_set(net, &set, 64)?;
    let mut scores = ScoreMatrix::from_probabilities(&probs, set.labels().to_vec())?;
    if agg == Aggregation::SampleVote {
        scores = aggregate_by_sample(&scores, set.sources())?.0;
    }
    let arch = Some(net.architecture().name.clone());
    let kind = data_kind(manifest);
    let meta = ReportMetadata {
        arch: arch.clone(),
        seed,
        data_kind: kind,
        ..Default::default()
    };
    let report = EvalReport::from_scores(&scores, agg, meta)?;
    let sensors = per_sensor_report(&scores, arch, kind)?;
    ensure_dir(out)?;
    let mut files = Vec::new();
    for (name, fmt) in [("eval_report.json", ReportFormat::Json), ("eval_report.csv", ReportFormat::Csv)] {
        let p = out.join(name);
        report.emit(fmt, &p)?;
        files.push(p);
    }
    for (name, fmt) in [("per_sensor.json", ReportFormat::Json), ("per_sensor.csv", ReportFormat::Csv)] {
        let p = out.join(name);
        sensors.emit(fmt, &p)?;
        files.push(p);
    }
    let roc = out.join("roc.csv");
    fs::write(&roc, roc_csv(&scores, &SensorClass::order())).with_context(|| format!("writing {}", roc.display()))?;
    files.push(roc);
    print_summary(&report, Some(&sensors));
    Ok(files)
}

pub fn print_summary(report: &EvalReport, sensors: Option<&PerSensorReport>) {
    print!("{}", summary_table(report));
    if let Some(s) = sensors {
        println!();
        print!("{}", s.table());
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let net = load_checkpoint(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let manifest = load_manifest(&a.manifest)?;
    let splits = SplitAssignment::load(&a.splits).with_context(|| format!("reading splits {}", a.splits.display()))?;
    eval_to(&net, &manifest, &splits, a.part, a.agg, a.patch, Some(splits.seed), &a.out)?;
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let r = EvalReport::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let s = match &a.per_sensor {
        Some(p) => Some(PerSensorReport::load(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    print_summary(&r, s.as_ref());
    Ok(())
}

fn timestamp_name() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("run-{secs}")
}

pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    let seed = a.train.seed.unwrap_or(0);
    let mut train_opts = a.train.clone();
    train_opts.seed = Some(seed);
    let cfg = resolve_train_config(a.arch, &train_opts)?;
    let pre = preprocess_config(&a.preprocess)?;
    let name = a.name.clone().unwrap_or_else(timestamp_name);
    let mut run = RunDir::create(a.out.join(name))?;
    info!("run directory {}", run.root().display());

    let raw_dir = run.root().join("data");
    ensure_dir(&raw_dir)?;
    let raw = generate_synthetic_dataset(&default_profiles(), a.per_class, a.size, seed, &raw_dir)?;
    let raw_path = run.path("manifests", "raw.json");
    raw.save(&raw_path)?;
    run.produced(raw_path);
    println!("synthesised {} images", raw.len());

    let stats_path = run.path("reports", "stats.csv");
    dataset_stats(&raw)?.save_csv(&stats_path)?;
    run.produced(stats_path);

    let processed = preprocess_manifest(&raw, &pre, a.preprocess.patch, &run.root().join("patches"))?;
    let processed_path = run.path("manifests", "preprocessed.json");
    processed.save(&processed_path)?;
    run.produced(processed_path);

    let splits = make_splits(&processed, DEFAULT_RATIOS, seed)?;
    let splits_path = run.path("manifests", "splits.json");
    splits.save(&splits_path)?;
    run.produced(splits_path);
    println!(
        "split train {} / val {} / test {}",
        splits.train_ids.len(),
        splits.val_ids.len(),
        splits.test_ids.len()
    );

    let reports = run.root().join("reports");
    let t = train_to(
        a.arch,
        &processed,
        &splits,
        &cfg,
        a.preprocess.patch,
        run.path("checkpoints", "model.ckpt"),
        &reports,
    )?;
    let net = load_checkpoint(&t.checkpoint)?;
    for p in [t.checkpoint, t.history, t.config] {
        run.produced(p);
    }
    let e = eval_to(&net, &processed, &splits, Part::Test, a.agg, a.preprocess.patch, Some(seed), &reports)?;
    for p in e {
        run.produced(p);
    }
    let listing = run.finish()?;
    println!("artifacts listed in {}", listing.display());
    Ok(())
}
