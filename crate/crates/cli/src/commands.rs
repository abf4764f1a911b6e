use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use earseg::dataset::{self, Covariates, DatasetManifest, SampleRecord, Split, SynthConfig};
use earseg::evaluation::{self, AggregateReport, Criterion, MetricsRecord};
use earseg::network::{load_params, save_params};
use earseg::postprocess::{connected_components, Connectivity};
use earseg::training::{self, TrainConfig};
use earseg::{build_default_spec, derive_seed, pipeline, LabelMask, NetworkSpec};

use crate::config::RunConfig;

/// Seed streams owned by the command layer. Training derives its own streams
/// from the master seed.
const SEED_STREAM_SPLIT: u64 = 3;
const SEED_STREAM_SYNTH: u64 = 4;

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const COVARIATE_FILE: &str = "covariates.csv";
pub const BOXPLOT_FILE: &str = "boxplot.csv";
pub const REPORT_FILE: &str = "report.txt";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn network_spec(cfg: &RunConfig) -> Result<NetworkSpec> {
    let scale: f64 = cfg.get("scale")?;
    ensure!(scale > 0.0 && scale.is_finite(), "scale must be positive, got {scale}");
    Ok(build_default_spec(scale))
}

fn input_size(cfg: &RunConfig) -> Result<(usize, usize)> {
    let (w, h): (usize, usize) = (cfg.get("width")?, cfg.get("height")?);
    ensure!(w > 0 && h > 0, "width and height must be positive");
    Ok((w, h))
}

/// Resolves `subset=auto` to the split used by `role` when the dataset has one.
fn select(cfg: &RunConfig, records: Vec<SampleRecord>, has_split: bool, role: Split) -> Result<Vec<SampleRecord>> {
    let wanted = match cfg.raw("subset") {
        "all" => None,
        "auto" if !has_split => None,
        "auto" => Some(role),
        other => Some(other.parse::<Split>()?),
    };
    let Some(wanted) = wanted else {
        return Ok(records);
    };
    ensure!(has_split, "subset `{wanted}` requested but the dataset has no split.csv");
    let chosen: Vec<SampleRecord> = records.into_iter().filter(|r| r.split == Some(wanted)).collect();
    ensure!(!chosen.is_empty(), "the {wanted} split is empty");
    Ok(chosen)
}

fn load_dataset(cfg: &RunConfig, role: Split) -> Result<Vec<SampleRecord>> {
    let manifest = DatasetManifest::open(cfg.path("dataset")?)?;
    let has_split = manifest.split.is_some();
    let records = dataset::load(&manifest)?;
    select(cfg, records, has_split, role)
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let tc = TrainConfig {
        learning_rate: cfg.get("learning_rate")?,
        momentum: cfg.get("momentum")?,
        weight_decay: cfg.get("weight_decay")?,
        max_iterations: cfg.get("max_iterations")?,
        batch_size: cfg.get("batch_size")?,
        log_every: cfg.get("log_every")?,
        seed: cfg.get("seed")?,
        class_balance: cfg.get("class_balance")?,
    };
    tc.validate()?;
    Ok(tc)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let spec = network_spec(cfg)?;
    let tc = train_config(cfg)?;
    let (w, h) = input_size(cfg)?;
    let samples: Vec<SampleRecord> = load_dataset(cfg, Split::Train)?
        .iter()
        .map(|r| dataset::resize(r, w, h))
        .collect();
    cfg.echo_into(&out)?;
    eprintln!(
        "training on {} images at {w}×{h}, {} parameters",
        samples.len(),
        earseg::NetworkParams::<f32>::init(&spec, 0).parameter_count()
    );
    let (params, log) = training::train::<f32>(&spec, &samples, &tc, &mut |e| {
        eprintln!("iteration {} loss {:.6} accuracy {:.4}", e.iteration, e.loss, e.accuracy)
    })?;
    let weights = cfg.opt::<PathBuf>("weights")?.unwrap_or_else(|| out.join(WEIGHTS_FILE));
    save_params(&params, &weights)?;
    log.write_csv(create(&out.join(TRAIN_LOG_FILE))?)?;
    eprintln!("wrote {}", weights.display());
    Ok(())
}

fn id_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .with_context(|| format!("cannot derive an id from {}", path.display()))
}

pub fn infer(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let out = cfg.path("out")?;
    let spec = network_spec(cfg)?;
    let (w, h) = input_size(cfg)?;
    let connectivity: Connectivity = cfg.get("connectivity")?;
    let params = load_params::<f32>(cfg.path("weights")?, &spec)?;
    let images: Vec<(String, image::RgbImage)> = if inputs.is_empty() {
        load_dataset(cfg, Split::Test)?.into_iter().map(|r| (r.id, r.image)).collect()
    } else {
        let mut seen = BTreeSet::new();
        inputs
            .iter()
            .map(|p| {
                let id = id_of(p)?;
                ensure!(seen.insert(id.clone()), "duplicate input id `{id}`");
                let img = image::open(p).with_context(|| format!("cannot decode {}", p.display()))?;
                Ok((id, img.to_rgb8()))
            })
            .collect::<Result<_>>()?
    };
    cfg.echo_into(&out)?;
    let (raw_dir, mask_dir) = (out.join("raw"), out.join("masks"));
    fs::create_dir_all(&raw_dir)?;
    fs::create_dir_all(&mask_dir)?;
    for (id, img) in &images {
        let resized = if img.dimensions() == (w as u32, h as u32) {
            img.clone()
        } else {
            image::imageops::resize(img, w as u32, h as u32, image::imageops::FilterType::Triangle)
        };
        let det = pipeline::detect(&spec, &params, &resized, connectivity)?;
        let regions = connected_components(&det.cleaned, connectivity).region_count();
        ensure!(regions <= 2, "postprocessed mask of `{id}` has {regions} regions");
        ensure!(det.cleaned.is_subset_of(&det.raw), "postprocessed mask of `{id}` adds pixels");
        let (ow, oh) = (img.width() as usize, img.height() as usize);
        dataset::resize_mask(&det.raw, ow, oh).write_png(raw_dir.join(format!("{id}.png")))?;
        dataset::resize_mask(&det.cleaned, ow, oh).write_png(mask_dir.join(format!("{id}.png")))?;
    }
    eprintln!("segmented {} images into {}", images.len(), out.display());
    Ok(())
}

fn unmatched(ids: BTreeSet<String>) -> Result<()> {
    if ids.is_empty() {
        Ok(())
    } else {
        Err(earseg::Error::UnknownIds(ids.into_iter().collect()).into())
    }
}

fn write_report_files(out: &Path, records: &[MetricsRecord], report: &AggregateReport) -> Result<()> {
    evaluation::write_metrics_csv(records, create(&out.join(METRICS_FILE))?)?;
    evaluation::write_histogram_csv(report, create(&out.join(HISTOGRAM_FILE))?)?;
    evaluation::write_covariate_csv(report, create(&out.join(COVARIATE_FILE))?)?;
    evaluation::write_boxplot_csv(report, create(&out.join(BOXPLOT_FILE))?)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let connectivity: Connectivity = cfg.get("connectivity")?;
    let criterion: Criterion = cfg.get("criterion")?;
    let bins: usize = cfg.get("bins")?;
    ensure!(bins > 0, "bins must be positive");
    let manifest = DatasetManifest::open(cfg.path("dataset")?)?;
    let all_ids: BTreeSet<String> = manifest.entries.iter().map(|e| e.id.clone()).collect();
    let has_split = manifest.split.is_some();
    let gt = select(cfg, dataset::load(&manifest)?, has_split, Split::Test)?;

    let records: Vec<MetricsRecord> = match (cfg.opt::<PathBuf>("pred")?, cfg.opt::<PathBuf>("rects")?) {
        (Some(_), Some(_)) => bail!("set either `pred` or `rects`, not both"),
        (None, None) => bail!("one of `pred` or `rects` is required"),
        (Some(dir), None) => {
            ensure!(dir.is_dir(), "prediction directory {} not found", dir.display());
            let mut found = BTreeMap::new();
            for entry in fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                    found.insert(id_of(&p)?, p);
                }
            }
            let mut missing: BTreeSet<String> = found.keys().filter(|id| !all_ids.contains(*id)).cloned().collect();
            missing.extend(gt.iter().filter(|r| !found.contains_key(&r.id)).map(|r| r.id.clone()));
            unmatched(missing)?;
            gt.iter()
                .map(|r| {
                    let pred = LabelMask::read_png(&found[&r.id])?;
                    let metrics = evaluation::evaluate_masks(&r.mask, &pred)
                        .with_context(|| format!("prediction for `{}`", r.id))?;
                    Ok(MetricsRecord {
                        id: r.id.clone(),
                        metrics,
                    })
                })
                .collect::<Result<_>>()?
        }
        (None, Some(file)) => {
            let rects = evaluation::read_rects_csv(&file)?;
            unmatched(rects.keys().filter(|id| !all_ids.contains(*id)).cloned().collect())?;
            gt.iter()
                .map(|r| {
                    let truth = evaluation::gt_to_bounding_rects(&r.mask, connectivity);
                    let detected = rects.get(&r.id).map(Vec::as_slice).unwrap_or(&[]);
                    MetricsRecord {
                        id: r.id.clone(),
                        metrics: evaluation::evaluate_rect_detections(&truth, detected, r.mask.width(), r.mask.height()),
                    }
                })
                .collect()
        }
    };

    let covariates: BTreeMap<String, Covariates> = gt.iter().map(|r| (r.id.clone(), r.covariates.clone())).collect();
    let report = evaluation::aggregate(&records, Some(&covariates), bins)?;
    cfg.echo_into(&out)?;
    write_report_files(&out, &records, &report)?;
    let name = cfg.opt::<String>("name")?.unwrap_or_else(|| "method".into());
    let mut table = evaluation::format_table(&[(name.as_str(), &report)]);
    table.push_str(&detection_line(&records, criterion)?);
    fs::write(out.join(REPORT_FILE), &table)?;
    print!("{table}");
    Ok(())
}

fn detection_line(records: &[MetricsRecord], criterion: Criterion) -> Result<String> {
    let acc = evaluation::detection_accuracy(records, criterion)?;
    let rule = match criterion {
        Criterion::IouAtLeast(t) => format!("iou>={t}"),
        Criterion::OverlapAtLeast(t) => format!("overlap>={t}"),
    };
    Ok(format!("detection accuracy ({rule}): {:.2}%\n", 100.0 * acc))
}

/// Column label of a report input: `name=path`, else the file stem, else the
/// parent directory when the stem is the generic metrics file name.
fn column(arg: &str) -> Result<(String, PathBuf)> {
    if let Some((name, path)) = arg.split_once('=') {
        ensure!(!name.is_empty(), "empty column name in `{arg}`");
        return Ok((name.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let stem = id_of(&path)?;
    let name = if format!("{stem}.csv") == METRICS_FILE {
        path.canonicalize()
            .ok()
            .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or(stem)
    } else {
        stem
    };
    Ok((name, path))
}

pub fn report(cfg: &RunConfig, inputs: &[String]) -> Result<()> {
    let bins: usize = cfg.get("bins")?;
    let mut columns = Vec::with_capacity(inputs.len());
    for arg in inputs {
        let (name, path) = column(arg)?;
        let records = evaluation::read_metrics_csv(&path)?;
        let report = evaluation::aggregate(&records, None, bins).with_context(|| format!("{}", path.display()))?;
        columns.push((name, report));
    }
    let refs: Vec<(&str, &AggregateReport)> = columns.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let table = evaluation::format_table(&refs);
    if let Some(out) = cfg.opt::<PathBuf>("out")? {
        cfg.echo_into(&out)?;
        fs::write(out.join(REPORT_FILE), &table)?;
    }
    print!("{table}");
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let (width, height) = input_size(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let sc = SynthConfig {
        count: cfg.get("count")?,
        width,
        height,
        seed: derive_seed(seed, SEED_STREAM_SYNTH),
        blob_fraction: (cfg.get("blob_fraction_min")?, cfg.get("blob_fraction_max")?),
        two_blob_probability: cfg.get("two_blob_probability")?,
    };
    ensure!(sc.count > 0, "count must be positive");
    let mut records = dataset::generate_synthetic(&sc)?;
    let train_count = cfg
        .opt("train_count")?
        .unwrap_or_else(|| dataset::default_train_count(records.len()));
    dataset::apply_split(&mut records, train_count, derive_seed(seed, SEED_STREAM_SPLIT))?;
    dataset::save(&records, &out)?;
    cfg.echo_into(&out)?;
    eprintln!("wrote {} synthetic samples to {}", records.len(), out.display());
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<()> {
    let root = cfg.path("dataset")?;
    let manifest = DatasetManifest::open(&root)?;
    let ids: Vec<String> = manifest.entries.iter().map(|e| e.id.clone()).collect();
    let train_count = cfg
        .opt("train_count")?
        .unwrap_or_else(|| dataset::default_train_count(ids.len()));
    let seed: u64 = cfg.get("seed")?;
    let assignment = dataset::split(&ids, train_count, derive_seed(seed, SEED_STREAM_SPLIT))?;
    let out = cfg.opt::<PathBuf>("out")?.unwrap_or(root);
    cfg.echo_into(&out)?;
    dataset::write_split_csv(
        out.join(dataset::SPLIT_FILE),
        assignment.iter().map(|(id, s)| (id.as_str(), *s)),
    )?;
    eprintln!("{train_count} train / {} test", ids.len() - train_count);
    Ok(())
}
