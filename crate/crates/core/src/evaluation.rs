//! Pixel-wise detection metrics, their aggregation over a test set, and the
//! rectangle-detector comparison protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{Covariates, COVARIATE_FACTORS};
use crate::error::{Error, Result};
use crate::mask::{BoundingBox, LabelMask};
use crate::postprocess::{connected_components, Connectivity};

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// Pixel tallies of one ground-truth/prediction pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn all(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_pos: self.true_pos + o.true_pos,
            false_pos: self.false_pos + o.false_pos,
            false_neg: self.false_neg + o.false_neg,
            true_neg: self.true_neg + o.true_neg,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub overlap: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["accuracy", "iou", "precision", "recall", "overlap"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.iou, self.precision, self.recall, self.overlap]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub id: String,
    pub metrics: Metrics,
}

pub fn confusion(gt: &LabelMask, pred: &LabelMask) -> Result<ConfusionCounts> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::Dimensions(format!(
            "ground truth is {}×{}, prediction is {}×{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    // index = 2·gt + pred
    let mut tally = [0u64; 4];
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        tally[(2 * g + p) as usize] += 1;
    }
    Ok(ConfusionCounts {
        true_neg: tally[0],
        false_pos: tally[1],
        false_neg: tally[2],
        true_pos: tally[3],
    })
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, IoU, precision, recall and overlap from confusion counts.
///
/// Zero denominators give 0, except IoU and overlap when neither mask has an
/// ear pixel: both masks agree that no ear exists, which scores 1.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let (tp, fp, fneg) = (c.true_pos, c.false_pos, c.false_neg);
    Metrics {
        accuracy: ratio(tp + c.true_neg, c.all(), 0.0),
        iou: ratio(tp, tp + fp + fneg, 1.0),
        precision: ratio(tp, tp + fp, 0.0),
        recall: ratio(tp, tp + fneg, 0.0),
        overlap: ratio(2 * tp, (tp + fneg) + (tp + fp), 1.0),
    }
}

/// `2|G∩R| / (|G| + |R|)`; 1 when both masks are empty.
pub fn overlap(gt: &LabelMask, pred: &LabelMask) -> Result<f64> {
    let c = confusion(gt, pred)?;
    let (g, r) = (c.true_pos + c.false_neg, c.true_pos + c.false_pos);
    Ok(ratio(2 * c.true_pos, g + r, 1.0))
}

pub fn evaluate_masks(gt: &LabelMask, pred: &LabelMask) -> Result<Metrics> {
    Ok(metrics(&confusion(gt, pred)?))
}

/// When a single image counts as a correct detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    IouAtLeast(f64),
    OverlapAtLeast(f64),
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::OverlapAtLeast(0.5)
    }
}

impl Criterion {
    pub fn from_parts(kind: &str, threshold: f64) -> Result<Self> {
        match kind.trim() {
            "iou" => Ok(Criterion::IouAtLeast(threshold)),
            "overlap" => Ok(Criterion::OverlapAtLeast(threshold)),
            other => Err(Error::InvalidConfig(format!("criterion must be `iou` or `overlap`, got `{other}`"))),
        }
    }

    pub fn accepts(&self, m: &Metrics) -> bool {
        match *self {
            Criterion::IouAtLeast(t) => m.iou >= t,
            Criterion::OverlapAtLeast(t) => m.overlap >= t,
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    /// Parses `iou>=0.5` or `overlap>=0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, t) = s
            .split_once(">=")
            .ok_or_else(|| Error::InvalidConfig(format!("criterion `{s}` is not of the form metric>=threshold")))?;
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad criterion threshold in `{s}`")))?;
        Criterion::from_parts(kind, t)
    }
}

/// Fraction of images whose record satisfies `criterion`.
pub fn detection_accuracy(records: &[MetricsRecord], criterion: Criterion) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let hits = records.iter().filter(|r| criterion.accepts(&r.metrics)).count();
    Ok(hits as f64 / records.len() as f64)
}

/// One tight box per connected ear region, in region-id order.
pub fn gt_to_bounding_rects(gt: &LabelMask, connectivity: Connectivity) -> Vec<BoundingBox> {
    connected_components(gt, connectivity)
        .regions()
        .iter()
        .map(|r| r.bbox)
        .collect()
}

pub fn rasterize_rects(rects: &[BoundingBox], width: usize, height: usize) -> LabelMask {
    let mut m = LabelMask::new(width, height);
    for r in rects {
        m.fill_rect(r);
    }
    m
}

/// Scores rectangle detections against rectangle ground truth by
/// rasterizing both sets and applying the pixel-wise metrics.
pub fn evaluate_rect_detections(
    gt_rects: &[BoundingBox],
    detected: &[BoundingBox],
    width: usize,
    height: usize,
) -> Metrics {
    let gt = rasterize_rects(gt_rects, width, height);
    let det = rasterize_rects(detected, width, height);
    metrics(&confusion(&gt, &det).expect("same size by construction"))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for fewer than two values.
    pub std: f64,
}

/// Mean and sample standard deviation. Values are summed in sorted order so
/// the result does not depend on input order.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary::default();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
        dev.sort_by(f64::total_cmp);
        (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { count: n, mean, std }
}

/// Counts per uniform bin over [0, 1]; 1.0 falls in the last bin and values
/// outside the range are clamped.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Boxplot statistics with linearly interpolated quartiles and whiskers at
/// the most extreme values within 1.5·IQR of the box.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    if values.is_empty() {
        return BoxStats::default();
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    BoxStats {
        count: s.len(),
        min: s[0],
        q1,
        median,
        q3,
        max: s[s.len() - 1],
        lower_whisker: *s.iter().find(|&&v| v >= lo_fence).unwrap(),
        upper_whisker: *s.iter().rev().find(|&&v| v <= hi_fence).unwrap(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub name: &'static str,
    pub summary: Summary,
    pub histogram: Vec<usize>,
}

/// IoU values of the images sharing one covariate label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGroup {
    pub label: String,
    /// `(image id, iou)` sorted by id.
    pub values: Vec<(String, f64)>,
    pub stats: BoxStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateBreakdown {
    pub factor: &'static str,
    pub groups: Vec<LabelGroup>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub count: usize,
    /// In [`Metrics::NAMES`] order.
    pub metrics: Vec<MetricSummary>,
    pub covariates: Vec<CovariateBreakdown>,
}

impl AggregateReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Per-metric mean ± std and histograms over `records`, plus per-covariate
/// IoU groups when annotations are given. Every record id must appear in the
/// annotations.
pub fn aggregate(
    records: &[MetricsRecord],
    covariates: Option<&BTreeMap<String, Covariates>>,
    bins: usize,
) -> Result<AggregateReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let metrics = Metrics::NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let vals: Vec<f64> = records.iter().map(|r| r.metrics.values()[k]).collect();
            MetricSummary {
                name,
                summary: summarize(&vals),
                histogram: histogram(&vals, bins),
            }
        })
        .collect();

    let mut breakdowns = Vec::new();
    if let Some(cov) = covariates {
        let missing: BTreeSet<String> = records
            .iter()
            .filter(|r| !cov.contains_key(&r.id))
            .map(|r| r.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnknownIds(missing.into_iter().collect()));
        }
        for factor in COVARIATE_FACTORS {
            let mut groups: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
            for r in records {
                let label = cov[&r.id].get(factor).expect("known factor");
                groups.entry(label).or_default().push((r.id.clone(), r.metrics.iou));
            }
            breakdowns.push(CovariateBreakdown {
                factor,
                groups: groups
                    .into_iter()
                    .map(|(label, mut values)| {
                        values.sort_by(|a, b| a.0.cmp(&b.0));
                        let ious: Vec<f64> = values.iter().map(|v| v.1).collect();
                        LabelGroup {
                            label: label.to_string(),
                            stats: box_stats(&ious),
                            values,
                        }
                    })
                    .collect(),
            });
        }
    }
    Ok(AggregateReport {
        count: records.len(),
        metrics,
        covariates: breakdowns,
    })
}

const TABLE_ROWS: [(&str, &str); 4] = [
    ("accuracy", "Accuracy [%]"),
    ("iou", "IoU [%]"),
    ("precision", "Precision [%]"),
    ("recall", "Recall [%]"),
];

/// Side-by-side `mean±std` table in percent, one column per method.
pub fn format_table(columns: &[(&str, &AggregateReport)]) -> String {
    let cells: Vec<Vec<String>> = TABLE_ROWS
        .iter()
        .map(|(key, _)| {
            columns
                .iter()
                .map(|(_, rep)| {
                    let s = rep.metric(key).map(|m| m.summary).unwrap_or_default();
                    format!("{:.2}±{:.2}", 100.0 * s.mean, 100.0 * s.std)
                })
                .collect()
        })
        .collect();
    let label_w = TABLE_ROWS.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let col_w: Vec<usize> = (0..columns.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].chars().count())
                .chain(std::iter::once(columns[c].0.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "");
    for ((name, _), w) in columns.iter().zip(&col_w) {
        let _ = write!(out, "  {:>w$}", name, w = w);
    }
    out.push('\n');
    for ((_, label), row) in TABLE_ROWS.iter().zip(&cells) {
        let _ = write!(out, "{label:label_w$}");
        for (cell, w) in row.iter().zip(&col_w) {
            let pad = w.saturating_sub(cell.chars().count());
            let _ = write!(out, "  {}{}", " ".repeat(pad), cell);
        }
        out.push('\n');
    }
    if let Some((_, first)) = columns.first() {
        let _ = writeln!(out, "(n = {})", first.count);
    }
    out
}

// ---------------------------------------------------------------------------
// CSV surfaces

pub fn write_metrics_csv<W: io::Write>(records: &[MetricsRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["id", "accuracy", "iou", "precision", "recall", "overlap"])?;
    for r in records {
        let m = &r.metrics;
        wr.write_record([
            r.id.clone(),
            m.accuracy.to_string(),
            m.iou.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.overlap.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn malformed(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads rows of a CSV with the given header, reporting malformed rows with
/// their line number.
pub(crate) fn read_csv_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let found: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(malformed(path, 1, format!("expected header `{}`, found `{}`", header.join(","), found.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(malformed(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn parse_field<T: FromStr>(path: &Path, line: u64, name: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| malformed(path, line, format!("bad {name} value `{v}`")))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    read_csv_rows(path, &["id", "accuracy", "iou", "precision", "recall", "overlap"])?
        .into_iter()
        .map(|(line, f)| {
            let mut vals = [0.0; 5];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = parse_field(path, line, Metrics::NAMES[k], &f[k + 1])?;
                if !(0.0..=1.0).contains(v) {
                    return Err(malformed(path, line, format!("{} = {v} outside [0, 1]", Metrics::NAMES[k])));
                }
            }
            Ok(MetricsRecord {
                id: f[0].clone(),
                metrics: Metrics {
                    accuracy: vals[0],
                    iou: vals[1],
                    precision: vals[2],
                    recall: vals[3],
                    overlap: vals[4],
                },
            })
        })
        .collect()
}

/// Reads `id,left,top,width,height`; ids may repeat.
pub fn read_rects_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<BoundingBox>>> {
    let path = path.as_ref();
    let mut out: BTreeMap<String, Vec<BoundingBox>> = BTreeMap::new();
    for (line, f) in read_csv_rows(path, &["id", "left", "top", "width", "height"])? {
        let rect = BoundingBox::new(
            parse_field(path, line, "left", &f[1])?,
            parse_field(path, line, "top", &f[2])?,
            parse_field(path, line, "width", &f[3])?,
            parse_field(path, line, "height", &f[4])?,
        );
        if rect.width == 0 || rect.height == 0 {
            return Err(malformed(path, line, "rectangle width and height must be ≥ 1"));
        }
        out.entry(f[0].clone()).or_default().push(rect);
    }
    Ok(out)
}

pub fn write_rects_csv<W: io::Write>(rects: &BTreeMap<String, Vec<BoundingBox>>, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["id", "left", "top", "width", "height"])?;
    for (id, list) in rects {
        for r in list {
            wr.write_record([
                id.clone(),
                r.left.to_string(),
                r.top.to_string(),
                r.width.to_string(),
                r.height.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// `metric,bin_start,bin_end,count`
pub fn write_histogram_csv<W: io::Write>(report: &AggregateReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "bin_start", "bin_end", "count"])?;
    for m in &report.metrics {
        let bins = m.histogram.len();
        for (b, count) in m.histogram.iter().enumerate() {
            wr.write_record([
                m.name.to_string(),
                (b as f64 / bins as f64).to_string(),
                ((b + 1) as f64 / bins as f64).to_string(),
                count.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Raw values as `factor,label,id,iou`.
pub fn write_covariate_csv<W: io::Write>(report: &AggregateReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["factor", "label", "id", "iou"])?;
    for b in &report.covariates {
        for g in &b.groups {
            for (id, v) in &g.values {
                wr.write_record([b.factor, &g.label, id, &v.to_string()])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Boxplot statistics as `factor,label,count,min,q1,median,q3,max,lower_whisker,upper_whisker`.
pub fn write_boxplot_csv<W: io::Write>(report: &AggregateReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "factor",
        "label",
        "count",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "lower_whisker",
        "upper_whisker",
    ])?;
    for b in &report.covariates {
        for g in &b.groups {
            let s = &g.stats;
            let mut row = vec![b.factor.to_string(), g.label.clone(), s.count.to_string()];
            row.extend(
                [s.min, s.q1, s.median, s.q3, s.max, s.lower_whisker, s.upper_whisker]
                    .iter()
                    .map(f64::to_string),
            );
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}
