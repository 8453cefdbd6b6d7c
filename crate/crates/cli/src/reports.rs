//! Report artifacts: a per-run bundle directory holding machine-readable
//! JSON, CSV/markdown tables, and PNG figures.
//!
//! The JSON artifact is the source of truth: every table and figure is
//! rendered from it by a pure function, so [`rerender`] reproduces the CSV
//! byte-for-byte. Nothing here computes a metric — emitters only lay out
//! values produced upstream (projection coordinates aside, which are views
//! of the embeddings by construction).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Cursor, Read as _};
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stereoprobe_core::corpus::Category;
use stereoprobe_core::scoring::reference::COLUMN_ORDER;
use stereoprobe_core::scoring::BiasReport;
use stereoprobe_core::trainer::{CellOutcome, SweepCell};

use crate::tsne::{self, TsneConfig, TsneError};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no records to render")]
    NoRecords,
    #[error("{labels} labels for {points} points")]
    LabelMismatch { labels: usize, points: usize },
    #[error("bundle has no artifact named `{0}`")]
    MissingArtifact(String),
    #[error(transparent)]
    Projection(#[from] TsneError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact (de)serialization failure: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv rendering failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("figure encoding failure: {0}")]
    Figure(String),
}

/// Provenance block written to `json/meta.json`: enough to re-run the
/// pipeline that produced the bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub created_utc: String,
    pub generator: String,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub corpus_sha256: Option<String>,
    #[serde(default)]
    pub configs: serde_json::Value,
}

impl RunMeta {
    pub fn new(run_id: impl Into<String>) -> RunMeta {
        RunMeta {
            run_id: run_id.into(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            generator: concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION")).to_string(),
            seeds: BTreeMap::new(),
            corpus_sha256: None,
            configs: serde_json::Value::Null,
        }
    }
}

/// Hex SHA-256 of a file, for pinning corpus identity into [`RunMeta`].
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// One run's output directory: `{root}/{run_id}/{tables,figures,json}`.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    run_id: String,
    dir: PathBuf,
}

impl ReportBundle {
    /// Create (or reuse) the bundle layout under `root`.
    pub fn create(root: &Path, run_id: &str) -> std::io::Result<ReportBundle> {
        let dir = root.join(run_id);
        for sub in ["tables", "figures", "json"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        Ok(ReportBundle {
            run_id: run_id.to_string(),
            dir,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn table_path(&self, name: &str, ext: &str) -> PathBuf {
        self.dir.join("tables").join(format!("{name}.{ext}"))
    }

    pub fn figure_path(&self, name: &str) -> PathBuf {
        self.dir.join("figures").join(format!("{name}.png"))
    }

    pub fn json_path(&self, name: &str) -> PathBuf {
        self.dir.join("json").join(format!("{name}.json"))
    }

    pub fn write_meta(&self, meta: &RunMeta) -> Result<(), ReportError> {
        fs::write(
            self.json_path("meta"),
            serde_json::to_string_pretty(meta)?,
        )?;
        Ok(())
    }
}

/// Everything a bundle knows how to render, tagged for round-tripping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Tsne(TsneArtifact),
    SweepHeatmap(HeatmapArtifact),
    BiasTable(BiasTableArtifact),
}

/// A labeled 2-D projection of one embedding set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsneArtifact {
    pub name: String,
    pub config: TsneConfig,
    pub labels: Vec<String>,
    pub coordinates: Vec<[f64; 2]>,
    pub kl_divergence: f64,
}

/// One sweep cell's spot in the hyperparameter × epochs grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub loss: String,
    /// Temperature for the softmax/sigmoid losses, margin for the hinge ones.
    pub parameter: f64,
    pub epochs: usize,
    pub run_id: Option<String>,
    /// Maximum validation Δsim over the run's epochs; `None` for failures.
    pub max_validation_delta_sim: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapArtifact {
    pub name: String,
    /// Grid rows, sorted: one per distinct (loss, parameter).
    pub rows: Vec<(String, f64)>,
    /// Grid columns, sorted: one per distinct epoch budget.
    pub cols: Vec<usize>,
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapArtifact {
    /// (rows, columns) of the rendered grid.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    fn cell(&self, row: &(String, f64), col: usize) -> Option<&HeatmapCell> {
        self.cells
            .iter()
            .find(|c| c.loss == row.0 && c.parameter == row.1 && c.epochs == col)
    }
}

/// Which score the table's second sub-row shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableScore {
    #[default]
    BiasScore,
    KlScore,
}

impl TableScore {
    fn metric_name(self) -> &'static str {
        match self {
            TableScore::BiasScore => "bias_score",
            TableScore::KlScore => "kl_score",
        }
    }

    fn decimals(self) -> usize {
        match self {
            TableScore::BiasScore => 3,
            TableScore::KlScore => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasTableRow {
    pub model: String,
    pub report: BiasReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasTableArtifact {
    pub name: String,
    pub score: TableScore,
    pub models: Vec<BiasTableRow>,
}

/// Project labeled embeddings and write `json/{name}.json`,
/// `tables/{name}.csv`, and `figures/{name}.png`.
pub fn emit_tsne(
    bundle: &ReportBundle,
    name: &str,
    labels: &[String],
    points: &[Vec<f64>],
    config: &TsneConfig,
) -> Result<TsneArtifact, ReportError> {
    if labels.len() != points.len() {
        return Err(ReportError::LabelMismatch {
            labels: labels.len(),
            points: points.len(),
        });
    }
    let embedding = tsne::project(points, config)?;
    let artifact = TsneArtifact {
        name: name.to_string(),
        config: *config,
        labels: labels.to_vec(),
        coordinates: embedding.coordinates,
        kl_divergence: embedding.kl_divergence,
    };
    write_artifact(bundle, name, &Artifact::Tsne(artifact.clone()))?;
    Ok(artifact)
}

/// Lay sweep outcomes onto a hyperparameter × epochs grid and write the
/// bundle files. Completed cells carry their run's maximum validation Δsim;
/// failed cells are kept, valueless, with the failure reason.
pub fn emit_sweep_heatmap(
    bundle: &ReportBundle,
    name: &str,
    sweep: &[SweepCell],
) -> Result<HeatmapArtifact, ReportError> {
    if sweep.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let mut by_key: BTreeMap<(String, u64, usize), HeatmapCell> = BTreeMap::new();
    for cell in sweep {
        let kind = cell.config.loss.kind;
        let parameter = if kind.uses_temperature() {
            cell.config.loss.temperature
        } else {
            cell.config.loss.margin
        };
        let rendered = match &cell.outcome {
            CellOutcome::Completed { record } => HeatmapCell {
                loss: kind.to_string(),
                parameter,
                epochs: cell.config.max_epochs,
                run_id: Some(record.run_id.clone()),
                max_validation_delta_sim: record
                    .epochs
                    .iter()
                    .map(|m| m.validation_delta_sim)
                    .fold(None, |acc: Option<f64>, v| {
                        Some(acc.map_or(v, |a| a.max(v)))
                    }),
                failure: None,
            },
            CellOutcome::Failed { reason } => HeatmapCell {
                loss: kind.to_string(),
                parameter,
                epochs: cell.config.max_epochs,
                run_id: None,
                max_validation_delta_sim: None,
                failure: Some(reason.clone()),
            },
        };
        let key = (rendered.loss.clone(), parameter.to_bits(), rendered.epochs);
        if by_key.insert(key, rendered).is_some() {
            log::warn!(
                "duplicate sweep cell for {} parameter {parameter} epochs {}; keeping the last",
                kind,
                cell.config.max_epochs
            );
        }
    }
    let cells: Vec<HeatmapCell> = by_key.into_values().collect();
    let mut rows: Vec<(String, f64)> = cells
        .iter()
        .map(|c| (c.loss.clone(), c.parameter))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    rows.dedup();
    let cols: BTreeSet<usize> = cells.iter().map(|c| c.epochs).collect();
    let artifact = HeatmapArtifact {
        name: name.to_string(),
        rows,
        cols: cols.into_iter().collect(),
        cells,
    };
    write_artifact(bundle, name, &Artifact::SweepHeatmap(artifact.clone()))?;
    Ok(artifact)
}

/// Write the per-model scoring table (markdown + CSV + JSON): two sub-rows
/// per model (stereotype probability, then the chosen score), columns per
/// category plus Overall, lowest score per column bolded in the markdown.
pub fn emit_bias_table(
    bundle: &ReportBundle,
    name: &str,
    models: &[(String, BiasReport)],
    score: TableScore,
) -> Result<BiasTableArtifact, ReportError> {
    if models.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let artifact = BiasTableArtifact {
        name: name.to_string(),
        score,
        models: models
            .iter()
            .map(|(model, report)| BiasTableRow {
                model: model.clone(),
                report: report.clone(),
            })
            .collect(),
    };
    write_artifact(bundle, name, &Artifact::BiasTable(artifact.clone()))?;
    Ok(artifact)
}

/// Write an artifact's JSON plus every table/figure view derived from it.
fn write_artifact(bundle: &ReportBundle, name: &str, artifact: &Artifact) -> Result<(), ReportError> {
    fs::write(
        bundle.json_path(name),
        serde_json::to_string_pretty(artifact)?,
    )?;
    render_views(bundle, name, artifact)
}

fn render_views(bundle: &ReportBundle, name: &str, artifact: &Artifact) -> Result<(), ReportError> {
    match artifact {
        Artifact::Tsne(a) => {
            fs::write(bundle.table_path(name, "csv"), render_tsne_csv(a)?)?;
            fs::write(bundle.figure_path(name), png_bytes(&render_tsne_png(a))?)?;
        }
        Artifact::SweepHeatmap(a) => {
            fs::write(bundle.table_path(name, "csv"), render_heatmap_csv(a)?)?;
            fs::write(bundle.figure_path(name), png_bytes(&render_heatmap_png(a))?)?;
        }
        Artifact::BiasTable(a) => {
            fs::write(bundle.table_path(name, "csv"), render_bias_table_csv(a)?)?;
            fs::write(bundle.table_path(name, "md"), render_bias_table_markdown(a))?;
        }
    }
    Ok(())
}

/// Re-render every view of a previously emitted artifact from its JSON alone.
/// Output bytes match the original emission exactly for the CSV/markdown
/// views (and for the PNG, which carries no timestamps).
pub fn rerender(bundle: &ReportBundle, name: &str) -> Result<Artifact, ReportError> {
    let path = bundle.json_path(name);
    if !path.exists() {
        return Err(ReportError::MissingArtifact(name.to_string()));
    }
    let artifact: Artifact = serde_json::from_str(&fs::read_to_string(path)?)?;
    render_views(bundle, name, &artifact)?;
    Ok(artifact)
}

/// Shortest round-trip decimal form, so CSV cells parse back to the exact
/// JSON value.
fn full(v: f64) -> String {
    format!("{v}")
}

pub fn render_tsne_csv(artifact: &TsneArtifact) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["label", "x", "y"])?;
    for (label, point) in artifact.labels.iter().zip(&artifact.coordinates) {
        writer.write_record([label.as_str(), &full(point[0]), &full(point[1])])?;
    }
    let bytes = writer.into_inner().expect("vec writer cannot fail");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_heatmap_csv(artifact: &HeatmapArtifact) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "loss",
        "parameter",
        "epochs",
        "run_id",
        "status",
        "max_validation_delta_sim",
        "failure",
    ])?;
    for cell in &artifact.cells {
        let status = if cell.failure.is_some() {
            "failed"
        } else {
            "completed"
        };
        writer.write_record([
            cell.loss.as_str(),
            &full(cell.parameter),
            &cell.epochs.to_string(),
            cell.run_id.as_deref().unwrap_or(""),
            status,
            &cell.max_validation_delta_sim.map(full).unwrap_or_default(),
            cell.failure.as_deref().unwrap_or(""),
        ])?;
    }
    let bytes = writer.into_inner().expect("vec writer cannot fail");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Category columns in table order, then the pooled Overall column.
fn bias_columns() -> Vec<Option<Category>> {
    COLUMN_ORDER
        .iter()
        .map(|&c| Some(c))
        .chain([None])
        .collect()
}

fn probability_cell(report: &BiasReport, column: Option<Category>) -> Option<f64> {
    match column {
        Some(category) => report
            .per_category
            .get(&category)
            .and_then(|s| s.stereotype_probability),
        None => report.overall.stereotype_probability,
    }
}

fn score_cell(report: &BiasReport, column: Option<Category>, score: TableScore) -> Option<f64> {
    let scores = match column {
        Some(category) => report.per_category.get(&category)?,
        None => &report.overall,
    };
    match score {
        TableScore::BiasScore => scores.bias_score,
        TableScore::KlScore => scores.kl_score,
    }
}

fn any_skip(artifact: &BiasTableArtifact) -> bool {
    artifact
        .models
        .iter()
        .any(|row| row.report.overall.skip_ratio > 0.0)
}

pub fn render_bias_table_csv(artifact: &BiasTableArtifact) -> Result<String, ReportError> {
    let columns = bias_columns();
    let with_skip = any_skip(artifact);
    let mut writer = csv::Writer::from_writer(Vec::new());

    let mut header: Vec<String> = vec!["model".into(), "metric".into()];
    header.extend(columns.iter().map(|c| {
        c.map(|cat| cat.as_str().to_string())
            .unwrap_or_else(|| "overall".into())
    }));
    if with_skip {
        header.push("skip_ratio".into());
    }
    writer.write_record(&header)?;

    for row in &artifact.models {
        for metric in ["stereotype_probability", artifact.score.metric_name()] {
            let mut record: Vec<String> = vec![row.model.clone(), metric.to_string()];
            for &column in &columns {
                let value = if metric == "stereotype_probability" {
                    probability_cell(&row.report, column)
                } else {
                    score_cell(&row.report, column, artifact.score)
                };
                record.push(value.map(full).unwrap_or_default());
            }
            if with_skip {
                record.push(full(row.report.overall.skip_ratio));
            }
            writer.write_record(&record)?;
        }
    }
    let bytes = writer.into_inner().expect("vec writer cannot fail");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_bias_table_markdown(artifact: &BiasTableArtifact) -> String {
    let columns = bias_columns();
    let with_skip = any_skip(artifact);
    let decimals = artifact.score.decimals();

    // Lowest score per column across models, for highlighting.
    let column_minima: Vec<Option<f64>> = columns
        .iter()
        .map(|&column| {
            artifact
                .models
                .iter()
                .filter_map(|row| score_cell(&row.report, column, artifact.score))
                .fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.min(v)))
                })
        })
        .collect();

    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        out.push_str("| ");
        out.push_str(&cells.join(" | "));
        out.push_str(" |\n");
    };

    let mut header: Vec<String> = vec!["Model".into(), "Metric".into()];
    header.extend(columns.iter().map(|c| {
        c.map(|cat| {
            let name = cat.as_str();
            let mut label = name.to_string();
            label.replace_range(0..1, &name[0..1].to_uppercase());
            label
        })
        .unwrap_or_else(|| "Overall".into())
    }));
    if with_skip {
        header.push("Skip ratio".into());
    }
    let separator: Vec<String> = header.iter().map(|_| "---".into()).collect();
    push_row(&header);
    push_row(&separator);

    for row in &artifact.models {
        let mut probability_cells: Vec<String> =
            vec![row.model.clone(), "stereotype probability".into()];
        for &column in &columns {
            probability_cells.push(
                probability_cell(&row.report, column)
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_default(),
            );
        }
        if with_skip {
            probability_cells.push(format!("{:.3}", row.report.overall.skip_ratio));
        }
        push_row(&probability_cells);

        let metric_label = match artifact.score {
            TableScore::BiasScore => "bias score",
            TableScore::KlScore => "kl bias score",
        };
        let mut score_cells: Vec<String> = vec!["".into(), metric_label.into()];
        for (&column, minimum) in columns.iter().zip(&column_minima) {
            let cell = match score_cell(&row.report, column, artifact.score) {
                None => String::new(),
                Some(v) => {
                    let text = format!("{v:.*}", decimals);
                    if minimum.is_some_and(|m| v == m) {
                        format!("**{text}**")
                    } else {
                        text
                    }
                }
            };
            score_cells.push(cell);
        }
        if with_skip {
            score_cells.push(String::new());
        }
        push_row(&score_cells);
    }

    if with_skip {
        out.push_str(
            "\nSkip ratio: fraction of items excluded because every query exhausted its parse retries.\n",
        );
    }
    out
}

/// Ten visually distinct colors; labels beyond ten wrap around.
const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

fn png_bytes(img: &RgbImage) -> Result<Vec<u8>, ReportError> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| ReportError::Figure(e.to_string()))?;
    Ok(bytes)
}

pub fn render_tsne_png(artifact: &TsneArtifact) -> RgbImage {
    const SIZE: u32 = 640;
    const MARGIN: f64 = 40.0;
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));

    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in &artifact.coordinates {
        for axis in 0..2 {
            min[axis] = min[axis].min(p[axis]);
            max[axis] = max[axis].max(p[axis]);
        }
    }
    for axis in 0..2 {
        if !(max[axis] > min[axis]) {
            min[axis] -= 1.0;
            max[axis] += 1.0;
        }
    }
    let scale = (SIZE as f64 - 2.0 * MARGIN)
        / (max[0] - min[0]).max(max[1] - min[1]);
    let to_pixel = |p: &[f64; 2]| {
        let x = MARGIN + (p[0] - min[0]) * scale;
        // Flip y so larger values sit higher in the image.
        let y = SIZE as f64 - MARGIN - (p[1] - min[1]) * scale;
        (x, y)
    };

    let distinct: Vec<&String> = {
        let set: BTreeSet<&String> = artifact.labels.iter().collect();
        set.into_iter().collect()
    };
    let color_of = |label: &String| {
        let idx = distinct.iter().position(|l| *l == label).unwrap_or(0);
        Rgb(PALETTE[idx % PALETTE.len()])
    };

    for (label, point) in artifact.labels.iter().zip(&artifact.coordinates) {
        let (cx, cy) = to_pixel(point);
        let color = color_of(label);
        let r = 3i64;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let px = cx as i64 + dx;
                let py = cy as i64 + dy;
                if (0..SIZE as i64).contains(&px) && (0..SIZE as i64).contains(&py) {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    }
    img
}

/// Three-stop color ramp from dark violet through teal to yellow.
fn ramp(v: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 3] = [
        [68.0, 1.0, 84.0],
        [33.0, 145.0, 140.0],
        [253.0, 231.0, 37.0],
    ];
    let v = v.clamp(0.0, 1.0);
    let (a, b, t) = if v < 0.5 {
        (STOPS[0], STOPS[1], v * 2.0)
    } else {
        (STOPS[1], STOPS[2], (v - 0.5) * 2.0)
    };
    Rgb([
        (a[0] + (b[0] - a[0]) * t).round() as u8,
        (a[1] + (b[1] - a[1]) * t).round() as u8,
        (a[2] + (b[2] - a[2]) * t).round() as u8,
    ])
}

pub fn render_heatmap_png(artifact: &HeatmapArtifact) -> RgbImage {
    const CELL_W: u32 = 64;
    const CELL_H: u32 = 40;
    const GAP: u32 = 2;
    const MARGIN: u32 = 8;
    let (n_rows, n_cols) = artifact.shape();
    let width = MARGIN * 2 + n_cols as u32 * (CELL_W + GAP);
    let height = MARGIN * 2 + n_rows as u32 * (CELL_H + GAP);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    let values: Vec<f64> = artifact
        .cells
        .iter()
        .filter_map(|c| c.max_validation_delta_sim)
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    for (r, row) in artifact.rows.iter().enumerate() {
        for (c, &col) in artifact.cols.iter().enumerate() {
            let color = match artifact.cell(row, col) {
                Some(cell) => match cell.max_validation_delta_sim {
                    Some(v) => {
                        let normalized = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                        ramp(normalized)
                    }
                    // Failed run: muted red so it reads as "missing, not low".
                    None => Rgb([226, 195, 195]),
                },
                // No record for this grid position at all.
                None => Rgb([235, 235, 235]),
            };
            let x0 = MARGIN + c as u32 * (CELL_W + GAP);
            let y0 = MARGIN + r as u32 * (CELL_H + GAP);
            for y in y0..y0 + CELL_H {
                for x in x0..x0 + CELL_W {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}
