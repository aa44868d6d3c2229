//! Dataset ingestion, metrics, batch evaluation, and parameter sweeps.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::{SegmenterVariant, SemanticModel};
use crate::config::{Components, Config};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point};
use crate::image::RawImage;
use crate::pipeline::{Backends, References};
use crate::proposals::{ReferenceFormat, ReferenceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub id: String,
    pub image_path: PathBuf,
    pub exemplar_boxes: Vec<BBox>,
    /// Exemplar points; box centers when the dataset only gives boxes.
    pub exemplar_points: Vec<Point>,
    pub ground_truth: usize,
    pub split: String,
    pub category: Option<String>,
}

impl AnnotatedSample {
    pub fn references(&self, format: ReferenceFormat) -> ReferenceSpec {
        match format {
            ReferenceFormat::Box => ReferenceSpec::boxes(self.exemplar_boxes.iter().copied()),
            ReferenceFormat::Point => ReferenceSpec::points(self.exemplar_points.iter().copied()),
        }
    }
}

/// An exemplar box in an image other than the counted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: String,
    pub image_path: PathBuf,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<AnnotatedSample>,
    /// Exemplars shared by every sample. When non-empty, the samples' own
    /// exemplars are ignored and counts carry no reference term.
    pub shared_exemplars: Vec<Exemplar>,
}

fn ingestion(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingestion { path: path.to_path_buf(), message: message.into() }
}

fn malformed(id: &str, message: impl Into<String>) -> Error {
    Error::MalformedRecord { id: id.to_string(), message: message.into() }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ingestion(path, e.to_string()))
}

fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_str(&read_text(path)?).map_err(|e| ingestion(path, e.to_string()))
}

fn as_xy(v: &Value) -> Option<(f64, f64)> {
    let a = v.as_array()?;
    Some((a.first()?.as_f64()?, a.get(1)?.as_f64()?))
}

fn fsc_box(id: &str, corners: &Value) -> Result<BBox> {
    let pts: Vec<(f64, f64)> = corners
        .as_array()
        .ok_or_else(|| malformed(id, "exemplar box is not a list of corners"))?
        .iter()
        .map(|c| as_xy(c).ok_or_else(|| malformed(id, "exemplar corner is not an [x, y] pair")))
        .collect::<Result<_>>()?;
    if pts.is_empty() {
        return Err(malformed(id, "exemplar box has no corners"));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in pts {
        (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
    }
    if x0 < 0.0 || y0 < 0.0 || x1 <= x0 || y1 <= y0 {
        return Err(malformed(id, format!("invalid exemplar box ({x0}, {y0}, {x1}, {y1})")));
    }
    Ok(BBox::new(x0.floor() as usize, y0.floor() as usize, x1.ceil() as usize, y1.ceil() as usize))
}

/// Loads one split of an FSC-147 release: `annotation_FSC147_384.json`,
/// `Train_Test_Val_FSC_147.json`, `images_384_VarV2/` and, if present,
/// `ImageClasses_FSC147.txt`.
pub fn load_fsc147(root: &Path, split: &str) -> Result<Dataset> {
    let annotations = read_json(&root.join("annotation_FSC147_384.json"))?;
    let splits_path = root.join("Train_Test_Val_FSC_147.json");
    let splits = read_json(&splits_path)?;
    let images = root.join("images_384_VarV2");
    if !images.is_dir() {
        return Err(ingestion(&images, "image directory not found"));
    }
    let classes: HashMap<String, String> = match std::fs::read_to_string(root.join("ImageClasses_FSC147.txt")) {
        Ok(text) => text
            .lines()
            .filter_map(|l| l.split_once('\t').map(|(a, b)| (a.trim().to_string(), b.trim().to_string())))
            .collect(),
        Err(_) => HashMap::new(),
    };
    let names = splits
        .get(split)
        .and_then(Value::as_array)
        .ok_or_else(|| ingestion(&splits_path, format!("no `{split}` split")))?;

    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        let id = name.as_str().ok_or_else(|| ingestion(&splits_path, "split entries must be strings"))?;
        let rec = annotations.get(id).ok_or_else(|| malformed(id, "no annotation record"))?;
        let exemplar_boxes = rec
            .get("box_examples_coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(id, "missing `box_examples_coordinates`"))?
            .iter()
            .map(|c| fsc_box(id, c))
            .collect::<Result<Vec<_>>>()?;
        let points = rec
            .get("points")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(id, "missing `points`"))?;
        for p in points {
            as_xy(p).ok_or_else(|| malformed(id, "point is not an [x, y] pair"))?;
        }
        if exemplar_boxes.is_empty() {
            return Err(malformed(id, "no exemplar boxes"));
        }
        if points.len() < exemplar_boxes.len() {
            return Err(malformed(id, "fewer annotated points than exemplars"));
        }
        let image_path = images.join(id);
        if !image_path.is_file() {
            return Err(ingestion(&image_path, "image file not found"));
        }
        samples.push(AnnotatedSample {
            id: id.to_string(),
            image_path,
            exemplar_points: exemplar_boxes.iter().map(BBox::center).collect(),
            exemplar_boxes,
            ground_truth: points.len(),
            split: split.to_string(),
            category: classes.get(id).cloned(),
        });
    }
    Ok(Dataset { name: "fsc147".into(), samples, shared_exemplars: Vec::new() })
}

fn carpk_root(root: &Path) -> PathBuf {
    let nested = root.join("data");
    if nested.join("ImageSets").is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn carpk_ids(root: &Path, split: &str) -> Result<Vec<String>> {
    let path = root.join("ImageSets").join(format!("{split}.txt"));
    Ok(read_text(&path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn carpk_boxes(root: &Path, id: &str) -> Result<Vec<BBox>> {
    let path = root.join("Annotations").join(format!("{id}.txt"));
    read_text(&path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: Vec<f64> = line
                .split_whitespace()
                .take(4)
                .map(|t| t.parse::<f64>().map_err(|_| malformed(id, format!("bad annotation line `{line}`"))))
                .collect::<Result<_>>()?;
            match v[..] {
                [x0, y0, x1, y1] if x0 >= 0.0 && y0 >= 0.0 && x1 > x0 && y1 > y0 => {
                    Ok(BBox::new(x0 as usize, y0 as usize, x1.ceil() as usize, y1.ceil() as usize))
                }
                _ => Err(malformed(id, format!("bad annotation line `{line}`"))),
            }
        })
        .collect()
}

fn carpk_image(root: &Path, id: &str) -> Result<PathBuf> {
    let dir = root.join("Images");
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| ingestion(&dir.join(id), "image file not found"))
}

/// Loads a CARPK split (`Images/`, `Annotations/`, `ImageSets/`, at `root`
/// or `root/data`) and draws `exemplars` boxes from the training split with
/// the given seed. The count of a sample is its number of boxes.
pub fn load_carpk(root: &Path, split: &str, exemplars: usize, seed: u64) -> Result<Dataset> {
    let root = carpk_root(root);
    let mut samples = Vec::new();
    for id in carpk_ids(&root, split)? {
        let boxes = carpk_boxes(&root, &id)?;
        samples.push(AnnotatedSample {
            image_path: carpk_image(&root, &id)?,
            exemplar_boxes: Vec::new(),
            exemplar_points: Vec::new(),
            ground_truth: boxes.len(),
            split: split.to_string(),
            category: Some("car".into()),
            id,
        });
    }

    let mut pool = Vec::new();
    for id in carpk_ids(&root, "trainval").or_else(|_| carpk_ids(&root, "train"))? {
        for (i, b) in carpk_boxes(&root, &id)?.into_iter().enumerate() {
            pool.push((id.clone(), i, b));
        }
    }
    if pool.len() < exemplars {
        return Err(ingestion(&root, format!("only {} training boxes for {exemplars} exemplars", pool.len())));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(exemplars);
    pool.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let shared_exemplars = pool
        .into_iter()
        .map(|(id, i, bbox)| Ok(Exemplar { id: format!("{id}#{i}"), image_path: carpk_image(&root, &id)?, bbox }))
        .collect::<Result<_>>()?;
    Ok(Dataset { name: "carpk".into(), samples, shared_exemplars })
}

/// `(MAE, RMSE)` over `(ground truth, prediction)` pairs.
pub fn compute_metrics(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one pair".into()));
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(y, p)| (y - p).abs()).sum::<f64>() / n;
    let mse = pairs.iter().map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n;
    Ok((mae, mse.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub ground_truth: usize,
    pub predicted: usize,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub runtime_s: f64,
    /// Wall-clock seconds per sample, in `per_sample` order.
    pub per_sample_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    /// Sweep cell this report belongs to, if any.
    pub label: Option<String>,
    pub config: Config,
    pub references: ReferenceFormat,
    pub exemplar_ids: Vec<String>,
    pub per_sample: Vec<SampleRecord>,
    pub mae: f64,
    pub rmse: f64,
    pub timing: Timing,
}

impl EvalReport {
    /// The report without timing, for bit-exact comparisons.
    pub fn body_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Value::Object(m) = &mut v {
            m.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOptions {
    pub references: Option<ReferenceFormat>,
    /// JSON-lines file of finished samples; existing entries are reused.
    pub checkpoint: Option<PathBuf>,
    pub label: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    #[serde(flatten)]
    record: SampleRecord,
    runtime_s: f64,
}

struct Checkpoint {
    file: Mutex<File>,
    done: HashMap<String, (SampleRecord, f64)>,
}

impl Checkpoint {
    fn open(path: &Path, header: &str) -> Result<Self> {
        let mut done = HashMap::new();
        if path.exists() {
            let mut lines = BufReader::new(File::open(path)?).lines();
            match lines.next().transpose()? {
                Some(first) if first == header => {}
                Some(_) => {
                    return Err(Error::Config(format!(
                        "checkpoint {} was written by a different run configuration",
                        path.display()
                    )))
                }
                None => {}
            }
            for line in lines {
                let line = line?;
                // A torn final line from an interrupted run is recomputed.
                if let Ok(c) = serde_json::from_str::<CheckpointLine>(&line) {
                    done.insert(c.record.id.clone(), (c.record, c.runtime_s));
                }
            }
        }
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{header}")?;
        }
        Ok(Self { file: Mutex::new(file), done })
    }

    fn append(&self, record: &SampleRecord, runtime_s: f64) -> Result<()> {
        let line = serde_json::to_string(&CheckpointLine { record: record.clone(), runtime_s })?;
        let mut f = self.file.lock().expect("checkpoint lock");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }
}

/// Shared exemplars only exist as boxes.
fn reference_format(dataset: &Dataset, options: &EvalOptions) -> ReferenceFormat {
    if dataset.shared_exemplars.is_empty() {
        options.references.unwrap_or(ReferenceFormat::Box)
    } else {
        ReferenceFormat::Box
    }
}

/// Counts every sample and aggregates MAE/RMSE. Samples run on a pool of
/// `config.run.workers` threads; the report keeps dataset order.
pub fn evaluate(dataset: &Dataset, config: &Config, backends: &Backends, options: &EvalOptions) -> Result<EvalReport> {
    if dataset.samples.is_empty() {
        return Err(Error::InvalidInput(format!("dataset `{}` has no samples", dataset.name)));
    }
    let start = Instant::now();
    let pipeline = backends.pipeline(config);
    let format = reference_format(dataset, options);

    let shared = if dataset.shared_exemplars.is_empty() {
        None
    } else {
        let mut by_image: Vec<(PathBuf, Vec<BBox>)> = Vec::new();
        for e in &dataset.shared_exemplars {
            match by_image.iter_mut().find(|(p, _)| *p == e.image_path) {
                Some((_, boxes)) => boxes.push(e.bbox),
                None => by_image.push((e.image_path.clone(), vec![e.bbox])),
            }
        }
        let exemplars = by_image
            .into_iter()
            .map(|(p, boxes)| Ok((RawImage::open(&p)?, ReferenceSpec::boxes(boxes))))
            .collect::<Result<Vec<_>>>()?;
        Some(pipeline.exemplar_prototype(&exemplars)?)
    };

    let header = serde_json::to_string(&serde_json::json!({
        "dataset": dataset.name,
        "references": format,
        "config": config,
    }))?;
    let checkpoint = options.checkpoint.as_deref().map(|p| Checkpoint::open(p, &header)).transpose()?;

    let run_one = |s: &AnnotatedSample| -> Result<(SampleRecord, f64)> {
        if let Some(hit) = checkpoint.as_ref().and_then(|c| c.done.get(&s.id)) {
            return Ok(hit.clone());
        }
        let t = Instant::now();
        let image = RawImage::open(&s.image_path)?;
        let refs = match &shared {
            Some(p) => References::External(p.clone()),
            None => References::InImage(s.references(format)),
        };
        let out = pipeline.count(&image, &refs).map_err(|e| match e {
            Error::ReferenceFailure(m) => Error::ReferenceFailure(format!("{}: {m}", s.id)),
            Error::InvalidInput(m) => malformed(&s.id, m),
            e => e,
        })?;
        let predicted = out.result.count;
        let record = SampleRecord {
            id: s.id.clone(),
            ground_truth: s.ground_truth,
            predicted,
            abs_error: (s.ground_truth as f64 - predicted as f64).abs(),
        };
        let secs = t.elapsed().as_secs_f64();
        if let Some(c) = &checkpoint {
            c.append(&record, secs)?;
        }
        Ok((record, secs))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(SampleRecord, f64)> =
        pool.install(|| dataset.samples.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;

    let pairs: Vec<(f64, f64)> = results.iter().map(|(r, _)| (r.ground_truth as f64, r.predicted as f64)).collect();
    let (mae, rmse) = compute_metrics(&pairs)?;
    let (per_sample, per_sample_s) = results.into_iter().unzip();
    Ok(EvalReport {
        dataset: dataset.name.clone(),
        label: options.label.clone(),
        config: config.clone(),
        references: format,
        exemplar_ids: dataset.shared_exemplars.iter().map(|e| e.id.clone()).collect(),
        per_sample,
        mae,
        rmse,
        timing: Timing { runtime_s: start.elapsed().as_secs_f64(), per_sample_s },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Theta,
    Delta,
    TpuRounds,
    Components,
    Backbone,
    Semantic,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "theta" => Self::Theta,
            "delta" => Self::Delta,
            "tpu_rounds" | "tpu" => Self::TpuRounds,
            "components" => Self::Components,
            "backbone" => Self::Backbone,
            "semantic" => Self::Semantic,
            other => return Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        })
    }
}

fn parse_value<T: std::str::FromStr>(axis: SweepAxis, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for sweep axis {axis:?}")))
}

fn parse_enum<T: serde::de::DeserializeOwned>(axis: SweepAxis, v: &str) -> Result<T> {
    serde_json::from_value(Value::String(v.trim().to_ascii_lowercase()))
        .map_err(|_| Error::Config(format!("invalid value `{v}` for sweep axis {axis:?}")))
}

/// One config per sweep value, each validated. For the components axis the
/// value `table` expands to all sixteen toggle combinations.
pub fn sweep_configs(base: &Config, axis: SweepAxis, values: &[String]) -> Result<Vec<(String, Config)>> {
    let mut cells = Vec::new();
    for v in values {
        if axis == SweepAxis::Components && v.trim() == "table" {
            for c in Components::all_combinations() {
                let mut cfg = base.clone();
                c.apply(&mut cfg);
                cells.push((c.to_string(), cfg));
            }
            continue;
        }
        let mut cfg = base.clone();
        let label = match axis {
            SweepAxis::Theta => {
                cfg.matching.theta = parse_value(axis, v)?;
                format!("theta={}", cfg.matching.theta)
            }
            SweepAxis::Delta => {
                cfg.matching.delta = parse_value(axis, v)?;
                format!("delta={}", cfg.matching.delta)
            }
            SweepAxis::TpuRounds => {
                cfg.matching.tpu_rounds = parse_value(axis, v)?;
                format!("tpu_rounds={}", cfg.matching.tpu_rounds)
            }
            SweepAxis::Components => {
                let c: Components = v.parse()?;
                c.apply(&mut cfg);
                c.to_string()
            }
            SweepAxis::Backbone => {
                cfg.segmenter.variant = parse_enum::<SegmenterVariant>(axis, v)?;
                format!("backbone={}", v.trim().to_ascii_lowercase())
            }
            SweepAxis::Semantic => {
                cfg.semantic.model = parse_enum::<SemanticModel>(axis, v)?;
                format!("semantic={}", v.trim().to_ascii_lowercase())
            }
        };
        cfg.validate()?;
        cells.push((label, cfg));
    }
    if cells.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    Ok(cells)
}

/// Evaluates every sweep cell; `backends` builds the backends for a cell's
/// config, so axes that change models reload them.
pub fn run_sweep(
    dataset: &Dataset,
    base: &Config,
    axis: SweepAxis,
    values: &[String],
    options: &EvalOptions,
    backends: impl Fn(&Config) -> Result<Backends>,
) -> Result<Vec<EvalReport>> {
    sweep_configs(base, axis, values)?
        .into_iter()
        .map(|(label, cfg)| {
            let b = backends(&cfg)?;
            let opts = EvalOptions { label: Some(label), checkpoint: None, ..options.clone() };
            evaluate(dataset, &cfg, &b, &opts)
        })
        .collect()
}

/// Markdown table of one row per report.
pub fn sweep_summary(reports: &[EvalReport]) -> String {
    let mut s = String::from("| cell | MAE | RMSE |\n|---|---|---|\n");
    for r in reports {
        s.push_str(&format!("| {} | {:.4} | {:.4} |\n", r.label.as_deref().unwrap_or("-"), r.mae, r.rmse));
    }
    s
}
