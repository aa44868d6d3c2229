use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tfcount::config::Config;
use tfcount::eval::{self, Dataset, EvalOptions, SweepAxis};
use tfcount::geometry::{BBox, Point};
use tfcount::image::RawImage;
use tfcount::pipeline::{Backends, References};
use tfcount::proposals::{ReferenceFormat, ReferenceSpec};
use tfcount::synth::{self, SceneSpec};
use tfcount::{render, Error};

#[derive(Parser)]
#[command(name = "tfcount", version, about = "Training-free class-agnostic object counting")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `section.key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set segmenter.backend=mock --set semantic.model=mock`.
    #[arg(long, global = true)]
    mock: bool,
    #[arg(long, global = true, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    tpu_rounds: Option<u32>,
    /// Tiles per side for the multi-scale pass; 1 disables it.
    #[arg(long, global = true)]
    n_p: Option<usize>,
    #[arg(long, global = true)]
    segmenter_weights: Option<PathBuf>,
    #[arg(long, global = true)]
    semantic_weights: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl GlobalArgs {
    /// Flags become overrides applied after `--set`, so they take precedence.
    fn load_config(&self) -> tfcount::Result<Config> {
        let mut o = self.overrides.clone();
        if self.mock {
            o.push("segmenter.backend=mock".into());
            o.push("semantic.model=mock".into());
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        push("matching.theta", self.theta.map(|v| v.to_string()));
        push("matching.delta", self.delta.map(|v| v.to_string()));
        push("matching.tpu_rounds", self.tpu_rounds.map(|v| v.to_string()));
        push("multiscale.n_p", self.n_p.map(|v| v.to_string()));
        push("run.workers", self.workers.map(|v| v.to_string()));
        push("run.seed", self.seed.map(|v| v.to_string()));
        push("segmenter.weights_path", self.segmenter_weights.as_ref().map(|p| json!(p).to_string()));
        push("semantic.weights_path", self.semantic_weights.as_ref().map(|p| json!(p).to_string()));
        Config::load(self.config.as_deref(), &o)
    }
}

#[derive(Args)]
struct RefArgs {
    /// Exemplar box `x0,y0,x1,y1` (exclusive max); may be repeated.
    #[arg(long = "box", value_name = "X0,Y0,X1,Y1", value_parser = parse_box)]
    boxes: Vec<BBox>,
    /// Exemplar point `x,y`; may be repeated.
    #[arg(long = "point", value_name = "X,Y", value_parser = parse_point)]
    points: Vec<Point>,
}

impl RefArgs {
    fn spec(&self) -> anyhow::Result<ReferenceSpec> {
        match (self.boxes.is_empty(), self.points.is_empty()) {
            (true, true) => bail!(Error::InvalidInput("give at least one --box or --point".into())),
            (false, false) => bail!(Error::InvalidInput("use either --box or --point, not both".into())),
            (false, true) => Ok(ReferenceSpec::boxes(self.boxes.iter().copied())),
            (true, false) => Ok(ReferenceSpec::points(self.points.iter().copied())),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    Fsc147,
    Carpk,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefKind {
    Box,
    Point,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    /// Dataset root directory.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value = "box")]
    refs: RefKind,
    /// Cross-image exemplars drawn from CARPK training images.
    #[arg(long, default_value_t = 12)]
    exemplars: usize,
}

impl DatasetArgs {
    fn load(&self, seed: u64) -> tfcount::Result<Dataset> {
        match self.dataset {
            DatasetKind::Fsc147 => eval::load_fsc147(&self.root, &self.split),
            DatasetKind::Carpk => eval::load_carpk(&self.root, &self.split, self.exemplars, seed),
        }
    }

    fn format(&self) -> ReferenceFormat {
        match self.refs {
            RefKind::Box => ReferenceFormat::Box,
            RefKind::Point => ReferenceFormat::Point,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Count objects in one image.
    Count {
        image: PathBuf,
        #[command(flatten)]
        refs: RefArgs,
        /// Write an overlay of the counted masks to this PNG.
        #[arg(long)]
        render: Option<PathBuf>,
        /// Print a JSON result instead of the bare count.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate on a dataset and write a report.
    Eval {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Per-sample progress file; a rerun skips samples already in it.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate once per value of one parameter.
    Sweep {
        #[command(flatten)]
        data: DatasetArgs,
        /// theta, delta, tpu_rounds, components, backbone or semantic.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; `table` on the components axis runs all 16 toggles.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
    },
    /// Write superpixel labels, raw proposals, and filtered candidates as images.
    RenderDebug {
        image: PathBuf,
        #[command(flatten)]
        refs: RefArgs,
        #[arg(long, default_value = "debug")]
        out_dir: PathBuf,
    },
    /// Generate a synthetic dataset in the FSC-147 layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Use scenes with tiny targets and many distractors.
        #[arg(long)]
        ablation: bool,
    },
}

fn parse_numbers<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a non-negative integer")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected {N} comma-separated integers"))
}

fn parse_box(s: &str) -> Result<BBox, String> {
    let [x0, y0, x1, y1] = parse_numbers::<4>(s)?;
    if x1 <= x0 || y1 <= y0 {
        return Err("box must have x1 > x0 and y1 > y0".into());
    }
    Ok(BBox::new(x0, y0, x1, y1))
}

fn parse_point(s: &str) -> Result<Point, String> {
    let [x, y] = parse_numbers::<2>(s)?;
    Ok(Point::new(x, y))
}

fn reference_boxes(refs: &ReferenceSpec) -> Vec<BBox> {
    refs.items
        .iter()
        .filter_map(|p| match p {
            tfcount::geometry::Prompt::Box(b) => Some(*b),
            tfcount::geometry::Prompt::Point(_) => None,
        })
        .collect()
}

fn save(img: &RawImage, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = cli.global.load_config()?;
    match cli.command {
        Command::Count { image, refs, render: overlay, json } => {
            let refs = refs.spec()?;
            let img = RawImage::open(&image)?;
            let backends = Backends::from_config(&config)?;
            let out = backends.pipeline(&config).count(&img, &References::InImage(refs.clone()))?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(path) = overlay {
                let masks: Vec<_> = out
                    .result
                    .reference_masks
                    .iter()
                    .map(|m| &m.mask)
                    .chain(out.result.selected.iter().map(|s| &s.proposal.mask))
                    .collect();
                save(&render::count_overlay(&img, &masks, &reference_boxes(&refs), out.result.count), &path)?;
            }
            if json {
                let v = json!({
                    "image": image,
                    "count": out.result.count,
                    "n_ref": out.result.n_ref,
                    "candidates": out.result.candidates,
                    "raw_candidates": out.raw_candidates,
                    "similarities": out.result.selected.iter().map(|s| s.similarity).collect::<Vec<_>>(),
                    "warnings": out.warnings,
                });
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                println!("{}", out.result.count);
            }
        }
        Command::Eval { data, out, checkpoint } => {
            let dataset = data.load(config.run.seed)?;
            let backends = Backends::from_config(&config)?;
            let opts = EvalOptions { references: Some(data.format()), checkpoint, label: None };
            let report = eval::evaluate(&dataset, &config, &backends, &opts)?;
            report.write(&out)?;
            println!("{} samples  MAE {:.4}  RMSE {:.4}  -> {}", report.per_sample.len(), report.mae, report.rmse, out.display());
        }
        Command::Sweep { data, axis, values, out_dir } => {
            let axis: SweepAxis = axis.parse()?;
            let dataset = data.load(config.run.seed)?;
            let opts = EvalOptions { references: Some(data.format()), checkpoint: None, label: None };
            let reports = eval::run_sweep(&dataset, &config, axis, &values, &opts, Backends::from_config)?;
            std::fs::create_dir_all(&out_dir)?;
            for (i, r) in reports.iter().enumerate() {
                let name = r.label.as_deref().unwrap_or("cell").replace(['=', '+', '/'], "_");
                r.write(&out_dir.join(format!("{i:02}_{name}.json")))?;
            }
            let summary = eval::sweep_summary(&reports);
            std::fs::write(out_dir.join("summary.md"), &summary)?;
            print!("{summary}");
        }
        Command::RenderDebug { image, refs, out_dir } => {
            let img = RawImage::open(&image)?;
            let refs = if refs.boxes.is_empty() && refs.points.is_empty() { None } else { Some(refs.spec()?) };
            let backends = Backends::from_config(&config)?;
            let stage = backends.pipeline(&config).propose(&img, refs.as_ref())?;
            std::fs::create_dir_all(&out_dir)?;
            if let Some(sp) = &stage.superpixels {
                save(&render::label_map(sp), &out_dir.join("superpixels.png"))?;
            }
            save(&render::proposals_image(&img, &stage.raw_candidates), &out_dir.join("proposals.png"))?;
            save(&render::proposals_image(&img, &stage.set.candidate_masks), &out_dir.join("candidates.png"))?;
            println!(
                "{} prompts, {} raw proposals, {} candidates -> {}",
                stage.prompts.len(),
                stage.raw_candidates.len(),
                stage.set.candidate_masks.len(),
                out_dir.display()
            );
        }
        Command::Synth { out, count, ablation } => {
            let spec = if ablation { SceneSpec::ablation() } else { SceneSpec::default() };
            let scenes = synth::generate_corpus(&spec, count, config.run.seed);
            synth::write_fsc147(&out, &scenes)?;
            println!("{} scenes -> {}", scenes.len(), out.display());
        }
    }
    Ok(())
}

/// Stable exit code per error class.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidInput(_)) => 2,
        Some(Error::ReferenceFailure(_)) => 3,
        Some(Error::ModelLoad { .. } | Error::Backend(_)) => 4,
        Some(Error::Ingestion { .. } | Error::MalformedRecord { .. }) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
