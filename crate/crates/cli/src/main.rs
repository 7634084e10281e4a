use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use forensics_forest::archive::{load_model, save_model, ModelArchive};
use forensics_forest::config::{parse_head_dims, train, HybridMode, RunConfig};
use forensics_forest::eval::synth::{generate, SynthConfig};
use forensics_forest::eval::{
    evaluate, extract_all, extract_entries, robustness_sweep, write_sweep_csv, Manifest, ManifestEntry, SplitTag,
    SweepGrid,
};
use forensics_forest::features::{extract_file, landmark_path_for, ImageFeatures};
use forensics_forest::multiscale::Scheme;
use forensics_forest::{Error, Result};

#[derive(Parser)]
#[command(name = "forensics-forest", version, about = "Cascade-forest detector for generated face images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-scale features for a manifest into a JSON-lines dump.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train a model from a manifest or a feature dump.
    Train {
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training report path; defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Predict every image of a manifest, or a single image.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Landmark file for `--image`; defaults to the sidecar next to it.
        #[arg(long, requires = "image")]
        landmarks: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model on the test split of a manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Robustness sweep over perturbations of the test split.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        resize: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',')]
        jpeg: Option<Vec<u8>>,
        #[arg(long, value_delimiter = ',')]
        brightness: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        noise: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the synthetic real/fake fixture with landmarks and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        n_real: usize,
        #[arg(long, default_value_t = 400)]
        n_fake: usize,
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Run configuration: an optional TOML file, then flag overrides.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_layers: Option<usize>,
    /// 0 disables early stopping.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    hybrid: Option<String>,
    #[arg(long)]
    head_dims: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dnc: bool,
    #[arg(long)]
    dnc_t: Option<usize>,
    #[arg(long)]
    dnc_r: Option<f64>,
    #[arg(long)]
    dnc_m: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<RunConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = &self.scheme {
            c.scheme = s.parse::<Scheme>()?;
        }
        if let Some(s) = &self.scales {
            c.scales = s.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.max_layers {
            c.max_layers = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.trees {
            c.trees_per_forest = v;
        }
        if let Some(s) = &self.hybrid {
            c.hybrid.mode = s.parse::<HybridMode>()?;
        }
        if let Some(s) = &self.head_dims {
            c.hybrid.head_dims = parse_head_dims(s)?;
        }
        if let Some(v) = self.lr {
            c.hybrid.lr = v;
        }
        if let Some(v) = self.epochs {
            c.hybrid.epochs = v;
        }
        if self.dnc {
            c.dnc.enabled = true;
        }
        if let Some(v) = self.dnc_t {
            c.dnc.t = v;
        }
        if let Some(v) = self.dnc_r {
            c.dnc.r = v;
        }
        if let Some(v) = self.dnc_m {
            c.dnc.m = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureRecord {
    id: String,
    label: u8,
    split: SplitTag,
    scales: Vec<usize>,
    scale_inputs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ErrorRecord {
    id: String,
    error: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DumpLine {
    Features(FeatureRecord),
    Failed(ErrorRecord),
}

#[derive(Serialize)]
struct PredictRecord<'a> {
    path: &'a str,
    p_fake: f64,
    label: u8,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T, path: &Path) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::decode(path.display(), e))?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::decode("report", e))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_extract(manifest: &Path, out: &Path, run: &RunArgs) -> Result<bool> {
    let cfg = run.resolve()?;
    let m = Manifest::read(manifest)?;
    let entries: Vec<&ManifestEntry> = m.entries.iter().collect();
    let results = extract_entries(&entries, &cfg.scales);
    let mut w = create(out)?;
    let mut ok = true;
    for (e, r) in entries.iter().zip(results) {
        let id = e.image_path.display().to_string();
        match r {
            Ok(f) => write_line(
                &mut w,
                &FeatureRecord {
                    id,
                    label: e.label,
                    split: e.split,
                    scales: cfg.scales.clone(),
                    scale_inputs: f.flatten(),
                },
                out,
            )?,
            Err(err) => {
                eprintln!("{id}: {err}");
                ok = false;
                write_line(&mut w, &ErrorRecord { id, error: err.to_string() }, out)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(ok)
}

fn read_dump(path: &Path, scales: &[usize]) -> Result<(Vec<ImageFeatures>, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DumpLine = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("{} line {}: {e}", path.display(), i + 1)))?;
        match rec {
            DumpLine::Failed(r) => {
                return Err(Error::Schema(format!("{}: dump holds a failed record: {}", r.id, r.error)))
            }
            DumpLine::Features(r) => {
                if r.scales != scales {
                    return Err(Error::Config(format!(
                        "dump was extracted for scales {:?}, config asks for {:?}",
                        r.scales, scales
                    )));
                }
                if r.split == SplitTag::Train {
                    samples.push(ImageFeatures::unflatten(r.scale_inputs, &r.scales)?);
                    labels.push(r.label);
                }
            }
        }
    }
    Ok((samples, labels))
}

fn cmd_train(
    manifest: Option<&Path>,
    features: Option<&Path>,
    out: &Path,
    report: Option<&Path>,
    run: &RunArgs,
) -> Result<()> {
    let cfg = run.resolve()?;
    let (samples, labels) = match (manifest, features) {
        (Some(m), _) => {
            let m = Manifest::read(m)?;
            let train = m.split(SplitTag::Train);
            (extract_all(&train, &cfg.scales)?, Manifest::labels(&train))
        }
        (None, Some(f)) => read_dump(f, &cfg.scales)?,
        (None, None) => return Err(Error::Config("train needs --manifest or --features".into())),
    };
    let (model, rep) = train(&samples, &labels, &cfg)?;
    save_model(out, &ModelArchive::new(cfg, model))?;
    let report_path = report
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.report.json", out.display())));
    write_json(&rep, Some(&report_path))
}

fn cmd_predict(model: &Path, manifest: Option<&Path>, image: Option<&Path>, landmarks: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let archive = load_model(model)?;
    let scales = &archive.config.scales;
    let (ids, samples) = match (manifest, image) {
        (Some(m), _) => {
            let m = Manifest::read(m)?;
            let entries: Vec<&ManifestEntry> = m.entries.iter().collect();
            let ids = entries.iter().map(|e| e.image_path.display().to_string()).collect::<Vec<_>>();
            (ids, extract_all(&entries, scales)?)
        }
        (None, Some(img)) => {
            let lm = landmarks.map(Path::to_path_buf).unwrap_or_else(|| landmark_path_for(img));
            (vec![img.display().to_string()], vec![extract_file(img, &lm, scales)?])
        }
        (None, None) => return Err(Error::Config("predict needs --manifest or --image".into())),
    };
    let preds = samples
        .iter()
        .map(|s| archive.model.predict(s))
        .collect::<Result<Vec<_>>>()?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let out_path = out.unwrap_or(Path::new("<stdout>"));
    for (id, p) in ids.iter().zip(preds) {
        write_line(
            &mut sink,
            &PredictRecord {
                path: id,
                p_fake: p.prob.p_fake(),
                label: p.label,
            },
            out_path,
        )?;
    }
    sink.flush().map_err(|e| Error::io(out_path, e))
}

fn cmd_eval(model: &Path, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let archive = load_model(model)?;
    let m = Manifest::read(manifest)?;
    let test = m.split(SplitTag::Test);
    let samples = extract_all(&test, &archive.config.scales)?;
    let report = evaluate(&archive.model, &samples, &Manifest::labels(&test))?;
    write_json(&report, out)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Extract { manifest, out, run } => cmd_extract(&manifest, &out, &run),
        Command::Train {
            manifest,
            features,
            out,
            report,
            run,
        } => cmd_train(manifest.as_deref(), features.as_deref(), &out, report.as_deref(), &run).map(|_| true),
        Command::Predict {
            model,
            manifest,
            image,
            landmarks,
            out,
        } => cmd_predict(&model, manifest.as_deref(), image.as_deref(), landmarks.as_deref(), out.as_deref())
            .map(|_| true),
        Command::Eval { model, manifest, out } => cmd_eval(&model, &manifest, out.as_deref()).map(|_| true),
        Command::Sweep {
            model,
            manifest,
            out,
            resize,
            jpeg,
            brightness,
            noise,
            seed,
        } => {
            let archive = load_model(&model)?;
            let m = Manifest::read(&manifest)?;
            let d = SweepGrid::default();
            let grid = SweepGrid {
                resize: resize.unwrap_or(d.resize),
                jpeg: jpeg.unwrap_or(d.jpeg),
                brightness: brightness.unwrap_or(d.brightness),
                noise: noise.unwrap_or(d.noise),
            };
            let rows = robustness_sweep(&archive.model, &m, &grid, &archive.config.scales, seed)?;
            write_sweep_csv(&rows, &out)?;
            Ok(true)
        }
        Command::Synth {
            out,
            n_real,
            n_fake,
            size,
            train_frac,
            seed,
        } => {
            let cfg = SynthConfig {
                n_real,
                n_fake,
                size,
                seed,
                train_frac,
                ..SynthConfig::default()
            };
            let m = generate(&out, &cfg)?;
            eprintln!("wrote {} images to {}", m.entries.len(), out.display());
            Ok(true)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("FF_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
