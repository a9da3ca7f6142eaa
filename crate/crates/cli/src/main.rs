use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use archivist::correction::apply_corrections;
use archivist::ensemble::{run_ensemble, TileConfig};
use archivist::eval::{evaluate_detections, evaluate_manifest};
use archivist::manifest::{read_manifest, write_atomic, write_manifest, ManifestError};
use archivist::pipeline::{build_backend, build_lm, layout_detections, load_input, run_many, summarize_document, BackendKind, DetectionSet, PipelineConfig, PipelineError};
use archivist::{synth_scene, validate_document, Dims, Document, SceneSpec, SynthParams};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "archivist", version, about = "OCR, layout, correction and summaries for scanned archival pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic page with known ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        words: usize,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0")]
        orientations: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        corrupt_frac: f64,
        #[arg(long, default_value_t = 1)]
        columns: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the rotation (and optional tiling) ensemble and save the merged detections.
    Extract {
        #[arg(long, value_enum, default_value = "mock")]
        backend: Backend,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        angles: Option<Vec<f64>>,
        #[arg(long, requires = "tile_h")]
        tile_w: Option<f64>,
        #[arg(long, requires = "tile_w")]
        tile_h: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        overlap: f64,
        /// Base configuration; flags above override it.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Full run: extract, layout, correct, summarize, write manifests.
    Pipeline {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Group saved detections into lines and reading order.
    Layout {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Document id; defaults to the stem of the scanned file.
        #[arg(long)]
        id: Option<String>,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Apply language-model corrections to a manifest.
    Correct {
        /// Defaults to the manifest's own config snapshot.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fill in a manifest's summary.
    Summarize {
        /// Defaults to the manifest's own config snapshot.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score detections or a manifest against a synthetic page's truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, conflicts_with = "detections", required_unless_present = "detections")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Io { .. } => Self {
                code: 1,
                message: e.to_string(),
            },
            ManifestError::Invalid(_) | ManifestError::Integrity(_) => Self {
                code: 4,
                message: e.to_string(),
            },
            _ => Self::usage(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    config.check()?;
    Ok(config)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Failure::usage)?;
    bytes.push(b'\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    write_atomic(path, &bytes).map_err(Failure::from)
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Failure::usage)?;
    println!("{text}");
    Ok(())
}

fn file_stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".manifest.json").map(str::to_string).unwrap_or(name);
    Path::new(&name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "document".into())
}

fn finish_manifest(doc: &Document, output: &Path) -> Outcome {
    let violations = validate_document(doc);
    if !violations.is_empty() {
        return Err(PipelineError::Validate(violations).into());
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    write_manifest(output, doc).map_err(Failure::from)
}

fn stage_config(path: Option<&Path>, doc: &Document) -> Result<PipelineConfig, Failure> {
    match path {
        Some(_) => load_config(path),
        None => Ok(doc.config_snapshot.clone()),
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth {
            seed,
            words,
            orientations,
            corrupt_frac,
            columns,
            output,
        } => {
            let params = SynthParams::new(seed, words, orientations, corrupt_frac).columns(columns);
            let scene = synth_scene(&params).map_err(Failure::usage)?;
            write_json(&output, &scene)
        }

        Command::Extract {
            backend,
            angles,
            tile_w,
            tile_h,
            overlap,
            config,
            workers,
            input,
            output,
        } => {
            let mut config = load_config(config.as_deref())?;
            config.backend = match backend {
                Backend::Mock => BackendKind::Mock,
                Backend::Remote => BackendKind::Remote,
            };
            if let Some(angles) = angles {
                config.ensemble.angles_deg = angles;
            }
            if let (Some(w), Some(h)) = (tile_w, tile_h) {
                config.ensemble.tile = Some(TileConfig {
                    tile_dims: Dims::new(w, h).map_err(Failure::usage)?,
                    overlap,
                });
            }
            config.check()?;
            let page = load_input(&input)?;
            let backend = build_backend(&config)?;
            let out = run_ensemble(&page, &config.ensemble, &backend, workers.max(1)).map_err(PipelineError::Extract)?;
            for f in &out.stats.failed_passes {
                eprintln!("warning: pass at {}° skipped: {}", f.angle_deg, f.error);
            }
            let set = DetectionSet {
                source_uri: input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                frame: archivist::backend::PageSource::dims(&page),
                detections: out.detections,
                stats: out.stats,
            };
            write_json(&output, &set)
        }

        Command::Pipeline {
            config,
            input,
            output,
            jobs,
        } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(dir) = output {
                config.output_dir = dir;
            }
            let mut worst: Option<Failure> = None;
            for (path, result) in input.iter().zip(run_many(&config, &input, jobs)) {
                match result {
                    Ok(run) => {
                        for w in &run.warnings {
                            eprintln!("warning: {}: {w}", path.display());
                        }
                        println!(
                            "{}\t{}",
                            run.manifest_path.display(),
                            serde_json::to_string(&run.stats).unwrap_or_default()
                        );
                    }
                    Err(e) => {
                        let f = Failure::from(e);
                        eprintln!("error: {}: {}", path.display(), f.message);
                        if worst.as_ref().is_none_or(|w| f.code > w.code) {
                            worst = Some(f);
                        }
                    }
                }
            }
            match worst {
                None => Ok(()),
                Some(f) => Err(Failure {
                    code: f.code,
                    message: "one or more documents failed".into(),
                }),
            }
        }

        Command::Layout {
            config,
            id,
            input,
            output,
        } => {
            let config = load_config(config.as_deref())?;
            let set: DetectionSet = read_json(&input)?;
            let id = id.unwrap_or_else(|| file_stem(Path::new(&set.source_uri)));
            let doc = layout_detections(&set, &id, &config)?;
            finish_manifest(&doc, &output)
        }

        Command::Correct { config, input, output } => {
            let doc = read_manifest(&input)?;
            let config = stage_config(config.as_deref(), &doc)?;
            let lm = build_lm(&config)?;
            let mut fixed = apply_corrections(&doc, &config.correction, lm.masked.as_ref());
            fixed.config_snapshot = config;
            finish_manifest(&fixed, &output)
        }

        Command::Summarize { config, input, output } => {
            let mut doc = read_manifest(&input)?;
            let config = stage_config(config.as_deref(), &doc)?;
            let lm = build_lm(&config)?;
            if let Some(w) = summarize_document(&mut doc, &config.summary, lm.generative.as_ref())? {
                eprintln!("warning: summary omitted: {w}");
            }
            doc.config_snapshot = config;
            finish_manifest(&doc, &output)
        }

        Command::Eval {
            truth,
            manifest,
            detections,
            iou,
        } => {
            let truth: SceneSpec = read_json(&truth)?;
            let report = match (manifest, detections) {
                (Some(m), _) => evaluate_manifest(&read_manifest(&m)?, &truth, iou),
                (None, Some(d)) => {
                    let set: DetectionSet = read_json(&d)?;
                    evaluate_detections(&set.detections, set.frame, &truth, iou)
                }
                (None, None) => unreachable!("clap requires one of --manifest or --detections"),
            }
            .map_err(Failure::usage)?;
            print_json(&report)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
