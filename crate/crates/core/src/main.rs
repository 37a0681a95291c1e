use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use demgrade::dataset::{Manifest, SplitPartition};
use demgrade::pipeline::{
    self, compare_all, evaluate_rows, extract_features, load_model, run_experiment, synthesize_dataset,
    ExperimentConfig, ModelKind, Phase, PipelineError, SynthSpec,
};
use demgrade::watershed::{segment, WatershedParams};
use demgrade::{exec, Image};

#[derive(Parser)]
#[command(name = "demgrade", version, about = "Dementia-level classification of brain MRI slices")]
struct Cli {
    /// Worker threads (overrides DEMGRADE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List a class-per-directory image tree into a JSON manifest.
    Ingest {
        root: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compute watershed feature images for every sample of a manifest.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the seven intermediate images per sample here.
        #[arg(long)]
        dump_steps: Option<PathBuf>,
        /// Feature image directory (default: `features/` next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Updated manifest path (default: overwrite the input).
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        /// JSON file with watershed parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Train and evaluate one configuration.
    Train {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        watershed: bool,
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a saved model on the samples of a manifest.
    Evaluate {
        #[arg(long)]
        model_path: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Only the test part of the split stored with the model.
        #[arg(long)]
        test_split: bool,
        /// Write scorecard and confusion matrix files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all six configurations and print the comparison table.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the four-class geometric mini-dataset.
    SynthesizeDataset {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct Overrides {
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Split seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(path: Option<&Path>, o: &Overrides) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &o.data {
        cfg.dataset_root = d.clone();
    }
    if let Some(d) = &o.output {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = o.seed {
        cfg.split.seed = s;
    }
    Ok(cfg)
}

fn io(phase: Phase, path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        phase,
        path: path.to_path_buf(),
        source,
    }
}

fn dataset_err(phase: Phase) -> impl FnOnce(demgrade::DatasetError) -> PipelineError {
    move |source| PipelineError::Dataset { phase, source }
}

fn ingest(root: &Path, output: &Path) -> Result<(), PipelineError> {
    let ds = demgrade::dataset::load_dataset(root).map_err(dataset_err(Phase::Ingest))?;
    let manifest = Manifest::from_dataset(&ds, root);
    manifest.write(output).map_err(dataset_err(Phase::Ingest))?;
    let counts = ds.class_counts();
    println!("{} images", ds.len());
    for (name, n) in ds.class_names.iter().zip(counts) {
        println!("  {name}: {n}");
    }
    if ds.off_size_count > 0 {
        println!("warning: {} image(s) are not 128x128 and will be resized from their own size", ds.off_size_count);
    }
    Ok(())
}

fn segment_cmd(
    manifest_path: &Path,
    dump: Option<&Path>,
    out: Option<&Path>,
    output: Option<&Path>,
    resolution: usize,
    params: Option<&Path>,
) -> Result<(), PipelineError> {
    let params: WatershedParams = match params {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io(Phase::Config, p))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
        }
        None => WatershedParams::default(),
    };
    let mut manifest = Manifest::read(manifest_path).map_err(dataset_err(Phase::Ingest))?;
    let ds = manifest
        .load()
        .and_then(|d| d.resized(resolution, resolution))
        .map_err(dataset_err(Phase::Ingest))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let feature_dir = out.map_or_else(|| base.join("features"), Path::to_path_buf);
    std::fs::create_dir_all(&feature_dir).map_err(io(Phase::Segment, &feature_dir))?;
    if let Some(d) = dump {
        std::fs::create_dir_all(d).map_err(io(Phase::Segment, d))?;
    }
    let segs = exec::try_map_range(ds.len(), |i| segment(&ds.samples[i].image, &params)).map_err(|source| {
        PipelineError::Watershed {
            phase: Phase::Segment,
            source,
        }
    })?;
    let mut degenerate = 0;
    for ((sample, seg), entry) in ds.samples.iter().zip(&segs).zip(&mut manifest.samples) {
        let stem = sample.path.replace('/', "__");
        let stem = stem.rsplit_once('.').map_or(stem.as_str(), |(s, _)| s).to_string();
        let file = feature_dir.join(format!("{stem}.pgm"));
        seg.feature.write_pgm(&file).map_err(dataset_err(Phase::Segment))?;
        if let Some(d) = dump {
            seg.dump(d, &stem).map_err(|source| PipelineError::Watershed {
                phase: Phase::Segment,
                source,
            })?;
        }
        entry.feature_path = Some(
            file.strip_prefix(base)
                .unwrap_or(&file)
                .to_string_lossy()
                .replace('\\', "/"),
        );
        entry.degenerate = Some(seg.degenerate());
        degenerate += usize::from(seg.degenerate());
    }
    let target = output.unwrap_or(manifest_path);
    manifest.write(target).map_err(dataset_err(Phase::Segment))?;
    println!(
        "segmented {} images at {resolution}x{resolution}; {degenerate} degenerate (no object marker)",
        ds.len()
    );
    Ok(())
}

fn evaluate_cmd(model_path: &Path, manifest_path: &Path, test_split: bool, out: Option<&Path>) -> Result<(), PipelineError> {
    let artifact = load_model(model_path)?;
    let manifest = Manifest::read(manifest_path).map_err(dataset_err(Phase::Ingest))?;
    let [w, h] = artifact.meta.features.resolution;
    let ds = manifest
        .load()
        .and_then(|d| d.resized(w, h))
        .map_err(dataset_err(Phase::Ingest))?;
    let labels = ds.labels();
    let idx: Vec<usize> = if test_split {
        let SplitPartition {
            train,
            validation,
            test,
            ..
        } = &artifact.meta.split;
        let stored = train.len() + validation.len() + test.len();
        if stored != ds.len() {
            return Err(PipelineError::Config(format!(
                "--test-split needs the training dataset: model split covers {stored} samples, manifest has {}",
                ds.len()
            )));
        }
        test.clone()
    } else {
        (0..ds.len()).collect()
    };
    let images: Vec<Image> = idx.iter().map(|&i| ds.samples[i].image.clone()).collect();
    let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let features = extract_features(&images, &artifact.meta.features)?;
    let (cm, card) = evaluate_rows(&artifact.model, &features.rows, &y)?;
    let names: Vec<&str> = ds.class_names.iter().map(String::as_str).collect();
    println!(
        "{} model on {} samples: accuracy {:.2}%  macro F1 {:.2}%",
        artifact.kind().label(),
        y.len(),
        100.0 * card.accuracy,
        100.0 * card.macro_avg.f1
    );
    print!("{}", cm.to_csv(&names));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io(Phase::Persist, dir))?;
        let card_path = dir.join("scorecard.json");
        std::fs::write(&card_path, serde_json::to_string_pretty(&card).expect("serializes") + "\n")
            .map_err(io(Phase::Persist, &card_path))?;
        let csv = dir.join("confusion.csv");
        std::fs::write(&csv, cm.to_csv(&names)).map_err(io(Phase::Persist, &csv))?;
        let pgm = dir.join("confusion.pgm");
        std::fs::write(&pgm, cm.heatmap(32).to_pgm()).map_err(io(Phase::Persist, &pgm))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let threads = cli
        .threads
        .or_else(|| std::env::var("DEMGRADE_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        exec::init_threads(t);
    }
    match cli.command {
        Command::Ingest { root, output } => ingest(&root, &output),
        Command::Segment {
            manifest,
            dump_steps,
            out,
            output,
            resolution,
            params,
        } => segment_cmd(
            &manifest,
            dump_steps.as_deref(),
            out.as_deref(),
            output.as_deref(),
            resolution,
            params.as_deref(),
        ),
        Command::Train {
            model,
            watershed,
            augment,
            config,
            overrides,
        } => {
            let mut cfg = load_config(config.as_deref(), &overrides)?;
            cfg.model = model;
            cfg.watershed = watershed || cfg.watershed;
            cfg.augment = augment || cfg.augment;
            let report = run_experiment(&cfg)?;
            let dir = cfg.output_dir.join(pipeline::RunReport::slug(cfg.model, cfg.watershed));
            println!(
                "{}: accuracy {:.2}%  macro precision {:.2}%  recall {:.2}%  F1 {:.2}%",
                report.name,
                100.0 * report.scorecard.accuracy,
                100.0 * report.scorecard.macro_avg.precision,
                100.0 * report.scorecard.macro_avg.recall,
                100.0 * report.scorecard.macro_avg.f1
            );
            if report.converged == Some(false) {
                println!("warning: at least one SVM machine hit its iteration cap before reaching tolerance");
            }
            println!("outputs in {}", dir.display());
            Ok(())
        }
        Command::Evaluate {
            model_path,
            manifest,
            test_split,
            out,
        } => evaluate_cmd(&model_path, &manifest, test_split, out.as_deref()),
        Command::Compare { config, overrides } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let outcome = compare_all(&cfg)?;
            print!("{}", outcome.table.to_text());
            println!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::SynthesizeDataset {
            output,
            per_class,
            size,
            seed,
        } => {
            let files = synthesize_dataset(&output, &SynthSpec { per_class, size, seed })?;
            println!("wrote {} images under {}", files.len(), output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
