//! Command-line surface: training, evaluation, prediction, patch
//! extraction, synthetic data generation, gradient checking, ablation, and
//! attention export. Reports are CSV; images are PNG or PPM.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{
    extract_patches, load_dataset, read_image, write_image, write_manifest, LabeledImage,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, export_attention, predict_image, predict_single, run_ablation, split_corpus,
    synthesize_corpus, train_run, RunConfig,
};
use crate::model::checkpoint;
use crate::{checks, reptile};

#[derive(Parser)]
#[command(
    name = "qswin",
    about = "Siamese quadratic Swin transformer for image regression",
    version
)]
pub struct Cli {
    /// Key=value run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed overriding the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train on a labeled directory (data.dir) or the synthetic corpus.
    Train {
        /// Train once per balance weight in {0, 0.1, 1, 10} and write a
        /// sweep summary instead of a single run.
        #[arg(long)]
        alpha_sweep: bool,
    },
    /// Evaluate a checkpoint on the held-out split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Predict the score of one image with multi-patch averaging.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Average over multi-scale patches instead of a single resize.
        #[arg(long)]
        multi_scale: bool,
    },
    /// Extract multi-scale patches from a labeled directory into a cache.
    ExtractPatches {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated square crop sides, overriding the config.
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<usize>>,
        /// Patches per source image.
        #[arg(long)]
        count: Option<usize>,
        /// Output side in pixels.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Generate the synthetic browning corpus with a manifest.
    Synthesize,
    /// Finite-difference gradient verification of neuron, block, and model.
    Gradcheck,
    /// Train the toggle ladder and report per-rung MAE.
    Ablate,
    /// Export per-head attention heatmaps and raw CSV matrices.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::tiny_preset(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;

    match cli.command {
        Command::Train { alpha_sweep } => {
            if alpha_sweep {
                alpha_sweep_cmd(&cfg, &cli.out)
            } else {
                train_cmd(&cfg, &cli.out)
            }
        }
        Command::Evaluate { checkpoint } => evaluate_cmd(&cfg, &checkpoint, &cli.out),
        Command::Predict {
            checkpoint,
            image,
            multi_scale,
        } => predict_cmd(&cfg, &checkpoint, &image, multi_scale),
        Command::ExtractPatches {
            input,
            scales,
            count,
            target,
        } => {
            let mut cfg = cfg.clone();
            if let Some(scales) = scales {
                cfg.patch.scales = scales;
            }
            if let Some(count) = count {
                cfg.patch.patches_per_image = count;
            }
            if let Some(target) = target {
                cfg.patch.target_size = target;
            }
            extract_cmd(&cfg, &input, &cli.out)
        }
        Command::Synthesize => synthesize_cmd(&cfg, &cli.out),
        Command::Gradcheck => gradcheck_cmd(cfg.seed),
        Command::Ablate => ablate_cmd(&cfg, &cli.out),
        Command::ExportAttention { checkpoint, image } => {
            export_attention_cmd(&checkpoint, &image, &cli.out)
        }
    }
}

fn load_corpus(cfg: &RunConfig) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    match &cfg.data_dir {
        Some(dir) => load_dataset(dir, 0.8, cfg.seed),
        None => {
            let corpus = synthesize_corpus(&cfg.synth, cfg.seed)?;
            Ok(split_corpus(corpus, 0.8, cfg.seed))
        }
    }
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train_set, test_set) = load_corpus(cfg)?;
    println!(
        "training on {} images ({} held out), {} epochs",
        train_set.len(),
        test_set.len(),
        cfg.total_epochs + cfg.warmup_epochs
    );
    let outcome = train_run(cfg, &train_set, &test_set, None)?;
    let report_path = out.join("report.csv");
    outcome.report.write_csv(&report_path)?;
    let ckpt_path = out.join("model.qswn");
    checkpoint::save(&outcome.model, &ckpt_path)?;
    let eval_path = out.join("metrics.csv");
    std::fs::write(&eval_path, outcome.eval.to_csv()).map_err(|e| Error::io(&eval_path, e))?;
    println!(
        "held-out per-image mae {:.4}, mse {:.4}, pcc {:.4}",
        outcome.eval.per_image.mae, outcome.eval.per_image.mse, outcome.eval.per_image.pcc
    );
    println!("wrote {}, {}, {}", report_path.display(), ckpt_path.display(), eval_path.display());
    Ok(())
}

fn alpha_sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train_set, test_set) = load_corpus(cfg)?;
    let mut summary = String::from("alpha,mae,mse,pcc\n");
    for alpha in [0.0f32, 0.1, 1.0, 10.0] {
        let mut c = cfg.clone();
        c.alpha = alpha;
        let outcome = train_run(&c, &train_set, &test_set, None)?;
        let m = outcome.eval.per_image;
        println!("alpha {alpha}: mae {:.4}, mse {:.4}, pcc {:.4}", m.mae, m.mse, m.pcc);
        summary.push_str(&format!("{alpha},{},{},{}\n", m.mae, m.mse, m.pcc));
        outcome
            .report
            .write_csv(&out.join(format!("report_alpha_{alpha}.csv")))?;
    }
    let path = out.join("alpha_sweep.csv");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, ckpt: &Path, out: &Path) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let (_, test_set) = load_corpus(cfg)?;
    let report = evaluate(&model, &test_set, cfg)?;
    let path = out.join("metrics.csv");
    std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    print!("{}", report.to_csv());
    Ok(())
}

fn predict_cmd(cfg: &RunConfig, ckpt: &Path, image: &Path, multi_scale: bool) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let img = read_image(image)?;
    let score = if multi_scale {
        predict_image(&model, &img, &cfg.patch, cfg.seed)?
    } else {
        predict_single(&model, &img)?
    };
    println!("{score}");
    Ok(())
}

fn extract_cmd(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let (mut images, test) = load_dataset(input, 1.0, cfg.seed)?;
    images.extend(test);
    let mut entries = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let patches = extract_patches(img, &cfg.patch, cfg.seed ^ i as u64)?;
        for (j, patch) in patches.iter().enumerate() {
            let name = format!("patch_{i:04}_{j:02}.png");
            write_image(patch, &out.join(&name))?;
            entries.push((name, patch.label));
        }
    }
    write_manifest(out, &entries)?;
    println!("wrote {} patches to {}", entries.len(), out.display());
    Ok(())
}

fn synthesize_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = synthesize_corpus(&cfg.synth, cfg.seed)?;
    let mut entries = Vec::new();
    for (i, img) in corpus.iter().enumerate() {
        let name = format!("synth_{i:04}.png");
        write_image(img, &out.join(&name))?;
        entries.push((name, img.label));
    }
    write_manifest(out, &entries)?;
    println!("wrote {} synthetic images to {}", entries.len(), out.display());
    Ok(())
}

fn gradcheck_cmd(seed: u64) -> Result<()> {
    let reports = checks::run_all(seed)?;
    let mut all_ok = true;
    for r in &reports {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<18} {:>3} params  rel err {:.3e}  (tolerance {:.0e})",
            r.name, r.sampled, r.rel_err, r.tolerance
        );
        all_ok &= r.passed();
    }
    if !all_ok {
        return Err(Error::Numeric { op: "gradcheck" });
    }
    Ok(())
}

fn ablate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    println!("running the toggle ladder (pretraining replaced by a longer-warmup rung)");
    let table = run_ablation(cfg)?;
    let path = out.join("ablation.csv");
    std::fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
    print!("{}", table.to_csv());
    Ok(())
}

fn export_attention_cmd(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let img = read_image(image)?;
    let paths = export_attention(&model, &img, out)?;
    for p in &paths {
        println!("{}", p.display());
    }
    Ok(())
}

/// Run a reptile degeneracy spot check from the CLI when debugging; kept
/// callable from integration tests.
pub fn degeneracy_probe(cfg: &RunConfig) -> Result<bool> {
    let corpus = synthesize_corpus(&cfg.synth, cfg.seed)?;
    let (train_set, _) = split_corpus(corpus, 0.8, cfg.seed);
    let mut k1 = cfg.clone();
    k1.reptile.inner_steps = 1;
    k1.reptile.meta_step = 1.0;
    k1.reptile.inner_batch = k1.meta_batch;
    k1.reptile.inner_optimizer = crate::optim::OptKind::Sgd;
    let run = |use_reptile: bool| -> Result<Vec<Vec<f32>>> {
        let mut c = k1.clone();
        c.toggles.reptile = use_reptile;
        let mut model_cfg = c.model.clone();
        model_cfg.quadratic = c.toggles.quadratic;
        let mut model = crate::model::QSwinModel::new(model_cfg, c.seed)?;
        let prepared = crate::eval::prepare_training_images(&train_set, &c)?;
        let opts = reptile::TrainOptions {
            alpha: c.alpha,
            siamese: c.toggles.siamese,
            reptile: use_reptile,
            seed: c.seed,
        };
        reptile::train(
            &mut model,
            &prepared,
            &[],
            &c.schedule(),
            &c.reptile,
            &opts,
            None,
        )?;
        Ok(model.store().snapshot())
    };
    let a = run(true)?;
    let b = run(false)?;
    Ok(a.iter().zip(&b).all(|(x, y)| {
        x.iter().map(|v| v.to_bits()).eq(y.iter().map(|v| v.to_bits()))
    }))
}
