use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ctdiff_core::denoiser::DenoiserConfig;
use ctdiff_core::simulate::{parse_manifest, PairedSample};
use ctdiff_core::trainer::{Trainer, TrainingConfig, CHECKPOINT_DIR, TRAINING_LOG};
use ctdiff_core::volume::{read_stack, window_slice, WindowSpec};
use serde_json::json;

use crate::args::{Preset, TrainArgs};
use crate::commands::simulate::DATASET_MANIFEST;
use crate::commands::preprocess::{FDCT_STACK, MDCT_STACK};
use crate::commands::read_volume;
use crate::config::FileConfig;
use crate::manifest::RunRecord;

/// Learning rate used by the toy preset. The full-size rate is far too slow
/// for a run of a few thousand steps.
pub const TOY_LEARNING_RATE: f64 = 5e-4;

fn from_manifest(dir: &Path) -> anyhow::Result<Vec<PairedSample>> {
    let w = WindowSpec::default();
    let path = dir.join(DATASET_MANIFEST);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in parse_manifest(&text)?.into_iter().filter(|r| r.split == "train") {
        let cond = read_volume(&dir.join(&rec.condition))?;
        let target = read_volume(&dir.join(&rec.target))?;
        let mask = read_volume(&dir.join(&rec.mask))?;
        if cond.dims() != target.dims() || mask.dims() != target.dims() {
            bail!("case {}: condition, target and mask shapes differ", rec.case_id);
        }
        for z in 0..cond.depth() {
            out.push(PairedSample {
                condition: window_slice(cond.slice(z), &w)?,
                target: window_slice(target.slice(z), &w)?,
                lesion_mask: mask.slice(z).mapv(|v| v > 0.5),
                case_id: format!("{}:{z}", rec.case_id),
            });
        }
    }
    Ok(out)
}

/// Directories holding a preprocessed `fdct`/`mdct` stack pair: `dir` itself or its children.
fn stack_pairs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let is_pair = |p: &Path| p.join(FDCT_STACK).is_dir() && p.join(MDCT_STACK).is_dir();
    if is_pair(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut pairs = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if is_pair(&p) {
            pairs.push(p);
        }
    }
    pairs.sort();
    Ok(pairs)
}

fn from_stacks(dir: &Path) -> anyhow::Result<Vec<PairedSample>> {
    let mut out = Vec::new();
    for pair in stack_pairs(dir)? {
        let (a, meta) = read_stack(&pair.join(FDCT_STACK)).with_context(|| format!("{}", pair.display()))?;
        let (b, _) = read_stack(&pair.join(MDCT_STACK)).with_context(|| format!("{}", pair.display()))?;
        if a.source_index_map() != b.source_index_map() {
            bail!("{}: stacks are not aligned", pair.display());
        }
        for (i, (c, t)) in a.slices().iter().zip(b.slices()).enumerate() {
            out.push(PairedSample {
                condition: c.clone(),
                target: t.clone(),
                lesion_mask: ndarray::Array2::from_elem(c.dim(), false),
                case_id: format!("{}:{}", meta.case_id, a.source_index_map()[i]),
            });
        }
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> anyhow::Result<Vec<PairedSample>> {
    let data = if dir.join(DATASET_MANIFEST).is_file() { from_manifest(dir)? } else { from_stacks(dir)? };
    if data.is_empty() {
        bail!("no training pairs found in {}", dir.display());
    }
    Ok(data)
}

pub fn run(args: &TrainArgs, seed: u64, out: &Path, cfg: &FileConfig) -> anyhow::Result<RunRecord> {
    let data = load_dataset(&args.data)?;
    let (h, w) = data[0].target.dim();
    if h != w {
        bail!("training slices must be square, got {h}x{w}");
    }
    let dcfg = match (&cfg.denoiser, args.preset) {
        (Some(d), _) => d.clone(),
        (None, Preset::Toy) => DenoiserConfig::toy().with_image_side(h),
        (None, Preset::Paper) => DenoiserConfig::paper().with_image_side(h),
    };
    let mut tcfg = cfg.training.clone().unwrap_or_else(|| match args.preset {
        Preset::Toy => TrainingConfig { learning_rate: TOY_LEARNING_RATE, ..Default::default() },
        Preset::Paper => TrainingConfig::default(),
    });
    tcfg.seed = seed;
    if let Some(v) = args.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = args.max_steps {
        tcfg.max_steps = Some(v);
        if args.epochs.is_none() {
            // Enough passes to reach the step budget.
            let per_epoch = data.len().div_ceil(args.batch_size.unwrap_or(tcfg.batch_size).max(1));
            tcfg.epochs = tcfg.epochs.max(v.div_ceil(per_epoch));
        }
    }
    if let Some(v) = args.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        tcfg.learning_rate = v;
    }
    if let Some(v) = args.checkpoint_every {
        tcfg.checkpoint_every = Some(v);
    }
    eprintln!(
        "training on {} pairs of {h}x{w}: {} epochs, batch {}, lr {}",
        data.len(),
        tcfg.epochs,
        tcfg.batch_size,
        tcfg.learning_rate
    );
    let outcome = Trainer::new(&dcfg, &tcfg)?
        .with_output(out)
        .with_progress(|step, loss| {
            if step % 50 == 0 {
                eprintln!("step {step}: loss {loss:.5}");
            }
        })
        .run(&data)?;
    eprintln!("finished {} steps; first batch loss {:.4}", outcome.steps, outcome.first_batch_loss);
    Ok(RunRecord {
        config: json!({ "denoiser": dcfg, "training": tcfg, "pairs": data.len(), "steps": outcome.steps }),
        inputs: vec![args.data.clone()],
        outputs: vec![out.join(CHECKPOINT_DIR), out.join(TRAINING_LOG)],
        manifest_dir: Some(out.to_path_buf()),
    })
}
