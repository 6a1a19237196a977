use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use ctdiff_core::denoiser::load_checkpoint;
use ctdiff_core::derive_seed;
use ctdiff_core::diffusion::sample_batch;
use ctdiff_core::volume::{resize_slice, stack_slices, window_slice, write_volume, HuVolume, NormalizedSliceStack, WindowSpec};
use ndarray::{Array2, Axis};
use serde_json::json;

use crate::args::TranslateArgs;
use crate::commands::{dir_name, read_volume, volume_dirs};
use crate::manifest::RunRecord;

/// FNV-1a, so per-case seeds do not depend on the standard hasher.
fn case_key(case_id: &str) -> u64 {
    case_id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Sampling seed of slice `z` of a case.
pub fn slice_seed(seed: u64, case_id: &str, z: usize) -> u64 {
    derive_seed(derive_seed(seed, z as u64), case_key(case_id))
}

struct Job {
    volume: usize,
    condition: Array2<f32>,
    seed: u64,
}

pub fn run(args: &TranslateArgs, seed: u64, out: &Path) -> anyhow::Result<RunRecord> {
    if args.batch == 0 {
        bail!("--batch must be at least 1");
    }
    let (model, ckpt) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let sched = ckpt.schedule.build()?;
    let side = model.config().image_side;
    let w = WindowSpec::default();

    let (inputs, targets): (Vec<PathBuf>, Vec<PathBuf>) = match (&args.input, &args.input_root) {
        (Some(v), _) => (vec![v.clone()], vec![out.to_path_buf()]),
        (None, Some(root)) => {
            let dirs = volume_dirs(root)?;
            let outs = dirs.iter().map(|d| out.join(dir_name(d))).collect();
            (dirs, outs)
        }
        (None, None) => bail!("one of --input or --input-root is required"),
    };

    let volumes: Vec<HuVolume> = inputs.iter().map(|p| read_volume(p)).collect::<anyhow::Result<_>>()?;
    let mut jobs = Vec::new();
    for (vi, v) in volumes.iter().enumerate() {
        let [_, h, wd] = v.dims();
        if h != wd {
            bail!("case {}: slices must be square, got {h}x{wd}", v.case_id());
        }
        for z in 0..v.depth() {
            let unit = window_slice(v.slice(z), &w)?;
            let condition = if h == side { unit } else { resize_slice(unit.view(), side)? };
            jobs.push(Job { volume: vi, condition, seed: slice_seed(seed, v.case_id(), z) });
        }
    }
    eprintln!(
        "sampling {} slices from {} volume(s) over {} steps, {} at a time",
        jobs.len(),
        volumes.len(),
        sched.steps(),
        args.batch
    );

    let start = Instant::now();
    let mut predicted: Vec<Array2<f32>> = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(args.batch) {
        let views: Vec<_> = chunk.iter().map(|j| j.condition.view()).collect();
        let batch = ndarray::stack(Axis(0), &views)?;
        let seeds: Vec<u64> = chunk.iter().map(|j| j.seed).collect();
        let out = sample_batch(batch.view(), &model, &sched, &seeds)?;
        predicted.extend(out.outer_iter().map(|s| s.to_owned()));
        eprintln!("sampled {}/{} slices ({:.0}s)", predicted.len(), jobs.len(), start.elapsed().as_secs_f64());
    }

    for (vi, (v, target)) in volumes.iter().zip(&targets).enumerate() {
        let [depth, h, _] = v.dims();
        let slices: Vec<Array2<f32>> = jobs
            .iter()
            .zip(&predicted)
            .filter(|(j, _)| j.volume == vi)
            .map(|(_, p)| if h == side { Ok(p.clone()) } else { resize_slice(p.view(), h) })
            .collect::<Result<_, _>>()?;
        let stack = NormalizedSliceStack::new(slices, w, (0..depth).collect())?;
        let pred = stack_slices(&stack, &w, v.spacing_mm(), v.case_id())?;
        write_volume(target, &pred, Some(w)).with_context(|| format!("writing {}", target.display()))?;
    }
    Ok(RunRecord {
        config: json!({
            "checkpoint": ckpt,
            "batch": args.batch,
            "window": w,
            "slice_seeds": "derive_seed(derive_seed(seed, z), fnv1a(case_id))",
        }),
        inputs: std::iter::once(args.checkpoint.clone()).chain(inputs).collect(),
        outputs: targets,
        manifest_dir: Some(out.to_path_buf()),
    })
}
