use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use ctdiff_core::simulate::{simulate_case, ManifestRecord, RecipeDistribution, SimulatedCase};
use ctdiff_core::volume::{write_volume, HuVolume, Modality, WindowSpec};
use ndarray::Axis;
use serde_json::json;

use crate::args::SimulateArgs;
use crate::manifest::RunRecord;

pub const DATASET_MANIFEST: &str = "manifest.jsonl";

fn slice_volume(a: &ndarray::Array2<f32>, modality: Modality, case_id: &str) -> anyhow::Result<HuVolume> {
    Ok(HuVolume::new(a.clone().insert_axis(Axis(0)), [1.0, 1.0, 1.0], modality, case_id)?)
}

fn write_case(out: &Path, split: &str, case: &SimulatedCase, w: &WindowSpec) -> anyhow::Result<ManifestRecord> {
    let id = &case.case_id;
    let rel = |kind: &str| format!("{split}/{kind}/{id}");
    let mask = case.phantom.lesion_mask.mapv(|m| if m { 1.0f32 } else { 0.0 });
    write_volume(&out.join(rel("condition")), &slice_volume(&case.corrupted, Modality::Fdct, id)?, Some(*w))?;
    write_volume(&out.join(rel("target")), &slice_volume(&case.phantom.clean, Modality::Mdct, id)?, Some(*w))?;
    write_volume(&out.join(rel("mask")), &slice_volume(&mask, Modality::Synthetic, id)?, None)?;
    Ok(ManifestRecord {
        case_id: id.clone(),
        seed: case.seed,
        split: split.into(),
        recipe: case.recipe.clone(),
        has_lesion: case.phantom.has_lesion(),
        condition: rel("condition"),
        target: rel("target"),
        mask: rel("mask"),
    })
}

pub fn run(args: &SimulateArgs, seed: u64, out: &Path, dist: &RecipeDistribution) -> anyhow::Result<RunRecord> {
    if args.n == 0 {
        bail!("--n must be at least 1");
    }
    if args.holdout > args.n {
        bail!("--holdout {} exceeds --n {}", args.holdout, args.n);
    }
    let w = WindowSpec::default();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest_path = out.join(DATASET_MANIFEST);
    let mut manifest = std::io::BufWriter::new(
        std::fs::File::create(&manifest_path).with_context(|| format!("creating {}", manifest_path.display()))?,
    );
    let first_test = args.n - args.holdout;
    for i in 0..args.n {
        let case = simulate_case(i, args.side, seed, dist)?;
        let split = if i < first_test { "train" } else { "test" };
        let record = write_case(out, split, &case, &w).with_context(|| format!("case {}", case.case_id))?;
        writeln!(manifest, "{}", serde_json::to_string(&record)?)?;
    }
    manifest.flush()?;
    eprintln!("simulated {} cases ({} held out) into {}", args.n, args.holdout, out.display());
    Ok(RunRecord {
        config: json!({ "n": args.n, "side": args.side, "holdout": args.holdout, "recipe": dist, "window": w }),
        inputs: vec![],
        outputs: vec![out.to_path_buf()],
        manifest_dir: Some(out.to_path_buf()),
    })
}
