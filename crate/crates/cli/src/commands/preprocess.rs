use std::path::Path;

use anyhow::Context;
use ctdiff_core::volume::{drop_empty_slices_paired, write_stack, Modality, WindowSpec};
use serde_json::json;

use crate::args::PreprocessArgs;
use crate::commands::read_volume;
use crate::manifest::RunRecord;

pub const FDCT_STACK: &str = "fdct";
pub const MDCT_STACK: &str = "mdct";

pub fn run(args: &PreprocessArgs, out: &Path) -> anyhow::Result<RunRecord> {
    let w = WindowSpec::default();
    let fdct = read_volume(&args.fdct)?;
    let mdct = read_volume(&args.mdct)?;
    let case_id = fdct.case_id().to_string();
    let (a, b) = drop_empty_slices_paired(&fdct, &mdct, &w).with_context(|| format!("case {case_id}"))?;
    let (a, b) = (a.resized(args.side)?, b.resized(args.side)?);
    // In-plane spacing scales with the resize; slice spacing is kept.
    let [sz, sy, sx] = fdct.spacing_mm();
    let [_, h, wd] = fdct.dims();
    let spacing = [sz, sy * h as f64 / args.side as f64, sx * wd as f64 / args.side as f64];
    write_stack(&out.join(FDCT_STACK), &a, spacing, Modality::Fdct, &case_id)?;
    write_stack(&out.join(MDCT_STACK), &b, spacing, Modality::Mdct, mdct.case_id())?;
    eprintln!("kept {} of {} slice pairs for {case_id}", a.len(), fdct.depth());
    Ok(RunRecord {
        config: json!({ "side": args.side, "window": w, "kept_slices": a.source_index_map() }),
        inputs: vec![args.fdct.clone(), args.mdct.clone()],
        outputs: vec![out.join(FDCT_STACK), out.join(MDCT_STACK)],
        manifest_dir: Some(out.to_path_buf()),
    })
}
