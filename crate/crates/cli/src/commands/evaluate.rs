use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ctdiff_core::metrics::{evaluate_cases, lesion_contrast, lesion_preservation, MetricsConfig};
use ctdiff_core::volume::HuVolume;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::EvaluateArgs;
use crate::commands::{dir_name, read_volume, volume_dirs};
use crate::manifest::RunRecord;

pub const REPORT_JSON: &str = "metrics.json";
pub const REPORT_TABLE: &str = "metrics.txt";
pub const LESION_JSON: &str = "lesion_preservation.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionResult {
    pub case_id: String,
    pub target_contrast_hu: f64,
    pub preservation: f64,
}

fn pair_dirs(args: &EvaluateArgs) -> anyhow::Result<Vec<(String, PathBuf, PathBuf)>> {
    match (&args.pred, &args.target, &args.pred_root, &args.target_root) {
        (Some(p), Some(t), _, _) => Ok(vec![(dir_name(t), p.clone(), t.clone())]),
        (_, _, Some(pr), Some(tr)) => {
            let mut out = Vec::new();
            for t in volume_dirs(tr)? {
                let name = dir_name(&t);
                let p = pr.join(&name);
                if !p.is_dir() {
                    bail!("no prediction for {name} under {}", pr.display());
                }
                out.push((name, p, t));
            }
            Ok(out)
        }
        _ => bail!("give either --pred and --target, or --pred-root and --target-root"),
    }
}

pub fn run(args: &EvaluateArgs, out: &Path, cfg: &MetricsConfig) -> anyhow::Result<RunRecord> {
    let dirs = pair_dirs(args)?;
    let mut pairs: Vec<(HuVolume, HuVolume)> = Vec::with_capacity(dirs.len());
    for (name, p, t) in &dirs {
        let target = read_volume(t)?;
        // Cases are keyed by the target's directory name.
        let pred = read_volume(p)?.with_case_id(name.clone());
        pairs.push((pred, target.with_case_id(name.clone())));
    }
    let refs: Vec<(&HuVolume, &HuVolume)> = pairs.iter().map(|(p, t)| (p, t)).collect();
    let report = evaluate_cases(&refs, cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(REPORT_JSON), report.to_json() + "\n")?;
    std::fs::write(out.join(REPORT_TABLE), report.to_table())?;
    print!("{}", report.to_table());
    let mut outputs = vec![out.join(REPORT_JSON), out.join(REPORT_TABLE)];

    if let Some(mask_root) = &args.mask_root {
        let mut lesions = Vec::new();
        for (name, pred, target) in pairs.iter().map(|(p, t)| (t.case_id().to_string(), p, t)) {
            let mask = read_volume(&mask_root.join(&name))?;
            let mask = mask.data().mapv(|v| v > 0.5);
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let (p, t) = match &cfg.window {
                Some(w) => (pred.clamped_to(w), target.clamped_to(w)),
                None => (pred.clone(), target.clone()),
            };
            let contrast = lesion_contrast(&t, &mask).with_context(|| format!("case {name}"))?;
            let preservation = match lesion_preservation(&p, &t, &mask) {
                Ok(v) => v,
                Err(ctdiff_core::Error::UndefinedContrast(_)) => continue,
                Err(e) => return Err(e).with_context(|| format!("case {name}")),
            };
            lesions.push(LesionResult { case_id: name, target_contrast_hu: contrast, preservation });
        }
        std::fs::write(out.join(LESION_JSON), serde_json::to_string_pretty(&lesions)? + "\n")?;
        outputs.push(out.join(LESION_JSON));
    }

    let inputs = dirs.iter().flat_map(|(_, p, t)| [p.clone(), t.clone()]).collect();
    Ok(RunRecord {
        config: json!({ "metrics": cfg, "mask_root": args.mask_root }),
        inputs,
        outputs,
        manifest_dir: Some(out.to_path_buf()),
    })
}
