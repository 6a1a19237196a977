//! HU-domain evaluation: MSE, PSNR, SSIM, per-case reports and two
//! diagnostics (slice consistency and lesion preservation).

use std::fmt::Write as _;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{HuVolume, WindowSpec};

pub const DEFAULT_PSNR_PEAK_HU: f64 = 100.0;
/// Reported instead of +inf when prediction and target are identical.
pub const PSNR_SENTINEL_DB: f64 = 99.0;
pub const LESION_RING_PX: usize = 3;
pub const MIN_TARGET_CONTRAST_HU: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range_hu: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range_hu: 100.0,
        }
    }
}

impl SsimConfig {
    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::validation(format!("ssim window {} must be odd", self.window)));
        }
        if !(self.sigma > 0.0 && self.range_hu > 0.0) {
            return Err(Error::validation("ssim sigma and range must be positive"));
        }
        Ok(())
    }

    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    fn taps(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = g.iter().sum();
        g.into_iter().map(|v| v / sum).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub psnr_peak_hu: f64,
    pub ssim: SsimConfig,
    /// Both volumes are clamped to this window before any metric.
    pub window: Option<WindowSpec>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            psnr_peak_hu: DEFAULT_PSNR_PEAK_HU,
            ssim: SsimConfig::default(),
            window: Some(WindowSpec::default()),
        }
    }
}

fn check_shapes(pred: &HuVolume, target: &HuVolume) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::validation(format!(
            "shape mismatch: prediction {:?}, target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    Ok(())
}

/// Mean squared HU difference over all voxels.
pub fn mse_hu(pred: &HuVolume, target: &HuVolume) -> Result<f64> {
    check_shapes(pred, target)?;
    let n = pred.data().len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / n)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_SENTINEL_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(pred: &HuVolume, target: &HuVolume, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::validation(format!("psnr peak {peak} must be positive")));
    }
    Ok(psnr_from_mse(mse_hu(pred, target)?, peak))
}

/// Correlate each row with `taps`, keeping only fully covered positions.
fn filter_rows(src: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = src.dim();
    let ow = w + 1 - taps.len();
    Array2::from_shape_fn((h, ow), |(y, x)| taps.iter().enumerate().map(|(k, t)| t * src[[y, x + k]]).sum())
}

fn filter_cols(src: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = src.dim();
    let oh = h + 1 - taps.len();
    Array2::from_shape_fn((oh, w), |(y, x)| taps.iter().enumerate().map(|(k, t)| t * src[[y + k, x]]).sum())
}

fn gaussian_filter(src: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    filter_cols(&filter_rows(src, taps), taps)
}

/// Incremental mean; exact when every value is equal.
#[derive(Default)]
struct RunningMean {
    value: f64,
    n: usize,
}

impl RunningMean {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.value += (v - self.value) / self.n as f64;
    }
}

/// Mean SSIM over the valid region of one slice pair.
pub fn ssim_slice(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::validation(format!("slice shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    if h < cfg.window || w < cfg.window {
        return Err(Error::validation(format!(
            "slice {h}x{w} smaller than the {0}x{0} ssim window",
            cfg.window
        )));
    }
    let taps = cfg.taps();
    // Moments are taken about the first pixel, so constant regions give
    // exact means and zero variance.
    let (rx, ry) = (a[[0, 0]] as f64, b[[0, 0]] as f64);
    let x = a.mapv(|v| v as f64 - rx);
    let y = b.mapv(|v| v as f64 - ry);
    let mx = gaussian_filter(&x, &taps);
    let my = gaussian_filter(&y, &taps);
    let mxx = gaussian_filter(&(&x * &x), &taps);
    let myy = gaussian_filter(&(&y * &y), &taps);
    let mxy = gaussian_filter(&(&x * &y), &taps);
    let c1 = (cfg.k1 * cfg.range_hu).powi(2);
    let c2 = (cfg.k2 * cfg.range_hu).powi(2);
    let mut mean = RunningMean::default();
    for ((((&dx, &dy), &exx), &eyy), &exy) in mx.iter().zip(&my).zip(&mxx).zip(&myy).zip(&mxy) {
        let vx = exx - dx * dx;
        let vy = eyy - dy * dy;
        let cxy = exy - dx * dy;
        let (ux, uy) = (rx + dx, ry + dy);
        let luminance = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        let structure = (2.0 * cxy + c2) / (vx + vy + c2);
        mean.push(luminance * structure);
    }
    Ok(mean.value)
}

/// 2D SSIM per slice, averaged over slices.
pub fn ssim(pred: &HuVolume, target: &HuVolume, cfg: &SsimConfig) -> Result<f64> {
    check_shapes(pred, target)?;
    let mut mean = RunningMean::default();
    for z in 0..pred.depth() {
        mean.push(ssim_slice(pred.slice(z), target.slice(z), cfg)?);
    }
    Ok(mean.value)
}

/// Mean absolute difference of mean HU between adjacent slices.
pub fn slice_consistency(vol: &HuVolume) -> Result<f64> {
    let depth = vol.depth();
    if depth < 2 {
        return Err(Error::validation(format!("slice consistency needs >= 2 slices, got {depth}")));
    }
    let means: Vec<f64> = vol
        .data()
        .axis_iter(Axis(0))
        .map(|s| s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64)
        .collect();
    Ok(means.windows(2).map(|p| (p[0] - p[1]).abs()).sum::<f64>() / (depth - 1) as f64)
}

/// Disk dilation of `mask` by `radius` pixels, minus the mask itself.
pub fn surround_ring(mask: &Array2<bool>, radius: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    let r = radius as isize;
    let mut ring = Array2::from_elem((h, w), false);
    for ((y, x), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        for dy in -r..=r {
            for dx in -r..=r {
                if dy * dy + dx * dx > r * r {
                    continue;
                }
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if (0..h as isize).contains(&yy) && (0..w as isize).contains(&xx) {
                    ring[[yy as usize, xx as usize]] = true;
                }
            }
        }
    }
    ring.zip_mut_with(mask, |r, &m| *r &= !m);
    ring
}

/// Lesion-mean minus surround-mean, pooled over every slice of the volume.
pub fn lesion_contrast(vol: &HuVolume, mask: &Array3<bool>) -> Result<f64> {
    if mask.dim() != vol.data().dim() {
        return Err(Error::validation(format!(
            "mask shape {:?} differs from volume {:?}",
            mask.dim(),
            vol.data().dim()
        )));
    }
    let (mut sin, mut nin, mut sring, mut nring) = (0.0, 0usize, 0.0, 0usize);
    for (slice, m) in vol.data().axis_iter(Axis(0)).zip(mask.axis_iter(Axis(0))) {
        let m = m.to_owned();
        let ring = surround_ring(&m, LESION_RING_PX);
        for ((&v, &inside), &around) in slice.iter().zip(&m).zip(&ring) {
            if inside {
                sin += v as f64;
                nin += 1;
            } else if around {
                sring += v as f64;
                nring += 1;
            }
        }
    }
    if nin == 0 {
        return Err(Error::validation("lesion mask is empty"));
    }
    if nring == 0 {
        return Err(Error::validation("lesion mask leaves no surrounding ring"));
    }
    Ok(sin / nin as f64 - sring / nring as f64)
}

/// Ratio of lesion contrast in the prediction to that in the target.
pub fn lesion_preservation(pred: &HuVolume, target: &HuVolume, mask: &Array3<bool>) -> Result<f64> {
    check_shapes(pred, target)?;
    let target_contrast = lesion_contrast(target, mask)?;
    if target_contrast < MIN_TARGET_CONTRAST_HU {
        return Err(Error::UndefinedContrast(target_contrast));
    }
    Ok(lesion_contrast(pred, mask)? / target_contrast)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    #[serde(default)]
    pub run: usize,
    pub mse_hu2: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// `across_cases` or `across_runs`.
    pub label: String,
    pub n: usize,
    pub mse_hu2: MeanStd,
    pub psnr_db: MeanStd,
    pub ssim: MeanStd,
}

impl Aggregate {
    fn of(label: &str, rows: &[(f64, f64, f64)]) -> Aggregate {
        let col = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        Aggregate {
            label: label.into(),
            n: rows.len(),
            mse_hu2: MeanStd::of(&col(|r| r.0)),
            psnr_db: MeanStd::of(&col(|r| r.1)),
            ssim: MeanStd::of(&col(|r| r.2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: MetricsConfig,
    /// Sorted by case id, then run.
    pub per_case: Vec<CaseMetrics>,
    /// Spread over cases of each case's run-averaged metrics.
    pub aggregate: Aggregate,
    /// Spread over runs of each run's case-averaged metrics; present with two or more runs.
    pub across_runs: Option<Aggregate>,
}

fn case_metrics(pred: &HuVolume, target: &HuVolume, cfg: &MetricsConfig, run: usize) -> Result<CaseMetrics> {
    let case_id = target.case_id().to_string();
    let inner = || -> Result<CaseMetrics> {
        check_shapes(pred, target)?;
        let (p, t) = match &cfg.window {
            Some(w) => (pred.clamped_to(w), target.clamped_to(w)),
            None => (pred.clone(), target.clone()),
        };
        let mse = mse_hu(&p, &t)?;
        Ok(CaseMetrics {
            case_id: case_id.clone(),
            run,
            mse_hu2: mse,
            psnr_db: psnr_from_mse(mse, cfg.psnr_peak_hu),
            ssim: ssim(&p, &t, &cfg.ssim)?,
        })
    };
    inner().map_err(|e| e.in_case(case_id.clone()))
}

/// Per-case metrics with mean ± population std across cases.
pub fn evaluate_cases(pairs: &[(&HuVolume, &HuVolume)], cfg: &MetricsConfig) -> Result<MetricsReport> {
    evaluate_runs(&[pairs.to_vec()], cfg)
}

/// Like [`evaluate_cases`] for repeated sampling runs over the same cases.
pub fn evaluate_runs(runs: &[Vec<(&HuVolume, &HuVolume)>], cfg: &MetricsConfig) -> Result<MetricsReport> {
    if runs.is_empty() || runs.iter().any(|r| r.is_empty()) {
        return Err(Error::validation("evaluation needs at least one case"));
    }
    if !(cfg.psnr_peak_hu > 0.0) {
        return Err(Error::validation("psnr peak must be positive"));
    }
    let mut per_case = Vec::new();
    for (run, pairs) in runs.iter().enumerate() {
        for (pred, target) in pairs {
            per_case.push(case_metrics(pred, target, cfg, run)?);
        }
    }
    per_case.sort_by(|a, b| a.case_id.cmp(&b.case_id).then(a.run.cmp(&b.run)));

    let mut by_case: Vec<(f64, f64, f64)> = Vec::new();
    for group in per_case.chunk_by(|a, b| a.case_id == b.case_id) {
        let n = group.len() as f64;
        by_case.push((
            group.iter().map(|c| c.mse_hu2).sum::<f64>() / n,
            group.iter().map(|c| c.psnr_db).sum::<f64>() / n,
            group.iter().map(|c| c.ssim).sum::<f64>() / n,
        ));
    }
    let across_runs = (runs.len() > 1).then(|| {
        let rows: Vec<_> = (0..runs.len())
            .map(|r| {
                let rs: Vec<&CaseMetrics> = per_case.iter().filter(|c| c.run == r).collect();
                let n = rs.len() as f64;
                (
                    rs.iter().map(|c| c.mse_hu2).sum::<f64>() / n,
                    rs.iter().map(|c| c.psnr_db).sum::<f64>() / n,
                    rs.iter().map(|c| c.ssim).sum::<f64>() / n,
                )
            })
            .collect();
        Aggregate::of("across_runs", &rows)
    });
    Ok(MetricsReport {
        config: *cfg,
        per_case,
        aggregate: Aggregate::of("across_cases", &by_case),
        across_runs,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table with MSE [HU²], SSIM and PSNR columns.
    pub fn to_table(&self) -> String {
        let multi_run = self.per_case.iter().any(|c| c.run > 0);
        let width = self
            .per_case
            .iter()
            .map(|c| c.case_id.len() + if multi_run { 4 } else { 0 })
            .chain([14])
            .max()
            .unwrap_or(14);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>18}  {:>16}  {:>16}", "case", "MSE [HU²]", "SSIM", "PSNR [dB]");
        for c in &self.per_case {
            let name = if multi_run { format!("{} r{}", c.case_id, c.run) } else { c.case_id.clone() };
            let _ = writeln!(out, "{name:<width$}  {:>18.2}  {:>16.4}  {:>16.2}", c.mse_hu2, c.ssim, c.psnr_db);
        }
        for agg in std::iter::once(&self.aggregate).chain(&self.across_runs) {
            let _ = writeln!(
                out,
                "{:<width$}  {:>18}  {:>16}  {:>16}",
                agg.label,
                format!("{:.2} ± {:.2}", agg.mse_hu2.mean, agg.mse_hu2.std),
                format!("{:.4} ± {:.4}", agg.ssim.mean, agg.ssim.std),
                format!("{:.2} ± {:.2}", agg.psnr_db.mean, agg.psnr_db.std),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Modality;
    use ndarray::Array3;

    fn vol(data: Array3<f32>, id: &str) -> HuVolume {
        HuVolume::new(data, [1.0, 1.0, 1.0], Modality::Synthetic, id).unwrap()
    }

    fn flat(values: &[f32], id: &str) -> HuVolume {
        vol(Array3::from_shape_vec((1, 1, values.len()), values.to_vec()).unwrap(), id)
    }

    #[test]
    fn mse_examples() {
        let a = flat(&[1.0, 2.0], "a");
        assert_eq!(mse_hu(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_hu(&flat(&[13.0, 12.0], "a"), &flat(&[3.0, 2.0], "a")).unwrap(), 100.0);
        assert_eq!(mse_hu(&flat(&[3.0, -4.0], "a"), &flat(&[0.0, 0.0], "a")).unwrap(), 12.5);
        assert!(mse_hu(&flat(&[1.0], "a"), &a).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(100.0, 100.0), 20.0);
        let a = flat(&[1.0, 2.0], "a");
        assert_eq!(psnr(&a, &a, 100.0).unwrap(), PSNR_SENTINEL_DB);
        assert!((psnr_from_mse(78.22, 100.0) - 21.07).abs() < 0.005);
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_small_slice() {
        let data = Array3::from_shape_fn((2, 16, 16), |(z, y, x)| ((z * 7 + y * 3 + x * x) % 23) as f32 * 4.0);
        let v = vol(data, "a");
        assert!((ssim(&v, &v, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        let small = vol(Array3::zeros((1, 10, 16)), "a");
        assert!(matches!(ssim(&small, &small, &SsimConfig::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn slice_consistency_examples() {
        let mut data = Array3::<f32>::zeros((3, 2, 2));
        data.index_axis_mut(Axis(0), 0).fill(10.0);
        data.index_axis_mut(Axis(0), 1).fill(20.0);
        data.index_axis_mut(Axis(0), 2).fill(20.0);
        assert_eq!(slice_consistency(&vol(data, "a")).unwrap(), 5.0);
        assert_eq!(slice_consistency(&vol(Array3::from_elem((4, 3, 3), 7.0), "a")).unwrap(), 0.0);
        assert!(slice_consistency(&vol(Array3::zeros((1, 3, 3)), "a")).is_err());
    }

    fn lesion_case(lesion_hu: f32) -> (HuVolume, Array3<bool>) {
        let mut data = Array3::<f32>::from_elem((1, 16, 16), 30.0);
        let mut mask = Array3::from_elem((1, 16, 16), false);
        for y in 6..9 {
            for x in 6..9 {
                data[[0, y, x]] = lesion_hu;
                mask[[0, y, x]] = true;
            }
        }
        (vol(data, "a"), mask)
    }

    #[test]
    fn lesion_preservation_examples() {
        let (t, mask) = lesion_case(60.0);
        assert_eq!(lesion_preservation(&t, &t, &mask).unwrap(), 1.0);
        let (flat_pred, _) = lesion_case(30.0);
        assert_eq!(lesion_preservation(&flat_pred, &t, &mask).unwrap(), 0.0);
        let (half, _) = lesion_case(45.0);
        assert_eq!(lesion_preservation(&half, &t, &mask).unwrap(), 0.5);
        let empty = Array3::from_elem((1, 16, 16), false);
        assert!(matches!(lesion_preservation(&t, &t, &empty), Err(Error::Validation(_))));
        assert!(matches!(
            lesion_preservation(&t, &flat_pred, &mask),
            Err(Error::UndefinedContrast(_))
        ));
    }

    #[test]
    fn surround_ring_is_disk_minus_mask() {
        let mut m = Array2::from_elem((9, 9), false);
        m[[4, 4]] = true;
        let ring = surround_ring(&m, 3);
        // Lattice points within radius 3 of the center, minus the center.
        assert_eq!(ring.iter().filter(|&&b| b).count(), 28);
        assert!(!ring[[4, 4]]);
        assert!(ring[[4, 7]] && !ring[[1, 1]]);
    }

    #[test]
    fn aggregation_examples() {
        let t = flat(&[0.0; 4], "case-b");
        let p1 = flat(&[50f32.sqrt(); 4], "case-b");
        let report = evaluate_cases(&[(&p1, &t)], &MetricsConfig { window: None, ssim: SsimConfig { window: 1, ..Default::default() }, ..Default::default() }).unwrap();
        assert_eq!(report.aggregate.mse_hu2.std, 0.0);

        let t2 = flat(&[0.0; 4], "case-a");
        let p2 = flat(&[150f32.sqrt(); 4], "case-a");
        let cfg = MetricsConfig { window: None, ssim: SsimConfig { window: 1, ..Default::default() }, ..Default::default() };
        let report = evaluate_cases(&[(&p1, &t), (&p2, &t2)], &cfg).unwrap();
        assert_eq!(report.per_case[0].case_id, "case-a");
        assert!((report.aggregate.mse_hu2.mean - 100.0).abs() < 1e-4);
        assert!((report.aggregate.mse_hu2.std - 50.0).abs() < 1e-4);
        assert!(report.across_runs.is_none());
        let table = report.to_table();
        assert!(table.contains("MSE [HU²]") && table.contains("across_cases"));
        let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn mean_psnr_differs_from_psnr_of_mean_mse() {
        let mses = [10.0, 1000.0];
        let mean_psnr = (psnr_from_mse(mses[0], 100.0) + psnr_from_mse(mses[1], 100.0)) / 2.0;
        let psnr_of_mean = psnr_from_mse((mses[0] + mses[1]) / 2.0, 100.0);
        assert!((mean_psnr - 20.0).abs() < 1e-12);
        assert!((psnr_of_mean - 12.967).abs() < 1e-3);
    }

    #[test]
    fn across_runs_aggregate() {
        let t = flat(&[0.0; 4], "c");
        let p1 = flat(&[1.0; 4], "c");
        let p2 = flat(&[3.0; 4], "c");
        let cfg = MetricsConfig { window: None, ssim: SsimConfig { window: 1, ..Default::default() }, ..Default::default() };
        let report = evaluate_runs(&[vec![(&p1, &t)], vec![(&p2, &t)]], &cfg).unwrap();
        let runs = report.across_runs.unwrap();
        assert_eq!(runs.n, 2);
        assert_eq!(runs.mse_hu2.mean, 5.0);
        assert_eq!(runs.mse_hu2.std, 4.0);
        assert_eq!(report.aggregate.n, 1);
    }

    #[test]
    fn mismatched_case_is_named() {
        let t = flat(&[0.0; 4], "case-x");
        let p = flat(&[0.0; 3], "case-x");
        let err = evaluate_cases(&[(&p, &t)], &MetricsConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Case { case_id, .. } if case_id == "case-x"));
    }

    #[test]
    fn evaluation_clamps_to_window() {
        let t = flat(&[-1000.0; 4], "c");
        let p = flat(&[-500.0; 4], "c");
        let cfg = MetricsConfig { ssim: SsimConfig { window: 1, ..Default::default() }, ..Default::default() };
        let r = evaluate_cases(&[(&p, &t)], &cfg).unwrap();
        assert_eq!(r.per_case[0].mse_hu2, 0.0);
    }
}
