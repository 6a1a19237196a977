//! Volume containers, HU windowing and slice-stack handling.
//!
//! Volumes are stored on disk as a directory holding `meta.json` and
//! `data.raw` (little-endian `f32`, C order, z-major). Normalized slice
//! stacks use the same container plus a `stack.json` sidecar carrying the
//! window and the source index map.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of non-zero windowed pixels below which a slice counts as empty.
pub const EMPTY_SLICE_FRACTION: f64 = 0.005;

/// Slack allowed on unit-interval inputs before they are rejected.
pub const UNIT_TOLERANCE: f64 = 1e-6;

pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.raw";
pub const STACK_FILE: &str = "stack.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Fdct,
    Mdct,
    Prediction,
    Synthetic,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Fdct,
        Modality::Mdct,
        Modality::Prediction,
        Modality::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Fdct => "FDCT",
            Modality::Mdct => "MDCT",
            Modality::Prediction => "PREDICTION",
            Modality::Synthetic => "SYNTHETIC",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown modality {s:?}")))
    }
}

/// HU display window. The derived range is `[level - width/2, level + width/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub level: f64,
    pub width: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            level: 50.0,
            width: 100.0,
        }
    }
}

impl WindowSpec {
    pub fn new(level: f64, width: f64) -> Result<Self> {
        let w = WindowSpec { level, width };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.level.is_finite() || !self.width.is_finite() || self.width <= 0.0 {
            return Err(Error::validation(format!(
                "window needs finite level and width > 0, got level={} width={}",
                self.level, self.width
            )));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.level - self.width / 2.0
    }

    pub fn upper(&self) -> f64 {
        self.level + self.width / 2.0
    }

    /// Clamp an HU value into the window range.
    pub fn clamp_hu(&self, hu: f64) -> f64 {
        hu.clamp(self.lower(), self.upper())
    }
}

/// Map an HU value into `[0, 1]` through the window, clamping outside values.
pub fn window_to_unit(hu: f64, w: &WindowSpec) -> Result<f64> {
    w.validate()?;
    if !hu.is_finite() {
        return Err(Error::validation(format!("non-finite HU value {hu}")));
    }
    Ok(((hu - w.lower()) / w.width).clamp(0.0, 1.0))
}

/// Inverse of [`window_to_unit`] inside the window.
pub fn unit_to_hu(u: f64, w: &WindowSpec) -> Result<f64> {
    w.validate()?;
    if !u.is_finite() || u < -UNIT_TOLERANCE || u > 1.0 + UNIT_TOLERANCE {
        return Err(Error::validation(format!(
            "unit value {u} outside [0, 1] (tolerance {UNIT_TOLERANCE})"
        )));
    }
    Ok(u.clamp(0.0, 1.0) * w.width + w.lower())
}

/// Elementwise [`window_to_unit`] over a slice.
pub fn window_slice(hu: ArrayView2<'_, f32>, w: &WindowSpec) -> Result<Array2<f32>> {
    w.validate()?;
    if let Some(bad) = hu.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite HU value {bad}")));
    }
    let (lo, width) = (w.lower(), w.width);
    Ok(hu.mapv(|v| ((v as f64 - lo) / width).clamp(0.0, 1.0) as f32))
}

/// Elementwise [`unit_to_hu`] over a slice.
pub fn unit_slice_to_hu(u: ArrayView2<'_, f32>, w: &WindowSpec) -> Result<Array2<f32>> {
    w.validate()?;
    let mut out = Array2::zeros(u.raw_dim());
    for (o, &v) in out.iter_mut().zip(u.iter()) {
        *o = unit_to_hu(v as f64, w)? as f32;
    }
    Ok(out)
}

/// A 3D scalar field in Hounsfield units, indexed `(z, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HuVolume {
    data: Array3<f32>,
    spacing_mm: [f64; 3],
    modality: Modality,
    case_id: String,
}

impl HuVolume {
    pub fn new(
        data: Array3<f32>,
        spacing_mm: [f64; 3],
        modality: Modality,
        case_id: impl Into<String>,
    ) -> Result<Self> {
        let (z, y, x) = data.dim();
        if z == 0 || y == 0 || x == 0 {
            return Err(Error::validation(format!(
                "volume dims must be >= 1, got [{z}, {y}, {x}]"
            )));
        }
        if spacing_mm.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::validation(format!(
                "spacing must be strictly positive, got {spacing_mm:?}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("volume contains non-finite values"));
        }
        Ok(HuVolume {
            data,
            spacing_mm,
            modality,
            case_id: case_id.into(),
        })
    }

    /// Build a volume from a stack of equally shaped slices.
    pub fn from_slices(
        slices: &[Array2<f32>],
        spacing_mm: [f64; 3],
        modality: Modality,
        case_id: impl Into<String>,
    ) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::validation("cannot build a volume from zero slices"))?;
        let (h, w) = first.dim();
        let mut data = Array3::zeros((slices.len(), h, w));
        for (z, s) in slices.iter().enumerate() {
            if s.dim() != (h, w) {
                return Err(Error::validation(format!(
                    "slice {z} has shape {:?}, expected {:?}",
                    s.dim(),
                    (h, w)
                )));
            }
            data.index_axis_mut(Axis(0), z).assign(s);
        }
        HuVolume::new(data, spacing_mm, modality, case_id)
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// `[z, y, x]`
    pub fn dims(&self) -> [usize; 3] {
        let (z, y, x) = self.data.dim();
        [z, y, x]
    }

    pub fn depth(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn slice(&self, z: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), z)
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn with_case_id(mut self, case_id: impl Into<String>) -> Self {
        self.case_id = case_id.into();
        self
    }

    /// Copy of this volume with every voxel clamped into the window range.
    pub fn clamped_to(&self, w: &WindowSpec) -> HuVolume {
        let (lo, hi) = (w.lower() as f32, w.upper() as f32);
        HuVolume {
            data: self.data.mapv(|v| v.clamp(lo, hi)),
            ..self.clone()
        }
    }
}

/// Window-normalized slices, all one shape, tagged with their source z.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSliceStack {
    slices: Vec<Array2<f32>>,
    window: WindowSpec,
    source_index_map: Vec<usize>,
}

impl NormalizedSliceStack {
    pub fn new(
        slices: Vec<Array2<f32>>,
        window: WindowSpec,
        source_index_map: Vec<usize>,
    ) -> Result<Self> {
        window.validate()?;
        if slices.len() != source_index_map.len() {
            return Err(Error::validation(format!(
                "{} slices but {} source indices",
                slices.len(),
                source_index_map.len()
            )));
        }
        if source_index_map.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::validation(
                "source index map must be strictly increasing",
            ));
        }
        if let Some(first) = slices.first() {
            let shape = first.dim();
            for (i, s) in slices.iter().enumerate() {
                if s.dim() != shape {
                    return Err(Error::validation(format!(
                        "slice {i} has shape {:?}, expected {shape:?}",
                        s.dim()
                    )));
                }
                if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::validation(format!(
                        "slice {i} has values outside [0, 1]"
                    )));
                }
            }
        }
        Ok(NormalizedSliceStack {
            slices,
            window,
            source_index_map,
        })
    }

    pub fn slices(&self) -> &[Array2<f32>] {
        &self.slices
    }

    pub fn window(&self) -> WindowSpec {
        self.window
    }

    pub fn source_index_map(&self) -> &[usize] {
        &self.source_index_map
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Side length when the slices are square, `None` otherwise or when empty.
    pub fn square_side(&self) -> Option<usize> {
        let (h, w) = self.slices.first()?.dim();
        (h == w).then_some(h)
    }

    /// Resize every slice to `side x side`.
    pub fn resized(&self, side: usize) -> Result<NormalizedSliceStack> {
        let slices = self
            .slices
            .iter()
            .map(|s| resize_slice(s.view(), side))
            .collect::<Result<Vec<_>>>()?;
        NormalizedSliceStack::new(slices, self.window, self.source_index_map.clone())
    }
}

fn is_empty_slice(unit: &Array2<f32>) -> bool {
    let nonzero = unit.iter().filter(|&&v| v > 0.0).count();
    (nonzero as f64) < EMPTY_SLICE_FRACTION * unit.len() as f64
}

/// Window both volumes and drop every z where either slice is empty.
pub fn drop_empty_slices_paired(
    a: &HuVolume,
    b: &HuVolume,
    w: &WindowSpec,
) -> Result<(NormalizedSliceStack, NormalizedSliceStack)> {
    if a.depth() != b.depth() {
        return Err(Error::Pairing(format!(
            "z-extent mismatch: {} has {} slices, {} has {}",
            a.case_id(),
            a.depth(),
            b.case_id(),
            b.depth()
        )));
    }
    let mut keep = Vec::new();
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    for z in 0..a.depth() {
        let ua = window_slice(a.slice(z), w)?;
        let ub = window_slice(b.slice(z), w)?;
        if is_empty_slice(&ua) || is_empty_slice(&ub) {
            continue;
        }
        keep.push(z);
        sa.push(ua);
        sb.push(ub);
    }
    Ok((
        NormalizedSliceStack::new(sa, *w, keep.clone())?,
        NormalizedSliceStack::new(sb, *w, keep)?,
    ))
}

/// Window every slice of a volume without dropping any.
pub fn unstack(v: &HuVolume, w: &WindowSpec) -> Result<NormalizedSliceStack> {
    let slices = (0..v.depth())
        .map(|z| window_slice(v.slice(z), w))
        .collect::<Result<Vec<_>>>()?;
    NormalizedSliceStack::new(slices, *w, (0..v.depth()).collect())
}

fn sample_coords(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                (i * (src - 1)) as f64 / (dst - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear, corner-aligned resize of one slice to `target x target`.
pub fn resize_slice(s: ArrayView2<'_, f32>, target: usize) -> Result<Array2<f32>> {
    if target == 0 {
        return Err(Error::validation("resize target must be positive"));
    }
    let (h, w) = s.dim();
    if h < 2 || w < 2 {
        return Err(Error::validation(format!(
            "resize source must be at least 2x2, got {h}x{w}"
        )));
    }
    if h == target && w == target {
        return Ok(s.to_owned());
    }
    let rows = sample_coords(h, target);
    let cols = sample_coords(w, target);
    let mut out = Array2::zeros((target, target));
    for (r, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (c, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top = s[[y0, x0]] as f64 * (1.0 - fx) + s[[y0, x1]] as f64 * fx;
            let bottom = s[[y1, x0]] as f64 * (1.0 - fx) + s[[y1, x1]] as f64 * fx;
            out[[r, c]] = (top * (1.0 - fy) + bottom * fy) as f32;
        }
    }
    Ok(out)
}

/// Convert a normalized stack back to HU and stack it into a prediction volume.
pub fn stack_slices(
    stack: &NormalizedSliceStack,
    w: &WindowSpec,
    spacing_mm: [f64; 3],
    case_id: impl Into<String>,
) -> Result<HuVolume> {
    if stack.is_empty() {
        return Err(Error::validation("cannot stack an empty slice stack"));
    }
    let hu = stack
        .slices()
        .iter()
        .map(|s| unit_slice_to_hu(s.view(), w))
        .collect::<Result<Vec<_>>>()?;
    HuVolume::from_slices(&hu, spacing_mm, Modality::Prediction, case_id)
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub byte_order: String,
    pub modality: Modality,
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hu_window: Option<WindowSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StackSidecar {
    window: WindowSpec,
    source_index_map: Vec<usize>,
}

pub fn write_volume(dir: &Path, v: &HuVolume, hu_window: Option<WindowSpec>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = VolumeMeta {
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        dtype: "float32".into(),
        byte_order: "little".into(),
        modality: v.modality(),
        case_id: v.case_id().to_owned(),
        hu_window,
    };
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;

    let mut bytes = Vec::with_capacity(v.data().len() * 4);
    for value in v.data().iter() {
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    let data_path = dir.join(DATA_FILE);
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))
}

pub fn read_meta(dir: &Path) -> Result<VolumeMeta> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: VolumeMeta = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
    if meta.dtype != "float32" {
        return Err(Error::format(
            &meta_path,
            format!("unsupported dtype {:?}", meta.dtype),
        ));
    }
    if meta.byte_order != "little" {
        return Err(Error::format(
            &meta_path,
            format!("unsupported byte order {:?}", meta.byte_order),
        ));
    }
    Ok(meta)
}

pub fn read_volume(dir: &Path) -> Result<(HuVolume, VolumeMeta)> {
    let meta = read_meta(dir)?;
    let data_path = dir.join(DATA_FILE);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let [z, y, x] = meta.dims;
    let expected = 4 * z * y * x;
    if bytes.len() != expected {
        return Err(Error::format(
            &data_path,
            format!("expected {expected} bytes for dims {:?}, found {}", meta.dims, bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array3::from_shape_vec((z, y, x), values)
        .map_err(|e| Error::format(&data_path, e.to_string()))?;
    let v = HuVolume::new(data, meta.spacing_mm, meta.modality, meta.case_id.clone())
        .map_err(|e| Error::format(dir, e.to_string()))?;
    Ok((v, meta))
}

/// Persist a normalized stack: unit values in the volume container plus `stack.json`.
pub fn write_stack(
    dir: &Path,
    stack: &NormalizedSliceStack,
    spacing_mm: [f64; 3],
    modality: Modality,
    case_id: &str,
) -> Result<()> {
    let v = HuVolume::from_slices(stack.slices(), spacing_mm, modality, case_id)?;
    write_volume(dir, &v, Some(stack.window()))?;
    let sidecar = StackSidecar {
        window: stack.window(),
        source_index_map: stack.source_index_map().to_vec(),
    };
    let path = dir.join(STACK_FILE);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_stack(dir: &Path) -> Result<(NormalizedSliceStack, VolumeMeta)> {
    let (v, meta) = read_volume(dir)?;
    let path = dir.join(STACK_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: StackSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let slices = (0..v.depth()).map(|z| v.slice(z).to_owned()).collect();
    let stack = NormalizedSliceStack::new(slices, sidecar.window, sidecar.source_index_map)
        .map_err(|e| Error::format(dir, e.to_string()))?;
    Ok((stack, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn w() -> WindowSpec {
        WindowSpec::default()
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_to_unit(50.0, &w()).unwrap(), 0.5);
        assert_eq!(window_to_unit(100.0, &w()).unwrap(), 1.0);
        assert_eq!(window_to_unit(-20.0, &w()).unwrap(), 0.0);
        assert_eq!(window_to_unit(75.0, &w()).unwrap(), 0.75);
        assert!(window_to_unit(f64::NAN, &w()).is_err());
        assert!(window_to_unit(f64::INFINITY, &w()).is_err());
        assert!(WindowSpec::new(50.0, 0.0).is_err());
    }

    #[test]
    fn unit_to_hu_examples() {
        assert_eq!(unit_to_hu(0.5, &w()).unwrap(), 50.0);
        assert_eq!(unit_to_hu(0.0, &w()).unwrap(), 0.0);
        assert_eq!(unit_to_hu(1.0, &w()).unwrap(), 100.0);
        assert_eq!(unit_to_hu(1.0 + 5e-7, &w()).unwrap(), 100.0);
        assert!(unit_to_hu(1.01, &w()).is_err());
        assert!(unit_to_hu(-1e-3, &w()).is_err());
    }

    fn vol(slices: Vec<Array2<f32>>) -> HuVolume {
        HuVolume::from_slices(&slices, [1.0, 0.5, 0.5], Modality::Fdct, "c").unwrap()
    }

    fn tissue(side: usize) -> Array2<f32> {
        Array2::from_elem((side, side), 40.0)
    }

    fn air(side: usize) -> Array2<f32> {
        Array2::from_elem((side, side), -1000.0)
    }

    #[test]
    fn air_slice_dropped_from_both() {
        let a = vol(vec![air(8), tissue(8), tissue(8)]);
        let b = vol(vec![tissue(8), tissue(8), tissue(8)]);
        let (sa, sb) = drop_empty_slices_paired(&a, &b, &w()).unwrap();
        assert_eq!(sa.source_index_map(), &[1, 2]);
        assert_eq!(sb.source_index_map(), &[1, 2]);
    }

    #[test]
    fn no_empties_keeps_identity_map() {
        let a = vol(vec![tissue(8); 4]);
        let (sa, sb) = drop_empty_slices_paired(&a, &a, &w()).unwrap();
        assert_eq!(sa.len(), 4);
        assert_eq!(sb.source_index_map(), &[0, 1, 2, 3]);
    }

    #[test]
    fn union_of_empty_indices() {
        let a = vol(
            (0..10)
                .map(|z| if z == 0 || z == 9 { air(8) } else { tissue(8) })
                .collect(),
        );
        let b = vol(
            (0..10)
                .map(|z| if z == 0 || z == 5 { air(8) } else { tissue(8) })
                .collect(),
        );
        let (sa, sb) = drop_empty_slices_paired(&a, &b, &w()).unwrap();
        assert_eq!(sa.source_index_map(), &[1, 2, 3, 4, 6, 7, 8]);
        assert_eq!(sa.source_index_map(), sb.source_index_map());
    }

    #[test]
    fn emptiness_threshold_tolerates_specks() {
        // 1 of 400 pixels (0.25%) above the window floor: still empty.
        let mut speck = Array2::from_elem((20, 20), -1000.0f32);
        speck[[3, 3]] = 40.0;
        let a = vol(vec![speck.clone(), tissue(20)]);
        let (sa, _) = drop_empty_slices_paired(&a, &a, &w()).unwrap();
        assert_eq!(sa.source_index_map(), &[1]);
        // 4 of 400 (1%) is kept.
        for i in 0..4 {
            speck[[5, i]] = 40.0;
        }
        let a = vol(vec![speck, tissue(20)]);
        let (sa, _) = drop_empty_slices_paired(&a, &a, &w()).unwrap();
        assert_eq!(sa.source_index_map(), &[0, 1]);
    }

    #[test]
    fn mismatched_depth_is_pairing_error() {
        let a = vol(vec![tissue(4); 3]);
        let b = vol(vec![tissue(4); 2]);
        assert!(matches!(
            drop_empty_slices_paired(&a, &b, &w()),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn resize_examples() {
        let s = Array2::from_shape_fn((16, 16), |(i, j)| ((i * 16 + j) as f32) / 256.0);
        assert_eq!(resize_slice(s.view(), 16).unwrap(), s);

        let c = Array2::from_elem((7, 5), 0.3f32);
        for target in [1, 3, 8, 13] {
            assert!(resize_slice(c.view(), target)
                .unwrap()
                .iter()
                .all(|&v| v == 0.3));
        }

        let two = array![[0.0f32, 1.0], [0.0, 1.0]];
        let r = resize_slice(two.view(), 3).unwrap();
        assert_eq!(r.column(1).to_vec(), vec![0.5, 0.5, 0.5]);
        assert_eq!(r.column(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(r.column(2).to_vec(), vec![1.0, 1.0, 1.0]);

        assert!(resize_slice(two.view(), 0).is_err());
        assert!(resize_slice(array![[0.5f32]].view(), 4).is_err());
    }

    #[test]
    fn stack_examples() {
        let stack = NormalizedSliceStack::new(
            vec![Array2::from_elem((4, 4), 0.5); 3],
            w(),
            vec![0, 1, 2],
        )
        .unwrap();
        let v = stack_slices(&stack, &w(), [2.0, 1.0, 1.0], "p").unwrap();
        assert_eq!(v.depth(), 3);
        assert_eq!(v.modality(), Modality::Prediction);
        assert!(v.data().iter().all(|&x| x == 50.0));

        let one = NormalizedSliceStack::new(vec![Array2::zeros((4, 4))], w(), vec![7]).unwrap();
        let v = stack_slices(&one, &w(), [3.0, 0.5, 0.25], "p").unwrap();
        assert_eq!(v.dims(), [1, 4, 4]);
        assert_eq!(v.spacing_mm(), [3.0, 0.5, 0.25]);

        let empty = NormalizedSliceStack::new(vec![], w(), vec![]).unwrap();
        assert!(stack_slices(&empty, &w(), [1.0; 3], "p").is_err());
    }

    #[test]
    fn stack_rejects_bad_invariants() {
        assert!(NormalizedSliceStack::new(vec![Array2::zeros((2, 2)); 2], w(), vec![1, 1]).is_err());
        assert!(
            NormalizedSliceStack::new(vec![Array2::from_elem((2, 2), 1.5)], w(), vec![0]).is_err()
        );
        assert!(NormalizedSliceStack::new(
            vec![Array2::zeros((2, 2)), Array2::zeros((3, 3))],
            w(),
            vec![0, 1]
        )
        .is_err());
    }

    #[test]
    fn volume_invariants() {
        assert!(HuVolume::new(Array3::zeros((0, 2, 2)), [1.0; 3], Modality::Mdct, "x").is_err());
        assert!(HuVolume::new(Array3::zeros((1, 2, 2)), [1.0, 0.0, 1.0], Modality::Mdct, "x").is_err());
        let mut d = Array3::zeros((1, 2, 2));
        d[[0, 1, 1]] = f32::NAN;
        assert!(HuVolume::new(d, [1.0; 3], Modality::Mdct, "x").is_err());
    }

    #[test]
    fn container_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array3::from_shape_fn((2, 3, 4), |(z, y, x)| (z * 100 + y * 10 + x) as f32);
        let v = HuVolume::new(data, [1.5, 0.5, 0.25], Modality::Mdct, "case-1").unwrap();
        write_volume(dir.path(), &v, Some(w())).unwrap();

        let raw = fs::read(dir.path().join(DATA_FILE)).unwrap();
        assert_eq!(raw.len(), 4 * 24);
        // z-major C order: element [1, 2, 3] is at flat index 12 + 8 + 3.
        let at = 4 * 23;
        assert_eq!(f32::from_le_bytes(raw[at..at + 4].try_into().unwrap()), 123.0);

        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(META_FILE)).unwrap()).unwrap();
        assert_eq!(meta["dims"], serde_json::json!([2, 3, 4]));
        assert_eq!(meta["dtype"], "float32");
        assert_eq!(meta["byte_order"], "little");
        assert_eq!(meta["modality"], "MDCT");
        assert_eq!(meta["hu_window"]["level"], 50.0);

        let (back, m) = read_volume(dir.path()).unwrap();
        assert_eq!(back, v);
        assert_eq!(m.hu_window, Some(w()));
    }

    #[test]
    fn loader_rejects_truncated_data() {
        let dir = tempfile::tempdir().unwrap();
        let v = HuVolume::new(Array3::zeros((2, 2, 2)), [1.0; 3], Modality::Fdct, "t").unwrap();
        write_volume(dir.path(), &v, None).unwrap();
        fs::write(dir.path().join(DATA_FILE), [0u8; 28]).unwrap();
        let err = read_volume(dir.path()).unwrap_err();
        assert!(err.to_string().contains("expected 32 bytes"), "{err}");
    }

    #[test]
    fn stack_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stack = NormalizedSliceStack::new(
            vec![Array2::from_elem((3, 3), 0.25), Array2::from_elem((3, 3), 0.75)],
            w(),
            vec![2, 5],
        )
        .unwrap();
        write_stack(dir.path(), &stack, [1.0; 3], Modality::Fdct, "s").unwrap();
        let (back, _) = read_stack(dir.path()).unwrap();
        assert_eq!(back, stack);
    }

    proptest! {
        #[test]
        fn window_round_trip_on_window_range(hu in 0.0f64..=100.0) {
            let u = window_to_unit(hu, &w()).unwrap();
            let back = unit_to_hu(u, &w()).unwrap();
            prop_assert!((back - hu).abs() <= 1e-12);
        }

        #[test]
        fn unit_round_trip(u in 0.0f64..=1.0, level in -200.0f64..200.0, width in 1.0f64..400.0) {
            let win = WindowSpec::new(level, width).unwrap();
            let back = window_to_unit(unit_to_hu(u, &win).unwrap(), &win).unwrap();
            prop_assert!((back - u).abs() <= 1e-12);
        }

        #[test]
        fn resize_stays_in_unit_range(
            h in 2usize..12, w_ in 2usize..12, target in 1usize..20, seed in any::<u64>()
        ) {
            let s = Array2::from_shape_fn((h, w_), |(i, j)| {
                let k = (i * 31 + j * 17) as u64 ^ seed;
                (k % 1000) as f32 / 999.0
            });
            let r = resize_slice(s.view(), target).unwrap();
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
