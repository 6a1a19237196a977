//! Property tests over randomly generated inputs.

use ctdiff_core::diffusion::make_schedule;
use ctdiff_core::metrics::{ssim, SsimConfig};
use ctdiff_core::simulate::{inject_artifacts, make_phantom, ArtifactRecipe, CosineMode, Motion, Ring};
use ctdiff_core::volume::{drop_empty_slices_paired, window_to_unit, unit_to_hu, HuVolume, Modality, WindowSpec};
use ndarray::Array3;
use proptest::prelude::*;

fn volume(depth: usize, empties: &[bool], seed: u64, modality: Modality) -> HuVolume {
    let mut data = Array3::<f32>::from_elem((depth, 8, 8), -1000.0);
    for (z, &empty) in empties.iter().enumerate() {
        if !empty {
            for (i, v) in data.index_axis_mut(ndarray::Axis(0), z).iter_mut().enumerate() {
                *v = ((seed as usize + i * 7 + z * 13) % 90) as f32;
            }
        }
    }
    HuVolume::new(data, [1.0, 0.5, 0.5], modality, "p").unwrap()
}

proptest! {
    #[test]
    fn window_round_trip_on_display_range(hu in 0.0f64..=100.0) {
        let w = WindowSpec::default();
        let back = unit_to_hu(window_to_unit(hu, &w).unwrap(), &w).unwrap();
        prop_assert!((back - hu).abs() <= 1e-12);
    }

    #[test]
    fn paired_drop_keeps_stacks_aligned(
        a in proptest::collection::vec(any::<bool>(), 1..12),
        flips in proptest::collection::vec(any::<bool>(), 12),
        seed in 0u64..1000,
    ) {
        let depth = a.len();
        let b: Vec<bool> = a.iter().zip(&flips).map(|(x, f)| x ^ f).collect();
        let va = volume(depth, &a, seed, Modality::Fdct);
        let vb = volume(depth, &b, seed + 1, Modality::Mdct);
        let w = WindowSpec::default();
        match drop_empty_slices_paired(&va, &vb, &w) {
            Ok((sa, sb)) => {
                prop_assert_eq!(sa.len(), sb.len());
                prop_assert_eq!(sa.source_index_map(), sb.source_index_map());
                for &z in sa.source_index_map() {
                    prop_assert!(!a[z] && !b[z]);
                }
                let kept = (0..depth).filter(|&z| !a[z] && !b[z]).count();
                prop_assert_eq!(sa.len(), kept);
            }
            Err(_) => prop_assert!((0..depth).all(|z| a[z] || b[z])),
        }
    }

    #[test]
    fn alpha_bar_strictly_decreasing(steps in 2usize..2000, start in 1e-5f64..1e-3, span in 1e-3f64..0.05) {
        let s = make_schedule(steps, start, start + span).unwrap();
        for t in 1..=steps {
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one(seed in 0u64..10_000) {
        let data = Array3::from_shape_fn((1, 16, 16), |(_, y, x)| ((seed as usize * 31 + y * 17 + x * x * 5) % 101) as f32);
        let v = HuVolume::new(data, [1.0; 3], Modality::Synthetic, "s").unwrap();
        let s = ssim(&v, &v, &SsimConfig::default()).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }
}

fn recipe(seed: u64) -> ArtifactRecipe {
    let f = |k: u64| ((seed.wrapping_mul(2654435761).wrapping_add(k * 97)) % 1000) as f64 / 1000.0;
    ArtifactRecipe {
        rings: vec![Ring { amplitude_hu: 5.0 + 10.0 * f(1), radius_px: 4.0 + 8.0 * f(2), width_px: 1.0 }],
        cupping_hu: 10.0 + 20.0 * f(3),
        inhomogeneity: vec![CosineMode { amplitude_hu: 5.0 * f(4), kx: 1, ky: 1 }],
        motion: Motion { shift_px: 1.0 + f(5), angle: 6.0 * f(6), ghost_weight: 0.2 * f(7) },
        noise_sigma_hu: 1.0 + 3.0 * f(8),
    }
}

#[test]
fn doubling_recipe_does_not_raise_ssim() {
    let cfg = SsimConfig::default();
    let w = WindowSpec::default();
    let mut violations = 0;
    for seed in 0..60u64 {
        let p = make_phantom(seed, 32).unwrap();
        let as_vol = |a: ndarray::Array2<f32>| {
            HuVolume::new(a.insert_axis(ndarray::Axis(0)), [1.0; 3], Modality::Synthetic, "m").unwrap().clamped_to(&w)
        };
        let clean = as_vol(p.clean.clone());
        let r = recipe(seed);
        let once = as_vol(inject_artifacts(&p.clean, &r, seed).unwrap());
        let twice = as_vol(inject_artifacts(&p.clean, &r.scaled(2.0), seed).unwrap());
        if ssim(&twice, &clean, &cfg).unwrap() > ssim(&once, &clean, &cfg).unwrap() {
            violations += 1;
        }
    }
    assert!(violations <= 2, "{violations} violations");
}

#[test]
fn paired_dataset_ssim_strictly_between_zero_and_one() {
    use ctdiff_core::simulate::{make_paired_dataset, RecipeDistribution};
    let data = make_paired_dataset(30, 32, 8, &RecipeDistribution::default()).unwrap();
    let cfg = SsimConfig { range_hu: 1.0, ..Default::default() };
    let mean = data
        .iter()
        .map(|s| {
            let v = |a: &ndarray::Array2<f32>| {
                HuVolume::new(a.clone().insert_axis(ndarray::Axis(0)), [1.0; 3], Modality::Synthetic, "d").unwrap()
            };
            ssim(&v(&s.condition), &v(&s.target), &cfg).unwrap()
        })
        .sum::<f64>()
        / data.len() as f64;
    assert!(mean > 0.0 && mean < 1.0, "{mean}");
}
