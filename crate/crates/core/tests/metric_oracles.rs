//! Metrics against straightforward direct-definition implementations.

use ctdiff_core::metrics::{mse_hu, psnr, ssim, SsimConfig};
use ctdiff_core::volume::{HuVolume, Modality};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vol(data: Array3<f32>) -> HuVolume {
    HuVolume::new(data, [1.0; 3], Modality::Synthetic, "oracle").unwrap()
}

fn oracle_mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s / a.len() as f64
}

fn oracle_ssim(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> f64 {
    let k = 11usize;
    let sigma = 1.5f64;
    let mut w = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w[[i, j]] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.sum();
    w /= total;
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (h, wd) = a.dim();
    let mut acc = 0.0;
    let mut count = 0;
    for y in 0..=h - k {
        for x in 0..=wd - k {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    mx += w[[i, j]] * a[[y + i, x + j]];
                    my += w[[i, j]] * b[[y + i, x + j]];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let dx = a[[y + i, x + j]] - mx;
                    let dy = b[[y + i, x + j]] - my;
                    vx += w[[i, j]] * dx * dx;
                    vy += w[[i, j]] * dy * dy;
                    cxy += w[[i, j]] * dx * dy;
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn random_pairs_match_direct_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let a = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0f32..100.0));
        let b = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0f32..100.0));
        let (va, vb) = (vol(a.clone().insert_axis(ndarray::Axis(0))), vol(b.clone().insert_axis(ndarray::Axis(0))));
        let (fa, fb) = (a.mapv(f64::from), b.mapv(f64::from));

        let mse = oracle_mse(&fa, &fb);
        assert!(rel(mse_hu(&va, &vb).unwrap(), mse) <= 1e-9);
        let p = 10.0 * (100.0f64 * 100.0 / mse).log10();
        assert!(rel(psnr(&va, &vb, 100.0).unwrap(), p) <= 1e-9);
        let s = oracle_ssim(&fa, &fb, 100.0);
        assert!(rel(ssim(&va, &vb, &SsimConfig::default()).unwrap(), s) <= 1e-9);
    }
}

#[test]
fn constant_images_follow_closed_form() {
    let a = vol(Array3::zeros((1, 16, 16)));
    let b = vol(Array3::from_elem((1, 16, 16), 100.0));
    let got = ssim(&a, &b, &SsimConfig::default()).unwrap();
    // Zero variances leave C1 / (mu_y^2 + C1) with C1 = 1.
    assert_eq!(got, 1.0 / 10001.0);
}

#[test]
fn psnr_decreases_with_mse() {
    let t = vol(Array3::zeros((1, 4, 4)));
    let mut last = f64::INFINITY;
    for off in [0.5f32, 1.0, 2.0, 5.0, 30.0] {
        let p = vol(Array3::from_elem((1, 4, 4), off));
        let v = psnr(&p, &t, 100.0).unwrap();
        assert!(v < last);
        last = v;
    }
}
