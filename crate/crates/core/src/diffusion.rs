//! Noise schedule, closed-form forward diffusion and conditional ancestral
//! sampling with an ε-predicting denoiser.
//!
//! Timesteps are 1-based throughout: `t = 1` is the least noisy step and
//! `t = T` the most noisy, with the convention `alpha_bar(0) = 1`.

use ndarray::{Array2, Array3, ArrayView, ArrayView2, ArrayView3, Axis, Dimension, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a linear β schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

/// Linearly spaced β from `beta_start` to `beta_end` inclusive over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::validation("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::validation(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let posterior_var = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
        })
        .collect();
    Ok(NoiseSchedule {
        config: ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        },
        beta,
        alpha,
        alpha_bar,
        posterior_var,
    })
}

impl NoiseSchedule {
    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "timestep {t} outside 1..={}",
            self.steps()
        );
        t - 1
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )))
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    /// `alpha_bar(0) = 1` by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[self.idx(t)]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[self.idx(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// A noised image at step `t` together with its conditioning slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x_t: Array2<f32>,
    pub t: usize,
    pub condition: Array2<f32>,
}

/// Anything that predicts the injected noise from `(x_t, t, condition)`.
///
/// Inputs are batches shaped `(batch, height, width)`; every item shares `t`.
pub trait NoisePredictor {
    fn predict_noise(
        &self,
        x_t: ArrayView3<'_, f32>,
        t: usize,
        condition: ArrayView3<'_, f32>,
    ) -> Result<Array3<f32>>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(
        &self,
        x_t: ArrayView3<'_, f32>,
        t: usize,
        condition: ArrayView3<'_, f32>,
    ) -> Result<Array3<f32>> {
        (**self).predict_noise(x_t, t, condition)
    }
}

/// `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`
pub fn forward_sample<D: Dimension>(
    x0: ArrayView<'_, f32, D>,
    t: usize,
    eps: ArrayView<'_, f32, D>,
    sched: &NoiseSchedule,
) -> Result<ndarray::Array<f32, D>> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::validation(format!(
            "x0 shape {:?} differs from noise shape {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&x0)
        .and(&eps)
        .map_collect(|&x, &e| (a * x as f64 + b * e as f64) as f32))
}

/// Coefficients of one reverse update `x_{t-1} = c_x * (x_t - c_eps * eps_hat) + sigma * z`.
#[derive(Debug, Clone, Copy)]
struct ReverseCoefficients {
    c_x: f64,
    c_eps: f64,
    sigma: f64,
}

impl ReverseCoefficients {
    fn at(sched: &NoiseSchedule, t: usize) -> Self {
        ReverseCoefficients {
            c_x: 1.0 / sched.alpha(t).sqrt(),
            c_eps: sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt(),
            sigma: sched.posterior_var(t).sqrt(),
        }
    }

    #[inline]
    fn apply(&self, x: f32, eps: f32, z: f32) -> f32 {
        (self.c_x * (x as f64 - self.c_eps * eps as f64) + self.sigma * z as f64) as f32
    }
}

/// One ancestral step using posterior variance. `z` must be all zeros at `t = 1`.
pub fn reverse_step(
    state: &DiffusionState,
    eps_hat: ArrayView2<'_, f32>,
    sched: &NoiseSchedule,
    z: ArrayView2<'_, f32>,
) -> Result<Array2<f32>> {
    sched.check_step(state.t)?;
    let shape = state.x_t.dim();
    if eps_hat.dim() != shape || z.dim() != shape || state.condition.dim() != shape {
        return Err(Error::validation(format!(
            "reverse step shapes differ: x_t {:?}, eps_hat {:?}, z {:?}, condition {:?}",
            shape,
            eps_hat.dim(),
            z.dim(),
            state.condition.dim()
        )));
    }
    if state.t == 1 && z.iter().any(|&v| v != 0.0) {
        return Err(Error::validation("noise draw must be zero at t = 1"));
    }
    let c = ReverseCoefficients::at(sched, state.t);
    Ok(Zip::from(&state.x_t)
        .and(&eps_hat)
        .and(&z)
        .map_collect(|&x, &e, &n| c.apply(x, e, n)))
}

fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f32]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

/// Conditional ancestral sampling of a single slice.
pub fn sample<P: NoisePredictor + ?Sized>(
    condition: ArrayView2<'_, f32>,
    predictor: &P,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Array2<f32>> {
    let batch = condition.insert_axis(Axis(0));
    let out = sample_batch(batch, predictor, sched, &[seed])?;
    Ok(out.index_axis_move(Axis(0), 0))
}

/// Sample several slices at once, each with its own RNG stream.
///
/// Item `i` is identical to `sample(conditions[i], .., seeds[i])` provided the
/// predictor evaluates batch items independently.
pub fn sample_batch<P: NoisePredictor + ?Sized>(
    conditions: ArrayView3<'_, f32>,
    predictor: &P,
    sched: &NoiseSchedule,
    seeds: &[u64],
) -> Result<Array3<f32>> {
    let (n, h, w) = conditions.dim();
    if seeds.len() != n {
        return Err(Error::validation(format!(
            "{n} conditions but {} seeds",
            seeds.len()
        )));
    }
    if conditions.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::validation("condition values must lie in [0, 1]"));
    }
    let plane = h * w;
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    let mut x = Array3::<f32>::zeros((n, h, w));
    for (mut item, rng) in x.outer_iter_mut().zip(rngs.iter_mut()) {
        fill_normal(rng, item.as_slice_mut().expect("standard layout"));
    }
    let mut z = vec![0f32; plane];
    for t in (1..=sched.steps()).rev() {
        let eps = predictor.predict_noise(x.view(), t, conditions)?;
        if eps.dim() != x.dim() {
            return Err(Error::ModelContract(format!(
                "predictor returned shape {:?} for input {:?}",
                eps.dim(),
                x.dim()
            )));
        }
        let c = ReverseCoefficients::at(sched, t);
        for ((mut item, eps_item), rng) in x.outer_iter_mut().zip(eps.outer_iter()).zip(rngs.iter_mut()) {
            if t > 1 {
                fill_normal(rng, &mut z);
            } else {
                z.fill(0.0);
            }
            let xs = item.as_slice_mut().expect("standard layout");
            for ((xv, &e), &zv) in xs.iter_mut().zip(eps_item.iter()).zip(z.iter()) {
                *xv = c.apply(*xv, e, zv);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingDiverged { step: t });
        }
    }
    x.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};

    fn classic() -> NoiseSchedule {
        make_schedule(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.posterior_var(1), 0.0);
    }

    #[test]
    fn classic_schedule_endpoints() {
        let s = classic();
        assert_eq!(s.alpha_bar(1), 0.9999);
        assert_eq!(s.beta(1000), 0.02);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(make_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.03, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn schedule_invariants() {
        let s = classic();
        for t in 1..=1000 {
            let b = s.beta(t);
            assert!(b > 0.0 && b < 1.0);
            let pv = s.posterior_var(t);
            assert!((0.0..=b).contains(&pv), "t={t} pv={pv} beta={b}");
            if t > 1 {
                assert!(s.beta(t) >= s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn forward_examples() {
        let s = classic();
        let x0 = arr2(&[[0.2f32, 0.9], [0.0, 1.0]]);
        let zero = Array2::zeros((2, 2));
        let out = forward_sample(x0.view(), 500, zero.view(), &s).unwrap();
        let a = s.alpha_bar(500).sqrt();
        for (o, x) in out.iter().zip(x0.iter()) {
            assert_eq!(*o, (a * *x as f64) as f32);
        }

        // alpha_bar = 0.25 reached with a single beta = 0.75 step.
        let quarter = make_schedule(1, 0.75, 0.75).unwrap();
        let one = arr2(&[[1.0f32]]);
        let out = forward_sample(one.view(), 1, one.view(), &quarter).unwrap();
        assert!((out[[0, 0]] as f64 - (0.5 + 0.75f64.sqrt())).abs() < 1e-6);

        let bad = Array2::zeros((3, 2));
        assert!(forward_sample(x0.view(), 1, bad.view(), &s).is_err());
        assert!(forward_sample(x0.view(), 1001, zero.view(), &s).is_err());
    }

    #[test]
    fn reverse_step_hand_value() {
        // Two-step schedule with alpha_2 = 0.99 and alpha_bar_2 = 0.5 needs a custom
        // first step; evaluate the mean formula directly instead.
        let (alpha, beta, alpha_bar) = (0.99f64, 0.01f64, 0.5f64);
        let mean = (1.0 / alpha.sqrt()) * (1.0 - beta / (1.0 - alpha_bar).sqrt() * 0.5);
        assert!((mean - 0.99793).abs() < 1e-5);

        // The same coefficients through the implementation.
        let c = ReverseCoefficients {
            c_x: 1.0 / alpha.sqrt(),
            c_eps: beta / (1.0 - alpha_bar).sqrt(),
            sigma: 0.0,
        };
        assert!((c.apply(1.0, 0.5, 0.0) as f64 - 0.99793).abs() < 1e-5);
    }

    #[test]
    fn reverse_step_contracts() {
        let s = classic();
        let zero = Array2::<f32>::zeros((2, 2));
        let state = DiffusionState {
            x_t: zero.clone(),
            t: 37,
            condition: zero.clone(),
        };
        assert_eq!(reverse_step(&state, zero.view(), &s, zero.view()).unwrap(), zero);

        let ones = Array2::<f32>::ones((2, 2));
        let first = DiffusionState { t: 1, ..state.clone() };
        assert!(reverse_step(&first, zero.view(), &s, ones.view()).is_err());
        let late = DiffusionState { t: 1001, ..state };
        assert!(reverse_step(&late, zero.view(), &s, zero.view()).is_err());
    }

    #[test]
    fn single_step_inverts_forward() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        let x0 = arr2(&[[0.25f32, 0.5], [0.75, 1.0]]);
        let eps = arr2(&[[0.3f32, -1.2], [2.0, 0.1]]);
        let xt = forward_sample(x0.view(), 1, eps.view(), &s).unwrap();
        let state = DiffusionState {
            x_t: xt,
            t: 1,
            condition: x0.clone(),
        };
        let z = Array2::zeros((2, 2));
        let back = reverse_step(&state, eps.view(), &s, z.view()).unwrap();
        for (b, x) in back.iter().zip(x0.iter()) {
            assert!((b - x).abs() < 1e-6);
        }
    }

    #[test]
    fn reverse_variance_is_posterior_variance() {
        let s = classic();
        let t = 400;
        let x = arr2(&[[0.3f32]]);
        let eps = arr2(&[[0.1f32]]);
        let state = DiffusionState {
            x_t: x.clone(),
            t,
            condition: x.clone(),
        };
        let mean = reverse_step(&state, eps.view(), &s, Array2::zeros((1, 1)).view()).unwrap()[[0, 0]] as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                let zz = arr2(&[[z]]);
                reverse_step(&state, eps.view(), &s, zz.view()).unwrap()[[0, 0]] as f64 - mean
            })
            .collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / n as f64;
        let expected = s.posterior_var(t);
        // Sample variance standard error for a normal: var * sqrt(2 / n).
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 4.0 * se, "var {var} vs {expected}");
    }

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict_noise(&self, x: ArrayView3<'_, f32>, _t: usize, _c: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
            Ok(Array3::zeros(x.raw_dim()))
        }
    }

    struct WrongShape;
    impl NoisePredictor for WrongShape {
        fn predict_noise(&self, _x: ArrayView3<'_, f32>, _t: usize, _c: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
            Ok(Array3::zeros((1, 1, 1)))
        }
    }

    struct Explode;
    impl NoisePredictor for Explode {
        fn predict_noise(&self, x: ArrayView3<'_, f32>, t: usize, _c: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
            Ok(Array3::from_elem(x.raw_dim(), if t == 7 { f32::NAN } else { 0.0 }))
        }
    }

    #[test]
    fn sampling_contracts() {
        let s = make_schedule(20, 1e-3, 0.1).unwrap();
        let cond = Array::from_shape_fn((4, 4), |(i, j)| (i + j) as f32 / 6.0);
        let before = cond.clone();
        let a = sample(cond.view(), &Zero, &s, 3).unwrap();
        let b = sample(cond.view(), &Zero, &s, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(cond, before);
        assert_eq!(a.dim(), cond.dim());
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, sample(cond.view(), &Zero, &s, 4).unwrap());

        assert!(matches!(
            sample(cond.view(), &WrongShape, &s, 3),
            Err(Error::ModelContract(_))
        ));
        assert!(matches!(
            sample(cond.view(), &Explode, &s, 3),
            Err(Error::SamplingDiverged { step: 7 })
        ));
        let bad = Array2::from_elem((4, 4), 1.5f32);
        assert!(sample(bad.view(), &Zero, &s, 3).is_err());
    }

    #[test]
    fn batch_matches_individual_samples() {
        let s = make_schedule(15, 1e-3, 0.1).unwrap();
        let conds = Array3::from_shape_fn((3, 5, 5), |(n, i, j)| ((n * 7 + i * 3 + j) % 10) as f32 / 10.0);
        let seeds = [10, 20, 30];
        let batch = sample_batch(conds.view(), &Zero, &s, &seeds).unwrap();
        for (i, seed) in seeds.iter().enumerate() {
            let single = sample(conds.index_axis(Axis(0), i), &Zero, &s, *seed).unwrap();
            assert_eq!(batch.index_axis(Axis(0), i), single);
        }
    }
}
