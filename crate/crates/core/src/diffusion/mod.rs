//! Denoising diffusion: forward noising, the noise-prediction objective,
//! ancestral sampling and parameter averaging.

pub mod ema;
pub mod schedule;

pub use ema::{EmaState, DEFAULT_EMA_DECAY};
pub use schedule::Schedule;

use crate::backbone::config::ModelConfig;
use crate::backbone::model::predict;
use crate::error::{shape_err, Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::real::Real;
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;

/// Anything that predicts the noise in a batch `x_t` whose leading axis
/// indexes clips, given one timestep per clip.
pub trait NoisePredictor<T: Real> {
    fn predict_noise(&mut self, x_t: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>>;
}

impl<T: Real, F> NoisePredictor<T> for F
where
    F: FnMut(&Tensor<T>, &[usize]) -> Result<Tensor<T>>,
{
    fn predict_noise(&mut self, x_t: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>> {
        self(x_t, t)
    }
}

/// The denoiser with a fixed parameter set.
pub struct ModelPredictor<'a, T> {
    pub config: &'a ModelConfig,
    pub params: &'a ParamStore<T>,
}

impl<T: Real> NoisePredictor<T> for ModelPredictor<'_, T> {
    fn predict_noise(&mut self, x_t: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>> {
        predict(self.params, self.config, x_t, t)
    }
}

fn batch_size<T: Real>(x: &Tensor<T>) -> Result<usize> {
    match x.shape().first() {
        Some(&b) if b > 0 => Ok(b),
        _ => shape_err("batch must have a non-empty leading axis"),
    }
}

/// `alpha_t x0 + sigma_t eps`, with `t` given per clip.
pub fn q_sample<T: Real>(x0: &Tensor<T>, t: &[usize], eps: &Tensor<T>, sched: &Schedule) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        return shape_err(format!("x0 {:?} vs noise {:?}", x0.shape(), eps.shape()));
    }
    let b = batch_size(x0)?;
    if t.len() != b {
        return shape_err(format!("{} timesteps for {b} clips", t.len()));
    }
    if let Some(&bad) = t.iter().find(|&&ti| ti == 0 || ti > sched.steps()) {
        return shape_err(format!("timestep {bad} outside 1..={}", sched.steps()));
    }
    let per = x0.len() / b;
    let mut out = x0.clone();
    for (i, chunk) in out.data_mut().chunks_exact_mut(per).enumerate() {
        let (a, s) = (T::of(sched.alpha(t[i])), T::of(sched.sigma(t[i])));
        let e = &eps.data()[i * per..(i + 1) * per];
        for (x, &n) in chunk.iter_mut().zip(e) {
            *x = a * *x + s * n;
        }
    }
    Ok(out)
}

/// Timesteps and noise for one training batch: a uniform timestep per clip,
/// then standard normal noise for every element, in that order.
pub fn draw_training_noise<T: Real>(rng: &mut RngStream, shape: &[usize], steps: usize) -> (Vec<usize>, Tensor<T>) {
    let t = (0..shape[0]).map(|_| rng.range_inclusive(1, steps)).collect();
    (t, Tensor::randn(shape, 1.0, rng))
}

/// Mean squared error between predicted and true noise over one batch.
pub fn elbo_loss<T: Real>(
    model: &mut impl NoisePredictor<T>,
    x0: &Tensor<T>,
    sched: &Schedule,
    rng: &mut RngStream,
) -> Result<f64> {
    batch_size(x0)?;
    let (t, eps) = draw_training_noise::<T>(rng, x0.shape(), sched.steps());
    let xt = q_sample(x0, &t, &eps, sched)?;
    let pred = model.predict_noise(&xt, &t)?;
    if pred.shape() != eps.shape() {
        return shape_err(format!("prediction {:?} vs noise {:?}", pred.shape(), eps.shape()));
    }
    let loss = pred
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&a, &b)| (a - b).f64().powi(2))
        .sum::<f64>()
        / eps.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss at timesteps {t:?}")));
    }
    Ok(loss)
}

/// One ancestral step from `x_t` to `x_{t-1}`; no noise is added at `t = 1`.
pub fn ddpm_step<T: Real>(
    x_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    sched: &Schedule,
    rng: &mut RngStream,
) -> Result<Tensor<T>> {
    assert!(t >= 1, "ddpm_step needs t >= 1");
    if x_t.shape() != eps_hat.shape() {
        return shape_err(format!("x_t {:?} vs prediction {:?}", x_t.shape(), eps_hat.shape()));
    }
    let beta = sched.beta(t);
    let k = T::of(beta / sched.sigma(t));
    let inv = T::of(1.0 / (1.0 - beta).sqrt());
    let mut out = x_t.zip_map(eps_hat, |x, e| (x - k * e) * inv);
    if t > 1 {
        let sd = sched.posterior_variance(t).sqrt();
        for v in out.data_mut() {
            *v += T::of(sd * rng.next_gaussian());
        }
    }
    Ok(out)
}

/// Full reverse chain from `x_T ~ N(0, I)` of the given batch shape.
pub fn sample<T: Real>(
    model: &mut impl NoisePredictor<T>,
    shape: &[usize],
    sched: &Schedule,
    rng: &mut RngStream,
) -> Result<Tensor<T>> {
    let mut x = Tensor::randn(shape, 1.0, rng);
    let b = batch_size(&x)?;
    for t in (1..=sched.steps()).rev() {
        let eps = model.predict_noise(&x, &vec![t; b])?;
        x = ddpm_step(&x, &eps, t, sched, rng)?;
    }
    Ok(x)
}

/// Noise prediction that is optimal in mean square when the data are
/// i.i.d. `N(0, var)` per element.
pub fn gaussian_optimal_denoiser(
    sched: &Schedule,
    var: f64,
) -> impl FnMut(&Tensor<f64>, &[usize]) -> Result<Tensor<f64>> + '_ {
    move |x, t| {
        let per = x.len() / t.len();
        Ok(Tensor::from_fn(x.shape(), |i| {
            let ti = t[i / per];
            let (a2, s) = (sched.alpha_bar(ti), sched.sigma(ti));
            s * x.data()[i] / (a2 * var + s * s)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_scales_signal() {
        let s = Schedule::default_linear();
        let x0 = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.0);
        let xt = q_sample(&x0, &[10, 500], &Tensor::zeros(&[2, 3]), &s).unwrap();
        for i in 0..6 {
            let t = if i < 3 { 10 } else { 500 };
            assert_eq!(xt.data()[i], s.alpha(t) * x0.data()[i]);
        }
    }

    #[test]
    fn first_step_is_near_identity() {
        let s = Schedule::default_linear();
        let mut rng = RngStream::new(1);
        let x0 = Tensor::<f64>::randn(&[1, 100], 1.0, &mut rng);
        let eps = Tensor::randn(&[1, 100], 1.0, &mut rng);
        let xt = q_sample(&x0, &[1], &eps, &s).unwrap();
        assert!(xt.max_abs_diff(&x0) < 5.0 * s.sigma(1));
        assert!(s.sigma(1) < 1.1e-2);
    }

    #[test]
    fn bad_timestep() {
        let s = Schedule::scaled(50).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 2]);
        assert!(q_sample(&x, &[0], &x, &s).is_err());
        assert!(q_sample(&x, &[51], &x, &s).is_err());
    }

    #[test]
    fn last_step_is_deterministic() {
        let s = Schedule::scaled(50).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 4], |i| i as f64);
        let e = Tensor::<f64>::from_fn(&[1, 4], |i| 0.5 - i as f64);
        let a = ddpm_step(&x, &e, 1, &s, &mut RngStream::new(1)).unwrap();
        let b = ddpm_step(&x, &e, 1, &s, &mut RngStream::new(2)).unwrap();
        assert_eq!(a, b);
    }

    /// With one step and the true noise, the step returns `x0` exactly:
    /// `(a x0 + s e - (b / s) e) / sqrt(1 - b)` and `s^2 = b`, `a^2 = 1 - b`.
    #[test]
    fn one_step_schedule_recovers_data() {
        let s = Schedule::linear(1, 0.3, 0.3).unwrap();
        let x0 = Tensor::<f64>::from_fn(&[1, 3], |i| [0.5, -1.0, 2.0][i]);
        let e = Tensor::<f64>::from_fn(&[1, 3], |i| [1.0, 0.2, -0.7][i]);
        let xt = q_sample(&x0, &[1], &e, &s).unwrap();
        let back = ddpm_step(&xt, &e, 1, &s, &mut RngStream::new(0)).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-14);
    }

    #[test]
    fn zero_predictor_sampling_is_finite_and_centered() {
        let s = Schedule::scaled(50).unwrap();
        let mut zero = |x: &Tensor<f64>, _: &[usize]| Ok(Tensor::zeros(x.shape()));
        let out = sample(&mut zero, &[2000, 1], &s, &mut RngStream::new(5)).unwrap();
        assert!(out.is_finite());
        let m = out.mean();
        let sd = (out.data().iter().map(|v| v * v).sum::<f64>() / 2000.0).sqrt();
        assert!(m.abs() < 4.0 * sd / 2000f64.sqrt(), "{m}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = Schedule::scaled(20).unwrap();
        let run = || {
            let mut zero = |x: &Tensor<f64>, _: &[usize]| Ok(x.map(|v| 0.1 * v));
            sample(&mut zero, &[3, 4], &s, &mut RngStream::new(8)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn loss_is_non_negative() {
        let s = Schedule::scaled(50).unwrap();
        let mut rng = RngStream::new(3);
        let x0 = Tensor::<f64>::randn(&[4, 8], 0.5, &mut rng);
        let mut m = |x: &Tensor<f64>, _: &[usize]| Ok(x.map(|v| v.sin()));
        assert!(elbo_loss(&mut m, &x0, &s, &mut rng).unwrap() >= 0.0);
        let mut nan = |x: &Tensor<f64>, _: &[usize]| Ok(x.map(|_| f64::NAN));
        assert!(matches!(
            elbo_loss(&mut nan, &x0, &s, &mut rng),
            Err(Error::Numerical(_))
        ));
    }
}
