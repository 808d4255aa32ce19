//! Finite-difference verification of reverse-mode gradients.

use crate::error::{config_err, Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst_index: Option<(usize, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks a scalar function of a single tensor.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Var,
{
    grad_check_many(|g, vs| f(g, vs[0]), std::slice::from_ref(x), eps)
}

/// Checks a scalar function of several tensors, perturbing every coordinate
/// of every input with central differences.
pub fn grad_check_many<F>(f: F, xs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return config_err(format!("grad_check eps {eps} outside [1e-6, 1e-4]"));
    }
    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).data()[0]
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let f0 = g.value(out).data()[0];
    if !f0.is_finite() {
        return Err(Error::Numerical("f is non-finite at the base point".into()));
    }
    let grads = g.backward(out);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        coordinates: 0,
    };
    let mut work: Vec<Tensor<f64>> = xs.to_vec();
    for (which, v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(xs[which].shape());
        let analytic = grads.get(*v).unwrap_or(&zeros);
        for i in 0..xs[which].len() {
            let orig = xs[which].data()[i];
            work[which].data_mut()[i] = orig + eps;
            let fp = eval(&work);
            work[which].data_mut()[i] = orig - eps;
            let fm = eval(&work);
            work[which].data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numerical(format!(
                    "f is non-finite when perturbing input {which} coordinate {i}"
                )));
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let err = rel_err(analytic.data()[i], numeric);
            report.coordinates += 1;
            if err > report.max_rel_err || report.worst_index.is_none() {
                report.max_rel_err = err;
                report.worst_index = Some((which, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let sq = g.mul(v, v);
        let out = g.weighted_sum(sq, &Tensor::full(&[2], 1.0));
        let grads = g.backward(out);
        assert_eq!(grads.get(v).unwrap().data(), &[2.0, 4.0]);
        let rep = grad_check(
            |g, v| {
                let sq = g.mul(v, v);
                g.weighted_sum(sq, &Tensor::full(&[2], 1.0))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-9, "{rep:?}");
    }

    #[test]
    fn constant_function() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let rep = grad_check(
            |g, v| {
                let z = g.scale(v, 0.0);
                g.weighted_sum(z, &Tensor::full(&[3], 1.0))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(rep.max_rel_err, 0.0);
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        assert!(grad_check(|_, v| v, &x, 1e-2).is_err());
    }

    #[test]
    fn reports_non_finite_coordinate() {
        // finite at the base point, overflows once the coordinate is bumped
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v, v);
                let s = g.scale(sq, 1.79769e308);
                g.weighted_sum(s, &Tensor::full(&[1], 1.0))
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("coordinate 0"), "{err}");
    }

    type Build = fn(&mut Graph<f64>, &[Var]) -> Var;

    #[test]
    fn basic_ops_pass() {
        let cases: Vec<(&str, Build)> = vec![
            ("linear", |g, v| g.linear(v[0], v[1], Some(v[2]))),
            ("layer_norm", |g, v| {
                let y = g.linear(v[0], v[1], None);
                g.layer_norm(y, Some(v[3]), Some(v[4]), 1e-6)
            }),
            ("modulate", |g, v| {
                let y = g.linear(v[0], v[1], None);
                g.modulate(y, v[5], v[6])
            }),
            ("gate", |g, v| {
                let y = g.linear(v[0], v[1], None);
                g.gate(y, v[5])
            }),
            ("mul_channel", |g, v| {
                let y = g.linear(v[0], v[1], None);
                g.mul_channel(y, v[3])
            }),
            ("activations", |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]));
                let a = g.gelu(y);
                let b = g.silu(y);
                let c = g.sigmoid(y);
                let ab = g.mul(a, b);
                let abc = g.add(ab, c);
                g.sub(abc, y)
            }),
            ("slice", |g, v| {
                let y = g.linear(v[0], v[1], None);
                g.slice_cols(y, 1, 3)
            }),
        ];
        let mut rng = RngStream::new(11);
        for seed in 0..20 {
            let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let w = Tensor::randn(&[4, 5], 0.5, &mut rng);
            let b = Tensor::randn(&[5], 0.5, &mut rng);
            let lw = Tensor::randn(&[5], 0.5, &mut rng);
            let lb = Tensor::randn(&[5], 0.5, &mut rng);
            let sc = Tensor::randn(&[3, 5], 0.5, &mut rng);
            let sh = Tensor::randn(&[3, 5], 0.5, &mut rng);
            let inputs = [x, w, b, lw, lb, sc, sh];
            for (name, build) in &cases {
                let probe = {
                    let mut g = Graph::inference();
                    let vs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
                    let out = build(&mut g, &vs);
                    Tensor::randn(g.shape(out), 1.0, &mut rng)
                };
                let rep = grad_check_many(
                    |g, v| {
                        let y = build(g, v);
                        g.weighted_sum(y, &probe)
                    },
                    &inputs,
                    1e-5,
                )
                .unwrap();
                assert!(rep.max_rel_err < 1e-6, "{name} seed {seed}: {rep:?}");
            }
        }
    }

    #[test]
    fn mse_and_gather_pass() {
        let mut rng = RngStream::new(3);
        let a = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let idx = std::rc::Rc::new(vec![5, 0, 1, 4, 3, 2]);
        let rep = grad_check_many(
            |g, v| {
                let p = g.gather(v[0], idx.clone(), &[3, 2]);
                let p = g.reshape(p, &[2, 3]);
                g.mse(p, v[1])
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-7, "{rep:?}");
    }
}
