//! Generator inversion by backtracking descent in the Gauss-Newton metric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::FeatureVector;
use crate::error::{Result, XmaError};
use crate::network::Mlp;

pub const MAX_HALVINGS: usize = 20;
const DAMPING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Step-size multiplier after an accepted step, capped at `step_size`.
    pub growth: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 100,
            step_size: 1.0,
            growth: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub z_noise: FeatureVector,
    pub z_cond: FeatureVector,
    /// `||G(z_noise, z_cond) - target||^2`
    pub residual: f64,
    /// Residual after each accepted step, starting with the initialization.
    pub history: Vec<f64>,
    /// True when no step size within the halving budget decreased the
    /// objective.
    pub stalled: bool,
}

fn objective(g: &Mlp, z: &[f64], target: &[f64]) -> Result<f64> {
    let y = g.forward(z, 1)?;
    let r: f64 = y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    if !r.is_finite() {
        return Err(XmaError::NonFinite(format!("inversion objective {r}")));
    }
    Ok(r)
}

/// Solves `(J^T J + mu I) p = grad / 2` at `z`, with `J` the generator
/// Jacobian and `mu` a small damping relative to the mean curvature.
fn gauss_newton_direction(g: &Mlp, z: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let n = z.len();
    let m = g.output_dim();
    let batch: Vec<f64> = z.iter().copied().cycle().take(n * m).collect();
    let trace = g.forward_trace(&batch, m)?;
    let eye: Vec<f64> = (0..m * m).map(|i| if i / m == i % m { 1.0 } else { 0.0 }).collect();
    let (_, rows) = g.backward(&trace, &eye);
    let j = DMatrix::from_row_slice(m, n, &rows);
    let mut h = j.transpose() * &j;
    let mu = DAMPING * h.trace() / n as f64 + f64::MIN_POSITIVE;
    for i in 0..n {
        h[(i, i)] += mu;
    }
    let rhs = DVector::from_iterator(n, grad.iter().map(|x| 0.5 * x));
    let p = h
        .cholesky()
        .ok_or_else(|| XmaError::NonFinite("inversion curvature is not positive definite".into()))?
        .solve(&rhs);
    Ok(p.iter().copied().collect())
}

/// Descent on `||G(z_noise, z_cond) - target||^2` from zero, along the
/// gradient preconditioned by the damped Gauss-Newton matrix. A step that
/// raises the objective is retried at half the size, up to [`MAX_HALVINGS`]
/// times; accepted steps grow the step size by `cfg.growth`. Stops early
/// once an accepted step leaves the objective unchanged.
pub fn invert_generator(generator: &Mlp, target: &FeatureVector, noise_dim: usize, cfg: &InversionConfig) -> Result<Inversion> {
    let input_dim = generator.input_dim();
    if noise_dim >= input_dim {
        return Err(XmaError::Shape(format!(
            "noise dim {noise_dim} leaves no condition in a {input_dim}-input generator"
        )));
    }
    if target.dim() != generator.output_dim() {
        return Err(XmaError::Shape(format!(
            "target dim {} vs generator output {}",
            target.dim(),
            generator.output_dim()
        )));
    }
    if !(cfg.step_size > 0.0) || !(cfg.growth >= 1.0) {
        return Err(XmaError::InvalidArgument("step size must be positive and growth at least 1".into()));
    }
    let target = target.as_slice();
    let mut z = vec![0.0; input_dim];
    let mut value = objective(generator, &z, target)?;
    let mut history = vec![value];
    let mut eta = cfg.step_size;
    let mut stalled = false;
    for _ in 0..cfg.steps {
        if value == 0.0 {
            break;
        }
        let trace = generator.forward_trace(&z, 1)?;
        let grad_out: Vec<f64> = trace.output().iter().zip(target).map(|(y, t)| 2.0 * (y - t)).collect();
        let (_, grad) = generator.backward(&trace, &grad_out);
        let grad = gauss_newton_direction(generator, &z, &grad)?;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| a - eta * g).collect();
            let v = objective(generator, &cand, target)?;
            if v <= value {
                accepted = Some((cand, v));
                break;
            }
            eta *= 0.5;
        }
        match accepted {
            Some((cand, v)) => {
                let flat = v == value;
                z = cand;
                value = v;
                history.push(v);
                if flat {
                    break;
                }
                eta = (eta * cfg.growth).min(cfg.step_size);
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    Ok(Inversion {
        z_noise: FeatureVector::new(z[..noise_dim].to_vec())?,
        z_cond: FeatureVector::new(z[noise_dim..].to_vec())?,
        residual: value,
        history,
        stalled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{generate, generator_spec};
    use crate::network::Activation;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn generator() -> Mlp {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        Mlp::init(generator_spec(2, 4, 8, 6, Activation::Tanh).unwrap(), &mut rng)
    }

    fn target(g: &Mlp) -> FeatureVector {
        let zn = FeatureVector::new(vec![0.3, -0.5]).unwrap();
        let zc = FeatureVector::new(vec![0.5, -0.5, 0.5, 0.5]).unwrap();
        generate(g, &zn, &zc).unwrap()
    }

    #[test]
    fn zero_steps_return_initialization() {
        let g = generator();
        let t = target(&g);
        let cfg = InversionConfig {
            steps: 0,
            ..Default::default()
        };
        let inv = invert_generator(&g, &t, 2, &cfg).unwrap();
        assert!(inv.z_noise.as_slice().iter().chain(inv.z_cond.as_slice()).all(|&x| x == 0.0));
        let y0 = g.forward(&[0.0; 6], 1).unwrap();
        let want: f64 = y0.iter().zip(t.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        assert_eq!(inv.residual, want);
    }

    #[test]
    fn recovers_constructed_target_with_monotone_residual() {
        let g = generator();
        let t = target(&g);
        let inv = invert_generator(&g, &t, 2, &InversionConfig::default()).unwrap();
        assert!(inv.residual <= 1e-4, "residual {}", inv.residual);
        assert!(inv.history.windows(2).all(|w| w[1] <= w[0]));
        let again = invert_generator(&g, &t, 2, &InversionConfig::default()).unwrap();
        assert_eq!(inv, again);
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = generator();
        let t = target(&g);
        assert!(invert_generator(&g, &t, 6, &InversionConfig::default()).is_err());
        let short = FeatureVector::new(vec![1.0; 3]).unwrap();
        assert!(invert_generator(&g, &short, 2, &InversionConfig::default()).is_err());
    }
}
