//! Synthetic paired input/output trajectories with known structure, used as
//! analytic oracles for the forecasting policies and the diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::feature::FeatureVec;
use crate::trace::{Stream, Trace};

/// Trajectory family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// Input and output are independent per-element polynomials in `t` of
    /// the given degree.
    PolynomialDegree(usize),
    /// Input moves along one fixed direction with irregular monotone
    /// magnitude; output is a fixed affine map of the input.
    AffineConstantDirection,
    /// Same affine map, but the input direction rotates as `t` advances.
    AffineDriftingDirection,
    /// Same input family as the constant-direction case, mapped through a
    /// non-affine function.
    IrregularMagnitude,
}

/// Generator inputs. The trace covers `t = t_steps..=1` with one module.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub t_steps: usize,
    pub dim: usize,
    pub seed: u64,
}

/// Per-step magnitudes: zero at `t = T`, growing by a seeded irregular
/// increment in `[0.5, 1.5)` at each later step. Monotone by construction,
/// irregular in step size.
fn irregular_profile(t_steps: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut r = Vec::with_capacity(t_steps);
    let mut acc = 0.0;
    r.push(acc);
    for _ in 1..t_steps {
        acc += rng.gen_range(0.5..1.5);
        r.push(acc);
    }
    r
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dense_map(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sigma = 1.0 / (dim as f64).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..dim * dim).map(|_| normal.sample(rng)).collect()
}

fn apply_map(a: &[f64], x: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &a[r * dim..(r + 1) * dim];
        *o = row.iter().zip(x).map(|(w, v)| w * v).sum();
    }
    out
}

/// Builds the deterministic trace for the requested family.
pub fn synthetic_trajectory(config: &SyntheticConfig) -> Result<Trace> {
    if config.t_steps < 4 {
        return Err(Error::InvalidConfig(
            "synthetic run needs at least 4 steps".into(),
        ));
    }
    if config.dim < 2 {
        return Err(Error::InvalidConfig(
            "synthetic dim must be at least 2".into(),
        ));
    }
    let t_steps = config.t_steps;
    let dim = config.dim;
    let timesteps: Vec<i64> = (1..=t_steps as i64).rev().collect();
    let mut trace = Trace::new(1, vec![dim], timesteps.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    match config.kind {
        SyntheticKind::PolynomialDegree(degree) => {
            if degree == 0 {
                return Err(Error::InvalidConfig(
                    "polynomial degree must be positive".into(),
                ));
            }
            // per-element coefficients for input and output streams; the
            // constant term dominates so relative errors stay well scaled
            let coeff = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..dim)
                    .map(|_| {
                        let mut c = vec![rng.gen_range(1.0..2.0) * sign(rng)];
                        for _ in 0..degree {
                            c.push(rng.gen_range(0.25..1.0) * sign(rng));
                        }
                        c
                    })
                    .collect()
            };
            let in_coeffs = coeff(&mut rng);
            let out_coeffs = coeff(&mut rng);
            let eval = |coeffs: &[Vec<f64>], t: i64| -> Vec<f64> {
                let x = t as f64 / t_steps as f64;
                coeffs
                    .iter()
                    .map(|c| c.iter().rev().fold(0.0, |acc, k| acc * x + k))
                    .collect()
            };
            for &t in &timesteps {
                set_pair(
                    &mut trace,
                    t,
                    eval(&in_coeffs, t),
                    eval(&out_coeffs, t),
                    dim,
                )?;
            }
        }
        SyntheticKind::AffineConstantDirection => {
            let base = unit_vector(dim, &mut rng)
                .into_iter()
                .map(|v| v * 2.0)
                .collect::<Vec<_>>();
            let direction = unit_vector(dim, &mut rng);
            let map = dense_map(dim, &mut rng);
            let bias: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let profile = irregular_profile(t_steps, &mut rng);
            for (j, &t) in timesteps.iter().enumerate() {
                let input: Vec<f64> = base
                    .iter()
                    .zip(&direction)
                    .map(|(b, u)| b + profile[j] * u)
                    .collect();
                let output: Vec<f64> = apply_map(&map, &input, dim)
                    .into_iter()
                    .zip(&bias)
                    .map(|(v, b)| v + b)
                    .collect();
                set_pair(&mut trace, t, input, output, dim)?;
            }
        }
        SyntheticKind::AffineDriftingDirection => {
            let base = unit_vector(dim, &mut rng)
                .into_iter()
                .map(|v| v * 2.0)
                .collect::<Vec<_>>();
            let u1 = unit_vector(dim, &mut rng);
            let u2 = orthogonalize(&unit_vector(dim, &mut rng), &u1);
            let map = dense_map(dim, &mut rng);
            let bias: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let profile = irregular_profile(t_steps, &mut rng);
            let omega = 0.35;
            for (j, &t) in timesteps.iter().enumerate() {
                let theta = omega * j as f64;
                let (c, s) = (theta.cos(), theta.sin());
                let input: Vec<f64> = base
                    .iter()
                    .zip(u1.iter().zip(&u2))
                    .map(|(b, (a1, a2))| b + profile[j] * (c * a1 + s * a2))
                    .collect();
                let output: Vec<f64> = apply_map(&map, &input, dim)
                    .into_iter()
                    .zip(&bias)
                    .map(|(v, b)| v + b)
                    .collect();
                set_pair(&mut trace, t, input, output, dim)?;
            }
        }
        SyntheticKind::IrregularMagnitude => {
            let base = unit_vector(dim, &mut rng)
                .into_iter()
                .map(|v| v * 2.0)
                .collect::<Vec<_>>();
            let direction = unit_vector(dim, &mut rng);
            let map_a = dense_map(dim, &mut rng);
            let map_b = dense_map(dim, &mut rng);
            let profile = irregular_profile(t_steps, &mut rng);
            for (j, &t) in timesteps.iter().enumerate() {
                let input: Vec<f64> = base
                    .iter()
                    .zip(&direction)
                    .map(|(b, u)| b + profile[j] * u)
                    .collect();
                let lin_a = apply_map(&map_a, &input, dim);
                let lin_b = apply_map(&map_b, &input, dim);
                let output: Vec<f64> = lin_a
                    .iter()
                    .zip(&lin_b)
                    .map(|(a, b)| a.tanh() + 0.2 * b * b)
                    .collect();
                set_pair(&mut trace, t, input, output, dim)?;
            }
        }
    }
    Ok(trace)
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn orthogonalize(v: &[f64], against: &[f64]) -> Vec<f64> {
    let dot: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
    let raw: Vec<f64> = v.iter().zip(against).map(|(a, b)| a - dot * b).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.into_iter().map(|x| x / norm).collect()
}

fn set_pair(
    trace: &mut Trace,
    t: i64,
    input: Vec<f64>,
    output: Vec<f64>,
    dim: usize,
) -> Result<()> {
    trace.set(t, 0, Stream::Input, FeatureVec::new(input, vec![dim])?)?;
    trace.set(t, 0, Stream::Output, FeatureVec::new(output, vec![dim])?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::compute_s_ratio;

    fn get(trace: &Trace, t: i64, stream: Stream) -> FeatureVec {
        trace.get(t, 0, stream).unwrap().clone()
    }

    #[test]
    fn generators_are_deterministic() {
        let config = SyntheticConfig {
            kind: SyntheticKind::AffineConstantDirection,
            t_steps: 20,
            dim: 8,
            seed: 4,
        };
        let a = synthetic_trajectory(&config).unwrap();
        let b = synthetic_trajectory(&config).unwrap();
        for &t in a.timesteps() {
            assert_eq!(
                get(&a, t, Stream::Output).data(),
                get(&b, t, Stream::Output).data()
            );
        }
    }

    #[test]
    fn constant_direction_ratio_is_invariant() {
        let config = SyntheticConfig {
            kind: SyntheticKind::AffineConstantDirection,
            t_steps: 30,
            dim: 16,
            seed: 11,
        };
        let trace = synthetic_trajectory(&config).unwrap();
        let t = 25i64;
        let i_t = get(&trace, t, Stream::Input);
        let o_t = get(&trace, t, Stream::Output);
        let mut ratios = Vec::new();
        for k in 1..=9i64 {
            let in_diff = get(&trace, t - k, Stream::Input).sub(&i_t).unwrap();
            let out_diff = get(&trace, t - k, Stream::Output).sub(&o_t).unwrap();
            ratios.push(compute_s_ratio(&in_diff, &out_diff).unwrap());
        }
        let first = ratios[0];
        for r in &ratios {
            assert!((r - first).abs() <= 1e-10 * first, "{} vs {}", r, first);
        }
    }

    #[test]
    fn drifting_direction_varies_the_ratio() {
        let base = SyntheticConfig {
            kind: SyntheticKind::AffineDriftingDirection,
            t_steps: 30,
            dim: 16,
            seed: 11,
        };
        let trace = synthetic_trajectory(&base).unwrap();
        let t = 25i64;
        let i_t = get(&trace, t, Stream::Input);
        let o_t = get(&trace, t, Stream::Output);
        let mut ratios = Vec::new();
        for k in 1..=9i64 {
            let in_diff = get(&trace, t - k, Stream::Input).sub(&i_t).unwrap();
            let out_diff = get(&trace, t - k, Stream::Output).sub(&o_t).unwrap();
            ratios.push(compute_s_ratio(&in_diff, &out_diff).unwrap());
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let spread = ratios
            .iter()
            .map(|r| (r - mean).abs())
            .fold(0.0f64, f64::max);
        assert!(spread / mean > 1e-3, "spread {} mean {}", spread, mean);
    }

    #[test]
    fn linear_polynomial_inputs_move_linearly() {
        let config = SyntheticConfig {
            kind: SyntheticKind::PolynomialDegree(1),
            t_steps: 20,
            dim: 4,
            seed: 2,
        };
        let trace = synthetic_trajectory(&config).unwrap();
        // second differences of a linear trajectory vanish
        for t in [18i64, 12, 6] {
            let a = get(&trace, t, Stream::Output);
            let b = get(&trace, t - 1, Stream::Output);
            let c = get(&trace, t - 2, Stream::Output);
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(c.data()) {
                assert!((x - 2.0 * y + z).abs() <= 1e-12);
            }
        }
    }
}
