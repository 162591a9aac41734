//! Agent-level dynamics `ẋ_i = Σ_j f({x_i, x_j}) + u_i` and the kernel
//! density estimate that turns positions into a field.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use crate::density::sample_von_mises;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::ring::{wrap_unchecked, RingField, RingGrid, RingPosition, TWO_PI};

/// Positions of `N` agents, always wrapped to `[-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEnsemble {
    positions: Vec<RingPosition>,
}

impl AgentEnsemble {
    pub fn new(positions: Vec<RingPosition>) -> Self {
        Self { positions }
    }

    /// Wraps each angle; non-finite angles are rejected.
    pub fn from_angles(angles: &[f64]) -> Result<Self> {
        let positions = angles
            .iter()
            .map(|&x| crate::ring::wrap_angle(x))
            .collect::<Result<_>>()?;
        Ok(Self { positions })
    }

    /// `x_i = -π + (i - ½)·2π/N` for `i = 1..=N`.
    pub fn evenly_spaced(n: usize) -> Self {
        let spacing = TWO_PI / n as f64;
        let angles: Vec<f64> = (0..n).map(|i| -PI + (i as f64 + 0.5) * spacing).collect();
        Self::from_angles(&angles).expect("finite angles")
    }

    /// `n` independent draws from a von Mises distribution.
    pub fn sample_von_mises(n: usize, mu: f64, concentration: f64, rng: &mut impl Rng) -> Self {
        let angles: Vec<f64> = (0..n)
            .map(|_| sample_von_mises(rng, mu, concentration))
            .collect();
        Self::from_angles(&angles).expect("finite angles")
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[RingPosition] {
        &self.positions
    }

    pub fn angles(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p.theta()).collect()
    }
}

/// Per-agent interaction velocity `v_i = Σ_j f(wrap(x_i - x_j))`.
pub fn interaction_velocity(agents: &AgentEnsemble, kernel: &Kernel) -> Vec<f64> {
    velocities_at(&agents.angles(), kernel)
}

fn velocities_at(x: &[f64], kernel: &Kernel) -> Vec<f64> {
    if matches!(kernel, Kernel::Zero) {
        return vec![0.0; x.len()];
    }
    if kernel.is_odd() {
        // each pair once: f(x_j - x_i) = -f(x_i - x_j)
        let mut v = vec![0.0; x.len()];
        for i in 0..x.len() {
            let xi = x[i];
            let mut vi = 0.0;
            for j in i + 1..x.len() {
                let f = kernel.eval(xi - x[j]);
                vi += f;
                v[j] -= f;
            }
            v[i] += vi;
        }
        return v;
    }
    x.par_iter()
        .map(|&xi| x.iter().map(|&xj| kernel.eval(xi - xj)).sum())
        .collect()
}

/// One explicit midpoint step with the control held constant.
///
/// Rejects the step when the largest displacement at the start of the step
/// would reach `max_displacement` (typically the grid cell width).
pub fn step_agents(
    agents: &AgentEnsemble,
    kernel: &Kernel,
    control: &[f64],
    dt: f64,
    max_displacement: f64,
) -> Result<AgentEnsemble> {
    check_control(agents, control)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", dt, "must be positive and finite"));
    }
    let x0 = agents.angles();
    let v0 = velocities_at(&x0, kernel);
    let speed = peak_speed(&v0, control);
    if !(speed * dt < max_displacement) {
        return Err(Error::StepRejected {
            requested: dt,
            admissible: max_displacement / speed,
        });
    }
    finish_midpoint(&x0, &v0, kernel, control, dt)
}

/// Midpoint step with the largest dt not above `dt_cap` that keeps every
/// displacement within `fraction · max_displacement`. Returns the new
/// ensemble and the dt taken.
pub fn advance_agents(
    agents: &AgentEnsemble,
    kernel: &Kernel,
    control: &[f64],
    dt_cap: f64,
    max_displacement: f64,
    fraction: f64,
) -> Result<(AgentEnsemble, f64)> {
    check_control(agents, control)?;
    if !(dt_cap > 0.0) || !dt_cap.is_finite() {
        return Err(Error::param("dt_cap", dt_cap, "must be positive and finite"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param("fraction", fraction, "must lie in (0, 1)"));
    }
    let x0 = agents.angles();
    let v0 = velocities_at(&x0, kernel);
    let speed = peak_speed(&v0, control);
    let dt = if speed > 0.0 {
        dt_cap.min(fraction * max_displacement / speed)
    } else {
        dt_cap
    };
    Ok((finish_midpoint(&x0, &v0, kernel, control, dt)?, dt))
}

fn check_control(agents: &AgentEnsemble, control: &[f64]) -> Result<()> {
    if control.len() != agents.len() {
        return Err(Error::InvalidArgument(format!(
            "{} control inputs for {} agents",
            control.len(),
            agents.len()
        )));
    }
    Ok(())
}

fn peak_speed(v: &[f64], control: &[f64]) -> f64 {
    v.iter()
        .zip(control)
        .map(|(v, u)| (v + u).abs())
        .fold(0.0, f64::max)
}

fn finish_midpoint(
    x0: &[f64],
    v0: &[f64],
    kernel: &Kernel,
    control: &[f64],
    dt: f64,
) -> Result<AgentEnsemble> {
    let mid: Vec<f64> = x0
        .iter()
        .zip(v0)
        .zip(control)
        .map(|((x, v), u)| wrap_unchecked(x + 0.5 * dt * (v + u)))
        .collect();
    let v1 = velocities_at(&mid, kernel);
    let positions = x0
        .iter()
        .zip(&v1)
        .zip(control)
        .map(|((x, v), u)| RingPosition::new(x + dt * (v + u)))
        .collect::<Result<_>>()?;
    Ok(AgentEnsemble { positions })
}

/// Largest interaction-plus-control speed at the current positions.
pub fn max_speed(agents: &AgentEnsemble, kernel: &Kernel, control: &[f64]) -> f64 {
    peak_speed(&interaction_velocity(agents, kernel), control)
}

/// Rule-of-thumb KDE bandwidth: `1.06·σ·N^{-1/5}` with `σ` the circular
/// standard deviation `sqrt(-2 ln R̄)`, capped at the standard deviation of
/// the uniform law `π/√3` and floored at `min_bandwidth`.
pub fn default_bandwidth(agents: &AgentEnsemble, min_bandwidth: f64) -> f64 {
    let n = agents.len().max(1) as f64;
    let (c, s) = agents
        .positions
        .iter()
        .fold((0.0, 0.0), |(c, s), p| (c + p.theta().cos(), s + p.theta().sin()));
    let r = ((c * c + s * s).sqrt() / n).clamp(1e-300, 1.0);
    let sigma = (-2.0 * r.ln()).sqrt().min(PI / 3f64.sqrt());
    (1.06 * sigma * n.powf(-0.2)).max(min_bandwidth)
}

/// Kernel density estimate with a von Mises smoothing kernel of
/// concentration `1/bandwidth²`.
///
/// Each agent's bump is normalized on the grid itself, so the result
/// integrates to exactly `N` under the rectangle rule.
pub fn estimate_density(
    agents: &AgentEnsemble,
    grid: RingGrid,
    bandwidth: f64,
) -> Result<RingField> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::param(
            "bandwidth",
            bandwidth,
            "must be positive and finite",
        ));
    }
    let kappa = 1.0 / (bandwidth * bandwidth);
    let h = grid.cell_width();
    let (cos_nodes, sin_nodes): (Vec<f64>, Vec<f64>) =
        grid.nodes().map(|x| (x.cos(), x.sin())).unzip();
    let m = grid.len();
    // fixed-size chunks summed in order keep the result independent of
    // thread scheduling
    let partials: Vec<Vec<f64>> = agents
        .positions
        .par_chunks(32)
        .map(|chunk| {
            let mut acc = vec![0.0; m];
            for p in chunk {
                let (sx, cx) = p.theta().sin_cos();
                let bump: Vec<f64> = (0..m)
                    .map(|k| (kappa * (cos_nodes[k] * cx + sin_nodes[k] * sx - 1.0)).exp())
                    .collect();
                let norm = 1.0 / (h * bump.iter().sum::<f64>());
                for (a, b) in acc.iter_mut().zip(bump) {
                    *a += b * norm;
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; m];
    for part in partials {
        for (x, y) in out.iter_mut().zip(part) {
            *x += y;
        }
    }
    RingField::new(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{kl_divergence, von_mises_field};
    use crate::ring::wrapped_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn morse() -> Kernel {
        Kernel::morse(0.5, 0.5).unwrap()
    }

    #[test]
    fn two_agents_are_antisymmetric() {
        let a = AgentEnsemble::from_angles(&[0.3, -1.2]).unwrap();
        let v = interaction_velocity(&a, &morse());
        assert_eq!(v[0], -v[1]);
        assert!(v[0] != 0.0);
    }

    #[test]
    fn even_spacing_is_equilibrium() {
        let a = AgentEnsemble::evenly_spaced(100);
        let v = interaction_velocity(&a, &morse());
        assert!(v.iter().all(|v| v.abs() < 1e-12));
        assert!((a.angles()[0] + PI - PI / 100.0).abs() < 1e-15);
    }

    /// Oracle: literal pairwise sum with the closed-form Morse expression.
    #[test]
    fn matches_pairwise_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let angles: Vec<f64> = (0..5).map(|_| rng.random_range(-PI..PI)).collect();
        let a = AgentEnsemble::from_angles(&angles).unwrap();
        let v = interaction_velocity(&a, &morse());
        for i in 0..5 {
            let mut expected = 0.0;
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let z = wrapped_distance(a.positions()[i], a.positions()[j]);
                expected += z.signum() * (-0.5 * (-z.abs() / 0.5).exp() + (-z.abs()).exp());
            }
            assert!((v[i] - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_kernel_examples() {
        let a = AgentEnsemble::from_angles(&[0.1, 3.1, -3.0]).unwrap();
        let still = step_agents(&a, &Kernel::Zero, &[0.0; 3], 0.01, 0.1).unwrap();
        assert_eq!(still, a);
        let moved = step_agents(&a, &Kernel::Zero, &[2.0; 3], 0.02, 0.1).unwrap();
        let expected = AgentEnsemble::from_angles(&[0.14, 3.14, -2.96]).unwrap();
        for (p, q) in moved.positions().iter().zip(expected.positions()) {
            assert!(wrapped_distance(*p, *q).abs() < 1e-14);
            assert!((-PI..PI).contains(&p.theta()));
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let a = AgentEnsemble::from_angles(&[0.0, 1.0]).unwrap();
        let err = step_agents(&a, &Kernel::Zero, &[5.0, 5.0], 0.1, 0.02).unwrap_err();
        assert!(matches!(err, Error::StepRejected { .. }));
        assert!(step_agents(&a, &Kernel::Zero, &[0.0], 0.1, 0.02).is_err());
    }

    /// Oracle: step halving on a five-agent system; the midpoint rule's
    /// global error falls by four per halving.
    #[test]
    fn midpoint_self_convergence() {
        let a = AgentEnsemble::from_angles(&[-2.0, -0.7, 0.1, 0.5, 2.2]).unwrap();
        let u = [0.3, -0.2, 0.0, 0.1, -0.4];
        let run = |steps: usize| {
            let dt = 0.5 / steps as f64;
            let mut s = a.clone();
            for _ in 0..steps {
                s = step_agents(&s, &morse(), &u, dt, 1.0).unwrap();
            }
            s
        };
        let gap = |x: &AgentEnsemble, y: &AgentEnsemble| {
            x.positions()
                .iter()
                .zip(y.positions())
                .map(|(p, q)| wrapped_distance(*p, *q).abs())
                .fold(0.0, f64::max)
        };
        let (s1, s2, s3) = (run(20), run(40), run(80));
        let ratio = gap(&s1, &s2) / gap(&s2, &s3);
        assert!((3.0..5.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn single_agent_density() {
        let g = RingGrid::new(256).unwrap();
        let a = AgentEnsemble::from_angles(&[0.0]).unwrap();
        let rho = estimate_density(&a, g, 0.2).unwrap();
        assert!((rho.integral() - 1.0).abs() < 1e-12);
        let argmax = (0..256)
            .max_by(|&i, &j| rho.values()[i].total_cmp(&rho.values()[j]))
            .unwrap();
        assert_eq!(argmax, g.nearest_node(0.0));
        assert!(estimate_density(&a, g, 0.0).is_err());
    }

    #[test]
    fn uniform_agents_give_flat_density() {
        let g = RingGrid::new(256).unwrap();
        let a = AgentEnsemble::evenly_spaced(100);
        let rho = estimate_density(&a, g, default_bandwidth(&a, g.cell_width())).unwrap();
        let level = 100.0 / TWO_PI;
        assert!((&rho - &RingField::constant(g, level)).max_abs() < 1e-3 * level);
    }

    /// Oracle: Monte-Carlo sample of the target with a fixed seed.
    #[test]
    fn density_estimate_of_von_mises_sample() {
        let g = RingGrid::new(256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let target = von_mises_field(RingPosition::default(), 4.0, 100.0, g).unwrap();
        let a = AgentEnsemble::sample_von_mises(100, 0.0, 4.0, &mut rng);
        let rho = estimate_density(&a, g, default_bandwidth(&a, g.cell_width())).unwrap();
        let kl = kl_divergence(&rho, &target).unwrap();
        assert!(kl < 0.05, "KL {kl}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn momentum_cancels(angles in prop::collection::vec(-PI..PI, 2..40)) {
            let a = AgentEnsemble::from_angles(&angles).unwrap();
            let v = interaction_velocity(&a, &morse());
            let total: f64 = v.iter().sum();
            prop_assert!(total.abs() <= 1e-10 * angles.len() as f64 * 0.5);
        }

        #[test]
        fn steps_stay_wrapped(angles in prop::collection::vec(-PI..PI, 1..20), u in -50.0f64..50.0) {
            let a = AgentEnsemble::from_angles(&angles).unwrap();
            let control = vec![u; angles.len()];
            let s = step_agents(&a, &morse(), &control, 1e-3, 1.0).unwrap();
            prop_assert!(s.positions().iter().all(|p| (-PI..PI).contains(&p.theta())));
        }

        #[test]
        fn estimate_has_exact_mass(angles in prop::collection::vec(-PI..PI, 1..50), bw in 0.02f64..2.0) {
            let g = RingGrid::new(64).unwrap();
            let a = AgentEnsemble::from_angles(&angles).unwrap();
            let rho = estimate_density(&a, g, bw).unwrap();
            prop_assert!((rho.integral() - angles.len() as f64).abs() < 1e-10 * angles.len() as f64);
        }
    }
}
