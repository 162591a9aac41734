//! Densities on the ring: von Mises profiles, sampling, and the
//! Kullback–Leibler divergence between sampled densities.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::{wrap_unchecked, RingField, RingGrid, RingPosition};

/// Lower clamp applied to the normalized reference density in
/// [`kl_divergence`].
pub const KL_FLOOR: f64 = 1e-12;

/// Relative size of negative samples tolerated as round-off.
const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Field proportional to `exp(k·cos(x - μ))`, rescaled so its quadrature
/// integral equals `mass`.
pub fn von_mises_field(
    mu: RingPosition,
    concentration: f64,
    mass: f64,
    grid: RingGrid,
) -> Result<RingField> {
    if !(concentration >= 0.0) || !concentration.is_finite() {
        return Err(Error::param(
            "concentration",
            concentration,
            "must be finite and non-negative",
        ));
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::param("mass", mass, "must be positive and finite"));
    }
    // exp(k(cos - 1)) avoids overflow for large concentrations
    let raw = RingField::from_fn(grid, |x| {
        (concentration * ((x - mu.theta()).cos() - 1.0)).exp()
    });
    let scale = mass / raw.integral();
    Ok(raw * scale)
}

/// Draws one angle from a von Mises distribution (Best–Fisher rejection).
pub fn sample_von_mises(rng: &mut impl Rng, mu: f64, concentration: f64) -> f64 {
    if concentration < 1e-8 {
        return wrap_unchecked(rng.random_range(-PI..PI));
    }
    let k = concentration;
    let tau = 1.0 + (1.0 + 4.0 * k * k).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * k);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u3: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = k * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            let signed = if u3 < 0.5 { -theta } else { theta };
            return wrap_unchecked(mu + signed);
        }
    }
}

fn check_density(name: &str, field: &RingField) -> Result<f64> {
    let tol = NEGATIVE_TOLERANCE * field.max_abs().max(1.0);
    if let Some(v) = field.values().iter().find(|v| !v.is_finite() || **v < -tol) {
        return Err(Error::InvalidInput(format!(
            "{name} has an invalid density sample {v}"
        )));
    }
    let h = field.grid().cell_width();
    let total = h * field.values().iter().map(|v| v.max(0.0)).sum::<f64>();
    if !(total > 0.0) {
        return Err(Error::InvalidInput(format!(
            "{name} must have a positive integral"
        )));
    }
    Ok(total)
}

/// `KL(ρ̂ ‖ ρ̂^d)` after normalizing both densities to unit integral.
///
/// Uses the rectangle rule, treats `0·log 0 = 0`, and clamps the reference
/// density from below at [`KL_FLOOR`].
pub fn kl_divergence(rho: &RingField, rho_d: &RingField) -> Result<f64> {
    rho.ensure_same_grid(rho_d)?;
    let p_total = check_density("rho", rho)?;
    let q_total = check_density("rho_d", rho_d)?;
    let h = rho.grid().cell_width();
    let sum: f64 = rho
        .values()
        .iter()
        .zip(rho_d.values())
        .map(|(&p, &q)| {
            let p = p.max(0.0) / p_total;
            if p <= 0.0 {
                return 0.0;
            }
            let q = (q.max(0.0) / q_total).max(KL_FLOOR);
            p * (p / q).ln()
        })
        .sum();
    Ok((sum * h).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::TWO_PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> RingGrid {
        RingGrid::new(256).unwrap()
    }

    #[test]
    fn zero_concentration_is_uniform() {
        let f = von_mises_field(RingPosition::default(), 0.0, 100.0, grid()).unwrap();
        for v in f.values() {
            assert!((v - 100.0 / TWO_PI).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_is_enforced() {
        let f = von_mises_field(RingPosition::new(1.0).unwrap(), 4.0, 100.0, grid()).unwrap();
        assert!((f.integral() - 100.0).abs() < 1e-10);
    }

    #[test]
    fn peak_and_symmetry() {
        let g = grid();
        let f = von_mises_field(RingPosition::default(), 4.0, 100.0, g).unwrap();
        let (argmax, _) = f
            .values()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        assert_eq!(argmax, g.nearest_node(0.0));
        let c = g.nearest_node(0.0);
        for d in 1..128 {
            let a = f.values()[c + d];
            let b = f.values()[c - d];
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn von_mises_rejects_bad_parameters() {
        let g = grid();
        let mu = RingPosition::default();
        assert!(von_mises_field(mu, -1.0, 1.0, g).is_err());
        assert!(von_mises_field(mu, 1.0, 0.0, g).is_err());
    }

    #[test]
    fn kl_identities() {
        let g = grid();
        let f = von_mises_field(RingPosition::default(), 4.0, 100.0, g).unwrap();
        assert!(kl_divergence(&f, &f).unwrap() < 1e-14);
        assert!(kl_divergence(&f, &(&f * 2.0)).unwrap() < 1e-14);
    }

    #[test]
    fn kl_rejects_negative_density() {
        let g = grid();
        let mut f = RingField::constant(g, 1.0);
        f.values_mut()[3] = -0.5;
        let u = RingField::constant(g, 1.0);
        assert!(matches!(kl_divergence(&f, &u), Err(Error::InvalidInput(_))));
        assert!(kl_divergence(&RingField::zeros(g), &u).is_err());
        // round-off sized negatives are accepted
        f.values_mut()[3] = -1e-12;
        assert!(kl_divergence(&f, &u).is_ok());
    }

    /// Oracle: direct quadrature of the normalized von Mises against the
    /// uniform density on a grid twice as fine, written out independently.
    #[test]
    fn kl_von_mises_vs_uniform() {
        let f = von_mises_field(RingPosition::default(), 4.0, 100.0, grid()).unwrap();
        let u = RingField::constant(grid(), 100.0 / TWO_PI);
        let kl = kl_divergence(&f, &u).unwrap();

        let m = 512;
        let h = TWO_PI / m as f64;
        let xs: Vec<f64> = (0..m).map(|k| -PI + k as f64 * h).collect();
        let z: f64 = xs.iter().map(|x| (4.0 * x.cos()).exp()).sum::<f64>() * h;
        let oracle: f64 = xs
            .iter()
            .map(|x| {
                let p = (4.0 * x.cos()).exp() / z;
                p * (p * TWO_PI).ln()
            })
            .sum::<f64>()
            * h;
        assert!((kl - oracle).abs() < 1e-10, "{kl} vs {oracle}");
    }

    #[test]
    fn sampler_matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let (mut c, mut s) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_von_mises(&mut rng, 0.5, 4.0);
            assert!((-PI..PI).contains(&x));
            c += (x - 0.5).cos();
            s += (x - 0.5).sin();
        }
        // mean resultant length for k = 4 is I1(4)/I0(4) = 0.8635...
        assert!((c / n as f64 - 0.863_5).abs() < 0.01);
        assert!((s / n as f64).abs() < 0.01);
    }
}
