//! Polynomial roots by Aberth-Ehrlich iteration.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

const MAX_ITERATIONS: usize = 500;

fn eval(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    // Horner for p and p'
    let mut p = Complex64::new(coeffs[0], 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in &coeffs[1..] {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of `c[0] z^n + c[1] z^(n-1) + ... + c[n]`, with `c[0] != 0`.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let degree = coeffs.len().saturating_sub(1);
    if degree == 0 || coeffs[0] == 0.0 {
        return Vec::new();
    }
    let lead = coeffs[0];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();

    // Cauchy-style radius bound for the initial circle
    let radius = 1.0
        + monic[1..]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
            .min(1.0);
    let mut z: Vec<Complex64> = (0..degree)
        .map(|k| {
            let angle = 2.0 * core::f64::consts::PI * (k as f64 + 0.25) / degree as f64 + 0.4;
            Complex64::from_polar(0.5 * radius, angle)
        })
        .collect();

    let mut delta = vec![Complex64::new(0.0, 0.0); degree];
    for _ in 0..MAX_ITERATIONS {
        let mut moved = 0.0f64;
        for i in 0..degree {
            let (p, dp) = eval(&monic, z[i]);
            if p.norm() == 0.0 {
                delta[i] = Complex64::new(0.0, 0.0);
                continue;
            }
            let ratio = p / dp;
            let mut repulsion = Complex64::new(0.0, 0.0);
            for j in 0..degree {
                if j != i {
                    let d = z[i] - z[j];
                    if d.norm() > 0.0 {
                        repulsion += d.inv();
                    }
                }
            }
            let denom = Complex64::new(1.0, 0.0) - ratio * repulsion;
            delta[i] = if denom.norm() > 0.0 { ratio / denom } else { ratio };
            if !delta[i].re.is_finite() || !delta[i].im.is_finite() {
                delta[i] = Complex64::new(0.0, 0.0);
            }
            z[i] -= delta[i];
            moved = moved.max(delta[i].norm() / z[i].norm().max(1e-300));
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// Expands `prod (z - r_i)` into real coefficients, highest power first.
/// Imaginary residue from conjugate pairs is discarded.
pub fn polynomial_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        poly = next;
    }
    poly.into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_and_cubic() {
        let mut r = polynomial_roots(&[1.0, -3.0, 2.0]);
        r.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!((r[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((r[1] - Complex64::new(2.0, 0.0)).norm() < 1e-12);

        // z^3 - 1
        let r = polynomial_roots(&[1.0, 0.0, 0.0, -1.0]);
        for z in r {
            assert!(((z * z * z) - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_through_expansion() {
        let roots = [
            Complex64::from_polar(0.97, 0.2),
            Complex64::from_polar(0.97, -0.2),
            Complex64::from_polar(0.9, 1.3),
            Complex64::from_polar(0.9, -1.3),
            Complex64::new(0.95, 0.0),
        ];
        let poly = polynomial_from_roots(&roots);
        let found = polynomial_roots(&poly);
        for r in roots {
            let nearest = found.iter().map(|f| (f - r).norm()).fold(f64::MAX, f64::min);
            assert!(nearest < 1e-9, "root {r} missing");
        }
    }
}
