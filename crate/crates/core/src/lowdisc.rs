//! Halton point sets, optionally shifted by a random rotation modulo 1.

use nalgebra::DMatrix;
use rand::Rng;

use crate::kernels::Domain;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `i` in base `b`.
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

/// `n` Halton points in `[0, 1)^d`, starting at sequence index `start + 1`.
pub fn halton(n: usize, d: usize, start: u64) -> DMatrix<f64> {
    assert!(d <= PRIMES.len(), "Halton sequence supports up to {} dimensions", PRIMES.len());
    DMatrix::from_fn(n, d, |i, k| radical_inverse(start + i as u64 + 1, PRIMES[k]))
}

/// Halton points with a Cranley-Patterson rotation drawn from `rng`, mapped into `domain`.
pub fn rotated_halton<R: Rng + ?Sized>(n: usize, domain: &Domain, rng: &mut R) -> DMatrix<f64> {
    let d = domain.dim();
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let base = halton(n, d, 0);
    DMatrix::from_fn(n, d, |i, k| {
        let u = (base[(i, k)] + shift[k]).fract();
        domain.lower[k] + u * (domain.upper[k] - domain.lower[k])
    })
}

/// Unrotated Halton points mapped into `domain`.
pub fn halton_in(n: usize, domain: &Domain) -> DMatrix<f64> {
    let base = halton(n, domain.dim(), 0);
    DMatrix::from_fn(n, domain.dim(), |i, k| domain.lower[k] + base[(i, k)] * (domain.upper[k] - domain.lower[k]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput_prefix() {
        let h = halton(4, 1, 0);
        assert_eq!(h.as_slice(), &[0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn one_dimensional_gaps_shrink() {
        let h = halton(127, 1, 0);
        let mut v: Vec<f64> = h.iter().copied().collect();
        v.push(0.0);
        v.push(1.0);
        v.sort_by(f64::total_cmp);
        let gap = v.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(gap <= 1.0 / 64.0 + 1e-15);
    }
}
