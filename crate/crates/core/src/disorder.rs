//! Quenched Gaussian disorder: keyed field generation, uniform shifts on a
//! sub-region, the normalised block sum, and the Gaussian tail functions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::lattice::{CouplingSpec, Region, Site};

/// `(h, epsilon, T)`: uniform field, disorder intensity, temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderParams {
    pub h: f64,
    pub epsilon: f64,
    pub temperature: f64,
}

impl DisorderParams {
    pub fn new(h: f64, epsilon: f64, temperature: f64) -> Result<Self> {
        let p = DisorderParams { h, epsilon, temperature };
        p.validate()?;
        Ok(p)
    }

    /// Zero-temperature parameters.
    pub fn ground(h: f64, epsilon: f64) -> Result<Self> {
        Self::new(h, epsilon, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.h.is_finite() || !self.epsilon.is_finite() || !self.temperature.is_finite() {
            return Err(Error::domain("disorder parameters must be finite"));
        }
        if self.epsilon < 0.0 {
            return Err(Error::domain(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.temperature < 0.0 {
            return Err(Error::domain(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }

    pub fn with_h(self, h: f64) -> Self {
        DisorderParams { h, ..self }
    }

    pub fn with_temperature(self, temperature: f64) -> Self {
        DisorderParams { temperature, ..self }
    }
}

/// Stream tags keep the keyed generators of different consumers disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Field = 0x6669_656c_64,
    Replica = 0x7265_706c,
    HeatBath = 0x6865_6174,
    Mandelbrot = 0x6d61_6e64,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based hash of a key tuple to 64 uniform bits.
///
/// Each word is absorbed through a SplitMix64 finaliser, so the output is a
/// pure function of `(stream, words)` with no hidden generator state.
#[inline]
pub fn keyed_bits(stream: Stream, words: &[u64]) -> u64 {
    let mut h = mix64(stream as u64 ^ 0x243f_6a88_85a3_08d3);
    for &w in words {
        h = mix64(h ^ mix64(w.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

/// Uniform in the open interval (0, 1), 53-bit resolution.
#[inline]
pub fn keyed_uniform(stream: Stream, words: &[u64]) -> f64 {
    ((keyed_bits(stream, words) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Seed for replica `index` of an experiment with `base_seed`.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    keyed_bits(Stream::Replica, &[base_seed, index])
}

#[inline]
fn coord_word(v: i32) -> u64 {
    v as i64 as u64
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// `eta_v` for seed and site: inverse-CDF transform of a keyed uniform.
pub fn eta(seed: u64, site: Site) -> f64 {
    let u = keyed_uniform(Stream::Field, &[seed, coord_word(site.x), coord_word(site.y)]);
    standard_normal().inverse_cdf(u)
}

/// One quenched realisation over a finite region.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    region: Region,
    values: Vec<f64>,
    seed: Option<u64>,
}

impl FieldSample {
    /// Explicit values, aligned with `region.sites()`.
    pub fn from_values(region: Region, values: Vec<f64>) -> Result<Self> {
        if values.len() != region.len() {
            return Err(Error::domain(format!(
                "field has {} values for {} sites",
                values.len(),
                region.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field values must be finite"));
        }
        Ok(FieldSample { region, values, seed: None })
    }

    pub fn zeros(region: Region) -> Self {
        let n = region.len();
        FieldSample { region, values: vec![0.0; n], seed: None }
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The generating seed; `None` for explicit or shifted fields.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn value_at(&self, site: Site) -> Option<f64> {
        self.region.index_of(site).map(|i| self.values[i])
    }

    /// Values on a sub-region, in that region's order.
    pub fn restrict(&self, sub: &Region) -> Result<FieldSample> {
        let values = sub
            .sites()
            .iter()
            .map(|&s| {
                self.value_at(s)
                    .ok_or_else(|| Error::domain(format!("field does not cover site ({}, {})", s.x, s.y)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldSample { region: sub.clone(), values, seed: self.seed })
    }

    pub(crate) fn require_covers(&self, region: &Region) -> Result<()> {
        match region.sites().iter().find(|&&s| !self.region.contains(s)) {
            Some(s) => Err(Error::domain(format!(
                "field region does not cover site ({}, {})",
                s.x, s.y
            ))),
            None => Ok(()),
        }
    }

    /// Sum of `eta` over `block`.
    pub fn block_sum(&self, block: &Region) -> Result<f64> {
        self.require_covers(block)?;
        Ok(block.sites().iter().map(|&s| self.value_at(s).unwrap()).sum())
    }
}

/// I.i.d. standard normals keyed by `(seed, x, y)`; overlapping regions agree.
pub fn sample_field(region: &Region, seed: u64) -> FieldSample {
    let values = region.sites().iter().map(|&s| eta(seed, s)).collect();
    FieldSample { region: region.clone(), values, seed: Some(seed) }
}

/// `eta^(t)`: adds `t` on `inner`, unchanged elsewhere.
pub fn shift_field(field: &FieldSample, inner: &Region, t: f64) -> Result<FieldSample> {
    field.require_covers(inner)?;
    let mut values = field.values.clone();
    for &s in inner.sites() {
        values[field.region.index_of(s).unwrap()] += t;
    }
    Ok(FieldSample { region: field.region.clone(), values, seed: None })
}

/// `hat eta = |inner|^{-1/2} sum_{v in inner} eta_v`.
pub fn hat_eta(field: &FieldSample, inner: &Region) -> Result<f64> {
    if inner.is_empty() {
        return Err(Error::domain("hat_eta over an empty region"));
    }
    Ok(field.block_sum(inner)? / (inner.len() as f64).sqrt())
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard Gaussian density.
pub fn phi(s: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * s * s).exp()
}

/// Two-sided Gaussian tail `2 * int_t^inf phi`.
///
/// Taken literally for negative `t`, where it exceeds 1.
pub fn chi(t: f64) -> f64 {
    erfc(t / std::f64::consts::SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Nearest-neighbour decay exponent `2^-10 * chi(50 J / epsilon)`.
pub fn gamma_exponent(j: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("gamma exponent requires epsilon > 0, got {epsilon}")));
    }
    if j < 0.0 {
        return Err(Error::domain(format!("gamma exponent requires J >= 0, got {j}")));
    }
    Ok(chi(50.0 * j / epsilon) / 1024.0)
}

/// `gamma_exponent` for a nearest-neighbour spec; `None` otherwise.
pub fn gamma_for(coupling: &CouplingSpec, epsilon: f64) -> Option<f64> {
    coupling
        .nearest_neighbor_strength()
        .and_then(|j| gamma_exponent(j, epsilon).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson on [a, b] with adaptive bisection.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        }
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, left, tol / 2.0, depth - 1) + rec(f, m, b, right, tol / 2.0, depth - 1)
        }
        rec(f, a, b, simpson(f, a, b), tol, 50)
    }

    fn chi_by_quadrature(t: f64) -> f64 {
        2.0 * adaptive_simpson(&phi, t, 40.0, 1e-14)
    }

    #[test]
    fn tail_function_values() {
        assert_eq!(chi(0.0), 1.0);
        assert!((phi(0.0) - 0.398_942_280_401).abs() < 1e-12);
        assert!((chi(1.959964) - 0.05).abs() < 1e-6);
        assert!((chi(1.959964) - chi_by_quadrature(1.959964)).abs() < 1e-10);
        assert!(chi(-1.0) > 1.0);
        assert!((chi(-1.0) - (2.0 - chi(1.0))).abs() < 1e-15);
    }

    #[test]
    fn chi_matches_quadrature_on_grid() {
        for i in 0..=80 {
            let t = i as f64 * 0.1;
            let q = chi_by_quadrature(t);
            assert!((chi(t) - q).abs() < 1e-10, "t = {t}: {} vs {q}", chi(t));
        }
    }

    #[test]
    fn chi_strictly_decreasing() {
        let mut prev = chi(0.0);
        assert_eq!(prev, 1.0);
        for i in 1..1000 {
            let c = chi(i as f64 * 0.008);
            assert!(c < prev);
            prev = c;
        }
        assert!(chi(40.0) < 1e-300);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_exponent(0.0, 1.0).unwrap(), 1.0 / 1024.0);
        assert!((gamma_exponent(1.0, 1e12).unwrap() - 1.0 / 1024.0).abs() < 1e-12);
        let g = gamma_exponent(0.02, 1.0).unwrap();
        assert!((g - chi_by_quadrature(1.0) / 1024.0).abs() < 1e-13);
        assert!(gamma_exponent(1.0, 0.0).is_err());
        assert!(gamma_exponent(1.0, -1.0).is_err());
    }

    #[test]
    fn sampling_is_keyed_by_site() {
        let small = Region::ball(Site::ORIGIN, 1);
        let big = Region::ball(Site::ORIGIN, 2);
        let a = sample_field(&small, 42);
        let b = sample_field(&big, 42);
        assert_eq!(a, sample_field(&small, 42));
        for &s in small.sites() {
            assert_eq!(a.value_at(s), b.value_at(s));
        }
        assert_ne!(sample_field(&small, 43).values(), a.values());
        assert_eq!(b.restrict(&small).unwrap().values(), a.values());
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let region = Region::square(Site::new(-500, -500), 1000);
        let f = sample_field(&region, 7);
        let n = f.values().len() as f64;
        let mean = f.values().iter().sum::<f64>() / n;
        let var = f.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.004, "mean {mean}");
        assert!((var - 1.0).abs() < 0.005, "var {var}");
    }

    #[test]
    fn hat_eta_is_standard_normal_ks() {
        let inner = Region::ball(Site::ORIGIN, 2);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|r| hat_eta(&sample_field(&inner, derive_seed(99, r)), &inner).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = normal_cdf(x);
                (c - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - c).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the Kolmogorov distribution.
        assert!(d < 1.6276 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn hat_eta_edge_cases() {
        let r = Region::ball(Site::ORIGIN, 2);
        assert_eq!(hat_eta(&FieldSample::zeros(r.clone()), &r).unwrap(), 0.0);
        let f = sample_field(&r, 3);
        let single = Region::custom([Site::new(1, 0)]);
        assert_eq!(hat_eta(&f, &single).unwrap(), f.value_at(Site::new(1, 0)).unwrap());
        assert!(hat_eta(&f, &Region::custom([])).is_err());
        assert!(hat_eta(&f, &Region::ball(Site::ORIGIN, 3)).is_err());
    }

    #[test]
    fn shift_field_basics() {
        let r = Region::ball(Site::ORIGIN, 3);
        let inner = Region::ball(Site::ORIGIN, 1);
        let f = sample_field(&r, 11);
        assert_eq!(shift_field(&f, &inner, 0.0).unwrap().values(), f.values());
        let back = shift_field(&shift_field(&f, &inner, 0.75).unwrap(), &inner, -0.75).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(shift_field(&f, &Region::ball(Site::ORIGIN, 4), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn shifted_hat_eta_is_affine(seed in any::<u64>(), t in -5.0f64..5.0, ell in 1u32..4) {
            let outer = Region::ball(Site::ORIGIN, 3 * ell);
            let inner = Region::ball(Site::ORIGIN, ell);
            let f = sample_field(&outer, seed);
            let shifted = shift_field(&f, &inner, t).unwrap();
            let lhs = hat_eta(&shifted, &inner).unwrap();
            let rhs = hat_eta(&f, &inner).unwrap() + t * (inner.len() as f64).sqrt();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn field_is_pure_function_of_seed_and_site(seed in any::<u64>(), x in -1000i32..1000, y in -1000i32..1000) {
            let s = Site::new(x, y);
            let region = Region::ball(s, 1);
            let f = sample_field(&region, seed);
            prop_assert_eq!(f.value_at(s).unwrap(), eta(seed, s));
            prop_assert!(eta(seed, s).is_finite());
        }
    }
}
