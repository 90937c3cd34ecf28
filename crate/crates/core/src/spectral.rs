//! Finite distributions on the cyclic group `Z_n`: convolution of laws,
//! characteristic functions, deconvolution, optimal discriminators and
//! witnesses that a mixture law does not determine its components.

use std::fmt::Debug;

use num_complex::Complex64;
use num_rational::Rational64;
use num_traits::{Num, ToPrimitive};
use rand::Rng;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::rng;

/// Frequencies with `|Φ_n(k)|` at or below this are treated as zeros.
pub const ILL_POSED_EPS: f64 = 1e-8;
/// Negative masses above `-CLIP` after deconvolution are round-off.
pub const CLIP: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("supports differ: Z_{0} vs Z_{1}")]
    SupportMismatch(usize, usize),
    #[error("not a distribution: {0}")]
    Invalid(String),
    #[error("noise characteristic function vanishes at frequencies {frequencies:?}")]
    IllPosed { frequencies: Vec<usize> },
}

/// Scalar type usable as probability mass: floats with a rounding
/// tolerance, or exact rationals.
pub trait Mass: Num + Clone + PartialOrd + Debug {
    /// Allowed `|Σ mass − 1|`.
    fn sum_tolerance() -> f64;
    fn to_f64(&self) -> f64;
}

impl Mass for f64 {
    fn sum_tolerance() -> f64 {
        1e-12
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Mass for f32 {
    fn sum_tolerance() -> f64 {
        1e-6
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl Mass for Rational64 {
    fn sum_tolerance() -> f64 {
        0.0
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Probability masses on `0..n`, read cyclically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution<M> {
    mass: Vec<M>,
}

impl<M: Mass> DiscreteDistribution<M> {
    pub fn new(mass: Vec<M>) -> Result<Self, SpectralError> {
        if mass.is_empty() {
            return Err(SpectralError::Invalid("empty support".into()));
        }
        if mass.iter().any(|m| *m < M::zero()) {
            return Err(SpectralError::Invalid("negative mass".into()));
        }
        let sum = mass.iter().cloned().fold(M::zero(), |a, b| a + b);
        let tol = M::sum_tolerance();
        let ok = if tol == 0.0 { sum == M::one() } else { (sum.to_f64() - 1.0).abs() <= tol };
        if !ok {
            return Err(SpectralError::Invalid(format!("masses sum to {sum:?}")));
        }
        Ok(Self { mass })
    }

    pub fn delta(n: usize, at: usize) -> Self {
        let mut mass = vec![M::zero(); n];
        mass[at % n] = M::one();
        Self { mass }
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[M] {
        &self.mass
    }

    /// Law of `X + s (mod n)`.
    pub fn shift(&self, s: isize) -> Self {
        let n = self.n() as isize;
        let mut mass = vec![M::zero(); self.n()];
        for (j, m) in self.mass.iter().enumerate() {
            mass[(j as isize + s).rem_euclid(n) as usize] = m.clone();
        }
        Self { mass }
    }

    pub fn to_f64(&self) -> DiscreteDistribution<f64> {
        DiscreteDistribution {
            mass: self.mass.iter().map(Mass::to_f64).collect(),
        }
    }
}

impl DiscreteDistribution<f64> {
    pub fn uniform(n: usize) -> Self {
        Self {
            mass: vec![1.0 / n as f64; n],
        }
    }

    /// Mass `1 − p` at 0 and `p` at 1.
    pub fn bernoulli(n: usize, p: f64) -> Self {
        let mut mass = vec![0.0; n];
        mass[0] = 1.0 - p;
        mass[1 % n] += p;
        Self { mass }
    }

    /// Normalized i.i.d. uniform weights.
    pub fn random<R: Rng + ?Sized>(n: usize, r: &mut R) -> Self {
        let w: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 1e-3).collect();
        let s: f64 = w.iter().sum();
        Self {
            mass: w.into_iter().map(|v| v / s).collect(),
        }
    }
}

/// `½ Σ |a − b|`.
pub fn total_variation<M: Mass>(a: &DiscreteDistribution<M>, b: &DiscreteDistribution<M>) -> f64 {
    a.mass.iter().zip(&b.mass).map(|(x, y)| (x.to_f64() - y.to_f64()).abs()).sum::<f64>() / 2.0
}

/// Law of `X + N (mod n)` for independent `X ~ dx`, `N ~ dn`.
pub fn convolve<M: Mass>(
    dx: &DiscreteDistribution<M>,
    dn: &DiscreteDistribution<M>,
) -> Result<DiscreteDistribution<M>, SpectralError> {
    let n = dx.n();
    if dn.n() != n {
        return Err(SpectralError::SupportMismatch(n, dn.n()));
    }
    let mass = (0..n)
        .map(|k| {
            (0..n).fold(M::zero(), |acc, j| acc + dx.mass[j].clone() * dn.mass[(k + n - j) % n].clone())
        })
        .collect();
    Ok(DiscreteDistribution { mass })
}

fn dft(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// `Φ(k) = Σ_j p_j · exp(−2πi·jk/n)`.
pub fn char_fn<M: Mass>(d: &DiscreteDistribution<M>) -> Vec<Complex64> {
    dft(&d.to_f64().mass)
}

/// Recovers `dx` from `dy = dx ⊛ dn` by dividing characteristic functions.
pub fn deconvolve<M: Mass>(
    dy: &DiscreteDistribution<M>,
    dn: &DiscreteDistribution<M>,
) -> Result<DiscreteDistribution<f64>, SpectralError> {
    deconvolve_with(dy, dn, ILL_POSED_EPS)
}

pub fn deconvolve_with<M: Mass>(
    dy: &DiscreteDistribution<M>,
    dn: &DiscreteDistribution<M>,
    eps: f64,
) -> Result<DiscreteDistribution<f64>, SpectralError> {
    let n = dy.n();
    if dn.n() != n {
        return Err(SpectralError::SupportMismatch(n, dn.n()));
    }
    // A point-mass noise is a pure shift; undo it exactly.
    if let Some(s) = dn.mass.iter().position(|m| *m == M::one()) {
        return Ok(dy.to_f64().shift(-(s as isize)));
    }
    let phi_n = char_fn(dn);
    let frequencies: Vec<usize> = (0..n).filter(|&k| phi_n[k].norm() <= eps).collect();
    if !frequencies.is_empty() {
        return Err(SpectralError::IllPosed { frequencies });
    }
    let mut quotient: Vec<Complex64> = char_fn(dy).iter().zip(&phi_n).map(|(y, m)| y / m).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut quotient);
    let mut mass: Vec<f64> = quotient.iter().map(|c| c.re / n as f64).collect();
    if let Some(&min) = mass.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < -CLIP {
            return Err(SpectralError::Invalid(format!(
                "quotient has mass {min:e}; dy is not a convolution with dn"
            )));
        }
    }
    mass.iter_mut().for_each(|m| *m = m.max(0.0));
    let s: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= s);
    DiscreteDistribution::new(mass)
}

/// `D*(u) = dy(u) / (dy(u) + dg(u))`, with `0/0` read as `1/2`.
pub fn optimal_discriminator<M: Mass>(
    dy: &DiscreteDistribution<M>,
    dg: &DiscreteDistribution<M>,
) -> Result<Vec<M>, SpectralError> {
    if dy.n() != dg.n() {
        return Err(SpectralError::SupportMismatch(dy.n(), dg.n()));
    }
    let half = M::one() / (M::one() + M::one());
    Ok(dy
        .mass
        .iter()
        .zip(&dg.mass)
        .map(|(y, g)| {
            let total = y.clone() + g.clone();
            if total == M::zero() {
                half.clone()
            } else {
                y.clone() / total
            }
        })
        .collect())
}

/// Optimal discriminator for the demixing game: real law `dx ⊛ dn`
/// against generated law `dg1 ⊛ dg2`.
pub fn optimal_demix_discriminator<M: Mass>(
    dx: &DiscreteDistribution<M>,
    dn: &DiscreteDistribution<M>,
    dg1: &DiscreteDistribution<M>,
    dg2: &DiscreteDistribution<M>,
) -> Result<Vec<M>, SpectralError> {
    optimal_discriminator(&convolve(dx, dn)?, &convolve(dg1, dg2)?)
}

/// Component pairs that differ from `(dx, dn)` but produce the same sum law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguityWitness<M> {
    /// `(dn, dx)`, present when `dx ≠ dn`.
    pub swap: Option<(DiscreteDistribution<M>, DiscreteDistribution<M>)>,
    /// `(s, dx shifted by +s, dn shifted by −s)` for every `s` giving a new pair.
    pub shifts: Vec<(usize, DiscreteDistribution<M>, DiscreteDistribution<M>)>,
}

impl<M: Mass> AmbiguityWitness<M> {
    pub fn pairs(&self) -> impl Iterator<Item = (&DiscreteDistribution<M>, &DiscreteDistribution<M>)> {
        self.swap.iter().map(|(a, b)| (a, b)).chain(self.shifts.iter().map(|(_, a, b)| (a, b)))
    }

    pub fn is_empty(&self) -> bool {
        self.swap.is_none() && self.shifts.is_empty()
    }
}

pub fn demix_ambiguity_witness<M: Mass>(
    dx: &DiscreteDistribution<M>,
    dn: &DiscreteDistribution<M>,
) -> Result<AmbiguityWitness<M>, SpectralError> {
    if dx.n() != dn.n() {
        return Err(SpectralError::SupportMismatch(dx.n(), dn.n()));
    }
    let swap = (dx != dn).then(|| (dn.clone(), dx.clone()));
    let shifts = (1..dx.n())
        .map(|s| (s, dx.shift(s as isize), dn.shift(-(s as isize))))
        .filter(|(_, a, b)| !(a == dx && b == dn))
        .collect();
    Ok(AmbiguityWitness { swap, shifts })
}

/// Whether `(g1, g2)` produces the same sum law as `(dx, dn)`.
pub fn witness_holds<M: Mass>(
    dx: &DiscreteDistribution<M>,
    dn: &DiscreteDistribution<M>,
    g1: &DiscreteDistribution<M>,
    g2: &DiscreteDistribution<M>,
) -> Result<bool, SpectralError> {
    let a = convolve(dx, dn)?;
    let b = convolve(g1, g2)?;
    let tol = M::sum_tolerance();
    Ok(if tol == 0.0 { a == b } else { total_variation(&a, &b) <= 1e-12 })
}

/// Outcome of one named identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
    }
}

/// Noise law with `|Φ(k)| ≥ 0.2` everywhere: a point mass of weight 0.6
/// at zero plus random spread.
pub fn well_posed_noise<R: Rng + ?Sized>(n: usize, r: &mut R) -> DiscreteDistribution<f64> {
    let spread = DiscreteDistribution::random(n, r);
    DiscreteDistribution {
        mass: spread.mass.iter().enumerate().map(|(j, m)| 0.4 * m + if j == 0 { 0.6 } else { 0.0 }).collect(),
    }
}

/// Runs the identity suite on `trials` random `Z_n` instances.
pub fn run_theory_suite(seed: u64, n: usize, trials: usize) -> Vec<CheckOutcome> {
    let mut r = rng::stream(seed, "theory-suite");
    let mut out = Vec::new();

    let mut worst_tv = 0.0f64;
    let mut worst_theorem = 0.0f64;
    let mut worst_assoc = 0.0f64;
    let mut witnesses_ok = true;
    let mut complement_ok = true;
    let mut failure = None;
    for _ in 0..trials {
        let dx = DiscreteDistribution::random(n, &mut r);
        let dn = well_posed_noise(n, &mut r);
        let dz = DiscreteDistribution::random(n, &mut r);
        let run = || -> Result<(f64, f64, f64, bool, bool), SpectralError> {
            let dy = convolve(&dx, &dn)?;
            let tv = total_variation(&deconvolve(&dy, &dn)?, &dx);
            let (py, px, pn) = (char_fn(&dy), char_fn(&dx), char_fn(&dn));
            let theorem = (0..n).map(|k| (py[k] - px[k] * pn[k]).norm()).fold(0.0, f64::max);
            let assoc = total_variation(&convolve(&convolve(&dx, &dn)?, &dz)?, &convolve(&dx, &convolve(&dn, &dz)?)?);
            let w = demix_ambiguity_witness(&dx, &dn)?;
            let mut wok = !w.is_empty();
            for (g1, g2) in w.pairs() {
                wok &= witness_holds(&dx, &dn, g1, g2)?;
            }
            let d1 = optimal_discriminator(&dy, &dz)?;
            let d2 = optimal_discriminator(&dz, &dy)?;
            let cok = d1.iter().zip(&d2).all(|(a, b)| (0.0..=1.0).contains(a) && (a + b - 1.0).abs() <= 1e-12);
            Ok((tv, theorem, assoc, wok, cok))
        };
        match run() {
            Ok((tv, th, assoc, wok, cok)) => {
                worst_tv = worst_tv.max(tv);
                worst_theorem = worst_theorem.max(th);
                worst_assoc = worst_assoc.max(assoc);
                witnesses_ok &= wok;
                complement_ok &= cok;
            }
            Err(e) => failure = Some(e.to_string()),
        }
    }
    let suffix = failure.map(|f| format!("; error: {f}")).unwrap_or_default();
    out.push(outcome(
        "deconvolution round trip",
        worst_tv <= 1e-9 && suffix.is_empty(),
        format!("max TV {worst_tv:e} over {trials} Z_{n} instances{suffix}"),
    ));
    out.push(outcome(
        "convolution theorem",
        worst_theorem <= 1e-10,
        format!("max |Φ_y − Φ_x·Φ_n| = {worst_theorem:e}"),
    ));
    out.push(outcome("associativity", worst_assoc <= 1e-12, format!("max TV {worst_assoc:e}")));
    out.push(outcome("ambiguity witnesses", witnesses_ok, "every witness reproduces the sum law".into()));
    out.push(outcome(
        "discriminator complement",
        complement_ok,
        "D*(dy,dg) + D*(dg,dy) = 1 and values in [0,1]".into(),
    ));

    let ill = deconvolve(&DiscreteDistribution::delta(n, 0), &DiscreteDistribution::uniform(n));
    let expected: Vec<usize> = (1..n).collect();
    out.push(outcome(
        "uniform noise is ill-posed",
        matches!(&ill, Err(SpectralError::IllPosed { frequencies }) if *frequencies == expected),
        format!("{ill:?}").chars().take(120).collect(),
    ));

    let half = Rational64::new(1, 2);
    let quarter = Rational64::new(1, 4);
    let zero = Rational64::from_integer(0);
    let b = DiscreteDistribution::new(vec![half, half, zero, zero]).expect("valid");
    let bb = convolve(&b, &b).expect("same support");
    out.push(outcome(
        "exact Bernoulli self-convolution",
        bb.mass() == [quarter, half, quarter, zero],
        format!("{:?}", bb.mass()),
    ));

    let d1 = DiscreteDistribution::<Rational64>::delta(8, 1);
    let d2 = DiscreteDistribution::<Rational64>::delta(8, 2);
    let w = demix_ambiguity_witness(&d1, &d2).expect("same support");
    let target = DiscreteDistribution::<Rational64>::delta(8, 3);
    let shift_ok = w.shifts.iter().any(|(_, a, b)| *a == DiscreteDistribution::delta(8, 3) && *b == DiscreteDistribution::delta(8, 0));
    let all_ok = w.pairs().all(|(a, b)| convolve(a, b).map(|c| c == target).unwrap_or(false));
    out.push(outcome(
        "delta shift witnesses",
        shift_ok && all_ok && w.swap.is_some(),
        format!("{} exact witnesses", w.pairs().count()),
    ));
    out
}
