//! Simulation designs: piecewise polynomial conditional means on a
//! rectangular support, a Beta-shaped running variable across the boundary
//! and Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{MrdError, Result};
use crate::geometry::{Dataset, Point, Record};

/// Names of the polynomial terms, in coefficient order.
pub const TERMS: [&str; 17] = [
    "const", "X", "X^2", "X^3", "X^4", "X^5", "Y", "Y^2", "Y^3", "Y^4", "Y^5", "XY", "X^2Y",
    "XY^2", "X^2Y^2", "X^3Y", "XY^3",
];

/// Exponents `(x, y)` of each term in [`TERMS`].
pub const TERM_POWERS: [(i32, i32); 17] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (3, 0),
    (4, 0),
    (5, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
    (0, 5),
    (1, 1),
    (2, 1),
    (1, 2),
    (2, 2),
    (3, 1),
    (1, 3),
];

pub type Coefficients = [f64; 17];

const DESIGN_1: (Coefficients, Coefficients) = (
    [
        0.351330594, 0.0016345305, 0.0001058476, 8.255e-07, 5.9e-09, 1e-10, 0.0053400898,
        2.4132e-05, -1.83e-08, -4e-10, 0.0, 4.50874e-05, 1.0092e-06, 3.368e-07, 2e-10, 8e-10,
        1.07e-08,
    ],
    [
        0.6585339043, 0.000775413, 5.94362e-05, -1.3635e-06, 4.988e-07, 1.69e-08, 0.0032217053,
        -6.65157e-05, 2.97e-06, -3.79e-08, 1e-10, -1.03557e-05, -4.2481e-06, 3.884e-07, 4.4e-09,
        -6e-10, -1.027e-07,
    ],
);

const DESIGN_2: (Coefficients, Coefficients) = (
    [
        0.36273926, -0.0021631216, 5.15506e-05, 8.953e-07, -7.4e-09, 1e-10, 0.0046917496,
        1.61902e-05, -3.67e-08, -4e-10, 0.0, 1.50884e-05, 2.408e-07, 3.25e-07, 2e-10, 8e-10,
        1.07e-08,
    ],
    [
        0.7242674163, -0.0040502435, -0.0004489873, 4.78549e-05, -1.5242e-06, 1.69e-08,
        0.0024425863, -7.33327e-05, 2.9837e-06, -3.79e-08, 1e-10, 1.61465e-05, 3.1439e-06,
        1.796e-07, 4.4e-09, -6e-10, -1.027e-07,
    ],
);

const DESIGN_3: (Coefficients, Coefficients) = (
    [
        0.5206142027, 0.0052087349, 8.183e-06, -8.79e-08, -4e-10, 0.0, -0.0021581664,
        2.64291e-05, 1.5009e-06, -1.18e-08, 1e-10, 3.3066e-05, 3.854e-07, -1.5e-09, 2e-10,
        1.07e-08, 8e-10,
    ],
    [
        0.7549214382, 0.0025430669, 3.01802e-05, -1.152e-07, -1.75e-08, 1e-10, 0.014353943,
        -0.0021086853, 0.0001045443, -2.1986e-06, 1.69e-08, -4.90521e-05, 6.19e-08, 5.8515e-06,
        4.4e-09, -1.027e-07, -6e-10,
    ],
);

const DESIGN_4: (Coefficients, Coefficients) = (
    [
        0.7458374267, 0.0052893523, -8.065e-06, -1.737e-07, -6e-10, 0.0, -3.26995e-05,
        2.68002e-05, 1.9491e-06, -1.18e-08, 1e-10, 6.94992e-05, 4.82e-07, 1.92e-08, 2e-10,
        1.07e-08, 8e-10,
    ],
    [
        0.8710000105, 0.0015475707, -6.16581e-05, -4.855e-07, 1.31e-08, 1e-10, 0.0123605658,
        -0.0018552507, 0.0001002323, -2.1986e-06, 1.69e-08, -4.68808e-05, -1.02e-08, 6.2169e-06,
        4.4e-09, -1.027e-07, -6e-10,
    ],
);

pub const NOISE_STD: f64 = 0.1295;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Rect {
    pub fn contains(&self, z: Point) -> bool {
        (self.x.0..=self.x.1).contains(&z[0]) && (self.y.0..=self.y.1).contains(&z[1])
    }
}

pub const DEFAULT_SUPPORT: Rect = Rect {
    x: (-50.0, 50.0),
    y: (-30.0, 30.0),
};

/// How outcomes are generated from the conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutcomeKind {
    #[default]
    Gaussian,
    /// Bernoulli with success probability equal to the mean clamped to [0, 1].
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub id: u8,
    pub control: Coefficients,
    pub treated: Coefficients,
    pub support: Rect,
    pub noise_std: f64,
    pub outcome: OutcomeKind,
}

pub fn make_design(id: u8) -> Result<DesignSpec> {
    let (control, treated) = match id {
        1 => DESIGN_1,
        2 => DESIGN_2,
        3 => DESIGN_3,
        4 => DESIGN_4,
        other => return Err(MrdError::UnknownDesign(other)),
    };
    Ok(DesignSpec {
        id,
        control,
        treated,
        support: DEFAULT_SUPPORT,
        noise_std: NOISE_STD,
        outcome: OutcomeKind::Gaussian,
    })
}

fn poly(c: &Coefficients, z: Point) -> f64 {
    c.iter()
        .zip(TERM_POWERS)
        .map(|(c, (a, b))| c * z[0].powi(a) * z[1].powi(b))
        .sum()
}

impl DesignSpec {
    pub fn with_support(mut self, support: Rect) -> Self {
        self.support = support;
        self
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_outcome(mut self, outcome: OutcomeKind) -> Self {
        self.outcome = outcome;
        self
    }

    /// The effect at the origin.
    pub fn true_theta(&self) -> f64 {
        self.treated[0] - self.control[0]
    }

    pub fn mean_unchecked(&self, z: Point) -> f64 {
        if z[1] >= 0.0 {
            poly(&self.treated, z)
        } else {
            poly(&self.control, z)
        }
    }

    pub fn eval_mean(&self, z: Point) -> Result<f64> {
        if !self.support.contains(z) {
            return Err(MrdError::OutOfSupport(z[0], z[1]));
        }
        Ok(self.mean_unchecked(z))
    }

    /// Density of the running variable at the origin.
    pub fn density_at_origin(&self) -> f64 {
        let (x0, x1) = self.support.x;
        let (y0, y1) = self.support.y;
        let v = -y0 / (y1 - y0);
        if !(0.0..=1.0).contains(&v) || !(x0..=x1).contains(&0.0) {
            return 0.0;
        }
        20.0 * v * (1.0 - v).powi(3) / ((y1 - y0) * (x1 - x0))
    }

    /// Draws one dataset from a caller-owned stream.
    pub fn sample_with(&self, n: usize, rng: &mut impl Rng) -> Dataset {
        let beta = Beta::new(2.0, 4.0).expect("valid shape");
        let (x0, x1) = self.support.x;
        let (y0, y1) = self.support.y;
        let records = (0..n)
            .map(|_| {
                let u1: f64 = rng.random::<f64>() * 2.0 - 1.0;
                let u2 = 2.0 * beta.inverse_cdf(rng.random::<f64>()) - 1.0;
                let z = [
                    x0 + 0.5 * (u1 + 1.0) * (x1 - x0),
                    y0 + 0.5 * (u2 + 1.0) * (y1 - y0),
                ];
                let mean = self.mean_unchecked(z);
                let y = match self.outcome {
                    OutcomeKind::Gaussian => {
                        let e: f64 = rng.sample(StandardNormal);
                        mean + self.noise_std * e
                    }
                    OutcomeKind::Binary => {
                        let p = mean.clamp(0.0, 1.0);
                        f64::from(u8::from(rng.random::<f64>() < p))
                    }
                };
                Record {
                    y,
                    r: z,
                    d: z[1] >= 0.0,
                }
            })
            .collect();
        Dataset::new(records).expect("finite draws")
    }

    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        self.sample_with(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Independent stream for replication `rep` under `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One row per (design, side, term): the full coefficient table.
pub fn coefficient_table() -> Vec<(u8, &'static str, &'static str, f64)> {
    let mut rows = Vec::new();
    for id in 1..=4 {
        let d = make_design(id).expect("known design");
        for (side, coefs) in [("control", &d.control), ("treated", &d.treated)] {
            for (term, &c) in TERMS.iter().zip(coefs.iter()) {
                rows.push((id, side, *term, c));
            }
        }
    }
    rows
}

/// Uniform running variable on `[-1, 1] x [0, 1]`, every record treated,
/// constant mean `mean` plus Gaussian noise with standard deviation `sigma`.
pub fn uniform_half_rectangle(n: usize, sigma: f64, mean: f64, rng: &mut impl Rng) -> Dataset {
    let records = (0..n)
        .map(|_| {
            let r = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>()];
            let e: f64 = rng.sample(StandardNormal);
            Record {
                y: mean + sigma * e,
                r,
                d: true,
            }
        })
        .collect();
    Dataset::new(records).expect("finite draws")
}

/// A genuinely one-dimensional design: `z ~ U[-1, 1]`, mean
/// `0.5 + z - z² + tau·1{z ≥ 0}` and Gaussian noise.
pub fn univariate_sample(n: usize, tau: f64, sigma: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let zi = rng.random::<f64>() * 2.0 - 1.0;
        let e: f64 = rng.sample(StandardNormal);
        let jump = if zi >= 0.0 { tau } else { 0.0 };
        z.push(zi);
        y.push(0.5 + zi - zi * zi + jump + sigma * e);
    }
    (z, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_coefficients() {
        assert_eq!(make_design(1).unwrap().control[0], 0.351330594);
        assert_eq!(make_design(3).unwrap().treated[6], 0.014353943);
        assert!(matches!(make_design(5), Err(MrdError::UnknownDesign(5))));
    }

    #[test]
    fn true_effects() {
        let expected = [0.3072033103, 0.3615281563, 0.2343072355, 0.1251625838];
        for (id, t) in (1..=4).zip(expected) {
            assert!((make_design(id).unwrap().true_theta() - t).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_at_origin_per_side() {
        let d = make_design(2).unwrap();
        assert_eq!(d.eval_mean([0.0, 0.0]).unwrap(), 0.7242674163);
        assert_eq!(d.eval_mean([0.0, -1e-300]).unwrap(), 0.36273926);
        assert!(matches!(d.eval_mean([60.0, 0.0]), Err(MrdError::OutOfSupport(..))));
    }

    #[test]
    fn polynomial_matches_term_by_term_oracle() {
        // Horner-free summation with compensated accumulation.
        let d = make_design(1).unwrap();
        let (x, y): (f64, f64) = (10.0, -5.0);
        let terms = [
            1.0,
            x,
            x * x,
            x * x * x,
            x * x * x * x,
            x * x * x * x * x,
            y,
            y * y,
            y * y * y,
            y * y * y * y,
            y * y * y * y * y,
            x * y,
            x * x * y,
            x * y * y,
            x * x * y * y,
            x * x * x * y,
            x * y * y * y,
        ];
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (c, t) in d.control.iter().zip(terms) {
            let v = c * t - comp;
            let s = sum + v;
            comp = (s - sum) - v;
            sum = s;
        }
        assert!((d.eval_mean([x, y]).unwrap() - sum).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = make_design(2).unwrap();
        let a = d.sample(500, 9);
        let b = d.sample(500, 9);
        assert_eq!(a.records(), b.records());
        let c = d.sample_with(500, &mut replication_rng(9, 1));
        assert_ne!(a.records(), c.records());
        assert!(a.records().iter().all(|r| r.d == (r.r[1] >= 0.0)));
    }

    #[test]
    fn sample_moments() {
        let d = make_design(2).unwrap();
        let n = 100_000;
        let data = d.sample(n, 1234);
        let mean_u2 = data.records().iter().map(|r| r.r[1] / 30.0).sum::<f64>() / n as f64;
        assert!((mean_u2 + 1.0 / 3.0).abs() < 0.01, "{mean_u2}");
        let resid: Vec<f64> = data
            .records()
            .iter()
            .map(|r| r.y - d.mean_unchecked(r.r))
            .collect();
        let m = resid.iter().sum::<f64>() / n as f64;
        let sd = (resid.iter().map(|e| (e - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd / NOISE_STD - 1.0).abs() < 0.02, "{sd}");
        let treated = data.treated_count() as f64 / n as f64;
        assert!((treated - 0.1875).abs() < 0.01);
    }

    #[test]
    fn density_at_origin_default_support() {
        let d = make_design(2).unwrap();
        assert!((d.density_at_origin() - 0.625 / 3000.0).abs() < 1e-15);
    }

    #[test]
    fn binary_outcomes() {
        let d = make_design(1).unwrap().with_outcome(OutcomeKind::Binary);
        let data = d.sample(200, 3);
        assert!(data.records().iter().all(|r| r.y == 0.0 || r.y == 1.0));
    }

    #[test]
    fn coefficient_table_is_complete() {
        let t = coefficient_table();
        assert_eq!(t.len(), 4 * 2 * 17);
        assert_eq!(t[0], (1, "control", "const", 0.351330594));
    }
}
