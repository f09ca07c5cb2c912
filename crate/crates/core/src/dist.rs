//! Probability distributions and reproducible random streams.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("standard deviation must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("bounds must satisfy lo < hi, got [{lo}, {hi}]")]
    EmptyBounds { lo: f64, hi: f64 },
    #[error("density is undefined for a zero standard deviation")]
    DegenerateDensity,
}

/// A univariate distribution.
///
/// A zero standard deviation is a point mass at the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
    TruncatedGaussian { mean: f64, sd: f64, lo: f64, hi: f64 },
}

/// Gaussian whose mean is the value of a parent node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussian {
    pub sd: f64,
}

impl LinearGaussian {
    pub fn given(self, parent: f64) -> Distribution {
        Distribution::Gaussian {
            mean: parent,
            sd: self.sd,
        }
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

fn std_normal_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Mass of the standard normal on `[a, b]`, computed on the side of zero
/// that avoids cancellation.
fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_sf(b)
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<(), DistError> {
        let check_sd = |sd: f64| {
            if sd.is_finite() && sd >= 0.0 {
                Ok(())
            } else {
                Err(DistError::InvalidSigma(sd))
            }
        };
        let check_bounds = |lo: f64, hi: f64| {
            if lo < hi {
                Ok(())
            } else {
                Err(DistError::EmptyBounds { lo, hi })
            }
        };
        match *self {
            Distribution::Uniform { lo, hi } => check_bounds(lo, hi),
            Distribution::Gaussian { sd, .. } => check_sd(sd),
            Distribution::TruncatedGaussian { sd, lo, hi, .. } => {
                check_sd(sd)?;
                check_bounds(lo, hi)
            }
        }
    }

    /// Interval outside which the density is zero.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Distribution::Uniform { lo, hi } | Distribution::TruncatedGaussian { lo, hi, .. } => (lo, hi),
            Distribution::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Location parameter: the mean for Gaussian families, the midpoint for
    /// Uniform.
    pub fn center(&self) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Gaussian { mean, .. } | Distribution::TruncatedGaussian { mean, .. } => mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                (lo + (hi - lo) * u).clamp(lo, hi)
            }
            Distribution::Gaussian { mean, sd } => {
                if sd == 0.0 {
                    return mean;
                }
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Distribution::TruncatedGaussian { mean, sd, lo, hi } => {
                if sd == 0.0 {
                    return mean.clamp(lo, hi);
                }
                let a = (lo - mean) / sd;
                let b = (hi - mean) / sd;
                mean + sd * sample_std_truncated(a, b, rng)
            }
        }
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64, DistError> {
        match *self {
            Distribution::Uniform { lo, hi } => Ok(if (lo..=hi).contains(&x) {
                -(hi - lo).ln()
            } else {
                f64::NEG_INFINITY
            }),
            Distribution::Gaussian { mean, sd } => {
                if sd == 0.0 {
                    return Err(DistError::DegenerateDensity);
                }
                Ok(std_normal_ln_pdf((x - mean) / sd) - sd.ln())
            }
            Distribution::TruncatedGaussian { mean, sd, lo, hi } => {
                if sd == 0.0 {
                    return Err(DistError::DegenerateDensity);
                }
                if !(lo..=hi).contains(&x) {
                    return Ok(f64::NEG_INFINITY);
                }
                let mass = std_normal_mass((lo - mean) / sd, (hi - mean) / sd);
                Ok(std_normal_ln_pdf((x - mean) / sd) - sd.ln() - mass.ln())
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Distribution::Gaussian { mean, sd } => {
                if sd == 0.0 {
                    return if x >= mean { 1.0 } else { 0.0 };
                }
                std_normal_cdf((x - mean) / sd)
            }
            Distribution::TruncatedGaussian { mean, sd, lo, hi } => {
                if x <= lo {
                    return 0.0;
                }
                if x >= hi {
                    return 1.0;
                }
                if sd == 0.0 {
                    return if x >= mean.clamp(lo, hi) { 1.0 } else { 0.0 };
                }
                let a = (lo - mean) / sd;
                let b = (hi - mean) / sd;
                let z = (x - mean) / sd;
                (std_normal_mass(a, z) / std_normal_mass(a, b)).clamp(0.0, 1.0)
            }
        }
    }
}

/// Draws from the standard normal restricted to `[a, b]`.
///
/// Plain rejection when the interval holds a reasonable share of the mass,
/// otherwise inverse-CDF on whichever tail keeps precision.
fn sample_std_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let mass = std_normal_mass(a, b);
    if mass >= 0.25 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if (a..=b).contains(&z) {
                return z;
            }
        }
    }
    let u: f64 = rng.random();
    let z = if a >= 0.0 {
        let (qa, qb) = (std_normal_sf(a), std_normal_sf(b));
        SQRT_2 * erfc_inv(2.0 * (qb + u * (qa - qb)))
    } else {
        let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
        -SQRT_2 * erfc_inv(2.0 * (pa + u * (pb - pa)))
    };
    z.clamp(a, b)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Identifies an independent, reproducible random sequence.
///
/// Streams are plain values: deriving a sub-stream never advances any
/// generator, so the draws a particle sees depend only on the keys that name
/// it, not on which worker happens to process it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// A stream keyed by `(self, key)` that is independent of `self`.
    pub fn derive(&self, key: u64) -> RngStream {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0xA076_1D64_78BD_642F)));
        RngStream {
            seed: splitmix64(seed ^ key.wrapping_mul(0xE703_7ED1_A0B4_28DB)),
            stream_id: key,
        }
    }

    /// Stream `index` sharing this stream's key material; cheaper than
    /// [`RngStream::derive`] for per-particle fan-out.
    pub fn lane(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: index,
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draw from `d` using a fresh generator for `stream`.
pub fn sample(d: &Distribution, stream: &RngStream) -> f64 {
    d.sample(&mut stream.generator())
}

pub fn log_pdf(d: &Distribution, x: f64) -> Result<f64, DistError> {
    d.log_pdf(x)
}

/// `ln(1 / (sd * sqrt(2 pi)))`, the peak log-density of a Gaussian.
pub fn gaussian_peak_log_density(sd: f64) -> f64 {
    -(sd * (2.0 * PI).sqrt()).ln()
}
