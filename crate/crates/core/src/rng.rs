//! Counter-based random streams.
//!
//! Every Monte-Carlo draw gets its own ChaCha stream keyed by
//! `(seed, domain, draw index, unit)`. Draws can then be generated in
//! parallel and in any order while remaining bit-reproducible, and the
//! streams used for statistics estimation, evaluation, tuning and
//! diagnostics never overlap.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent sampling domains. Each domain owns a disjoint key space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Receiver placement for scenario construction.
    Placement,
    /// Long-term statistics for the local team scheme.
    StatsLocal,
    /// Long-term statistics for the unidirectional team scheme.
    StatsUni,
    /// Moment matrices for the bilinear (OBE) coefficient system.
    StatsObe,
    /// Moment matrices for the large-scale fading coefficients.
    StatsLsfd,
    /// Step-size line search for the gradient scheme.
    Tuning,
    /// Rate-evaluation draws.
    Eval,
    /// Re-estimation draws used inside the stationarity diagnostics.
    ResidualStats,
    /// Evaluation draws for the stationarity residuals themselves.
    ResidualEval,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Placement => 1,
            Domain::StatsLocal => 2,
            Domain::StatsUni => 3,
            Domain::StatsObe => 4,
            Domain::StatsLsfd => 5,
            Domain::Tuning => 6,
            Domain::Eval => 7,
            Domain::ResidualStats => 8,
            Domain::ResidualEval => 9,
        }
    }
}

/// Stream for one `(seed, domain, draw, unit)` cell of the key space.
pub fn stream(seed: u64, domain: Domain, draw: u64, unit: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.tag().to_le_bytes());
    key[16..24].copy_from_slice(&draw.to_le_bytes());
    key[24..32].copy_from_slice(&unit.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Circularly-symmetric complex Gaussian with unit variance
/// (real and imaginary parts each N(0, 1/2)).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
