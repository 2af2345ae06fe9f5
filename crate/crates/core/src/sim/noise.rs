//! Reproducible Gaussian streams.
//!
//! Every path owns two independent streams keyed by the path seed: stream 0
//! drives the Wiener increments and stream 1 the measurement noise. A stream
//! is ChaCha8 with the 64-bit seed expanded by `seed_from_u64` and the stream
//! id selecting the ChaCha nonce. Standard normals come in pairs from the
//! Box-Muller transform, each pair consuming exactly two 64-bit outputs:
//!
//! ```text
//!     u1 = ((w0 >> 11) + 1) 2^-53        in (0, 1]
//!     u2 =  (w1 >> 11)      2^-53        in [0, 1)
//!     (g0, g1) = sqrt(-2 ln u1) (cos 2 pi u2, sin 2 pi u2)
//! ```
//!
//! Draw `i` therefore lives at a fixed position of the keystream, so any draw
//! can be regenerated without replaying the ones before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PROCESS_STREAM: u64 = 0;
pub const MEASUREMENT_STREAM: u64 = 1;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng, spare: None }
    }

    /// Positions the stream so that the next value is draw number `index`
    /// (zero based).
    pub fn seek(&mut self, index: u64) {
        let pair = index / 2;
        // two u64 per pair, two 32-bit words per u64
        self.rng.set_word_pos(u128::from(pair) * 4);
        self.spare = None;
        if index % 2 == 1 {
            self.standard_normal();
        }
    }

    fn pair(&mut self) -> (f64, f64) {
        let w0 = self.rng.next_u64();
        let w1 = self.rng.next_u64();
        let u1 = ((w0 >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (w1 >> 11) as f64 * TWO_POW_M53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        match self.spare.take() {
            Some(g) => g,
            None => {
                let (g0, g1) = self.pair();
                self.spare = Some(g1);
                g0
            }
        }
    }

    pub fn fill(&mut self, out: &mut [f64], std: f64) {
        for v in out {
            *v = std * self.standard_normal();
        }
    }
}
