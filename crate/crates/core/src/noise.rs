//! Reproducible Brownian increments.
//!
//! Every path draws from its own ChaCha8 stream: the 256-bit key is expanded
//! from the master seed with SplitMix64 and the 64-bit stream id is the path
//! index. The increment sequence of a path is therefore a pure function of
//! `(master_seed, path_index, step)`, whatever order paths are evaluated in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent master seed for a labelled sub-experiment.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// Identifies the noise of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub path_index: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self { master_seed, path_index }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.path_index);
        rng
    }

    /// Gaussian increments `N(0, dt I)` for this path.
    pub fn increments(&self, dt: f64) -> GaussianIncrements {
        GaussianIncrements { rng: self.rng(), scale: dt.sqrt() }
    }
}

/// Source of per-step Brownian increments.
pub trait IncrementSource {
    fn next_increment(&mut self, out: &mut [f64]);
}

impl<S: IncrementSource + ?Sized> IncrementSource for &mut S {
    fn next_increment(&mut self, out: &mut [f64]) {
        (**self).next_increment(out)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianIncrements {
    rng: ChaCha8Rng,
    scale: f64,
}

impl IncrementSource for GaussianIncrements {
    #[inline]
    fn next_increment(&mut self, out: &mut [f64]) {
        for o in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *o = self.scale * z;
        }
    }
}

/// All increments zero: the deterministic skeleton of the equation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl IncrementSource for ZeroNoise {
    fn next_increment(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// Sums `factor` consecutive increments of a finer source, giving the same
/// Brownian path on a grid `factor` times coarser.
#[derive(Debug, Clone)]
pub struct CoarsenedNoise<S> {
    inner: S,
    factor: usize,
    buf: Vec<f64>,
}

impl<S: IncrementSource> CoarsenedNoise<S> {
    pub fn new(inner: S, factor: usize) -> Self {
        assert!(factor >= 1, "coarsening factor must be >= 1");
        Self { inner, factor, buf: Vec::new() }
    }
}

impl<S: IncrementSource> IncrementSource for CoarsenedNoise<S> {
    fn next_increment(&mut self, out: &mut [f64]) {
        self.buf.resize(out.len(), 0.0);
        out.iter_mut().for_each(|o| *o = 0.0);
        for _ in 0..self.factor {
            self.inner.next_increment(&mut self.buf);
            for (o, b) in out.iter_mut().zip(&self.buf) {
                *o += b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(stream: NoiseStream, n: usize) -> Vec<f64> {
        let mut inc = stream.increments(0.25);
        let mut out = vec![0.0; n];
        inc.next_increment(&mut out);
        out
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = draw(NoiseStream::new(7, 3), 16);
        assert_eq!(a, draw(NoiseStream::new(7, 3), 16));
        assert_ne!(a, draw(NoiseStream::new(7, 4), 16));
        assert_ne!(a, draw(NoiseStream::new(8, 3), 16));
    }

    #[test]
    fn increments_have_dt_variance() {
        let v = draw(NoiseStream::new(1, 0), 200_000);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 * (0.25f64 / n).sqrt());
        // sd of sample variance is about var * sqrt(2/n)
        assert!((var - 0.25).abs() < 4.0 * 0.25 * (2.0 / n).sqrt(), "{var}");
    }

    #[test]
    fn coarsening_sums_fine_increments() {
        let fine = draw(NoiseStream::new(5, 1), 8);
        let mut coarse = CoarsenedNoise::new(NoiseStream::new(5, 1).increments(0.25), 4);
        let mut out = [0.0; 1];
        coarse.next_increment(&mut out);
        let expect: f64 = fine[..4].iter().sum();
        assert!((out[0] - expect).abs() < 1e-15);
        coarse.next_increment(&mut out);
        let expect: f64 = fine[4..].iter().sum();
        assert!((out[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(3, 9), derive_seed(3, 9));
    }
}
