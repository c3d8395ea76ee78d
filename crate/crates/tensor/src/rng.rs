use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lower clamp for uniform draws feeding the Gumbel transform.
pub const GUMBEL_UNIFORM_EPS: f64 = 1e-10;

/// Counter-addressed random stream.
///
/// A stream is fully determined by `(seed, domain, counter)`, so any step of
/// a run can be replayed without carrying generator state around.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, domain: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(mix(domain, counter));
        Self { rng }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0, 0)
    }

    /// Independent child stream, e.g. one per batch element.
    pub fn substream(&mut self, index: u64) -> Stream {
        let seed = self.rng.gen::<u64>();
        Stream::new(seed, index, 0)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        // Box-Muller; keeps the stream independent of distribution crate internals.
        let u1 = self.uniform().max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// One Gumbel(0, 1) draw, `-ln(-ln u)` with `u` clamped away from 0 and 1.
    pub fn gumbel(&mut self) -> f64 {
        let u = self
            .uniform()
            .clamp(GUMBEL_UNIFORM_EPS, 1.0 - GUMBEL_UNIFORM_EPS);
        -(-u.ln()).ln()
    }

    pub fn gumbel_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gumbel()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.gen()
    }
}

fn mix(domain: u64, counter: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = domain
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(counter)
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
