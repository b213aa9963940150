//! Deterministic random-number streams.
//!
//! Every stream is fully determined by `(seed, stream_id)`: the pair is mixed
//! through SplitMix64 into a xoshiro256** state, so sequences are identical
//! across platforms and independent of scheduling. Parallel tasks never share
//! a stream; each derives its own from the master seed and a stable task id.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix an ordered list of identifiers into a single stream id.
///
/// Used to build stable task ids such as `(round, client)` without collisions
/// between unrelated parts of the pipeline.
pub fn compose_stream(parts: &[u64]) -> u64 {
    let mut acc: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        acc ^= p;
        acc = splitmix64(&mut acc);
    }
    acc
}

/// A deterministic pseudo-random stream (xoshiro256** core).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    state: [u64; 4],
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        // Two independent SplitMix64 chains, one per identifier, combined by
        // addition so distinct (seed, stream) pairs land in unrelated states.
        let mut s = seed;
        let mut t = stream_id ^ 0x6A09_E667_F3BC_C909;
        let mut state = [0u64; 4];
        for w in &mut state {
            *w = splitmix64(&mut s).wrapping_add(splitmix64(&mut t));
        }
        if state.iter().all(|&w| w == 0) {
            state = [GOLDEN, 0x6A09_E667_F3BC_C909, 0xBB67_AE85_84CA_A73B, 1];
        }
        RngStream {
            seed,
            stream_id,
            state,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive a child stream with the same seed and a stream id composed from
    /// this stream's id and `tag`.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, compose_stream(&[self.stream_id, tag]))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.state[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.state[1] << 17;
        self.state[2] ^= self.state[0];
        self.state[3] ^= self.state[1];
        self.state[1] ^= self.state[2];
        self.state[0] ^= self.state[3];
        self.state[2] ^= t;
        self.state[3] = self.state[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Standard normal deviate (Marsaglia polar method, spare discarded).
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// Gamma(shape, 1) deviate via Marsaglia-Tsang squeeze.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0, "gamma shape must be positive");
        if shape < 1.0 {
            let u = loop {
                let u = self.next_f64();
                if u > 0.0 {
                    break u;
                }
            };
            return self.gamma(shape + 1.0) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (3.0 * d.sqrt());
        loop {
            let x = self.normal();
            let v = (1.0 + c * x).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u = self.next_f64();
            if u < 1.0 - 0.0331 * x.powi(4) {
                return d * v;
            }
            if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Symmetric Dirichlet(alpha) sample of length `n`.
    pub fn dirichlet(&mut self, alpha: f64, n: usize) -> Vec<f64> {
        assert!(n > 0 && alpha > 0.0);
        let mut draws: Vec<f64> = (0..n).map(|_| self.gamma(alpha)).collect();
        let sum: f64 = draws.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            // Underflow for very small alpha: the limit distribution puts all
            // mass on one coordinate.
            let hot = self.below(n as u64) as usize;
            draws.iter_mut().for_each(|v| *v = 0.0);
            draws[hot] = 1.0;
            return draws;
        }
        draws.iter_mut().for_each(|v| *v /= sum);
        draws
    }

    /// Draw an index from an explicit probability vector.
    ///
    /// Falls back to the last index with positive mass if rounding makes the
    /// cumulative sum fall short of the draw.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            cum += p;
            if u < cum {
                return i;
            }
        }
        last_positive
    }
}
