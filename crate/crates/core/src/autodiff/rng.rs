use std::cell::Cell;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator for dropout masks. Every call to
/// [`DropoutRng::next_stream`] yields an independent stream, and element `i`
/// of a stream is a pure function of `(seed, stream, i)`, so a mask never
/// depends on how many values were drawn before it.
#[derive(Debug)]
pub struct DropoutRng {
    seed: u64,
    stream: Cell<u64>,
}

impl DropoutRng {
    pub fn new(seed: u64) -> Self {
        DropoutRng {
            seed: splitmix64(seed),
            stream: Cell::new(0),
        }
    }

    /// Derives a seed for a sub-task, e.g. `(epoch, sample)`.
    pub fn derive(seed: u64, parts: &[u64]) -> u64 {
        parts
            .iter()
            .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
    }

    pub fn next_stream(&self) -> u64 {
        let s = self.stream.get();
        self.stream.set(s + 1);
        splitmix64(self.seed ^ splitmix64(s.wrapping_add(0x5851_F42D_4C95_7F2D)))
    }

    /// Uniform in `[0, 1)` for element `i` of `stream`.
    pub fn uniform(stream: u64, i: u64) -> f64 {
        (splitmix64(stream ^ splitmix64(i)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
