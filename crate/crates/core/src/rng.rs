//! Counter-based random streams.
//!
//! Every draw is addressed by a key and a counter: `value = mix(key + counter * GOLDEN)`,
//! the SplitMix64 output function applied at an arbitrary position. Keys are
//! derived hierarchically (`seed -> situation -> epoch`), so any cell of any
//! draw matrix can be regenerated without replaying the stream that precedes it.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix64(seed ^ 0x6A09_E667_F3BC_C909))
    }

    /// Child key for `index`. Distinct indices give unrelated streams.
    #[inline]
    pub fn split(self, index: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(index.wrapping_add(0xBB67_AE85_84CA_A73B))))
    }

    #[inline(always)]
    pub fn u64_at(self, counter: u64) -> u64 {
        mix64(self.0.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval (0, 1). Never returns 0 or 1.
    #[inline(always)]
    pub fn uniform_at(self, counter: u64) -> f64 {
        ((self.u64_at(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn stream(self) -> Stream {
        Stream {
            key: self,
            counter: 0,
        }
    }
}

/// Sequential cursor over a keyed stream.
#[derive(Clone, Debug)]
pub struct Stream {
    key: StreamKey,
    counter: u64,
}

impl Stream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.key.u64_at(self.counter);
        self.counter += 1;
        v
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        let v = self.key.uniform_at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on (lo, hi).
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Index in `0..n` (n > 0), via Lemire's multiply-shift.
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_open_interval_and_addressable() {
        let key = StreamKey::new(7).split(3);
        let mut s = key.stream();
        for c in 0..10_000u64 {
            let u = s.next_uniform();
            assert!(u > 0.0 && u < 1.0);
            assert_eq!(u.to_bits(), key.uniform_at(c).to_bits());
        }
    }

    #[test]
    fn split_streams_differ() {
        let root = StreamKey::new(1);
        assert_ne!(root.split(0).u64_at(0), root.split(1).u64_at(0));
        assert_ne!(StreamKey::new(1).u64_at(0), StreamKey::new(2).u64_at(0));
    }

    #[test]
    fn uniform_mean_and_index_range() {
        let mut s = StreamKey::new(11).stream();
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| s.next_uniform()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005);
        for _ in 0..1000 {
            assert!(s.next_index(7) < 7);
        }
    }
}
