//! Counter-based random streams.
//!
//! Every draw is a pure function of `(master_seed, stream label, position)`,
//! so any replica can be regenerated on its own and results never depend on
//! which worker produced them. The mixing function is the SplitMix64
//! finalizer applied twice, once to the position and once to the keyed sum.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    /// Stream of replica `replica_index` under `master_seed`.
    pub fn new(master_seed: u64, replica_index: u64) -> Self {
        let root = mix64(master_seed ^ 0x6A09_E667_F3BC_C908);
        StreamKey(mix64(root ^ mix64(replica_index.wrapping_add(GOLDEN))))
    }

    /// Child stream labelled `label`; used for nested sampling (strata,
    /// tails below a fixed prefix).
    pub fn derive(self, label: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(label.wrapping_mul(GOLDEN) ^ 0xBB67_AE85_84CA_A73B)))
    }

    /// Raw key, usable as a master seed for a nested family of streams.
    pub fn value(self) -> u64 {
        self.0
    }

    /// 64 random bits at `position` of this stream.
    #[inline(always)]
    pub fn bits(self, position: u64) -> u64 {
        mix64(self.0.wrapping_add(mix64(position.wrapping_add(0x3C6E_F372_FE94_F82B))))
    }

    /// Uniform double in `[0, 1)` at `position`, 53 bits of resolution.
    #[inline(always)]
    pub fn uniform(self, position: u64) -> f64 {
        (self.bits(position) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Maps stream draws to alphabet symbols according to a probability vector.
#[derive(Clone, Debug)]
pub enum SymbolSampler {
    /// Uniform over `2^bits` symbols: each 64-bit draw yields `64 / bits`
    /// symbols.
    Bits { bits: u32 },
    /// Inverse-CDF lookup of one 53-bit uniform per symbol.
    Inverse { cumulative: Vec<f64> },
}

impl SymbolSampler {
    pub fn new(probs: &[f64]) -> Self {
        let k = probs.len();
        let uniform = probs.iter().all(|&p| p == 1.0 / k as f64);
        if uniform && k.is_power_of_two() && (2..=256).contains(&k) {
            return SymbolSampler::Bits { bits: k.trailing_zeros() };
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        SymbolSampler::Inverse { cumulative }
    }

    /// Fills `out` with the symbols at positions `start .. start + out.len()`.
    pub fn fill(&self, key: StreamKey, start: u64, out: &mut [u8]) {
        match self {
            SymbolSampler::Bits { bits } => {
                let per_draw = 64 / *bits as u64;
                let mask = (1u64 << bits) - 1;
                let mut pos = start;
                let mut i = 0;
                while i < out.len() {
                    let draw = key.bits(pos / per_draw);
                    let mut offset = pos % per_draw;
                    let mut word = draw >> (offset * *bits as u64);
                    while offset < per_draw && i < out.len() {
                        out[i] = (word & mask) as u8;
                        word >>= bits;
                        offset += 1;
                        pos += 1;
                        i += 1;
                    }
                }
            }
            SymbolSampler::Inverse { cumulative } => {
                for (i, slot) in out.iter_mut().enumerate() {
                    let u = key.uniform(start + i as u64);
                    *slot = cumulative.iter().position(|&c| u < c).unwrap_or(0) as u8;
                }
            }
        }
    }

    /// Symbol at a single position.
    pub fn symbol(&self, key: StreamKey, position: u64) -> u8 {
        let mut s = [0u8; 1];
        self.fill(key, position, &mut s);
        s[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = StreamKey::new(7, 3);
        assert_eq!(a.bits(11), StreamKey::new(7, 3).bits(11));
        assert_ne!(a.bits(11), StreamKey::new(7, 4).bits(11));
        assert_ne!(a.bits(11), StreamKey::new(8, 3).bits(11));
        assert_ne!(a.derive(1).bits(0), a.derive(2).bits(0));
    }

    #[test]
    fn bit_sampler_fill_is_position_consistent() {
        let s = SymbolSampler::new(&[0.5, 0.5]);
        let key = StreamKey::new(1, 2);
        let mut whole = vec![0u8; 300];
        s.fill(key, 0, &mut whole);
        let mut tail = vec![0u8; 100];
        s.fill(key, 137, &mut tail);
        assert_eq!(&whole[137..237], &tail[..]);
        assert_eq!(s.symbol(key, 200), whole[200]);
    }

    #[test]
    fn inverse_sampler_frequencies() {
        let s = SymbolSampler::new(&[0.2, 0.5, 0.3]);
        let key = StreamKey::new(99, 0);
        let mut out = vec![0u8; 200_000];
        s.fill(key, 0, &mut out);
        let mut counts = [0usize; 3];
        for &x in &out {
            counts[x as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            let f = *c as f64 / out.len() as f64;
            assert!((f - p).abs() < 5.0 * (p * (1.0 - p) / out.len() as f64).sqrt());
        }
    }

    #[test]
    fn uniform_bits_are_balanced() {
        let key = StreamKey::new(5, 5);
        let ones: u32 = (0..10_000).map(|i| key.bits(i).count_ones()).sum();
        let mean = ones as f64 / 10_000.0;
        assert!((mean - 32.0).abs() < 0.2);
    }
}
