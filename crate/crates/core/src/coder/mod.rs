//! Probability quantization, range coding, the container format and the sweep codec.

mod codec;
mod container;
mod range;

pub use codec::{
    decode_stream, decode_sweep, encode_stream, encode_sweep, CodecModels, EncodedSweep,
};
pub use container::{Container, Frame, FrameMeta, SectionKind, CONTAINER_VERSION};
pub use range::{rc_decode, rc_encode, RangeDecoder, RangeEncoder};

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

/// Cumulative integer frequencies summing to [`PROB_TOTAL`], every symbol at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    cdf: Vec<u32>,
}

impl QuantizedCdf {
    pub fn uniform(n: usize) -> Self {
        quantize_probs(&vec![1.0 / n as f64; n]).expect("uniform distribution is valid")
    }

    pub fn from_freqs(freqs: &[u32]) -> Result<Self> {
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        cdf.push(0u32);
        let mut acc = 0u64;
        for &f in freqs {
            if f == 0 {
                return Err(Error::Model("zero frequency".into()));
            }
            acc += u64::from(f);
            cdf.push(acc.min(u64::from(u32::MAX)) as u32);
        }
        if acc != u64::from(PROB_TOTAL) {
            return Err(Error::Model(format!(
                "frequencies sum to {acc}, not {PROB_TOTAL}"
            )));
        }
        Ok(QuantizedCdf { cdf })
    }

    pub fn symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    #[inline]
    pub fn start(&self, s: usize) -> u32 {
        self.cdf[s]
    }

    #[inline]
    pub fn freq(&self, s: usize) -> u32 {
        self.cdf[s + 1] - self.cdf[s]
    }

    pub fn total(&self) -> u32 {
        *self.cdf.last().unwrap()
    }

    pub fn freqs(&self) -> Vec<u32> {
        (0..self.symbols()).map(|s| self.freq(s)).collect()
    }

    /// Symbol whose interval contains `value`.
    pub fn symbol_for(&self, value: u32) -> usize {
        self.cdf.partition_point(|&c| c <= value) - 1
    }

    /// Ideal code length of `s` in bits.
    pub fn cost_bits(&self, s: usize) -> f64 {
        f64::from(PROB_BITS) - f64::from(self.freq(s)).log2()
    }
}

/// Rounds each probability to the 2^-32 grid, then assigns `max(1, round(p * 2^16))` and fixes
/// the total by largest-remainder adjustment (ties go to the lower symbol index).
pub fn quantize_probs(p: &[f64]) -> Result<QuantizedCdf> {
    let n = p.len();
    if n == 0 || n > PROB_TOTAL as usize {
        return Err(Error::Model(format!("cannot quantize {n} symbols")));
    }
    if let Some((i, v)) = p
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::Model(format!(
            "invalid probability {v} for symbol {i}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Model(format!("probabilities sum to {sum}")));
    }
    const GRID: f64 = 4_294_967_296.0;
    let unit = 1i64 << 16;
    let q: Vec<i64> = p.iter().map(|&v| (v * GRID).round() as i64).collect();
    let mut freq: Vec<i64> = q.iter().map(|&v| ((v + unit / 2) >> 16).max(1)).collect();
    let mut excess: i64 = freq.iter().sum::<i64>() - i64::from(PROB_TOTAL);
    while excess != 0 {
        // Remainder: true mass minus assigned mass, in 2^-32 units.
        let mut order: Vec<usize> = if excess > 0 {
            (0..n).filter(|&s| freq[s] > 1).collect()
        } else {
            (0..n).collect()
        };
        let rem = |s: usize, f: &[i64]| q[s] - f[s] * unit;
        if excess > 0 {
            order.sort_by(|&a, &b| rem(a, &freq).cmp(&rem(b, &freq)).then(a.cmp(&b)));
        } else {
            order.sort_by(|&a, &b| rem(b, &freq).cmp(&rem(a, &freq)).then(a.cmp(&b)));
        }
        for s in order {
            if excess == 0 {
                break;
            }
            if excess > 0 {
                if freq[s] > 1 {
                    freq[s] -= 1;
                    excess -= 1;
                }
            } else {
                freq[s] += 1;
                excess += 1;
            }
        }
    }
    QuantizedCdf::from_freqs(&freq.iter().map(|&f| f as u32).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probs(rng: &mut ChaCha8Rng, n: usize, peaky: bool) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                if peaky {
                    u.powi(12)
                } else {
                    u
                }
            })
            .collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    #[test]
    fn uniform_and_point_mass() {
        let u = quantize_probs(&[1.0 / 256.0; 256]).unwrap();
        assert!(u.freqs().iter().all(|&f| f == 256));
        let mut p = vec![0.0; 256];
        p[0] = 1.0;
        let c = quantize_probs(&p).unwrap();
        assert_eq!(c.freq(0), 65536 - 255);
        assert!((1..256).all(|s| c.freq(s) == 1));
    }

    #[test]
    fn invalid_inputs() {
        assert!(quantize_probs(&[0.5, 0.6]).is_err());
        assert!(quantize_probs(&[1.5, -0.5]).is_err());
        assert!(quantize_probs(&[f64::NAN, 1.0]).is_err());
        assert!(quantize_probs(&[]).is_err());
    }

    #[test]
    fn symbol_lookup_matches_intervals() {
        let c = QuantizedCdf::from_freqs(&[1, 65533, 2]).unwrap();
        assert_eq!(c.symbol_for(0), 0);
        assert_eq!(c.symbol_for(1), 1);
        assert_eq!(c.symbol_for(65533), 1);
        assert_eq!(c.symbol_for(65534), 2);
        assert_eq!(c.symbol_for(65535), 2);
    }

    #[test]
    fn flooring_penalty_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let peaky = rng.gen();
            let mut p = random_probs(&mut rng, 256, peaky);
            // Enforce min p >= 1e-4.
            p.iter_mut()
                .for_each(|x| *x = 1e-4 + *x * (1.0 - 256.0 * 1e-4));
            let c = quantize_probs(&p).unwrap();
            let h: f64 = p.iter().map(|&x| -x * x.log2()).sum();
            let xh: f64 = p.iter().enumerate().map(|(s, &x)| x * c.cost_bits(s)).sum();
            assert!(xh - h < 0.01, "{}", xh - h);
        }
    }

    #[test]
    fn golden_vectors() {
        // Frozen bit-exact outputs; any change to quantization or the coder breaks these.
        let c = quantize_probs(&[0.7, 0.2, 0.1]).unwrap();
        assert_eq!(c.freqs(), vec![45875, 13107, 6554]);
        let c = quantize_probs(&[0.5, 0.5 - 1e-9, 1e-9]).unwrap();
        assert_eq!(c.freqs(), vec![32768, 32767, 1]);

        let cdf = quantize_probs(&[0.7, 0.2, 0.1]).unwrap();
        let syms = [0u8, 0, 1, 2, 0, 1, 0, 0, 2, 2, 1, 0];
        let bytes = rc_encode(&syms, &vec![cdf.clone(); syms.len()]).unwrap();
        assert_eq!(
            bytes,
            vec![0x6f, 0xc9, 0x4a, 0x7a, 0x06, 0xd8, 0x86, 0x75, 0xde, 0x00]
        );
        assert_eq!(
            rc_decode(&bytes, syms.len(), |_, _| cdf.clone()).unwrap(),
            syms
        );
    }

    #[test]
    fn empty_input_roundtrips() {
        let bytes = rc_encode(&[], &[]).unwrap();
        assert!(bytes.is_empty());
        assert!(rc_decode(&bytes, 0, |_, _| QuantizedCdf::uniform(256))
            .unwrap()
            .is_empty());
        assert!(rc_decode(&bytes, 1, |_, _| QuantizedCdf::uniform(256)).is_err());
    }

    #[test]
    fn deterministic_stream_is_tiny() {
        let mut p = vec![0.0; 256];
        p[3] = 1.0;
        let c = quantize_probs(&p).unwrap();
        let syms = vec![3u8; 10_000];
        let bytes = rc_encode(&syms, &vec![c.clone(); syms.len()]).unwrap();
        assert!(bytes.len() < 50, "{}", bytes.len());
        assert_eq!(
            rc_decode(&bytes, syms.len(), |_, _| c.clone()).unwrap(),
            syms
        );
    }

    #[test]
    fn truncated_stream_is_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = QuantizedCdf::uniform(256);
        let syms: Vec<u8> = (0..500).map(|_| rng.gen()).collect();
        let bytes = rc_encode(&syms, &vec![c.clone(); syms.len()]).unwrap();
        let r = rc_decode(&bytes[..bytes.len() - 3], syms.len(), |_, _| c.clone());
        assert!(matches!(r, Err(Error::Corruption { .. })));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            rc_decode(&longer, syms.len(), |_, _| c.clone()),
            Err(Error::Corruption { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn roundtrip_and_length_bound(seed in 0u64..10_000, n in 0usize..3000, alphabet in 2usize..257) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cdfs = Vec::with_capacity(n);
            let mut syms = Vec::with_capacity(n);
            let mut ideal = 0.0;
            for _ in 0..n {
                let peaky = rng.gen();
                let p = random_probs(&mut rng, alphabet, peaky);
                let c = quantize_probs(&p).unwrap();
                // Sample from the quantized model.
                let s = c.symbol_for(rng.gen_range(0..PROB_TOTAL));
                ideal += c.cost_bits(s);
                syms.push(s as u8);
                cdfs.push(c);
            }
            let bytes = rc_encode(&syms, &cdfs).unwrap();
            prop_assert!((bytes.len() as f64) <= ideal / 8.0 + 16.0);
            let back = rc_decode(&bytes, n, |i, _| cdfs[i].clone()).unwrap();
            prop_assert_eq!(back, syms);
        }
    }
}
