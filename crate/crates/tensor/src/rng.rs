//! Seedable counter-based random source.
//!
//! Wraps ChaCha8, whose output is a pure function of (seed, stream, word
//! position), so a generator can be checkpointed as three integers and
//! resumed bit-exactly on any platform. Gaussian draws use the Box–Muller
//! transform and cache the second variate of each pair.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Result, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

/// Serializable snapshot of an [`Rng`].
#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
    pub spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent generator for sub-task `stream`, keyed by the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Rejection keeps the draw unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let v = self.inner.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box–Muller).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
            spare: self.spare,
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self {
            inner,
            spare: state.spare,
        }
    }
}

impl RngState {
    /// Encodes the state as 16-bit chunks stored in `f64`s, every one exactly
    /// representable, so it fits in a floating point tensor container.
    pub fn to_words(&self) -> Vec<f64> {
        let mut words = Vec::with_capacity(32);
        for pair in self.seed.chunks(2) {
            words.push(u16::from_le_bytes([pair[0], pair[1]]) as f64);
        }
        for i in 0..4 {
            words.push(((self.stream >> (16 * i)) & 0xffff) as f64);
        }
        for i in 0..8 {
            words.push(((self.word_pos >> (16 * i)) & 0xffff) as f64);
        }
        match self.spare {
            Some(z) => {
                words.push(1.0);
                let bits = z.to_bits();
                for i in 0..4 {
                    words.push(((bits >> (16 * i)) & 0xffff) as f64);
                }
            }
            None => {
                words.push(0.0);
                words.extend([0.0; 4]);
            }
        }
        words
    }

    pub fn from_words(words: &[f64]) -> Result<Self> {
        const LEN: usize = 16 + 4 + 8 + 1 + 4;
        if words.len() != LEN {
            return Err(TensorError::Contract(format!(
                "rng state needs {LEN} words, got {}",
                words.len()
            )));
        }
        let mut chunk = Vec::with_capacity(LEN);
        for &w in words {
            if !(0.0..=65535.0).contains(&w) || w.fract() != 0.0 {
                return Err(TensorError::Contract(format!("invalid rng state word {w}")));
            }
            chunk.push(w as u64);
        }
        let mut seed = [0u8; 32];
        for (i, w) in chunk[..16].iter().enumerate() {
            seed[2 * i..2 * i + 2].copy_from_slice(&(*w as u16).to_le_bytes());
        }
        let stream = (0..4).fold(0u64, |acc, i| acc | (chunk[16 + i] << (16 * i)));
        let word_pos = (0..8).fold(0u128, |acc, i| acc | ((chunk[20 + i] as u128) << (16 * i)));
        let spare = if chunk[28] == 1 {
            let bits = (0..4).fold(0u64, |acc, i| acc | (chunk[29 + i] << (16 * i)));
            Some(f64::from_bits(bits))
        } else {
            None
        };
        Ok(Self {
            seed,
            stream,
            word_pos,
            spare,
        })
    }
}
