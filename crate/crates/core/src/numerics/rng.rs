//! Seedable xoshiro256** streams, one per purpose.
//!
//! Every random draw in the crate goes through an [`RngStream`]. A stream is
//! identified by `(seed, label)`; two streams with the same pair produce the
//! same sequence, and streams with different labels are decorrelated by
//! seeding through splitmix64.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamLabel {
    Data,
    Init,
    SourceNoise,
    TimeSampling,
    Batch,
    Eval,
    Diagnostics,
}

impl StreamLabel {
    fn tag(self) -> u64 {
        match self {
            StreamLabel::Data => 0x6461_7461,
            StreamLabel::Init => 0x696e_6974,
            StreamLabel::SourceNoise => 0x6e6f_6973,
            StreamLabel::TimeSampling => 0x7469_6d65,
            StreamLabel::Batch => 0x6261_7463,
            StreamLabel::Eval => 0x6576_616c,
            StreamLabel::Diagnostics => 0x6469_6167,
        }
    }
}

fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    state: [u64; 4],
    label: StreamLabel,
}

impl RngStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        let mut sm = seed ^ label.tag().wrapping_mul(0xd605_bbb5_8c8a_bd29);
        let mut state = [0u64; 4];
        for s in &mut state {
            *s = splitmix64(&mut sm);
        }
        // all-zero state is the one fixed point of xoshiro
        if state == [0; 4] {
            state[0] = 1;
        }
        Self { state, label }
    }

    /// A child stream derived from this one's next output, e.g. one per worker.
    pub fn fork(&mut self, label: StreamLabel) -> Self {
        let seed = self.next_u64();
        Self::new(seed, label)
    }

    pub fn from_state(state: [u64; 4], label: StreamLabel) -> Self {
        Self { state, label }
    }

    pub fn state(&self) -> [u64; 4] {
        self.state
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    fn step(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.step() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2^-64 * n and irrelevant here
        ((self.step() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.normal())
    }

    pub fn uniform_tensor(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.uniform())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.step() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.step()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.step().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// i.i.d. standard normal values.
pub fn rng_normal(stream: &mut RngStream, shape: &[usize]) -> Tensor {
    stream.normal_tensor(shape)
}
