//! Seeded generator used for weight initialisation.
//!
//! A splitmix64 step turns the user seed into a non-zero state, which then
//! drives an xorshift64* stream. The stream is part of the weight format
//! contract: changing it changes every seeded model.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of splitmix64 over `state`, advancing it.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let mut state = splitmix64(&mut sm);
        while state == 0 {
            state = splitmix64(&mut sm);
        }
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-half_width, half_width]`, rounded to f32.
    pub fn next_symmetric(&mut self, half_width: f64) -> f32 {
        (self.next_unit() * 2.0 * half_width - half_width) as f32
    }
}
