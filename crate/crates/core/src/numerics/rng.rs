/// Deterministic random stream: SplitMix64 for the integer core, mapped to
/// `(0, 1]` uniforms, with Box-Muller gaussians on top.
///
/// The generator is pinned bit-exactly (constants, shifts, and the uniform
/// mapping) so that recorded seeds reproduce identical streams on every
/// platform. Streams are single-owner; clone to fork one.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    cached_gaussian: Option<f64>,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

/// One SplitMix64 output for `state + GOLDEN_GAMMA`; also used standalone to
/// derive independent child seeds (`splitmix64(master ^ index)`).
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

/// Derives the seed for sweep/split point `index` from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut s = master ^ index;
    splitmix64(&mut s)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            state: seed,
            cached_gaussian: None,
        }
    }

    /// Raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in `(0, 1]`: the top 53 bits plus one, scaled by 2^-53.
    /// The +1 keeps 0 out of the range, which Box-Muller relies on.
    pub fn next_uniform(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (2f64).powi(-53)
    }

    /// Standard gaussian via Box-Muller; the sine branch is cached and
    /// returned by the next call.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gaussian.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.cached_gaussian = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// In-place Fisher-Yates shuffle, consuming one draw per swap.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
