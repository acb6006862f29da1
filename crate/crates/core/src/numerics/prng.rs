use num_traits::Float;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const MIX_1: u64 = 0xbf58_476d_1ce4_e5b9;
const MIX_2: u64 = 0x94d0_49bb_1331_11eb;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

/// SplitMix64 generator.
///
/// The state advances by the golden-ratio increment and each output is the
/// Stafford "mix13" finalizer of the new state. Child generators are keyed
/// by hashing a label into the parent seed, so two children with distinct
/// labels never share a state stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Prng {
    seed: u64,
    state: u64,
    spare_normal: Option<f64>,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: seed,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `(seed, label)`; does not consume state.
    pub fn child(&self, label: &str) -> Self {
        let mut h = FNV_OFFSET;
        for b in label.bytes() {
            h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
        }
        Self::new(mix64(self.seed ^ mix64(h)))
    }

    /// Independent generator for `(seed, index)`.
    pub fn child_indexed(&self, label: &str, index: u64) -> Self {
        let base = self.child(label);
        Self::new(mix64(base.seed.wrapping_add(mix64(index.wrapping_add(GOLDEN_GAMMA)))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by the Box-Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = Float::sqrt(-2.0 * Float::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * Float::sin(theta));
        r * Float::cos(theta)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_splitmix_sequence() {
        // First outputs of SplitMix64 seeded with 0 (Vigna's reference code).
        let mut rng = Prng::new(0);
        assert_eq!(rng.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(rng.next_u64(), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(rng.next_u64(), 0x06c4_5d18_8009_454f);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Prng::new(42);
        let mut b = Prng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn children_are_distinct_and_stable() {
        let root = Prng::new(7);
        let mut a = root.child("theta");
        let mut b = root.child("input");
        let mut a2 = root.child("theta");
        let xa = a.next_u64();
        assert_ne!(xa, b.next_u64());
        assert_eq!(xa, a2.next_u64());
        assert_ne!(
            root.child_indexed("cell", 0).seed(),
            root.child_indexed("cell", 1).seed()
        );
    }

    #[test]
    fn normal_moments() {
        let mut rng = Prng::new(3);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}
