//! Deterministic, hierarchically split random streams.
//!
//! Every stream is addressed by a root seed and a path of integers
//! (for example `[worker, purpose]`). The path is folded into a 64-bit seed
//! with SplitMix64 finalizers, so two streams with different paths are
//! statistically independent and a stream never depends on how many draws
//! other streams have made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used by every simulation component.
pub type SimRng = ChaCha8Rng;

/// Stream purposes, used as the last path component.
pub mod purpose {
    pub const DELAY: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const PROBLEM: u64 = 3;
    pub const HISTOGRAM: u64 = 4;
    pub const ORACLE: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree(splitmix64(root))
    }

    pub fn child(self, index: u64) -> Self {
        SeedTree(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn path(self, path: &[u64]) -> Self {
        path.iter().fold(self, |node, &i| node.child(i))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}

/// Shorthand for `SeedTree::new(root).path(path).rng()`.
pub fn stream(root: u64, path: &[u64]) -> SimRng {
    SeedTree::new(root).path(path).rng()
}
