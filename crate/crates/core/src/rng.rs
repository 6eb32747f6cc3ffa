//! Seed derivation. Every random draw in the library flows from a root seed
//! split into named streams, so that e.g. Monte Carlo training noise never
//! shares state with the feature-map draw.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Named random streams derived from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    FeatureMap,
    Init,
    McTrain,
    McEval,
    Split,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::FeatureMap => "feature-map",
            Stream::Init => "init",
            Stream::McTrain => "mc-train",
            Stream::McEval => "mc-eval",
            Stream::Split => "split",
        }
    }
}

/// Derives a 64-bit child seed from `(root, label)` via SHA-256.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream_seed(root: u64, stream: Stream) -> u64 {
    derive_seed(root, stream.name())
}

/// Portable generator used everywhere: ChaCha20 keyed by a 64-bit seed.
/// Normal draws use `rand_distr::StandardNormal` (ziggurat) on top of it.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
