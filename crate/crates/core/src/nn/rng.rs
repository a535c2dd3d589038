//! Seeded random streams. Each consumer draws from its own ChaCha stream so that, for example,
//! adding discriminators to a run never shifts the main network's dropout masks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    Shuffle,
    Split,
    Data,
    /// Per-discriminator streams; the index keeps them apart.
    Discriminator(u8),
    Custom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Shuffle => 3,
            Stream::Split => 4,
            Stream::Data => 5,
            Stream::Discriminator(i) => 0x100 + u64::from(i),
            Stream::Custom(id) => 0x1_0000 + id,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
