//! Per-image seeding. Every random choice for an image comes from a
//! generator seeded by `(global seed, image id)`, so records can be processed
//! in any order, in parallel, or across resumed runs with identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator stream used by the captioning stages.
pub const STREAM_PIPELINE: u64 = 0;
/// Generator stream used when sampling one caption per image for export.
pub const STREAM_EXPORT: u64 = 1;

/// First eight bytes (little endian) of
/// `SHA-256("facecap-seed-v1" || global_seed_le || image_id)`.
pub fn per_image_seed(global_seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"facecap-seed-v1");
    h.update(global_seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn image_rng(per_image_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(per_image_seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn seed_is_stable_and_sensitive() {
        let a = per_image_seed(7, "img-1");
        assert_eq!(a, per_image_seed(7, "img-1"));
        assert_ne!(a, per_image_seed(8, "img-1"));
        assert_ne!(a, per_image_seed(7, "img-2"));
    }

    #[test]
    fn pinned_values() {
        // Frozen outputs; changing the derivation changes every dataset.
        assert_eq!(per_image_seed(7, "img-1"), 14_316_709_954_388_696_949);
        assert_eq!(per_image_seed(0, "syn-0000"), 14_020_230_977_631_583_389);
    }

    #[test]
    fn streams_are_independent() {
        let mut a = image_rng(1, STREAM_PIPELINE);
        let mut b = image_rng(1, STREAM_EXPORT);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
