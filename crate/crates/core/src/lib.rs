mod binio;
pub mod channel;
pub mod config;
pub mod dsac;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod hfl;
pub mod hybrid;
pub mod nn;

pub use error::{ConfigError, Error, FieldError, Result};

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
