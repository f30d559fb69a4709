//! Latent tensors on disk.
//!
//! A 32-byte little-endian header followed by `t·h·w·c` `f32` values:
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..8   | magic `VVTLAT01`                        |
//! | 8..24  | `t`, `h`, `w`, `c` as `u32`             |
//! | 24..28 | stream tag (0 text, 1 image, 2 video)   |
//! | 28..32 | first four bytes of the config hash     |

use std::path::Path;

use vvt_core::codec::{LatentVideo, Stream};

use crate::error::{Result, VvtError};
use crate::fsio;

pub const MAGIC: &[u8; 8] = b"VVTLAT01";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub latent: LatentVideo,
    pub stream: Stream,
    pub hash_prefix: [u8; 4],
}

/// First four bytes of a hex config hash (zeros if it is not hex).
pub fn hash_prefix(hash: &str) -> [u8; 4] {
    let mut out = [0u8; 4];
    for (i, o) in out.iter_mut().enumerate() {
        *o = hash.get(2 * i..2 * i + 2).and_then(|s| u8::from_str_radix(s, 16).ok()).unwrap_or(0);
    }
    out
}

pub fn encode(latent: &LatentVideo, stream: Stream, hash: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + latent.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [latent.t, latent.h, latent.w, latent.c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&stream.tag().to_le_bytes());
    out.extend_from_slice(&hash_prefix(hash));
    for &v in &latent.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<LatentFile> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(VvtError::format(path, "not a latent file"));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (t, h, w, c) = (u(8), u(12), u(16), u(20));
    let stream = Stream::from_tag(u(24) as u32).ok_or_else(|| VvtError::format(path, "unknown stream tag"))?;
    let n = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| VvtError::format(path, "latent shape overflows"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * 4 {
        return Err(VvtError::format(path, format!("expected {} payload bytes, found {}", n * 4, body.len())));
    }
    let data = body.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap()))).collect();
    Ok(LatentFile { latent: LatentVideo { t, h, w, c, data }, stream, hash_prefix: bytes[28..32].try_into().unwrap() })
}

pub fn write_latent(path: &Path, latent: &LatentVideo, stream: Stream, hash: &str) -> Result<()> {
    fsio::write(path, &encode(latent, stream, hash))
}

pub fn read_latent(path: &Path) -> Result<LatentFile> {
    decode(&fsio::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_exact_for_f32_values(t in 1usize..3, h in 1usize..3, w in 1usize..3, c in 1usize..5, seed in 0u64..50) {
            let n = t * h * w * c;
            let data: Vec<f64> = vvt_core::rng::noise(seed, n).into_iter().map(|v| f64::from(v as f32)).collect();
            let lat = LatentVideo { t, h, w, c, data };
            let bytes = encode(&lat, Stream::Video, "deadbeef00");
            prop_assert_eq!(bytes.len(), HEADER_LEN + 4 * n);
            let back = decode(&bytes, Path::new("x")).unwrap();
            prop_assert_eq!(back.latent, lat);
            prop_assert_eq!(back.stream, Stream::Video);
            prop_assert_eq!(back.hash_prefix, [0xde, 0xad, 0xbe, 0xef]);
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        let lat = LatentVideo::zeros(1, 1, 1, 3);
        let bytes = encode(&lat, Stream::Image, "");
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode(b"nope", Path::new("x")).is_err());
    }
}
