//! Binary shard layout:
//!
//! ```text
//! "ICLD" | u32 version | u32 n_traj | u32 N | u32 d_u | u32 d_y
//! then per trajectory: u as N*d_u f32, y as N*d_y f32 (all little-endian)
//! ```

use crate::error::{Error, Result};
use std::hash::Hasher;

pub const MAGIC: &[u8; 4] = b"ICLD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub n_traj: usize,
    pub n_steps: usize,
    pub d_u: usize,
    pub d_y: usize,
}

/// `(u, y)` pairs, each row-major.
pub type RawTrajectory = (Vec<f32>, Vec<f32>);

pub fn encode(h: ShardHeader, trajs: &[(&[f32], &[f32])]) -> Vec<u8> {
    assert_eq!(h.n_traj, trajs.len());
    let per = h.n_steps * (h.d_u + h.d_y) * 4;
    let mut out = Vec::with_capacity(HEADER_LEN + per * trajs.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION as usize, h.n_traj, h.n_steps, h.d_u, h.d_y] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (u, y) in trajs {
        assert_eq!(u.len(), h.n_steps * h.d_u);
        assert_eq!(y.len(), h.n_steps * h.d_y);
        for v in u.iter().chain(y.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ShardHeader, Vec<RawTrajectory>)> {
    let bad = |m: String| Error::SchemaMismatch(m);
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a trajectory shard".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if field(0) != VERSION as usize {
        return Err(bad(format!("shard version {} (expected {VERSION})", field(0))));
    }
    let h = ShardHeader { n_traj: field(1), n_steps: field(2), d_u: field(3), d_y: field(4) };
    let (nu, ny) = (h.n_steps * h.d_u, h.n_steps * h.d_y);
    let body = &bytes[HEADER_LEN..];
    if body.len() != h.n_traj * (nu + ny) * 4 {
        return Err(bad(format!("shard body has {} bytes, header implies {}", body.len(), h.n_traj * (nu + ny) * 4)));
    }
    let floats: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let trajs = floats
        .chunks_exact(nu + ny)
        .map(|c| (c[..nu].to_vec(), c[nu..].to_vec()))
        .collect();
    Ok((h, trajs))
}

/// Hex-encoded 64-bit FNV-1a.
pub fn digest(bytes: &[u8]) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(digest(b""), "cbf29ce484222325");
        assert_eq!(digest(b"a"), "af63dc4c8601ec8c");
        assert_eq!(digest(b"foobar"), "85944171f73967e8");
    }

    #[test]
    fn layout_is_exact() {
        let h = ShardHeader { n_traj: 1, n_steps: 2, d_u: 1, d_y: 1 };
        let bytes = encode(h, &[(&[1.0, 2.0], &[3.0, -0.5])]);
        assert_eq!(&bytes[..4], b"ICLD");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 16);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[36..40], &(-0.5f32).to_le_bytes());
        let (h2, t) = decode(&bytes).unwrap();
        assert_eq!(h2, h);
        assert_eq!(t, vec![(vec![1.0, 2.0], vec![3.0, -0.5])]);
    }

    #[test]
    fn truncation_and_bad_magic_are_schema_errors() {
        let h = ShardHeader { n_traj: 1, n_steps: 2, d_u: 1, d_y: 1 };
        let mut bytes = encode(h, &[(&[1.0, 2.0], &[3.0, -0.5])]);
        assert!(matches!(decode(&bytes[..bytes.len() - 2]), Err(Error::SchemaMismatch(_))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::SchemaMismatch(_))));
    }
}
