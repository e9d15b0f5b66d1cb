//! Binary point-cloud payload, little-endian:
//!
//! ```text
//! "OPC1" | u32 count | count × (f32 x, f32 y, f32 z) | count × (u8 r, u8 g, u8 b)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"OPC1";
const HEADER_LEN: usize = 8;
const POINT_LEN: usize = 12;
const COLOR_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed cloud at byte {offset}: {reason}")]
pub struct MalformedCloud {
    pub offset: usize,
    pub reason: String,
}

fn malformed(offset: usize, reason: impl Into<String>) -> MalformedCloud {
    MalformedCloud {
        offset,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub prompt: String,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, colors: Vec<[u8; 3]>, prompt: impl Into<String>) -> Result<Self, MalformedCloud> {
        if points.len() != colors.len() {
            return Err(malformed(
                0,
                format!("{} points but {} colors", points.len(), colors.len()),
            ));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(malformed(HEADER_LEN + i * POINT_LEN, "non-finite coordinate"));
        }
        Ok(Self {
            points,
            colors,
            prompt: prompt.into(),
        })
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn max_abs_coordinate(&self) -> f32 {
        self.points
            .iter()
            .flatten()
            .fold(0.0f32, |m, c| m.max(c.abs()))
    }

    /// Centers on the bounding-box midpoint and scales into [-1, 1]^3.
    pub fn normalize(&mut self) {
        if self.points.is_empty() {
            return;
        }
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let center: [f32; 3] = std::array::from_fn(|k| (lo[k] + hi[k]) / 2.0);
        let half = (0..3).map(|k| (hi[k] - lo[k]) / 2.0).fold(0.0f32, f32::max);
        let scale = if half > 0.0 { 1.0 / half } else { 1.0 };
        for p in &mut self.points {
            for k in 0..3 {
                p[k] = ((p[k] - center[k]) * scale).clamp(-1.0, 1.0);
            }
        }
    }
}

pub fn serialize_cloud(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.points.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (POINT_LEN + COLOR_LEN));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for p in &cloud.points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for c in &cloud.colors {
        out.extend_from_slice(c);
    }
    out
}

/// Parses and validates a payload. The returned cloud has an empty prompt.
pub fn parse_cloud(payload: &[u8]) -> Result<PointCloud, MalformedCloud> {
    if payload.len() < HEADER_LEN {
        return Err(malformed(
            payload.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", payload.len()),
        ));
    }
    if &payload[..4] != MAGIC {
        return Err(malformed(0, format!("bad magic {:02x?}", &payload[..4])));
    }
    let n = u32::from_le_bytes(payload[4..8].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(POINT_LEN + COLOR_LEN)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| malformed(4, format!("point count {n} overflows")))?;
    if payload.len() < expected {
        return Err(malformed(
            payload.len(),
            format!("truncated: header declares {n} points ({expected} bytes), got {} bytes", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(malformed(
            expected,
            format!("{} trailing bytes after {n} declared points", payload.len() - expected),
        ));
    }
    let mut points = Vec::with_capacity(n);
    let mut off = HEADER_LEN;
    for _ in 0..n {
        let mut p = [0f32; 3];
        for c in &mut p {
            let v = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(malformed(off, format!("non-finite coordinate {v}")));
            }
            *c = v;
            off += 4;
        }
        points.push(p);
    }
    let colors = payload[off..]
        .chunks_exact(COLOR_LEN)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(PointCloud {
        points,
        colors,
        prompt: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> PointCloud {
        PointCloud::new(vec![[0.0, 0.5, -1.0], [1.0, -0.25, 0.125]], vec![[1, 2, 3], [250, 0, 9]], "")
            .unwrap()
    }

    #[test]
    fn layout_is_exact() {
        let bytes = serialize_cloud(&tiny());
        assert_eq!(&bytes[..4], b"OPC1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 2 * 12 + 2 * 3);
        assert_eq!(&bytes[32..], &[1, 2, 3, 250, 0, 9]);
        assert_eq!(parse_cloud(&bytes).unwrap(), tiny());
    }

    #[test]
    fn count_mismatch_rejected() {
        let cloud = PointCloud::new(vec![[0.1; 3]; 99], vec![[0; 3]; 99], "").unwrap();
        let mut bytes = serialize_cloud(&cloud);
        bytes[4..8].copy_from_slice(&100u32.to_le_bytes());
        let err = parse_cloud(&bytes).unwrap_err();
        assert_eq!(err.offset, bytes.len());
        assert!(err.reason.contains("truncated"), "{err}");
    }

    #[test]
    fn nan_rejected_with_offset() {
        let mut bytes = serialize_cloud(&tiny());
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = parse_cloud(&bytes).unwrap_err();
        assert_eq!(err.offset, 20);
        let mut bytes = serialize_cloud(&tiny());
        bytes[8..12].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert_eq!(parse_cloud(&bytes).unwrap_err().offset, 8);
    }

    #[test]
    fn header_problems() {
        assert_eq!(parse_cloud(b"OPC").unwrap_err().offset, 3);
        assert_eq!(parse_cloud(b"PLY1\0\0\0\0").unwrap_err().offset, 0);
        let mut bytes = serialize_cloud(&tiny());
        bytes.push(0);
        assert!(parse_cloud(&bytes).unwrap_err().reason.contains("trailing"));
        let huge = [b'O', b'P', b'C', b'1', 0xff, 0xff, 0xff, 0xff];
        assert!(parse_cloud(&huge).is_err());
        let empty = serialize_cloud(&PointCloud::new(vec![], vec![], "").unwrap());
        assert_eq!(parse_cloud(&empty).unwrap().point_count(), 0);
    }

    #[test]
    fn normalize_fits_unit_cube() {
        let mut c = PointCloud::new(vec![[10.0, 0.0, 0.0], [14.0, 2.0, -1.0]], vec![[0; 3]; 2], "").unwrap();
        c.normalize();
        assert!(c.max_abs_coordinate() <= 1.0);
        assert_eq!(c.points[0][0], -1.0);
        assert_eq!(c.points[1][0], 1.0);
    }

    proptest! {
        #[test]
        fn truncation_always_rejected(n in 0usize..20, cut in 1usize..40) {
            let c = PointCloud::new(vec![[0.5; 3]; n], vec![[7; 3]; n], "").unwrap();
            let bytes = serialize_cloud(&c);
            let keep = bytes.len().saturating_sub(cut);
            prop_assert!(parse_cloud(&bytes[..keep]).is_err());
        }
    }
}
