//! Self-describing container for images, masks, feature maps and probe grids.
//!
//! ```text
//! SOMAMBA-FIELD
//! version 1
//! kind complex64|float32|bool
//! channels C
//! height H
//! width W
//! bytes N
//! end
//! <N payload bytes>
//! ```
//!
//! Payloads are little-endian and channel-major, row-major within a channel.
//! `complex64` stores interleaved `(re, im)` f32 pairs; `bool` packs eight
//! samples per byte, least significant bit first.

use std::fs;
use std::path::Path;

use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::field::{ComplexField, FeatureMap};
use crate::sampling::{MaskKind, MaskSpec, SampleMask};

pub const FIELD_MAGIC: &str = "SOMAMBA-FIELD";
pub const FIELD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Complex64,
    Float32,
    Bool,
}

impl PayloadKind {
    fn tag(self) -> &'static str {
        match self {
            PayloadKind::Complex64 => "complex64",
            PayloadKind::Float32 => "float32",
            PayloadKind::Bool => "bool",
        }
    }

    fn byte_len(self, samples: usize) -> usize {
        match self {
            PayloadKind::Complex64 => samples * 8,
            PayloadKind::Float32 => samples * 4,
            PayloadKind::Bool => samples.div_ceil(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Complex64(Vec<Complex32>),
    Float32(Vec<f32>),
    Bool(Vec<bool>),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Complex64(_) => PayloadKind::Complex64,
            Payload::Float32(_) => PayloadKind::Float32,
            Payload::Bool(_) => PayloadKind::Bool,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::Complex64(v) => v.len(),
            Payload::Float32(v) => v.len(),
            Payload::Bool(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub payload: Payload,
}

impl FieldFile {
    pub fn new(channels: usize, height: usize, width: usize, payload: Payload) -> Result<Self> {
        if payload.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} samples for a {channels}x{height}x{width} field",
                payload.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            payload,
        })
    }

    pub fn kind(&self) -> PayloadKind {
        self.payload.kind()
    }

    pub fn from_complex(field: &ComplexField) -> Self {
        Self::from_complex_stack(std::slice::from_ref(field)).expect("single field is a valid stack")
    }

    /// One channel per field, e.g. per-coil k-space.
    pub fn from_complex_stack(fields: &[ComplexField]) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::Shape("empty field stack".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(fields.len() * h * w);
        for f in fields {
            first.check_same_dims(f, "stacked field")?;
            data.extend(f.to_f32());
        }
        Self::new(fields.len(), h, w, Payload::Complex64(data))
    }

    pub fn from_features(map: &FeatureMap) -> Self {
        let data = map.data().iter().map(|&v| v as f32).collect();
        Self::new(map.channels(), map.height(), map.width(), Payload::Float32(data)).expect("shape matches")
    }

    pub fn from_mask(mask: &SampleMask) -> Self {
        let (h, w) = mask.dims();
        Self::new(1, h, w, Payload::Bool(mask.bits().to_vec())).expect("shape matches")
    }

    pub fn to_complex_stack(&self) -> Result<Vec<ComplexField>> {
        let Payload::Complex64(data) = &self.payload else {
            return Err(Error::format("kind", format!("expected complex64, found {}", self.kind().tag())));
        };
        let plane = self.height * self.width;
        data.chunks_exact(plane)
            .map(|c| ComplexField::from_f32(self.height, self.width, c))
            .collect()
    }

    pub fn to_complex(&self) -> Result<ComplexField> {
        if self.channels != 1 {
            return Err(Error::format("channels", format!("expected 1 channel, found {}", self.channels)));
        }
        Ok(self.to_complex_stack()?.remove(0))
    }

    pub fn to_features(&self) -> Result<FeatureMap> {
        let Payload::Float32(data) = &self.payload else {
            return Err(Error::format("kind", format!("expected float32, found {}", self.kind().tag())));
        };
        FeatureMap::new(self.channels, self.height, self.width, data.iter().map(|&v| v as f64).collect())
    }

    /// Masks carry no generation spec on disk; the result reports a spec
    /// rebuilt from its shape, with acceleration from the sampled fraction.
    pub fn to_mask(&self) -> Result<SampleMask> {
        let Payload::Bool(bits) = &self.payload else {
            return Err(Error::format("kind", format!("expected bool, found {}", self.kind().tag())));
        };
        if self.channels != 1 {
            return Err(Error::format("channels", format!("expected 1 channel, found {}", self.channels)));
        }
        let count = bits.iter().filter(|&&b| b).count().max(1);
        let af = ((bits.len() as f64 / count as f64).round() as usize).max(1);
        let spec = MaskSpec::new(MaskKind::Equispaced, self.height, self.width, af);
        SampleMask::from_bits(self.height, self.width, bits.clone(), spec)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.channels * self.height * self.width;
        let kind = self.kind();
        let mut out = format!(
            "{FIELD_MAGIC}\nversion {FIELD_VERSION}\nkind {}\nchannels {}\nheight {}\nwidth {}\nbytes {}\nend\n",
            kind.tag(),
            self.channels,
            self.height,
            self.width,
            kind.byte_len(n)
        )
        .into_bytes();
        match &self.payload {
            Payload::Complex64(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
            Payload::Float32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Bool(v) => {
                for chunk in v.chunks(8) {
                    let byte = chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i));
                    out.push(byte);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut header = HeaderReader { bytes, pos: 0 };
        if header.line("magic")? != FIELD_MAGIC {
            return Err(Error::format("magic", format!("file does not start with {FIELD_MAGIC}")));
        }
        let version: u32 = header.keyed("version")?;
        if version != FIELD_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FIELD_VERSION,
            });
        }
        let kind = match header.keyed::<String>("kind")?.as_str() {
            "complex64" => PayloadKind::Complex64,
            "float32" => PayloadKind::Float32,
            "bool" => PayloadKind::Bool,
            other => return Err(Error::format("kind", format!("unknown payload kind `{other}`"))),
        };
        let channels: usize = header.keyed("channels")?;
        let height: usize = header.keyed("height")?;
        let width: usize = header.keyed("width")?;
        let declared: usize = header.keyed("bytes")?;
        if header.line("end")? != "end" {
            return Err(Error::format("end", "missing header terminator"));
        }
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::format("height", "dimensions overflow"))?;
        if declared != kind.byte_len(n) {
            return Err(Error::format(
                "bytes",
                format!(
                    "declared {declared} bytes but {channels}x{height}x{width} {} needs {}",
                    kind.tag(),
                    kind.byte_len(n)
                ),
            ));
        }
        let body = &bytes[header.pos..];
        if body.len() != declared {
            return Err(Error::format(
                "bytes",
                format!("declared {declared} payload bytes, found {}", body.len()),
            ));
        }
        let f32_at = |i: usize| f32::from_le_bytes(body[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        let payload = match kind {
            PayloadKind::Complex64 => Payload::Complex64((0..n).map(|i| Complex32::new(f32_at(2 * i), f32_at(2 * i + 1))).collect()),
            PayloadKind::Float32 => Payload::Float32((0..n).map(f32_at).collect()),
            PayloadKind::Bool => Payload::Bool((0..n).map(|i| body[i / 8] >> (i % 8) & 1 == 1).collect()),
        };
        Self::new(channels, height, width, payload)
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn line(&mut self, field: &str) -> Result<String> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .take(256)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(field, "header truncated"))?;
        self.pos += end + 1;
        String::from_utf8(rest[..end].to_vec()).map_err(|_| Error::format(field, "header line is not UTF-8"))
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.line(key)?;
        let value = line
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| Error::format(key, format!("expected `{key} <value>`, found `{line}`")))?;
        value.parse().map_err(|_| Error::format(key, format!("cannot parse `{value}`")))
    }
}

pub fn write_field(path: impl AsRef<Path>, field: &FieldFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, field.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<FieldFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FieldFile::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::sampling::generate_mask;
    use num_complex::Complex64;
    use rand::Rng;

    fn retag(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
        let at = bytes.windows(from.len()).position(|w| w == from.as_bytes()).unwrap();
        let mut out = bytes[..at].to_vec();
        out.extend_from_slice(to.as_bytes());
        out.extend_from_slice(&bytes[at + from.len()..]);
        out
    }

    fn samples() -> Vec<FieldFile> {
        let mut rng = seeded(4);
        let cf = ComplexField::from_fn(6, 5, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap();
        let mut rng = seeded(5);
        let fm = FeatureMap::new(3, 4, 4, (0..48).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let mask = generate_mask(&MaskSpec::new(MaskKind::Random, 5, 13, 3)).unwrap();
        vec![
            FieldFile::from_complex(&cf),
            FieldFile::from_features(&fm),
            FieldFile::from_mask(&mask),
        ]
    }

    #[test]
    fn roundtrip_all_kinds() {
        let dir = tempfile::tempdir().unwrap();
        for (i, f) in samples().into_iter().enumerate() {
            let path = dir.path().join(format!("f{i}.fld"));
            write_field(&path, &f).unwrap();
            let back = read_field(&path).unwrap();
            assert_eq!(back, f);
            assert_eq!(back.to_bytes(), f.to_bytes());
        }
    }

    #[test]
    fn f32_values_survive_exactly() {
        let cf = ComplexField::from_fn(4, 4, |i, j| Complex64::new(i as f64 * 0.25, -(j as f64) * 0.5)).unwrap();
        let back = FieldFile::from_bytes(&FieldFile::from_complex(&cf).to_bytes()).unwrap();
        assert_eq!(back.to_complex().unwrap(), cf);
        let mask = generate_mask(&MaskSpec::new(MaskKind::Equispaced, 8, 8, 4).with_center_fraction(0.25)).unwrap();
        let back = FieldFile::from_bytes(&FieldFile::from_mask(&mask).to_bytes()).unwrap();
        assert_eq!(back.to_mask().unwrap().bits(), mask.bits());
    }

    #[test]
    fn truncated_payload_names_bytes() {
        let bytes = samples()[1].to_bytes();
        match FieldFile::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "bytes"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let bytes = samples()[0].to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FieldFile::from_bytes(&bad), Err(Error::Format { field, .. }) if field == "magic"));
        let bumped = retag(&bytes, "version 1", "version 2");
        assert!(matches!(
            FieldFile::from_bytes(&bumped),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn dims_byte_mismatch() {
        let bytes = samples()[1].to_bytes();
        let tampered = retag(&bytes, "height 4", "height 5");
        assert!(matches!(
            FieldFile::from_bytes(&tampered),
            Err(Error::Format { field, .. }) if field == "bytes"
        ));
    }
}
