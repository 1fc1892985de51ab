//! File formats: binary PPM/PGM images, `MCFL` flow fields and `MCFE`
//! feature maps. All multi-byte values are little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{FeatureMap, FlowField, Frame, SegmentationMask};

pub const FLOW_MAGIC: &[u8; 4] = b"MCFL";
pub const FEATURE_MAGIC: &[u8; 4] = b"MCFE";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

struct PnmHeader {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::MalformedHeader(
                "expected P5 or P6 magic".to_string(),
            ))
        }
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("missing header field".to_string()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader("header field out of range".to_string()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::MalformedHeader(
                "missing whitespace after maxval".to_string(),
            ))
        }
    }
    let [width, height, maxval] = fields;
    if width < 2 || height < 2 {
        return Err(Error::MalformedHeader(format!(
            "degenerate dimensions {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    Ok(PnmHeader {
        channels,
        width: width as usize,
        height: height as usize,
        data_offset: pos,
    })
}

fn decode_pnm(bytes: &[u8]) -> Result<(PnmHeader, Vec<u8>)> {
    let header = parse_pnm_header(bytes)?;
    let expected = header.width * header.height * header.channels;
    let payload = &bytes[header.data_offset..];
    if payload.len() < expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected].to_vec();
    Ok((header, data))
}

/// Parses a binary PGM (P5) or PPM (P6) image held in memory.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let (h, data) = decode_pnm(bytes)?;
    Frame::new(h.width, h.height, h.channels, data)
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    decode_frame(&read_bytes(path.as_ref())?)
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let magic = if frame.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.data());
    out
}

pub fn write_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_frame(frame))
}

/// Writes a mask as PGM with the class index as gray value.
pub fn write_mask(mask: &SegmentationMask, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.labels());
    write_bytes(path.as_ref(), &out)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SegmentationMask> {
    let (h, data) = decode_pnm(&read_bytes(path.as_ref())?)?;
    if h.channels != 1 {
        return Err(Error::MalformedHeader(
            "masks must be single-channel PGM".to_string(),
        ));
    }
    SegmentationMask::new(h.height, h.width, data)
}

fn check_magic(bytes: &[u8], magic: &'static [u8; 4]) -> Result<()> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: std::str::from_utf8(magic).unwrap_or("?"),
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    Ok(())
}

fn read_u32s<const N: usize>(bytes: &[u8], offset: usize) -> Result<[u32; N]> {
    let end = offset + 4 * N;
    if bytes.len() < end {
        return Err(Error::MalformedHeader(format!(
            "header needs {end} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut out = [0u32; N];
    for (i, v) in out.iter_mut().enumerate() {
        let s = offset + 4 * i;
        *v = u32::from_le_bytes(bytes[s..s + 4].try_into().unwrap());
    }
    Ok(out)
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Serializes a flow field: `MCFL`, u32 width, u32 height, then `(u, v)`
/// f32 pairs in row-major order.
pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(12 + 8 * n);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    check_magic(bytes, FLOW_MAGIC)?;
    let [width, height] = read_u32s::<2>(bytes, 4)?;
    let (width, height) = (width as usize, height as usize);
    let n = width * height;
    let payload = &bytes[12..];
    if payload.len() != 8 * n {
        return Err(Error::SizeMismatch {
            expected: 8 * n,
            found: payload.len(),
        });
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        u.push(f32_at(payload, 8 * i));
        v.push(f32_at(payload, 8 * i + 4));
    }
    FlowField::new(height, width, u, v)
}

pub fn write_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_flow(flow))
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flow(&read_bytes(path.as_ref())?)
}

/// Serializes a feature map: `MCFE`, u32 channels, u32 height, u32 width,
/// then the channel-major f32 payload.
pub fn encode_features(features: &FeatureMap) -> Vec<u8> {
    let (c, h, w) = features.shape();
    let mut out = Vec::with_capacity(16 + 4 * c * h * w);
    out.extend_from_slice(FEATURE_MAGIC);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in features.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMap> {
    check_magic(bytes, FEATURE_MAGIC)?;
    let [c, h, w] = read_u32s::<3>(bytes, 4)?;
    let n = c as usize * h as usize * w as usize;
    let payload = &bytes[16..];
    if payload.len() != 4 * n {
        return Err(Error::SizeMismatch {
            expected: 4 * n,
            found: payload.len(),
        });
    }
    let data = (0..n).map(|i| f32_at(payload, 4 * i)).collect();
    FeatureMap::new(c as usize, h as usize, w as usize, data)
}

pub fn write_features(features: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_features(features))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_features(&read_bytes(path.as_ref())?)
}

/// `<dir>/<index zero-padded to 6 digits>.<ext>`
pub fn numbered_path(dir: impl AsRef<Path>, index: usize, ext: &str) -> PathBuf {
    dir.as_ref().join(format!("{index:06}.{ext}"))
}

/// Lists `(index, path)` for every file in `dir` whose stem is a number and
/// whose extension is `ext`, sorted by index.
pub fn list_numbered(dir: impl AsRef<Path>, ext: &str) -> Result<Vec<(usize, PathBuf)>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(index) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
        {
            out.push((index, path));
        }
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

/// Lazily reads the numbered `.ppm`/`.pgm` frames of a directory in order.
pub fn frame_dir(dir: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<Frame>>> {
    let mut files = list_numbered(dir.as_ref(), "ppm")?;
    files.extend(list_numbered(dir.as_ref(), "pgm")?);
    files.sort_by_key(|(i, _)| *i);
    Ok(files
        .into_iter()
        .map(|(index, path)| read_frame(&path).map(|f| f.with_index(index))))
}

pub fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_direct_byte_mapping() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 255]);
        let f = decode_frame(&bytes).unwrap();
        assert_eq!((f.width(), f.height(), f.channels()), (2, 2, 1));
        assert_eq!(f.data(), &[0, 64, 128, 255]);
    }

    #[test]
    fn p6_with_comment_and_working_resolution() {
        let mut bytes = b"P6\n# exported\n640 512\n255\n".to_vec();
        bytes.extend(std::iter::repeat(7u8).take(640 * 512 * 3));
        let f = decode_frame(&bytes).unwrap();
        assert_eq!((f.width(), f.height(), f.channels()), (640, 512, 3));
    }

    #[test]
    fn zero_dims_are_malformed() {
        assert!(matches!(
            decode_frame(b"P6 0 0"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_frame(b"P6 0 0 255\n"),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn truncated_payload_and_maxval() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(decode_frame(&bytes), Err(Error::SizeMismatch { .. })));
        let mut bytes = b"P5 2 2 65535\n".to_vec();
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(
            decode_frame(&bytes),
            Err(Error::UnsupportedMaxval(65535))
        ));
    }

    #[test]
    fn frame_roundtrip() {
        let f = Frame::new(3, 2, 3, (0..18).collect()).unwrap();
        assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
    }

    #[test]
    fn single_flow_vector_layout() {
        let flow = FlowField::new(1, 1, vec![1.5], vec![-2.0]).unwrap();
        let bytes = encode_flow(&flow);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"MCFL");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.5f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-2.0f32).to_le_bytes());
        assert_eq!(decode_flow(&bytes).unwrap(), flow);
    }

    #[test]
    fn zero_flow_file_size() {
        assert_eq!(encode_flow(&FlowField::zeros(4, 4)).len(), 12 + 4 * 4 * 8);
    }

    #[test]
    fn flow_bad_magic_and_truncation() {
        let mut bytes = encode_flow(&FlowField::zeros(2, 2));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_flow(&bytes), Err(Error::BadMagic { .. })));
        let mut bytes = encode_flow(&FlowField::zeros(2, 2));
        bytes.pop();
        assert!(matches!(decode_flow(&bytes), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn features_layout() {
        let fm = FeatureMap::new(1, 1, 1, vec![0.5]).unwrap();
        let bytes = encode_features(&fm);
        assert_eq!(bytes.len(), 20);
        assert_eq!(decode_features(&bytes).unwrap(), fm);

        let fm = FeatureMap::new(3, 2, 2, (0..12).map(|x| x as f32).collect()).unwrap();
        let bytes = encode_features(&fm);
        assert_eq!(&bytes[4..16], &[3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len() - 16, 48);
    }

    #[test]
    fn features_truncated_and_non_finite() {
        let fm = FeatureMap::new(3, 2, 2, vec![1.0; 12]).unwrap();
        let bytes = encode_features(&fm);
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 4]),
            Err(Error::SizeMismatch {
                expected: 48,
                found: 44
            })
        ));
        let mut bytes = bytes;
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(Error::NonFinite(0))));
        let mut bad = encode_features(&fm);
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn mask_pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = SegmentationMask::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let path = numbered_path(dir.path(), 7, "pgm");
        write_mask(&mask, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
        assert_eq!(path.file_name().unwrap(), "000007.pgm");
        assert_eq!(list_numbered(dir.path(), "pgm").unwrap()[0].0, 7);
    }
}
