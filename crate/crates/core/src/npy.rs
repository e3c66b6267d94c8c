//! NPY v1.0 arrays of little-endian `f32`: images are `(n1, n2, C)`, score
//! maps and masks `(n1, n2)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ChangeMap, ChangeScores, ImageStack, ScoreKind};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Shape and raw values of an `f32` array.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_npy(mut out: impl Write, shape: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "shape {shape:?} needs {expected} values, got {}",
            data.len()
        )));
    }
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_str = match dims.len() {
        1 => format!("({},)", dims[0]),
        _ => format!("({})", dims.join(", ")),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_str}, }}");
    // magic + version + u16 length + header + newline is a multiple of 64
    let used = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - used % 64) % 64));
    header.push('\n');
    out.write_all(MAGIC)?;
    out.write_all(&[1, 0])?;
    out.write_all(&(header.len() as u16).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Value of `'key': ...` in the header dict, up to the next top-level comma.
fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| Error::Npy(format!("header has no '{key}' field")))?
        + pat.len();
    let rest = header[start..].trim_start();
    if rest.starts_with('(') {
        let end = rest.find(')').ok_or_else(|| Error::Npy("unterminated shape tuple".into()))?;
        Ok(&rest[..=end])
    } else {
        let end = rest.find([',', '}']).unwrap_or(rest.len());
        Ok(rest[..end].trim())
    }
}

pub fn read_npy(mut input: impl Read) -> Result<NpyArray> {
    let mut preamble = [0u8; 8];
    input
        .read_exact(&mut preamble)
        .map_err(|_| Error::Npy("file too short for an NPY header".into()))?;
    if &preamble[..6] != MAGIC {
        return Err(Error::Npy("bad magic, not an NPY file".into()));
    }
    let header_len = match preamble[6] {
        1 => {
            let mut len = [0u8; 2];
            input.read_exact(&mut len)?;
            u16::from_le_bytes(len) as usize
        }
        2 | 3 => {
            let mut len = [0u8; 4];
            input.read_exact(&mut len)?;
            u32::from_le_bytes(len) as usize
        }
        v => return Err(Error::Npy(format!("unsupported NPY version {v}"))),
    };
    let mut header = vec![0u8; header_len];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Npy("truncated header".into()))?;
    let header = String::from_utf8(header).map_err(|_| Error::Npy("header is not text".into()))?;

    let descr = header_field(&header, "descr")?.trim_matches(|c| c == '\'' || c == '"');
    if descr != "<f4" {
        return Err(Error::Npy(format!(
            "unsupported dtype '{descr}', expected little-endian float32 '<f4'"
        )));
    }
    if header_field(&header, "fortran_order")? != "False" {
        return Err(Error::Npy("Fortran-ordered arrays are not supported".into()));
    }
    let shape_str = header_field(&header, "shape")?;
    let shape = shape_str
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::Npy(format!("bad shape {shape_str}"))))
        .collect::<Result<Vec<_>>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Npy("shape overflows".into()))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(Error::Npy(format!(
            "expected {} data bytes for shape {shape:?}, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(NpyArray { shape, data })
}

fn open(path: &Path) -> Result<NpyArray> {
    let f = File::open(path).map_err(|e| Error::Npy(format!("cannot open {}: {e}", path.display())))?;
    read_npy(BufReader::new(f))
}

fn create(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::Npy(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    write_npy(&mut w, shape, data)?;
    w.flush()?;
    Ok(())
}

/// Interprets an array as an `(n1, n2, C)` image.
pub fn image_from_array(a: &NpyArray, modality: &str) -> Result<ImageStack> {
    match a.shape[..] {
        [h, w, c] => {
            if h < c && h < w && h <= 16 {
                return Err(Error::Npy(format!(
                    "shape {:?} looks channels-first; images must be (n1, n2, C)",
                    a.shape
                )));
            }
            ImageStack::from_f32(h, w, c, &a.data, modality)
        }
        [h, w] => ImageStack::from_f32(h, w, 1, &a.data, modality),
        _ => Err(Error::Npy(format!(
            "image arrays must have rank 3 (n1, n2, C), got shape {:?}",
            a.shape
        ))),
    }
}

fn map_shape(a: &NpyArray) -> Result<(usize, usize)> {
    match a.shape[..] {
        [h, w] => Ok((h, w)),
        [h, w, 1] => Ok((h, w)),
        _ => Err(Error::Npy(format!(
            "map arrays must have rank 2 (n1, n2), got shape {:?}",
            a.shape
        ))),
    }
}

pub fn read_image(path: impl AsRef<Path>, modality: &str) -> Result<ImageStack> {
    image_from_array(&open(path.as_ref())?, modality)
}

pub fn write_image(path: impl AsRef<Path>, image: &ImageStack) -> Result<()> {
    let data: Vec<f32> = image.data().iter().map(|&v| v as f32).collect();
    create(path.as_ref(), &[image.height(), image.width(), image.channels()], &data)
}

pub fn read_scores(path: impl AsRef<Path>, kind: ScoreKind) -> Result<ChangeScores> {
    let a = open(path.as_ref())?;
    let (h, w) = map_shape(&a)?;
    ChangeScores::new(h, w, a.data.iter().map(|&v| v as f64).collect(), kind)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ChangeScores) -> Result<()> {
    let data: Vec<f32> = scores.values().iter().map(|&v| v as f32).collect();
    create(path.as_ref(), &[scores.height(), scores.width()], &data)
}

/// Reads a 0/1 mask; any other value is an error.
pub fn read_mask(path: impl AsRef<Path>) -> Result<ChangeMap> {
    let a = open(path.as_ref())?;
    let (h, w) = map_shape(&a)?;
    if let Some(v) = a.data.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Npy(format!("mask must be binary (0 or 1), found {v}")));
    }
    ChangeMap::new(h, w, a.data.iter().map(|&v| v == 1.0).collect())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ChangeMap) -> Result<()> {
    let data: Vec<f32> = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    create(path.as_ref(), &[mask.height(), mask.width()], &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(shape: &[usize], data: &[f32]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_npy(&mut buf, shape, data).unwrap();
        buf
    }

    fn raw(descr: &str, shape: &str, payload: &[u8]) -> Vec<u8> {
        let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
        let used = 10 + header.len() + 1;
        header.push_str(&" ".repeat((64 - used % 64) % 64));
        header.push('\n');
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&[1, 0]);
        buf.extend_from_slice(&(header.len() as u16).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(payload);
        buf
    }

    #[test]
    fn header_layout() {
        let buf = encode(&[2, 3, 4], &[0.5; 24]);
        let header_len = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        let text = std::str::from_utf8(&buf[10..10 + header_len]).unwrap();
        assert!(text.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3, 4), }"));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn rejects_f8() {
        let err = read_npy(&raw("<f8", "(2, 2)", &[0u8; 32])[..]).unwrap_err();
        assert!(err.to_string().contains("dtype"), "{err}");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = encode(&[2, 2], &[1.0; 4]);
        assert!(read_npy(&buf[..buf.len() - 1]).is_err());
        buf[1] = b'X';
        assert!(read_npy(&buf[..]).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn rank_checks() {
        let img = read_npy(&encode(&[4], &[0.0; 4])[..]).unwrap();
        assert!(image_from_array(&img, "x").is_err());
        let cf = read_npy(&encode(&[3, 20, 20], &[0.0; 1200])[..]).unwrap();
        assert!(image_from_array(&cf, "x").unwrap_err().to_string().contains("channels-first"));
        let cl = read_npy(&encode(&[20, 20, 3], &[0.0; 1200])[..]).unwrap();
        assert_eq!(image_from_array(&cl, "x").unwrap().channels(), 3);
        assert!(map_shape(&cl).is_err());
    }

    #[test]
    fn file_roundtrips_are_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f64> = (0..60).map(|i| (i as f32 * 0.37).sin() as f64).collect();
        let img = ImageStack::new(4, 5, 3, vals, "x").unwrap();
        let p = dir.path().join("img.npy");
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p, "x").unwrap(), img);

        let s = ChangeScores::new(2, 3, vec![0.0, 0.25, 0.5, 0.125, 1.0, 0.75], ScoreKind::Distance).unwrap();
        let p = dir.path().join("s.npy");
        write_scores(&p, &s).unwrap();
        assert_eq!(read_scores(&p, ScoreKind::Distance).unwrap(), s);

        let m = ChangeMap::new(2, 2, vec![true, false, false, true]).unwrap();
        let p = dir.path().join("m.npy");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
        write_scores(&p, &s).unwrap();
        assert!(read_mask(&p).is_err());
    }

    proptest::proptest! {
        #[test]
        fn roundtrip(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in proptest::prelude::any::<u32>()) {
            let data: Vec<f32> = (0..h * w * c).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff)).collect();
            let back = read_npy(&encode(&[h, w, c], &data)[..]).unwrap();
            proptest::prop_assert_eq!(back.shape, vec![h, w, c]);
            proptest::prop_assert!(back.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
