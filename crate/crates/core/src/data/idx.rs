//! IDX container format used by the MNIST distribution.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for rank-3 `u8` image
//! tensors, `0x00000801` for rank-1 `u8` label vectors), one big-endian `u32`
//! per dimension, then the payload bytes in row-major order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Largest label accepted by [`load_idx_labels`].
pub const MAX_DIGIT_LABEL: u8 = 9;

/// `count x rows x cols` pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.count, self.rows, self.cols)
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.rows * self.cols;
        &self.pixels[i * len..(i + 1) * len]
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::io(
                self.path,
                io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!(
                        "truncated IDX file: needed {n} bytes at offset {}, {} left",
                        self.pos,
                        self.bytes.len() - self.pos
                    ),
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32()?;
        if magic != expected {
            return Err(Error::format(
                self.path,
                format!("magic number {magic} (0x{magic:08x}), expected {expected} (0x{expected:08x})"),
            ));
        }
        Ok(())
    }
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    parse_idx_images(&read(path)?, path)
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let payload = r.take(count * rows * cols)?;
    if r.pos != bytes.len() {
        log::warn!("{}: {} trailing bytes after image payload", path.display(), bytes.len() - r.pos);
    }
    Ok(ImageTensor { count, rows, cols, pixels: payload.iter().map(|&b| f64::from(b) / 255.0).collect() })
}

/// Loads a label vector, rejecting labels above [`MAX_DIGIT_LABEL`].
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_idx_labels(&read(path)?, path)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(LABELS_MAGIC)?;
    let count = r.u32()? as usize;
    let payload = r.take(count)?;
    if let Some((i, &b)) = payload.iter().enumerate().find(|(_, &b)| b > MAX_DIGIT_LABEL) {
        return Err(Error::Range(format!("{}: label {b} at index {i} outside 0..={MAX_DIGIT_LABEL}", path.display())));
    }
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

/// Writes pixels back as bytes (`round(255 * p)`). Pixels must lie in `[0, 1]`.
pub fn write_idx_images(path: impl AsRef<Path>, images: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::Argument(format!("image tensor {:?} holds {} pixels", images.shape(), images.pixels.len())));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for dim in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&dim_u32(dim)?.to_be_bytes());
    }
    for &p in &images.pixels {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Range(format!("pixel {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    write_file(path, &out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&dim_u32(labels.len())?.to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::Range(format!("label {l} does not fit a byte")))?);
    }
    write_file(path, &out)
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::Range(format!("dimension {d} does not fit in u32")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_hand_built_images() {
        let payload: Vec<u8> = (0..1568).map(|i| (i % 256) as u8).collect();
        let bytes = image_bytes(2051, &[2, 28, 28], &payload);
        let t = parse_idx_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!(t.shape(), (2, 28, 28));
        assert_eq!(t.pixels[255], 1.0);
        assert_eq!(t.image(1)[0], f64::from((784 % 256) as u8) / 255.0);
        assert!(t.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn rejects_wrong_magic() {
        let bytes = image_bytes(2049, &[1, 1, 1], &[0]);
        assert!(matches!(parse_idx_images(&bytes, Path::new("mem")), Err(Error::Format { .. })));
        let bytes = image_bytes(2051, &[1], &[0]);
        assert!(matches!(parse_idx_labels(&bytes, Path::new("mem")), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_is_io_error() {
        let bytes = image_bytes(2051, &[2, 28, 28], &[0; 100]);
        match parse_idx_images(&bytes, Path::new("mem")) {
            Err(Error::Io { source, .. }) => assert_eq!(source.kind(), io::ErrorKind::UnexpectedEof),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_labels(&[0, 0, 8], Path::new("mem")), Err(Error::Io { .. })));
    }

    #[test]
    fn labels() {
        let bytes = image_bytes(2049, &[2], &[3, 7]);
        assert_eq!(parse_idx_labels(&bytes, Path::new("mem")).unwrap(), vec![3, 7]);
        let bytes = image_bytes(2049, &[2], &[3, 10]);
        assert!(matches!(parse_idx_labels(&bytes, Path::new("mem")), Err(Error::Range(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_idx_labels("/nonexistent/labels"), Err(Error::Io { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip(
            (count, rows, cols, raw) in (1usize..4, 1usize..9, 1usize..9)
                .prop_flat_map(|(c, r, k)| (Just(c), Just(r), Just(k), prop::collection::vec(any::<u8>(), c * r * k))),
            labels in prop::collection::vec(0usize..10, 1..50),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let images = ImageTensor {
                count, rows, cols,
                pixels: raw.iter().map(|&b| f64::from(b) / 255.0).collect(),
            };
            let ip = dir.path().join("images");
            write_idx_images(&ip, &images).unwrap();
            prop_assert_eq!(load_idx_images(&ip).unwrap(), images);
            let lp = dir.path().join("labels");
            write_idx_labels(&lp, &labels).unwrap();
            prop_assert_eq!(load_idx_labels(&lp).unwrap(), labels);
        }
    }
}
