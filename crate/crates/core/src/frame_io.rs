//! Grayscale frames, PGM/PPM codecs and frame sequences.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Single-channel 8-bit raster stored row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(Error::Malformed(format!(
                "{} bytes for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Pixel lookup with coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn ensure_same_dims(&self, other: &GrayImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// Encodes as binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// BT.601 luma with round-half-up, computed in integers so it is exact.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let sum = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((sum + 500) / 1000) as u8
}

struct NetpbmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_netpbm_header(bytes: &[u8]) -> Result<NetpbmHeader> {
    if bytes.len() < 2 {
        return Err(Error::Malformed("truncated header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while let Some(&c) = bytes.get(pos) {
                        pos += 1;
                        if c == b'\n' || c == b'\r' {
                            break;
                        }
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Malformed("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Malformed("expected a decimal header field".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::Malformed(format!("header field {text:?} out of range")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Malformed("missing separator after maxval".into())),
    }
    Ok(NetpbmHeader {
        magic,
        width: fields[0] as usize,
        height: fields[1] as usize,
        maxval: fields[2] as u32,
        data_offset: pos,
    })
}

/// Decodes binary PGM (P5) or PPM (P6); colour input is converted to luma.
pub fn decode_netpbm(bytes: &[u8]) -> Result<GrayImage> {
    let header = parse_netpbm_header(bytes)?;
    let channels = match &header.magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "netpbm magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    if header.width == 0 || header.height == 0 {
        return Err(Error::InvalidDimensions {
            width: header.width,
            height: header.height,
        });
    }
    if header.maxval == 0 || header.maxval > 255 {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {} (only 8-bit rasters are supported)",
            header.maxval
        )));
    }
    let n = header.width * header.height * channels;
    let raster = bytes
        .get(header.data_offset..header.data_offset + n)
        .ok_or_else(|| Error::Malformed("raster shorter than header promises".into()))?;
    let rescale = |v: u8| -> u8 {
        if header.maxval == 255 {
            v
        } else {
            ((v.min(header.maxval as u8) as u32 * 255 * 2 + header.maxval) / (2 * header.maxval)) as u8
        }
    };
    let data = if channels == 1 {
        raster.iter().map(|&v| rescale(v)).collect()
    } else {
        raster
            .chunks_exact(3)
            .map(|p| luma(rescale(p[0]), rescale(p[1]), rescale(p[2])))
            .collect()
    };
    GrayImage::new(header.width, header.height, data)
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageLuma8(gray) => gray.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p[0], p[1], p[2]))
            .collect(),
    };
    GrayImage::new(width, height, data)
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decodes an in-memory raster, sniffing the format from its magic bytes.
pub fn decode_frame(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_netpbm(bytes);
    }
    if bytes.starts_with(PNG_SIGNATURE) {
        #[cfg(feature = "png")]
        return decode_png(bytes);
        #[cfg(not(feature = "png"))]
        return Err(Error::UnsupportedFormat("png support not compiled in".into()));
    }
    Err(Error::UnsupportedFormat("unrecognised magic bytes".into()))
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes)
}

/// One frame of a sequence. `payload_id` is an opaque handle the host uses to
/// map eviction decisions back onto its own cache entries.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub image: GrayImage,
    pub payload_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    /// Builds a sequence, checking index ordering and uniform dimensions.
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for pair in frames.windows(2) {
                if pair[1].index <= pair[0].index {
                    return Err(Error::Malformed(format!(
                        "frame indices not strictly increasing ({} then {})",
                        pair[0].index, pair[1].index
                    )));
                }
            }
            for f in &frames[1..] {
                first.image.ensure_same_dims(&f.image)?;
            }
        }
        Ok(Self { frames })
    }

    /// Sequence with indices 0.. and payload ids `frame_{index}`.
    pub fn from_images(images: Vec<GrayImage>) -> Result<Self> {
        Self::new(
            images
                .into_iter()
                .enumerate()
                .map(|(index, image)| Frame {
                    index,
                    image,
                    payload_id: format!("frame_{index:05}"),
                })
                .collect(),
        )
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| f.image.dims())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    /// Writes every frame as `{payload_id}.pgm` into `dir`.
    pub fn save_pgm_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.frames
            .iter()
            .map(|f| {
                let path = dir.join(format!("{}.pgm", f.payload_id));
                f.image.save_pgm(&path).map(|_| path)
            })
            .collect()
    }
}

pub const DEFAULT_SEQUENCE_PATTERN: &str = "*.pgm";

/// Loads every file in `dir` whose name matches `pattern`, in lexicographic
/// filename order. The payload id of each frame is its filename stem.
pub fn load_sequence(dir: impl AsRef<Path>, pattern: &str) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let matcher = glob::Pattern::new(pattern)
        .map_err(|e| Error::InvalidConfig(format!("bad glob {pattern:?}: {e}")))?;
    let mut names: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if matcher.matches(name) {
            names.push((name.to_owned(), path));
        }
    }
    if names.is_empty() {
        return Err(Error::EmptySequence {
            dir: dir.to_owned(),
            pattern: pattern.to_owned(),
        });
    }
    names.sort();
    let frames = names
        .into_iter()
        .enumerate()
        .map(|(index, (_, path))| {
            let image = load_frame(&path)?;
            let payload_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned();
            Ok(Frame {
                index,
                image,
                payload_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_all_zero_pgm() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend_from_slice(&[0; 16]);
        let img = decode_frame(&bytes).unwrap();
        assert_eq!(img.dims(), (4, 4));
        assert!(img.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # made by hand\n2 # width\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = decode_frame(&bytes).unwrap();
        assert_eq!(img.data(), &[7, 9]);
    }

    #[test]
    fn luma_of_primaries() {
        assert_eq!(luma(255, 255, 255), 255);
        // 0.299 * 255 = 76.245
        assert_eq!(luma(255, 0, 0), 76);
        // 0.587 * 255 = 149.685, 0.114 * 255 = 29.07
        assert_eq!(luma(0, 255, 0), 150);
        assert_eq!(luma(0, 0, 255), 29);
    }

    #[test]
    fn ppm_is_converted_to_luma() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 255, 255, 255, 0, 0]);
        let img = decode_frame(&bytes).unwrap();
        assert_eq!(img.data(), &[255, 76]);
    }

    #[test]
    fn rejects_zero_dimension_and_unknown_formats() {
        assert!(matches!(
            decode_frame(b"P5\n0 4\n255\n"),
            Err(Error::InvalidDimensions { .. })
        ));
        assert!(matches!(
            decode_frame(b"GIF89a"),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_frame(b"P5\n4 4\n65535\n"),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_frame(b"P5\n4 4\n255\n\0\0"),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_frame("/nonexistent/frame.pgm"),
            Err(Error::Io { .. })
        ));
    }

    #[cfg(feature = "png")]
    #[test]
    fn png_rgb_is_converted_to_luma() {
        let mut buf = Vec::new();
        let rgb = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 255, 255, 255]).unwrap();
        rgb.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
            .unwrap();
        let img = decode_frame(&buf).unwrap();
        assert_eq!(img.data(), &[76, 255]);
    }

    fn write_frames(dir: &Path, names: &[(&str, usize)]) {
        for (name, size) in names {
            GrayImage::filled(*size, *size, 3)
                .unwrap()
                .save_pgm(dir.join(name))
                .unwrap();
        }
    }

    #[test]
    fn sequence_is_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = (0..10).rev().map(|i| format!("f{i:03}.pgm")).collect();
        let refs: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), 16)).collect();
        write_frames(dir.path(), &refs);
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let seq = load_sequence(dir.path(), DEFAULT_SEQUENCE_PATTERN).unwrap();
        assert_eq!(seq.len(), 10);
        for (i, f) in seq.iter().enumerate() {
            assert_eq!(f.index, i);
            assert_eq!(f.payload_id, format!("f{i:03}"));
        }
    }

    #[test]
    fn single_frame_sequence() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[("only.pgm", 20)]);
        assert_eq!(load_sequence(dir.path(), "*.pgm").unwrap().len(), 1);
    }

    #[test]
    fn sequence_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_sequence(dir.path(), "*.pgm"),
            Err(Error::EmptySequence { .. })
        ));
        write_frames(dir.path(), &[("a.pgm", 64), ("b.pgm", 32)]);
        assert!(matches!(
            load_sequence(dir.path(), "*.pgm"),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn pgm_round_trip(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
            let mut state = seed;
            let img = GrayImage::from_fn(w, h, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 56) as u8
            }).unwrap();
            prop_assert_eq!(decode_frame(&img.to_pgm()).unwrap(), img);
        }
    }
}
