//! Binary PPM (`P6`, maxval 255) reading and writing, plus a directory
//! ingester that treats each sub-directory as one class.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// Largest accepted payload, in bytes.
const MAX_PAYLOAD: usize = 1 << 28;

/// Round-half-up quantization of a `[0, 1]` value to a byte.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Image(format!("missing {what} at byte {start}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Image(format!("{what} overflows at byte {start}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Image("missing P6 magic".into()));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("empty image {width}x{height}")));
    }
    let payload = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(CHANNELS))
        .filter(|&n| n <= MAX_PAYLOAD)
        .ok_or_else(|| Error::Image(format!("dimensions {width}x{height} too large")))?;
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image(format!("expected whitespace after maxval at byte {}", h.pos)));
    }
    let start = h.pos + 1;
    let data = &bytes[start..];
    if data.len() != payload {
        return Err(Error::Image(format!(
            "payload has {} bytes, header implies {payload}",
            data.len()
        )));
    }
    Image::new(width, height, data.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

/// Images read from a directory tree: `root/<class>/<file>.ppm`.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    /// Sub-directory name of each label.
    pub class_names: Vec<String>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Reads every `.ppm` file under each sub-directory of `root`, in sorted
/// order. Class ids follow the sorted sub-directory names.
pub fn read_image_dir(root: impl AsRef<Path>) -> Result<LabeledImages> {
    let mut out = LabeledImages {
        images: Vec::new(),
        labels: Vec::new(),
        class_names: Vec::new(),
    };
    for dir in sorted_entries(root.as_ref())?.into_iter().filter(|p| p.is_dir()) {
        let label = out.class_names.len();
        out.class_names
            .push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        for file in sorted_entries(&dir)? {
            if file.extension().is_some_and(|e| e == "ppm") {
                out.images.push(read_image(&file)?);
                out.labels.push(label);
            }
        }
    }
    if out.images.is_empty() {
        return Err(Error::Image(format!(
            "no .ppm files under {}",
            root.as_ref().display()
        )));
    }
    Ok(out)
}
