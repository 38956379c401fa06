use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Hard,
    Soft,
}

/// Row-major `height × width` occupancy in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteImage {
    pub width: usize,
    pub height: usize,
    pub kind: MaskKind,
    pub pixels: Vec<f32>,
}

const SILF_MAGIC: &[u8; 4] = b"SILF";

impl SilhouetteImage {
    pub fn zeros(width: usize, height: usize, kind: MaskKind) -> Self {
        Self { width, height, kind, pixels: vec![0.0; width * height] }
    }

    pub fn from_f64(width: usize, height: usize, kind: MaskKind, data: &[f64]) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, kind, pixels: data.iter().map(|&v| v as f32).collect() }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64).collect()
    }

    pub fn area(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum()
    }

    /// Hard mask of pixels strictly above `t`.
    pub fn threshold(&self, t: f32) -> Self {
        let pixels = self.pixels.iter().map(|&v| if v > t { 1.0 } else { 0.0 }).collect();
        Self { pixels, kind: MaskKind::Hard, ..*self }
    }

    /// Intersection over union of the two masks thresholded at 0.5; 1 for two
    /// empty masks.
    pub fn iou(&self, other: &Self) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let (mut inter, mut uni) = (0usize, 0usize);
        for (&a, &b) in self.pixels.iter().zip(&other.pixels) {
            let (a, b) = (a > 0.5, b > 0.5);
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// Absolute difference, as a soft mask.
    pub fn abs_diff(&self, other: &Self) -> Self {
        let pixels = self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a - b).abs()).collect();
        Self { pixels, kind: MaskKind::Soft, ..*self }
    }

    pub fn is_well_formed(&self) -> bool {
        self.pixels.len() == self.width * self.height
            && match self.kind {
                MaskKind::Hard => self.pixels.iter().all(|&v| v == 0.0 || v == 1.0),
                MaskKind::Soft => self.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)),
            }
    }

    pub fn write_pgm<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_all(&bytes)
    }

    /// Read one binary graymap; values are scaled back into `[0, 1]`.
    pub fn read_pgm<R: BufRead>(r: &mut R, kind: MaskKind) -> Result<Self> {
        let mut header = Vec::new();
        while header.len() < 4 {
            match read_token(r)? {
                Some(t) => header.push(t),
                None => return Err(Error::Format("truncated graymap header".into())),
            }
        }
        if header[0] != "P5" {
            return Err(Error::Format(format!("unsupported graymap magic {:?}", header[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad graymap field {s:?}")));
        let (width, height, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported graymap maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes).map_err(|_| Error::Format("truncated graymap data".into()))?;
        let pixels = bytes.iter().map(|&b| b as f32 / maxval as f32).collect();
        Ok(Self { width, height, kind, pixels })
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        save_pgm_sequence(path, std::slice::from_ref(self))
    }

    pub fn to_silf(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.pixels.len());
        out.extend_from_slice(SILF_MAGIC);
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        for v in &self.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_silf(bytes: &[u8], kind: MaskKind) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != SILF_MAGIC {
            return Err(Error::Format("missing SILF header".into()));
        }
        let width = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let height = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let body = &bytes[8..];
        if body.len() != 4 * width * height {
            return Err(Error::Format(format!("SILF body is {} bytes, expected {}", body.len(), 4 * width * height)));
        }
        let pixels = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { width, height, kind, pixels })
    }

    pub fn save_silf(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_silf()).map_err(|e| Error::io(path, e))
    }

    pub fn load_silf(path: &Path, kind: MaskKind) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_silf(&bytes, kind).map_err(|e| e.at(path))
    }
}

/// Next whitespace-separated header token, skipping `#` comments. Consumes
/// exactly one whitespace byte after the token.
fn read_token<R: BufRead>(r: &mut R) -> Result<Option<String>> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        match r.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(Error::Format(format!("reading graymap: {e}"))),
        }
        let c = byte[0];
        if in_comment {
            in_comment = c != b'\n';
        } else if c == b'#' && tok.is_empty() {
            in_comment = true;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                break;
            }
        } else {
            tok.push(c);
        }
    }
    Ok((!tok.is_empty()).then(|| String::from_utf8_lossy(&tok).into_owned()))
}

/// Several graymaps concatenated in one file.
pub fn save_pgm_sequence(path: &Path, images: &[SilhouetteImage]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for img in images {
        img.write_pgm(&mut w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_pgm_sequence(path: &Path, kind: MaskKind) -> Result<Vec<SilhouetteImage>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut out = Vec::new();
    while !r.fill_buf().map_err(|e| Error::io(path, e))?.is_empty() {
        out.push(SilhouetteImage::read_pgm(&mut r, kind).map_err(|e| e.at(path))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SilhouetteImage {
        let px: Vec<f64> = (0..20 * 17).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        SilhouetteImage::from_f64(20, 17, MaskKind::Soft, &px)
    }

    #[test]
    fn silf_is_lossless() {
        let img = sample();
        let bytes = img.to_silf();
        assert_eq!(&bytes[..4], b"SILF");
        assert_eq!(bytes.len(), 8 + 4 * 20 * 17);
        assert_eq!(SilhouetteImage::from_silf(&bytes, MaskKind::Soft).unwrap(), img);
        assert!(SilhouetteImage::from_silf(&bytes[..30], MaskKind::Soft).is_err());
    }

    #[test]
    fn pgm_sequence_round_trip() {
        let hard = sample().threshold(0.5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        save_pgm_sequence(&p, &[hard.clone(), hard.clone()]).unwrap();
        let back = load_pgm_sequence(&p, MaskKind::Hard).unwrap();
        assert_eq!(back, vec![hard.clone(), hard]);
        let soft = load_pgm_sequence(&p, MaskKind::Soft).unwrap();
        assert!(soft[0].is_well_formed());
    }

    #[test]
    fn pgm_scales_soft_values() {
        let img = SilhouetteImage::from_f64(16, 1, MaskKind::Soft, &[0.5; 16]);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert_eq!(buf[buf.len() - 1], 128);
        let mut r = std::io::Cursor::new(b"P5\n# note\n2 1\n255\n\x00\xff".to_vec());
        let back = SilhouetteImage::read_pgm(&mut r, MaskKind::Hard).unwrap();
        assert_eq!(back.pixels, vec![0.0, 1.0]);
    }

    #[test]
    fn iou_cases() {
        let a = SilhouetteImage::from_f64(2, 2, MaskKind::Hard, &[1.0, 1.0, 0.0, 0.0]);
        let b = SilhouetteImage::from_f64(2, 2, MaskKind::Hard, &[1.0, 0.0, 1.0, 0.0]);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        let z = SilhouetteImage::zeros(2, 2, MaskKind::Hard);
        assert_eq!(z.iou(&z), 1.0);
        assert!(a.is_well_formed() && !sample().threshold(0.2).abs_diff(&sample()).pixels.is_empty());
    }
}
