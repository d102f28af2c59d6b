//! On-disk tensor format and PNG import/export.
//!
//! Tensor files: magic bytes `SCMT`, a `u8` kind tag, then `u32` H, W, C
//! (little-endian) and the payload. Payloads are little-endian: `f32` for
//! images, weights, and one-hot labels; `u16` for label maps; `f64` for
//! probability maps. Kind tags: 1 image, 2 labels, 3 weights, 4 one-hot,
//! 5 probabilities. Serialization round-trips bitwise.
//!
//! PNG: images are 8-bit RGB with the fixed conversion `v/255` on import
//! and `round(v*255)` on export; label maps are 8-bit paletted PNGs whose
//! palette index is the class id (255 = IGNORE, drawn black).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LabelMap, OneHotLabel, ProbMap, WeightMap, IGNORE};

const MAGIC: &[u8; 4] = b"SCMT";

const KIND_IMAGE: u8 = 1;
const KIND_LABELS: u8 = 2;
const KIND_WEIGHTS: u8 = 3;
const KIND_ONE_HOT: u8 = 4;
const KIND_PROBS: u8 = 5;

/// Any grid the tensor file format can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorPayload {
    Image(ImageTensor),
    Labels(LabelMap),
    Weights(WeightMap),
    OneHot(OneHotLabel),
    Probs(ProbMap),
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn header(out: &mut Vec<u8>, kind: u8, h: usize, w: usize, c: usize) {
    out.extend_from_slice(MAGIC);
    out.push(kind);
    push_u32(out, h as u32);
    push_u32(out, w as u32);
    push_u32(out, c as u32);
}

pub fn serialize_tensor(t: &TensorPayload) -> Vec<u8> {
    let mut out = Vec::new();
    match t {
        TensorPayload::Image(img) => {
            header(&mut out, KIND_IMAGE, img.height(), img.width(), 3);
            for v in img.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorPayload::Labels(l) => {
            header(&mut out, KIND_LABELS, l.height(), l.width(), 1);
            for v in l.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorPayload::Weights(wm) => {
            header(&mut out, KIND_WEIGHTS, wm.height(), wm.width(), 1);
            for v in wm.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorPayload::OneHot(oh) => {
            header(&mut out, KIND_ONE_HOT, oh.height(), oh.width(), oh.classes());
            for v in oh.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorPayload::Probs(p) => {
            header(&mut out, KIND_PROBS, p.height(), p.width(), p.classes());
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub fn deserialize_tensor(bytes: &[u8]) -> Result<TensorPayload> {
    if bytes.len() < 17 {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("magic number mismatch".into()));
    }
    let kind = bytes[4];
    let h = read_u32(bytes, 5) as usize;
    let w = read_u32(bytes, 9) as usize;
    let c = read_u32(bytes, 13) as usize;
    let payload = &bytes[17..];
    let need_f32 = |n: usize| -> Result<Vec<f32>> {
        if payload.len() != n * 4 {
            return Err(Error::Format(format!(
                "truncated payload: expected {} bytes, got {}",
                n * 4,
                payload.len()
            )));
        }
        Ok(payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };
    match kind {
        KIND_IMAGE => {
            if c != 3 {
                return Err(Error::Format(format!("image kind with C={}", c)));
            }
            let data = need_f32(h * w * 3)?;
            ImageTensor::new(h, w, data)
                .map(TensorPayload::Image)
                .map_err(|e| Error::Format(e.to_string()))
        }
        KIND_LABELS => {
            if payload.len() != h * w * 2 {
                return Err(Error::Format(format!(
                    "truncated payload: expected {} bytes, got {}",
                    h * w * 2,
                    payload.len()
                )));
            }
            let data = payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            LabelMap::new(h, w, data)
                .map(TensorPayload::Labels)
                .map_err(|e| Error::Format(e.to_string()))
        }
        KIND_WEIGHTS => {
            let data = need_f32(h * w)?;
            WeightMap::new(h, w, data)
                .map(TensorPayload::Weights)
                .map_err(|e| Error::Format(e.to_string()))
        }
        KIND_ONE_HOT => {
            let data = need_f32(h * w * c)?;
            OneHotLabel::new(h, w, c, data)
                .map(TensorPayload::OneHot)
                .map_err(|e| Error::Format(e.to_string()))
        }
        KIND_PROBS => {
            if payload.len() != h * w * c * 8 {
                return Err(Error::Format(format!(
                    "truncated payload: expected {} bytes, got {}",
                    h * w * c * 8,
                    payload.len()
                )));
            }
            let data = payload
                .chunks_exact(8)
                .map(|b| {
                    f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]])
                })
                .collect();
            ProbMap::new(h, w, c, data)
                .map(TensorPayload::Probs)
                .map_err(|e| Error::Format(e.to_string()))
        }
        k => Err(Error::Format(format!("unknown kind tag {}", k))),
    }
}

pub fn write_tensor(path: &Path, t: &TensorPayload) -> Result<()> {
    let bytes = serialize_tensor(t);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<TensorPayload> {
    let bytes = std::fs::read(path)?;
    deserialize_tensor(&bytes)
}

/// Fixed class colors for paletted label PNGs and colormapped panels.
pub const CLASS_PALETTE: [[u8; 3]; 16] = [
    [52, 56, 66],    // 0: background slate
    [228, 88, 70],   // 1
    [86, 170, 92],   // 2
    [79, 134, 222],  // 3
    [236, 198, 80],  // 4
    [160, 96, 196],  // 5
    [92, 200, 204],  // 6
    [226, 136, 54],  // 7
    [154, 208, 94],  // 8
    [204, 96, 146],  // 9
    [108, 110, 214], // 10
    [144, 120, 80],  // 11
    [98, 160, 158],  // 12
    [190, 162, 204], // 13
    [120, 84, 60],   // 14
    [200, 200, 200], // 15
];

fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn write_image_png(path: &Path, image: &ImageTensor) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(f, image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Io(e.to_string()))?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

pub fn read_image_png(path: &Path) -> Result<ImageTensor> {
    let f = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(f);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("image PNG must be 8-bit".into()));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let to_unit = |b: u8| b as f32 / 255.0;
    let data: Vec<f32> = match info.color_type {
        png::ColorType::Rgb => buf[..info.buffer_size()].iter().map(|&b| to_unit(b)).collect(),
        png::ColorType::Rgba => buf[..info.buffer_size()]
            .chunks_exact(4)
            .flat_map(|px| [to_unit(px[0]), to_unit(px[1]), to_unit(px[2])])
            .collect(),
        png::ColorType::Grayscale => buf[..info.buffer_size()]
            .iter()
            .flat_map(|&b| [to_unit(b); 3])
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "unsupported image PNG color type {:?}",
                other
            )))
        }
    };
    ImageTensor::new(h, w, data)
}

/// Writes a label map as an indexed-color PNG: palette index = class id.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    for (p, &l) in labels.data().iter().enumerate() {
        if l != IGNORE && l > 255 {
            return Err(Error::InvalidLabel {
                pixel: p,
                label: l,
                classes: 256,
            });
        }
    }
    let mut palette = Vec::with_capacity(256 * 3);
    for i in 0..256usize {
        if i < CLASS_PALETTE.len() {
            palette.extend_from_slice(&CLASS_PALETTE[i]);
        } else if i == IGNORE as usize {
            palette.extend_from_slice(&[0, 0, 0]);
        } else {
            palette.extend_from_slice(&[127, 127, 127]);
        }
    }
    let f = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(f, labels.width() as u32, labels.height() as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette);
    let mut writer = enc.write_header().map_err(|e| Error::Io(e.to_string()))?;
    let bytes: Vec<u8> = labels.data().iter().map(|&l| l as u8).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Reads an indexed-color PNG back into a label map (index = class id).
pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let f = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(f);
    // keep palette indices instead of expanding to RGB
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(
            "label PNG must be 8-bit indexed color".into(),
        ));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data: Vec<u16> = buf[..info.buffer_size()].iter().map(|&b| b as u16).collect();
    LabelMap::new(h, w, data)
}

/// Grayscale heatmap of a weight map (w = 1 renders white).
pub fn write_weight_png(path: &Path, weights: &WeightMap) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(f, weights.width() as u32, weights.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Io(e.to_string()))?;
    let bytes: Vec<u8> = weights.data().iter().map(|&v| quantize(v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};

    #[test]
    fn roundtrip_tiny_image() {
        let img = ImageTensor::new(1, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let t = TensorPayload::Image(img);
        let bytes = serialize_tensor(&t);
        assert_eq!(deserialize_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn roundtrip_random_weight_map() {
        let mut s = RngStream::new(3, 0, Purpose::DataSampling);
        let data: Vec<f32> = (0..64 * 64).map(|_| s.uniform_f64() as f32).collect();
        let t = TensorPayload::Weights(WeightMap::new(64, 64, data).unwrap());
        let bytes = serialize_tensor(&t);
        assert_eq!(deserialize_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let t = TensorPayload::Labels(LabelMap::new(2, 2, vec![0, 1, 2, IGNORE]).unwrap());
        let mut bytes = serialize_tensor(&t);
        bytes[1] ^= 0xFF;
        assert!(matches!(
            deserialize_tensor(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = TensorPayload::Weights(WeightMap::new(2, 2, vec![0.5; 4]).unwrap());
        let bytes = serialize_tensor(&t);
        assert!(matches!(
            deserialize_tensor(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn label_png_roundtrip() {
        let dir = std::env::temp_dir().join("scmix_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels.png");
        let labels = LabelMap::new(3, 2, vec![0, 1, 2, 3, IGNORE, 1]).unwrap();
        write_label_png(&path, &labels).unwrap();
        assert_eq!(read_label_png(&path).unwrap(), labels);
    }

    #[test]
    fn image_png_roundtrip_is_exact_on_quantized_values() {
        let dir = std::env::temp_dir().join("scmix_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("image.png");
        // values on the 1/255 grid survive the fixed u8 conversion exactly
        let data: Vec<f32> = (0..4 * 3 * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = ImageTensor::new(4, 3, data).unwrap();
        write_image_png(&path, &img).unwrap();
        assert_eq!(read_image_png(&path).unwrap(), img);
    }
}
