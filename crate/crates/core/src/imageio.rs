//! Lossless PNG storage for encoded images.
//!
//! Images are written to `<root>/<split>/<Ck>/<chunk_index>.png` via a
//! `.partial` temp file and a rename, so an interrupted run never leaves a
//! truncated PNG behind. Re-running overwrites files with identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::catalog::ClassLabel;
use crate::error::{Error, Result};
use crate::pixels::{EncodedImage, ImageProvenance, IMAGE_SIDE};
use crate::split::{tmp_path, DatasetManifest, ManifestEntry};

/// Encodes an RGB8 PNG of arbitrary size.
pub fn encode_rgb_png(out: impl Write, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), (width * height * 3) as usize);
    let mut encoder = png::Encoder::new(out, width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Image(e.to_string()))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))
}

/// Decodes an 8-bit RGB PNG into `(width, height, pixels)`.
pub fn decode_rgb_png(input: impl std::io::BufRead + std::io::Seek) -> Result<(u32, u32, Vec<u8>)> {
    let decoder = png::Decoder::new(input);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!(
            "expected 8-bit RGB, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

pub fn write_png(path: &Path, image: &EncodedImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = tmp_path(path);
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        let side = IMAGE_SIDE as u32;
        encode_rgb_png(&mut out, side, side, image.pixels())?;
        out.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_png(path: &Path, label: ClassLabel) -> Result<EncodedImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (w, h, pixels) = decode_rgb_png(BufReader::new(file))?;
    if (w as usize, h as usize) != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(Error::Image(format!(
            "{}: expected {IMAGE_SIDE}x{IMAGE_SIDE}, found {w}x{h}",
            path.display()
        )));
    }
    EncodedImage::from_pixels(pixels, label, ImageProvenance::default())
}

/// Loads the image a manifest entry points at.
pub fn read_entry(root: &Path, entry: &ManifestEntry) -> Result<EncodedImage> {
    let mut image = read_png(&root.join(&entry.path), entry.label)?;
    image.provenance.file_id = entry.file_id;
    image.provenance.chunk_index = entry.file_chunk;
    Ok(image)
}

/// Writes every image that has a manifest entry (matched on label, file and
/// file-chunk). Returns the number of files written.
pub fn write_images(images: &[EncodedImage], manifest: &DatasetManifest, root: &Path) -> Result<usize> {
    let lookup = manifest.lookup();
    let mut written = 0;
    for image in images {
        let key = (image.label, image.provenance.file_id, image.provenance.chunk_index);
        let entry = lookup.get(&key).ok_or_else(|| {
            Error::Image(format!(
                "image {:?} of {} has no manifest entry",
                image.provenance, image.label
            ))
        })?;
        write_png(&root.join(&entry.path), image)?;
        written += 1;
    }
    Ok(written)
}
