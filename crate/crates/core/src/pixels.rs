//! Min/max statistics, pixel normalization and chunk encoding.
//!
//! Every feature value `x` becomes one 8-bit pixel:
//!
//! ```text
//! pixel = clamp(round_half_even((x - min) / (max - min) * 255), 0, 255)
//! ```
//!
//! with `pixel = 0` when `max == min`. One image packs 180 consecutive
//! records of one class: records 0..60 fill the rows of the first channel,
//! 60..120 the second and 120..180 the third, each record's 60 features
//! forming one row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::ClassLabel;
use crate::error::{Error, Result};
use crate::ingest::FlowRecord;

pub const IMAGE_SIDE: usize = 60;
pub const CHANNELS: usize = 3;
pub const CHUNK_SIZE: usize = IMAGE_SIDE * CHANNELS;
pub const IMAGE_BYTES: usize = IMAGE_SIDE * IMAGE_SIDE * CHANNELS;

pub const STATS_VERSION: u32 = 1;

/// Maps one value onto `[0, 255]` with frozen feature bounds.
///
/// Values outside `[min, max]` clamp. Operands are halved before
/// subtracting so that finite inputs never overflow to infinity.
pub fn normalize(x: f64, min: f64, max: f64) -> u8 {
    debug_assert!(min <= max, "min {min} > max {max}");
    if max <= min {
        return 0;
    }
    let scaled = (x * 0.5 - min * 0.5) / (max * 0.5 - min * 0.5) * 255.0;
    if scaled.is_nan() {
        return 0;
    }
    scaled.round_ties_even().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    /// Fitted on training chunks only, frozen for everything else.
    TrainOnly,
    /// Fitted on every cleaned record.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsProvenance {
    pub mode: StatsMode,
    pub rows: u64,
    pub files: Vec<String>,
}

/// Per-feature bounds, persisted as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub version: u32,
    pub features: Vec<FeatureRange>,
    pub provenance: StatsProvenance,
    #[serde(default)]
    pub fingerprint: String,
    #[serde(default)]
    pub seed: u64,
}

impl NormStats {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn pixel(&self, feature: usize, x: f64) -> u8 {
        let range = &self.features[feature];
        normalize(x, range.min, range.max)
    }

    /// Identity of the statistics themselves (names and bounds), independent
    /// of provenance and run metadata.
    pub fn identity(&self) -> String {
        let bounds: Vec<(&str, u64, u64)> = self
            .features
            .iter()
            .map(|f| (f.name.as_str(), f.min.to_bits(), f.max.to_bits()))
            .collect();
        crate::ident::fingerprint(&bounds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: NormStats = serde_json::from_str(&text)?;
        if stats.version != STATS_VERSION {
            return Err(Error::Config {
                path: path.to_path_buf(),
                message: format!("unsupported stats version {}", stats.version),
            });
        }
        if let Some(bad) = stats.features.iter().find(|f| !(f.min <= f.max)) {
            return Err(Error::Config {
                path: path.to_path_buf(),
                message: format!("feature {:?} has min > max", bad.name),
            });
        }
        Ok(stats)
    }
}

/// Single-pass min/max reduction. Partial accumulators over disjoint
/// partitions can be merged.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    mins: Vec<f64>,
    maxs: Vec<f64>,
    rows: u64,
}

impl StatsAccumulator {
    pub fn new(features: usize) -> Self {
        StatsAccumulator {
            mins: vec![f64::INFINITY; features],
            maxs: vec![f64::NEG_INFINITY; features],
            rows: 0,
        }
    }

    pub fn push(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.mins.len() {
            return Err(Error::FeatureCount {
                expected: self.mins.len(),
                found: values.len(),
            });
        }
        for ((lo, hi), &x) in self.mins.iter_mut().zip(&mut self.maxs).zip(values) {
            *lo = lo.min(x);
            *hi = hi.max(x);
        }
        self.rows += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        for (lo, &o) in self.mins.iter_mut().zip(&other.mins) {
            *lo = lo.min(o);
        }
        for (hi, &o) in self.maxs.iter_mut().zip(&other.maxs) {
            *hi = hi.max(o);
        }
        self.rows += other.rows;
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(
        self,
        names: &[String],
        mode: StatsMode,
        files: Vec<String>,
    ) -> Result<NormStats> {
        if self.rows == 0 {
            return Err(Error::NoData("no records to fit normalization statistics".into()));
        }
        assert_eq!(names.len(), self.mins.len(), "one name per feature");
        let features = names
            .iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(name, (&min, &max))| FeatureRange {
                name: name.clone(),
                min,
                max,
            })
            .collect();
        Ok(NormStats {
            version: STATS_VERSION,
            features,
            provenance: StatsProvenance {
                mode,
                rows: self.rows,
                files,
            },
            fingerprint: String::new(),
            seed: 0,
        })
    }
}

/// Per-feature min and max over `records`.
pub fn fit_stats<'a>(
    records: impl IntoIterator<Item = &'a FlowRecord>,
    names: &[String],
    mode: StatsMode,
) -> Result<NormStats> {
    let mut acc = StatsAccumulator::new(names.len());
    for record in records {
        acc.push(&record.values)?;
    }
    acc.finish(names, mode, Vec::new())
}

/// Where an image's records came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageProvenance {
    pub file_id: u32,
    /// Offset of the chunk's first record within its class stream.
    pub stream_offset: u64,
    /// Chunk number within the class stream of one file.
    pub chunk_index: u64,
}

/// A 60x60x3 image, stored row-major with interleaved channels (the PNG
/// RGB8 layout).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pixels: Box<[u8]>,
    pub label: ClassLabel,
    pub provenance: ImageProvenance,
}

impl EncodedImage {
    pub fn from_pixels(
        pixels: Vec<u8>,
        label: ClassLabel,
        provenance: ImageProvenance,
    ) -> Result<Self> {
        if pixels.len() != IMAGE_BYTES {
            return Err(Error::Image(format!(
                "expected {IMAGE_BYTES} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(EncodedImage {
            pixels: pixels.into_boxed_slice(),
            label,
            provenance,
        })
    }

    pub fn filled(value: u8, label: ClassLabel) -> Self {
        EncodedImage {
            pixels: vec![value; IMAGE_BYTES].into_boxed_slice(),
            label,
            provenance: ImageProvenance::default(),
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * IMAGE_SIDE + col) * CHANNELS + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u8) {
        self.pixels[(row * IMAGE_SIDE + col) * CHANNELS + channel] = value;
    }
}

/// Streaming chunk encoder for one class stream.
///
/// Feed records in order with [`push`](Self::push); an image comes out after
/// every 180th record. [`finish`](Self::finish) reports the trailing records
/// that did not fill a chunk.
#[derive(Debug)]
pub struct ChunkEncoder<'a> {
    stats: &'a NormStats,
    label: Option<ClassLabel>,
    file_id: u32,
    buffer: EncodedImage,
    filled: usize,
    consumed: u64,
    chunks: u64,
}

impl<'a> ChunkEncoder<'a> {
    pub fn new(stats: &'a NormStats) -> Result<Self> {
        if stats.len() != IMAGE_SIDE {
            return Err(Error::FeatureCount {
                expected: IMAGE_SIDE,
                found: stats.len(),
            });
        }
        Ok(ChunkEncoder {
            stats,
            label: None,
            file_id: 0,
            buffer: EncodedImage::filled(0, ClassLabel::NORMAL),
            filled: 0,
            consumed: 0,
            chunks: 0,
        })
    }

    pub fn push(&mut self, record: &FlowRecord) -> Result<Option<EncodedImage>> {
        match self.label {
            None => self.label = Some(record.label),
            Some(label) if label != record.label => {
                return Err(Error::MixedLabels {
                    expected: label.to_string(),
                    found: record.label.to_string(),
                })
            }
            Some(_) => {}
        }
        if record.values.len() != IMAGE_SIDE {
            return Err(Error::FeatureCount {
                expected: IMAGE_SIDE,
                found: record.values.len(),
            });
        }
        if self.filled == 0 {
            self.file_id = record.source.file_id;
        }

        let channel = self.filled / IMAGE_SIDE;
        let row = self.filled % IMAGE_SIDE;
        for (col, &x) in record.values.iter().enumerate() {
            self.buffer.set(row, col, channel, self.stats.pixel(col, x));
        }
        self.filled += 1;
        self.consumed += 1;

        if self.filled < CHUNK_SIZE {
            return Ok(None);
        }
        let mut image = std::mem::replace(
            &mut self.buffer,
            EncodedImage::filled(0, ClassLabel::NORMAL),
        );
        image.label = record.label;
        image.provenance = ImageProvenance {
            file_id: self.file_id,
            stream_offset: self.consumed - CHUNK_SIZE as u64,
            chunk_index: self.chunks,
        };
        self.filled = 0;
        self.chunks += 1;
        Ok(Some(image))
    }

    /// Records consumed so far that have not been emitted in an image.
    pub fn pending(&self) -> usize {
        self.filled
    }

    /// Ends the stream; returns the number of dropped trailing records.
    pub fn finish(self) -> usize {
        self.filled
    }
}

/// Encodes one class stream; returns the images and the trailing records
/// dropped.
pub fn encode_chunks<'r>(
    records: impl IntoIterator<Item = &'r FlowRecord>,
    stats: &NormStats,
) -> Result<(Vec<EncodedImage>, usize)> {
    let mut encoder = ChunkEncoder::new(stats)?;
    let mut images = Vec::new();
    for record in records {
        if let Some(image) = encoder.push(record)? {
            images.push(image);
        }
    }
    Ok((images, encoder.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RecordSource;

    fn record(values: Vec<f64>, label: u8, row: u64) -> FlowRecord {
        FlowRecord {
            values,
            label: ClassLabel::new(label).unwrap(),
            source: RecordSource { file_id: 0, row },
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn unit_stats() -> NormStats {
        let mut acc = StatsAccumulator::new(IMAGE_SIDE);
        acc.push(&[0.0; IMAGE_SIDE]).unwrap();
        acc.push(&[255.0; IMAGE_SIDE]).unwrap();
        acc.finish(&names(IMAGE_SIDE), StatsMode::Global, vec![])
            .unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(0.0, 0.0, 10.0), 0);
        assert_eq!(normalize(10.0, 0.0, 10.0), 255);
        // 127.5 rounds to the even neighbour
        assert_eq!(normalize(5.0, 0.0, 10.0), 128);
        assert_eq!(normalize(-1.0, 0.0, 10.0), 0);
        assert_eq!(normalize(11.0, 0.0, 10.0), 255);
        assert_eq!(normalize(3.0, 3.0, 3.0), 0);
        assert_eq!(normalize(1e308, -1e308, 1e308), 255);
        assert_eq!(normalize(-1e308, -1e308, 1e308), 0);
        assert_eq!(normalize(0.0, -f64::MAX, f64::MAX), 128);
    }

    #[test]
    fn stats_extremes() {
        let records = vec![
            record(vec![0.0, 7.0], 0, 1),
            record(vec![5.0, 7.0], 0, 2),
            record(vec![10.0, 7.0], 0, 3),
        ];
        let stats = fit_stats(&records, &names(2), StatsMode::Global).unwrap();
        assert_eq!((stats.features[0].min, stats.features[0].max), (0.0, 10.0));
        assert_eq!((stats.features[1].min, stats.features[1].max), (7.0, 7.0));
        assert_eq!(stats.provenance.rows, 3);

        let one = fit_stats(&records[1..2], &names(2), StatsMode::Global).unwrap();
        assert_eq!(one.features[0].min, 5.0);
        assert_eq!(one.features[0].max, 5.0);
    }

    #[test]
    fn empty_stream_has_no_data() {
        let err = fit_stats(&[], &names(2), StatsMode::Global).unwrap_err();
        assert!(matches!(err, Error::NoData(_)));
    }

    #[test]
    fn merged_partitions_equal_single_pass() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 7.3).sin(), (i * i) as f64 - 300.0])
            .collect();
        let mut whole = StatsAccumulator::new(2);
        let mut a = StatsAccumulator::new(2);
        let mut b = StatsAccumulator::new(2);
        for (i, r) in rows.iter().enumerate() {
            whole.push(r).unwrap();
            if i % 3 == 0 { a.push(r).unwrap() } else { b.push(r).unwrap() }
        }
        a.merge(&b);
        let n = names(2);
        assert_eq!(
            a.finish(&n, StatsMode::Global, vec![]).unwrap(),
            whole.finish(&n, StatsMode::Global, vec![]).unwrap()
        );
    }

    #[test]
    fn chunk_counts() {
        let stats = unit_stats();
        for (rows, images, dropped) in [(180, 1, 0), (179, 0, 179), (450, 2, 90), (0, 0, 0)] {
            let records: Vec<_> = (0..rows)
                .map(|i| record(vec![1.0; IMAGE_SIDE], 4, i as u64))
                .collect();
            let (out, left) = encode_chunks(&records, &stats).unwrap();
            assert_eq!((out.len(), left), (images, dropped), "{rows} rows");
        }
    }

    #[test]
    fn channel_layout() {
        let stats = unit_stats();
        let records: Vec<_> = (0..CHUNK_SIZE)
            .map(|i| {
                let values = (0..IMAGE_SIDE).map(|c| ((i + c) % 256) as f64).collect();
                record(values, 2, i as u64)
            })
            .collect();
        let (images, _) = encode_chunks(&records, &stats).unwrap();
        let image = &images[0];
        assert_eq!(image.label, ClassLabel::new(2).unwrap());
        for ch in 0..CHANNELS {
            for r in 0..IMAGE_SIDE {
                for c in 0..IMAGE_SIDE {
                    let expected = ((ch * IMAGE_SIDE + r + c) % 256) as u8;
                    assert_eq!(image.get(r, c, ch), expected);
                }
            }
        }
    }

    #[test]
    fn mixed_labels_are_rejected() {
        let stats = unit_stats();
        let records = vec![
            record(vec![0.0; IMAGE_SIDE], 0, 1),
            record(vec![0.0; IMAGE_SIDE], 1, 2),
        ];
        assert!(matches!(
            encode_chunks(&records, &stats),
            Err(Error::MixedLabels { .. })
        ));
    }

    #[test]
    fn provenance_tracks_offsets() {
        let stats = unit_stats();
        let records: Vec<_> = (0..400)
            .map(|i| record(vec![0.0; IMAGE_SIDE], 9, i))
            .collect();
        let (images, dropped) = encode_chunks(&records, &stats).unwrap();
        assert_eq!(dropped, 40);
        assert_eq!(images[1].provenance.stream_offset, 180);
        assert_eq!(images[1].provenance.chunk_index, 1);
    }

    #[test]
    fn stats_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        let stats = unit_stats();
        stats.save(&path).unwrap();
        assert_eq!(NormStats::load(&path).unwrap(), stats);

        let mut bad = stats.clone();
        bad.features[3].min = 300.0;
        bad.save(&path).unwrap();
        assert!(NormStats::load(&path).is_err());
    }
}
