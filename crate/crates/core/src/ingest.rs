//! Streaming CSV cleaning.
//!
//! [`FileIngest`] reads one CSV file row by row, applies a [`ColumnPlan`] and
//! yields a [`FlowRecord`] for every row whose retained cells are all finite
//! numbers and whose label resolves. Other rows are rejected whole and counted
//! in [`IngestStats`]. Memory use is bounded by a single row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{resolve_columns, ClassLabel, ColumnPlan, FeatureCatalog, LabelMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingValue,
    NonNumeric,
    NonFinite,
    UnknownLabel,
}

impl RejectReason {
    pub const ALL: [RejectReason; 4] = [
        RejectReason::MissingValue,
        RejectReason::NonNumeric,
        RejectReason::NonFinite,
        RejectReason::UnknownLabel,
    ];
}

/// Where a record came from. `row` is the 1-based data row (the header is
/// row 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordSource {
    pub file_id: u32,
    pub row: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    /// Finite values in the plan's canonical feature order.
    pub values: Vec<f64>,
    pub label: ClassLabel,
    pub source: RecordSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: u64,
    pub rows_emitted: u64,
    pub rejected_by_reason: BTreeMap<RejectReason, u64>,
}

impl Default for IngestStats {
    fn default() -> Self {
        IngestStats {
            rows_read: 0,
            rows_emitted: 0,
            rejected_by_reason: RejectReason::ALL.iter().map(|&r| (r, 0)).collect(),
        }
    }
}

impl IngestStats {
    pub fn rejected(&self) -> u64 {
        self.rejected_by_reason.values().sum()
    }

    pub fn rejected_for(&self, reason: RejectReason) -> u64 {
        self.rejected_by_reason.get(&reason).copied().unwrap_or(0)
    }

    /// `rows_read == rows_emitted + rejected`.
    pub fn is_conserved(&self) -> bool {
        self.rows_read == self.rows_emitted + self.rejected()
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.rows_read += other.rows_read;
        self.rows_emitted += other.rows_emitted;
        for (reason, n) in &other.rejected_by_reason {
            *self.rejected_by_reason.entry(*reason).or_insert(0) += n;
        }
    }

    fn reject(&mut self, reason: RejectReason) {
        *self.rejected_by_reason.entry(reason).or_insert(0) += 1;
    }
}

/// Parses one retained cell. Integers, decimals and scientific notation are
/// accepted with `.` as the decimal point; `nan`/`inf`/`infinity` (any case,
/// optional sign) and overflowing literals are non-finite.
pub fn parse_cell(cell: &[u8]) -> std::result::Result<f64, RejectReason> {
    let text = std::str::from_utf8(cell).map_err(|_| RejectReason::NonNumeric)?;
    let text = text.trim();
    if text.is_empty() {
        return Err(RejectReason::MissingValue);
    }
    let value: f64 = text.parse().map_err(|_| RejectReason::NonNumeric)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(RejectReason::NonFinite)
    }
}

pub struct FileIngest<R: Read> {
    reader: csv::Reader<R>,
    plan: ColumnPlan,
    labels: LabelMap,
    path: PathBuf,
    file_id: u32,
    row: u64,
    record: csv::ByteRecord,
    stats: IngestStats,
    failed: bool,
}

impl FileIngest<BufReader<File>> {
    /// Opens `path` and checks its header against `plan`.
    pub fn open(path: &Path, file_id: u32, plan: ColumnPlan, labels: LabelMap) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), path, file_id, plan, labels)
    }

    /// Opens `path` and resolves its plan from its own header.
    pub fn open_resolved(
        path: &Path,
        file_id: u32,
        catalog: &FeatureCatalog,
        labels: LabelMap,
    ) -> Result<Self> {
        let header = read_header(path)?;
        let plan = resolve_columns(&header, catalog)?;
        Self::open(path, file_id, plan, labels)
    }
}

impl<R: Read> FileIngest<R> {
    pub fn from_reader(
        reader: R,
        path: &Path,
        file_id: u32,
        plan: ColumnPlan,
        labels: LabelMap,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = reader.byte_headers().map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let header: Vec<String> = header
            .iter()
            .map(|h| String::from_utf8_lossy(h).into_owned())
            .collect();
        if !plan.matches_header(&header) {
            return Err(Error::HeaderMismatch {
                path: path.to_path_buf(),
            });
        }
        Ok(FileIngest {
            reader,
            plan,
            labels,
            path: path.to_path_buf(),
            file_id,
            row: 0,
            record: csv::ByteRecord::new(),
            stats: IngestStats::default(),
            failed: false,
        })
    }

    pub fn plan(&self) -> &ColumnPlan {
        &self.plan
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn into_stats(self) -> IngestStats {
        self.stats
    }

    fn clean_row(&self) -> std::result::Result<FlowRecord, RejectReason> {
        let mut values = Vec::with_capacity(self.plan.retained.len());
        for column in &self.plan.retained {
            let cell = self.record.get(column.position).unwrap_or(b"");
            values.push(parse_cell(cell)?);
        }
        let raw_label = self.record.get(self.plan.label_position).unwrap_or(b"");
        let label = std::str::from_utf8(raw_label)
            .ok()
            .and_then(|raw| self.labels.map_label(raw))
            .ok_or(RejectReason::UnknownLabel)?;
        Ok(FlowRecord {
            values,
            label,
            source: RecordSource {
                file_id: self.file_id,
                row: self.row,
            },
        })
    }
}

impl<R: Read> Iterator for FileIngest<R> {
    type Item = Result<FlowRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            match self.reader.read_byte_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(source) => {
                    self.failed = true;
                    return Some(Err(Error::Csv {
                        path: self.path.clone(),
                        source,
                    }));
                }
            }
            self.row += 1;
            self.stats.rows_read += 1;
            match self.clean_row() {
                Ok(record) => {
                    self.stats.rows_emitted += 1;
                    return Some(Ok(record));
                }
                Err(reason) => self.stats.reject(reason),
            }
        }
    }
}

/// Reads only the header row of a CSV file.
pub fn read_header(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let header = reader.byte_headers().map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(header
        .iter()
        .map(|h| String::from_utf8_lossy(h).into_owned())
        .collect())
}

/// Ingests a whole file into memory. Convenient for tests and small inputs;
/// pipelines should iterate [`FileIngest`] instead.
pub fn ingest_file(
    path: &Path,
    file_id: u32,
    plan: ColumnPlan,
    labels: LabelMap,
) -> Result<(Vec<FlowRecord>, IngestStats)> {
    let mut ingest = FileIngest::open(path, file_id, plan, labels)?;
    let records = ingest.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((records, ingest.into_stats()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn plan_for(header: &[&str]) -> ColumnPlan {
        resolve_columns(header, &FeatureCatalog::cicddos2019()).unwrap()
    }

    fn run(text: &str) -> (Vec<FlowRecord>, IngestStats) {
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        let plan = plan_for(&header);
        let mut ingest = FileIngest::from_reader(
            Cursor::new(text.to_string()),
            Path::new("mem.csv"),
            0,
            plan,
            LabelMap::cicddos2019(),
        )
        .unwrap();
        let records = ingest.by_ref().collect::<Result<Vec<_>>>().unwrap();
        (records, ingest.into_stats())
    }

    #[test]
    fn cell_parsing() {
        assert_eq!(parse_cell(b"42"), Ok(42.0));
        assert_eq!(parse_cell(b" -3.5 "), Ok(-3.5));
        assert_eq!(parse_cell(b"1.5e3"), Ok(1500.0));
        assert_eq!(parse_cell(b"2E-2"), Ok(0.02));
        assert_eq!(parse_cell(b""), Err(RejectReason::MissingValue));
        assert_eq!(parse_cell(b"   "), Err(RejectReason::MissingValue));
        assert_eq!(parse_cell(b"abc"), Err(RejectReason::NonNumeric));
        assert_eq!(parse_cell(b"1,5"), Err(RejectReason::NonNumeric));
        for bad in ["Infinity", "-inf", "+inf", "nan", "NaN", "1e400"] {
            assert_eq!(parse_cell(bad.as_bytes()), Err(RejectReason::NonFinite), "{bad}");
        }
        assert_eq!(parse_cell(&[0xff, 0xfe]), Err(RejectReason::NonNumeric));
    }

    #[test]
    fn infinity_cell_rejects_row() {
        let (records, stats) = run("Flow Duration,Label\n1,BENIGN\nInfinity,BENIGN\n");
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].label, ClassLabel::NORMAL);
        assert_eq!(stats.rejected_for(RejectReason::NonFinite), 1);
        assert!(stats.is_conserved());
    }

    #[test]
    fn ten_rows_three_malformed() {
        let text = "\
Flow ID,Flow Duration,Flow IAT Mean,Label
a,1,2,BENIGN
b,3,,Syn
c,4,5,DrDoS_DNS
d,6,7,BENIGN
e,x,8,BENIGN
f,9,10,WebDDoS
g,11,12,BENIGN
h,13,14,LDAP
i,15,16,BENIGN
j,17,18,BENIGN
";
        let (records, stats) = run(text);
        assert_eq!(stats.rows_read, 10);
        assert_eq!(stats.rows_emitted, 7);
        assert_eq!(stats.rejected(), 3);
        assert_eq!(stats.rejected_for(RejectReason::MissingValue), 1);
        assert_eq!(stats.rejected_for(RejectReason::NonNumeric), 1);
        assert_eq!(stats.rejected_for(RejectReason::UnknownLabel), 1);
        // identity column dropped, values in canonical order
        assert_eq!(records[0].values, vec![1.0, 2.0]);
        let rows: Vec<u64> = records.iter().map(|r| r.source.row).collect();
        assert_eq!(rows, vec![1, 3, 4, 7, 8, 9, 10]);
    }

    #[test]
    fn short_row_counts_as_missing() {
        let (records, stats) = run("Flow Duration,Flow IAT Mean,Label\n1\n1,2,Syn\n");
        assert_eq!(records.len(), 1);
        assert_eq!(stats.rejected_for(RejectReason::MissingValue), 1);
    }

    #[test]
    fn quoted_fields() {
        let (records, _) = run("Flow Duration,Label\n\"12.5\",\"BENIGN\"\n");
        assert_eq!(records[0].values, vec![12.5]);
    }

    #[test]
    fn header_mismatch_is_fatal() {
        let plan = plan_for(&["Flow Duration", "Label"]);
        let err = FileIngest::from_reader(
            Cursor::new("Label,Flow Duration\n".to_string()),
            Path::new("m.csv"),
            0,
            plan,
            LabelMap::cicddos2019(),
        )
        .err()
        .unwrap();
        assert!(matches!(err, Error::HeaderMismatch { .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let plan = plan_for(&["Flow Duration", "Label"]);
        let err = FileIngest::open(
            Path::new("/nonexistent/flows.csv"),
            0,
            plan,
            LabelMap::cicddos2019(),
        )
        .err()
        .unwrap();
        assert!(matches!(err, Error::Io { .. }));
    }
}
