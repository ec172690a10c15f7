//! On-disk formats for logits, features, heads and class maps.
//!
//! Binary layouts are little-endian throughout:
//!
//! ```text
//! logits   "TGLT" u8:version u64:N u64:K f64[N*K] u8:has_labels [u64[N]]
//! features "TGFT" u8:version u64:N u64:d f64[N*d] u8:1 u64[N]
//! head     "TGHD" u8:version u64:K u64:d f64[K*d] f64[K]
//! ```
//!
//! Binary logit/feature files do not carry item ids; rows read back get
//! ids `"0"`, `"1"`, ... .

use std::io::{self, BufRead, BufReader, Read, Write};

use crate::{ClassIndexMap, ClassifierHead, Error, FeatureTable, LogitTable, Matrix, Result};

pub const LOGITS_MAGIC: &[u8; 4] = b"TGLT";
pub const FEATURES_MAGIC: &[u8; 4] = b"TGFT";
pub const HEAD_MAGIC: &[u8; 4] = b"TGHD";
pub const FORMAT_VERSION: u8 = 1;

/// A matrix with ids and optional labels; shared by logit and feature files.
struct Labeled {
    ids: Vec<String>,
    matrix: Matrix,
    labels: Option<Vec<usize>>,
}

fn read_labeled_csv<R: Read>(reader: R, prefix: &str) -> Result<Labeled> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse_line(1, e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "item_id" || &header[1] != "label" {
        return Err(Error::parse_line(
            1,
            format!("header must be item_id,label,{prefix}_0,..."),
        ));
    }
    let cols = header.len() - 2;
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("{prefix}_{j}") {
            return Err(Error::parse_line(
                1,
                format!("column {} is {name:?}, expected {prefix}_{j}", j + 2),
            ));
        }
    }

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse_line(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != cols + 2 {
            return Err(Error::parse_line(
                line,
                format!("row has {} columns, header has {}", rec.len(), cols + 2),
            ));
        }
        ids.push(rec[0].to_string());
        labels.push(match &rec[1] {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| Error::parse_line(line, format!("bad label {s:?}")))?,
            ),
        });
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse_line(line, format!("bad number {field:?} in {prefix}_{j}")))?;
            if !v.is_finite() {
                return Err(Error::parse_line(line, format!("non-finite value in {prefix}_{j}")));
            }
            data.push(v);
        }
    }
    let labels = match labels.iter().filter(|l| l.is_some()).count() {
        0 => None,
        n if n == labels.len() => Some(labels.into_iter().flatten().collect()),
        _ => {
            let first = labels.iter().position(Option::is_none).unwrap_or(0);
            return Err(Error::parse_line(
                first + 2,
                "label column must be filled on every row or on none",
            ));
        }
    };
    Ok(Labeled {
        matrix: Matrix::new(ids.len(), cols, data)?,
        ids,
        labels,
    })
}

fn write_labeled_csv<W: Write>(
    writer: W,
    prefix: &str,
    ids: &[String],
    matrix: &Matrix,
    labels: Option<&[usize]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["item_id".to_string(), "label".to_string()];
    header.extend((0..matrix.cols()).map(|j| format!("{prefix}_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in matrix.iter_rows().enumerate() {
        let mut rec = Vec::with_capacity(row.len() + 2);
        rec.push(ids[i].clone());
        rec.push(labels.map(|l| l[i].to_string()).unwrap_or_default());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(io::Error::other(e))
}

/// Little-endian reader that tracks its byte offset for error messages.
struct BinReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> BinReader<R> {
    fn exact<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::parse_offset(self.offset, format!("file ends inside {what}"))
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.exact::<1>(what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.offset;
        let v = f64::from_le_bytes(self.exact(what)?);
        if !v.is_finite() {
            return Err(Error::parse_offset(at, format!("non-finite value in {what}")));
        }
        Ok(v)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m: [u8; 4] = self.exact("magic")?;
        if &m != magic {
            return Err(Error::parse_offset(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&m),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let v = self.u8("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::parse_offset(4, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<(usize, usize)> {
        let at = self.offset;
        let rows = self.u64("row count")?;
        let cols = self.u64("column count")?;
        let to_usize = |v: u64| usize::try_from(v).ok();
        match (to_usize(rows), to_usize(cols)) {
            (Some(r), Some(c)) if r.checked_mul(c).is_some_and(|n| n <= usize::MAX / 8) => Ok((r, c)),
            _ => Err(Error::parse_offset(at, "matrix dimensions overflow")),
        }
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }

    /// One more byte, or `None` at end of input.
    fn next_byte(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => {
                    self.offset += 1;
                    return Ok(Some(b[0]));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn expect_eof(&mut self) -> Result<()> {
        let at = self.offset;
        match self.next_byte()? {
            None => Ok(()),
            Some(_) => Err(Error::parse_offset(at, "trailing bytes after data")),
        }
    }
}

fn read_labeled_binary<R: Read>(reader: R, magic: &[u8; 4]) -> Result<Labeled> {
    let mut r = BinReader { inner: reader, offset: 0 };
    r.header(magic)?;
    let (n, cols) = r.dims()?;
    let data = r.floats(n * cols, "matrix data")?;
    let flag_at = r.offset;
    // a missing flag byte is read as "no labels"
    let labels = match r.next_byte()? {
        None | Some(0) => None,
        Some(1) => {
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                let at = r.offset;
                let v = r.u64("label block")?;
                l.push(usize::try_from(v).map_err(|_| Error::parse_offset(at, "label overflow"))?);
            }
            Some(l)
        }
        Some(other) => return Err(Error::parse_offset(flag_at, format!("bad label flag {other}"))),
    };
    r.expect_eof()?;
    Ok(Labeled {
        ids: (0..n).map(|i| i.to_string()).collect(),
        matrix: Matrix::new(n, cols, data)?,
        labels,
    })
}

fn write_labeled_binary<W: Write>(
    mut w: W,
    magic: &[u8; 4],
    matrix: &Matrix,
    labels: Option<&[usize]>,
) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&[FORMAT_VERSION])?;
    w.write_all(&(matrix.rows() as u64).to_le_bytes())?;
    w.write_all(&(matrix.cols() as u64).to_le_bytes())?;
    for v in matrix.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    match labels {
        None => w.write_all(&[0])?,
        Some(l) => {
            w.write_all(&[1])?;
            for &y in l {
                w.write_all(&(y as u64).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Encoding of a logit or feature file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Binary,
}

impl TableFormat {
    /// Binary when the file starts with one of the binary magics, CSV otherwise.
    pub fn sniff(path: &std::path::Path) -> Result<Self> {
        let mut head = [0u8; 4];
        let mut f = std::fs::File::open(path)?;
        let n = f.read(&mut head)?;
        Ok(if n == 4 && (&head == LOGITS_MAGIC || &head == FEATURES_MAGIC) {
            TableFormat::Binary
        } else {
            TableFormat::Csv
        })
    }
}

pub fn read_logits<R: Read>(reader: R, format: TableFormat) -> Result<LogitTable> {
    let l = match format {
        TableFormat::Csv => read_labeled_csv(reader, "z")?,
        TableFormat::Binary => read_labeled_binary(BufReader::new(reader), LOGITS_MAGIC)?,
    };
    LogitTable::new(l.ids, l.matrix, l.labels)
}

pub fn write_logits<W: Write>(writer: W, table: &LogitTable, format: TableFormat) -> Result<()> {
    match format {
        TableFormat::Csv => write_labeled_csv(writer, "z", table.item_ids(), table.logits(), table.labels()),
        TableFormat::Binary => write_labeled_binary(io::BufWriter::new(writer), LOGITS_MAGIC, table.logits(), table.labels()),
    }
}

pub fn read_features<R: Read>(reader: R, format: TableFormat) -> Result<FeatureTable> {
    let l = match format {
        TableFormat::Csv => read_labeled_csv(reader, "x")?,
        TableFormat::Binary => read_labeled_binary(BufReader::new(reader), FEATURES_MAGIC)?,
    };
    let labels = l
        .labels
        .ok_or_else(|| Error::InvalidInput("feature tables need a label on every row".into()))?;
    FeatureTable::new(l.ids, l.matrix, labels)
}

pub fn write_features<W: Write>(writer: W, table: &FeatureTable, format: TableFormat) -> Result<()> {
    match format {
        TableFormat::Csv => write_labeled_csv(writer, "x", table.item_ids(), table.features(), Some(table.labels())),
        TableFormat::Binary => write_labeled_binary(
            io::BufWriter::new(writer),
            FEATURES_MAGIC,
            table.features(),
            Some(table.labels()),
        ),
    }
}

pub fn read_head<R: Read>(reader: R) -> Result<ClassifierHead> {
    let mut r = BinReader { inner: BufReader::new(reader), offset: 0 };
    r.header(HEAD_MAGIC)?;
    let (k, d) = r.dims()?;
    let weights = r.floats(k * d, "weights")?;
    let bias = r.floats(k, "bias")?;
    r.expect_eof()?;
    ClassifierHead::new(Matrix::new(k, d, weights)?, bias)
}

pub fn write_head<W: Write>(writer: W, head: &ClassifierHead) -> Result<()> {
    let mut w = io::BufWriter::new(writer);
    w.write_all(HEAD_MAGIC)?;
    w.write_all(&[FORMAT_VERSION])?;
    w.write_all(&(head.class_count() as u64).to_le_bytes())?;
    w.write_all(&(head.dim() as u64).to_le_bytes())?;
    for v in head.weights().as_slice().iter().chain(head.bias()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// `class_index,taxon_id` rows covering every index in `[0, K)` exactly once.
pub fn read_class_map<R: Read>(reader: R) -> Result<ClassIndexMap> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut pairs: Vec<(usize, i64)> = Vec::new();
    for (i, rec) in rdr.deserialize::<(usize, i64)>().enumerate() {
        pairs.push(rec.map_err(|e| Error::parse_line(i + 2, e.to_string()))?);
    }
    pairs.sort_unstable();
    for (expected, &(idx, _)) in pairs.iter().enumerate() {
        if idx != expected {
            return Err(Error::InvalidInput(format!(
                "class map must cover 0..{} exactly once; problem at index {idx}",
                pairs.len()
            )));
        }
    }
    ClassIndexMap::new(pairs.into_iter().map(|(_, t)| t).collect())
}

pub fn write_class_map<W: Write>(writer: W, map: &ClassIndexMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class_index", "taxon_id"]).map_err(csv_err)?;
    for (i, t) in map.taxa().iter().enumerate() {
        w.write_record([i.to_string(), t.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a single logit or feature row: a JSON array or comma/whitespace
/// separated numbers.
pub fn parse_row(text: &str) -> Result<Vec<f64>> {
    let t = text.trim();
    let values: Vec<f64> = if t.starts_with('[') {
        serde_json::from_str(t)?
    } else {
        t.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad number {s:?}")))
            })
            .collect::<Result<_>>()?
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in row".into()));
    }
    Ok(values)
}

/// Newline-separated class indices (blank lines ignored).
pub fn read_indices<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse()
                .map_err(|_| Error::parse_line(i + 1, format!("bad class index {t:?}")))?,
        );
    }
    Ok(out)
}
