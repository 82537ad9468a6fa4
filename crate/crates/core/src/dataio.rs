//! Dataset loading, run configuration and result files.
//!
//! Floats are written with 17 significant digits (fixed notation for
//! exponents in `[-5, 17)`, scientific otherwise, trailing zeros dropped), so
//! every value reads back bit-for-bit. Parsing accepts a decimal point only.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::elliptic_mc::{QGrid, RadialDistribution, ScaleMatrixConstraint};
use crate::error::{Error, Result};
use crate::sample::SampleBlock;
use crate::truncated::MatrixKind;

/// A column selected by header name or by 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl From<&str> for ColumnRef {
    /// Digits select by position, anything else by name.
    fn from(s: &str) -> Self {
        s.parse().map(ColumnRef::Index).unwrap_or_else(|_| ColumnRef::Name(s.to_string()))
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

/// Where and how to read an empirical dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub benchmark: ColumnRef,
    /// Empty selects every column other than the benchmark.
    pub features: Vec<ColumnRef>,
    pub delimiter: u8,
    pub header: bool,
}

impl DatasetSpec {
    pub fn new(path: impl Into<PathBuf>, benchmark: ColumnRef) -> Self {
        Self {
            path: path.into(),
            benchmark,
            features: Vec::new(),
            delimiter: b',',
            header: true,
        }
    }

    fn resolve(&self, headers: Option<&csv::StringRecord>, width: usize) -> Result<Vec<usize>> {
        let find = |c: &ColumnRef| -> Result<usize> {
            let idx = match c {
                ColumnRef::Index(i) => Some(*i).filter(|&i| i < width),
                ColumnRef::Name(n) => headers.and_then(|h| h.iter().position(|x| x == n)),
            };
            idx.ok_or_else(|| Error::MissingColumn {
                path: self.path.clone(),
                column: c.to_string(),
            })
        };
        let bench = find(&self.benchmark)?;
        let mut cols = vec![bench];
        if self.features.is_empty() {
            cols.extend((0..width).filter(|&i| i != bench));
        } else {
            for c in &self.features {
                let i = find(c)?;
                if !cols.contains(&i) {
                    cols.push(i);
                }
            }
        }
        if cols.len() < 2 {
            return Err(Error::Config(format!(
                "{}: need at least one feature column besides the benchmark",
                self.path.display()
            )));
        }
        Ok(cols)
    }
}

/// Reads the selected columns into a block with the benchmark as row 0.
pub fn load_dataset(spec: &DatasetSpec) -> Result<SampleBlock> {
    let csv_err = |source| Error::Csv {
        path: spec.path.clone(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .has_headers(spec.header)
        .trim(csv::Trim::All)
        .from_path(&spec.path)
        .map_err(csv_err)?;
    let headers = if spec.header {
        Some(reader.headers().map_err(csv_err)?.clone())
    } else {
        None
    };
    let mut cols: Option<Vec<usize>> = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let cols = match &cols {
            Some(c) => c,
            None => cols.insert(spec.resolve(headers.as_ref(), headers.as_ref().map_or(record.len(), |h| h.len()))?),
        };
        for &c in cols.iter() {
            let field = record.get(c).ok_or_else(|| Error::Parse {
                path: spec.path.clone(),
                line,
                column: c + 1,
                message: format!("row has {} fields", record.len()),
            })?;
            values.push(parse_number(field).ok_or_else(|| Error::Parse {
                path: spec.path.clone(),
                line,
                column: c + 1,
                message: if field.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("`{field}` is not a finite number")
                },
            })?);
        }
        rows += 1;
    }
    let Some(cols) = cols else {
        return Err(Error::EmptyDataset(spec.path.clone()));
    };
    Ok(SampleBlock::new(
        DMatrix::from_vec(cols.len(), rows, values),
        0,
        "file",
        spec.path.display().to_string(),
    ))
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Which radial law an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RadialSpec {
    Normal,
    Student { nu: f64 },
}

impl RadialSpec {
    pub fn distribution(&self, n: usize) -> RadialDistribution {
        match *self {
            RadialSpec::Normal => RadialDistribution::ChiForNormal { n },
            RadialSpec::Student { nu } => RadialDistribution::FScaledForStudent { n, nu },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    /// Quasi-equilibria over random scale matrices for one radial law.
    Replicates,
    /// Student t degrees-of-freedom sweep.
    StudentSweep,
}

/// Monte Carlo experiment settings, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: McMode,
    pub seed: u64,
    pub sample_size: usize,
    pub dimension: usize,
    pub matrices: usize,
    pub kinds: Vec<MatrixKind>,
    pub radial: RadialSpec,
    pub nus: Vec<f64>,
    pub constraint: ScaleMatrixConstraint,
    pub grid: QGrid,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: McMode::Replicates,
            seed: 1,
            sample_size: 100_000,
            dimension: 4,
            matrices: 100,
            kinds: vec![MatrixKind::Correlation],
            radial: RadialSpec::Normal,
            nus: (2..=20).map(f64::from).collect(),
            constraint: ScaleMatrixConstraint::default(),
            grid: QGrid::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::Config(format!("dimension must be >= 2, got {}", self.dimension)));
        }
        if self.matrices == 0 {
            return Err(Error::Config("matrices must be >= 1".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("at least one matrix kind is required".into()));
        }
        let min_rows = (self.grid.start * self.sample_size as f64).floor() as usize;
        if min_rows < crate::empirical::MIN_GROUP_ROWS {
            return Err(Error::Config(format!(
                "sample_size {} leaves {min_rows} rows in the smallest tail group (need {})",
                self.sample_size,
                crate::empirical::MIN_GROUP_ROWS
            )));
        }
        if let RadialSpec::Student { nu } = self.radial {
            if !(nu > 0.0) {
                return Err(Error::Config(format!("degrees of freedom must be positive, got {nu}")));
            }
        }
        if self.mode == McMode::StudentSweep && (self.nus.is_empty() || self.nus.iter().any(|&nu| !(nu > 0.0))) {
            return Err(Error::Config("sweep needs a non-empty list of positive degrees of freedom".into()));
        }
        self.constraint.validate()?;
        self.grid.validate()
    }
}

/// Result file encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// From the file extension; anything other than `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// `%.17g`-style rendering of a finite float.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

struct Float17;

impl serde_json::ser::Formatter for Float17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }
}

/// Serialises `value` as JSON with 17-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Float17);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("JSON is UTF-8"))
}

/// Renders `rows` as CSV with a header row taken from the field names.
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let to_err = |source: csv::Error| Error::Csv {
        path: PathBuf::from("<memory>"),
        source,
    };
    let mut raw = csv::Writer::from_writer(Vec::new());
    for row in rows {
        raw.serialize(row).map_err(to_err)?;
    }
    let raw = raw.into_inner().map_err(|e| to_err(e.into_error().into()))?;
    // the csv serializer prints shortest round-trip floats; re-render them at 17 digits
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(raw.as_slice());
    let mut out = csv::Writer::from_writer(Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(to_err)?;
        let fields: Vec<String> = record
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if i > 0 && f.contains(['.', 'e', 'E']) => format_f64(v),
                _ => f.to_string(),
            })
            .collect();
        out.write_record(&fields).map_err(to_err)?;
    }
    let bytes = out.into_inner().map_err(|e| to_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = BufWriter::new(File::create(path).map_err(io_err)?);
    f.write_all(text.as_bytes()).map_err(io_err)?;
    f.flush().map_err(io_err)
}

/// Writes one value as JSON.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let text = to_json_string(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes flat records as CSV.
pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let text = to_csv_string(rows).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })?;
    write_file(path, &text)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Writes a table of records in either encoding.
pub fn write_results<T: Serialize>(rows: &[T], path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(rows, path),
        Format::Json => write_json(rows, path),
    }
}

pub fn read_results<T: DeserializeOwned>(path: &Path, format: Format) -> Result<Vec<T>> {
    match format {
        Format::Csv => read_csv(path),
        Format::Json => read_json(path),
    }
}
