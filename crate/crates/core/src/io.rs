//! File formats and run configuration.
//!
//! Dense matrices are CSV (one point per row) or a raw little-endian binary
//! with a 16-byte header: `DSSC`, rows (u32), cols (u32), four zero bytes.
//! Sparse affinities are `i,j,value` triplets after a `# n=<N>` line.
//! Configurations are TOML with sections `[method]`, `[params]`,
//! `[support]`, `[spectral]` and `[io]`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dsproj::{ProjectionMethod, SupportInit};
use crate::error::{DsscError, Result};
use crate::sparse::CsrMatrix;
use crate::spectral::LaplacianMode;
use crate::types::{DataMatrix, DsscParams};

pub const BIN_MAGIC: &[u8; 4] = b"DSSC";
pub const BIN_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Csv,
    Bin,
}

impl MatrixFormat {
    /// `.bin` files are binary, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => MatrixFormat::Bin,
            _ => MatrixFormat::Csv,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = DsscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "bin" => Ok(MatrixFormat::Bin),
            _ => Err(DsscError::invalid(format!("unknown matrix format '{s}' (expected csv or bin)"))),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

/// Parses CSV text into a dense matrix in file orientation. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_csv(text: &str, source: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| {
                DsscError::parse(format!("{source}:{}", lineno + 1), format!("column {}: cannot parse '{field}'", col + 1))
            })?;
            if !v.is_finite() {
                return Err(DsscError::parse(
                    format!("{source}:{}", lineno + 1),
                    format!("row {}, column {}: non-finite value '{field}'", rows.len() + 1, col + 1),
                ));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(DsscError::parse(
                    format!("{source}:{}", lineno + 1),
                    format!("ragged row: {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DsscError::parse(source, "no data rows"));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// CSV text of a dense matrix, shortest round-trip decimals.
pub fn format_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_bin(bytes: &[u8], source: &str) -> Result<DMatrix<f64>> {
    if bytes.len() < BIN_HEADER_LEN {
        return Err(DsscError::parse(source, "file shorter than the 16-byte header"));
    }
    if &bytes[..4] != BIN_MAGIC {
        return Err(DsscError::parse(source, "magic mismatch (expected \"DSSC\")"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    if word(12) != 0 {
        return Err(DsscError::parse(source, "reserved header bytes must be zero"));
    }
    let body = &bytes[BIN_HEADER_LEN..];
    let expected = rows.checked_mul(cols).and_then(|v| v.checked_mul(8));
    if expected != Some(body.len()) {
        return Err(DsscError::parse(
            source,
            format!("{rows} x {cols} header but {} payload bytes", body.len()),
        ));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (k, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        let (i, j) = (k / cols, k % cols);
        if !v.is_finite() {
            return Err(DsscError::parse(source, format!("row {}, column {}: non-finite value", i + 1, j + 1)));
        }
        m[(i, j)] = v;
    }
    Ok(m)
}

pub fn format_bin(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| DsscError::invalid(format!("dimension {v} exceeds u32")));
    let mut out = Vec::with_capacity(BIN_HEADER_LEN + 8 * m.len());
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&dim(m.nrows())?.to_le_bytes());
    out.extend_from_slice(&dim(m.ncols())?.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

/// A dense matrix in file orientation.
pub fn read_dense(path: &Path, format: MatrixFormat) -> Result<DMatrix<f64>> {
    let bytes = read_file(path)?;
    let source = path.display().to_string();
    match format {
        MatrixFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|_| DsscError::parse(&source, "not UTF-8 text"))?;
            parse_csv(&text, &source)
        }
        MatrixFormat::Bin => parse_bin(&bytes, &source),
    }
}

pub fn write_dense(path: &Path, m: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => write_file(path, format_csv(m).as_bytes()),
        MatrixFormat::Bin => write_file(path, &format_bin(m)?),
    }
}

/// Reads a data matrix. Files hold one point per row unless `transpose`,
/// in which case rows are dimensions.
pub fn read_matrix(path: &Path, format: MatrixFormat, transpose: bool) -> Result<DataMatrix> {
    let m = read_dense(path, format)?;
    DataMatrix::new(if transpose { m } else { m.transpose() })
}

/// Writes a data matrix with one point per row.
pub fn write_matrix(path: &Path, x: &DataMatrix, format: MatrixFormat) -> Result<()> {
    write_dense(path, &x.values().transpose(), format)
}

/// Parses `# n=<N>` followed by `i,j,value` lines.
pub fn parse_sparse(text: &str, source: &str) -> Result<CsrMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| DsscError::parse(source, "empty file; expected a '# n=<N>' dimension line"))?;
    let n: usize = header
        .trim()
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|h| h.strip_prefix("n="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| DsscError::parse(format!("{source}:1"), "first line must be '# n=<N>'"))?;
    let mut triplets = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let loc = || format!("{source}:{}", lineno + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(DsscError::parse(loc(), format!("expected 'i,j,value', got '{line}'")));
        }
        let i: usize = fields[0].parse().map_err(|_| DsscError::parse(loc(), format!("bad row index '{}'", fields[0])))?;
        let j: usize = fields[1].parse().map_err(|_| DsscError::parse(loc(), format!("bad column index '{}'", fields[1])))?;
        let v: f64 = fields[2].parse().map_err(|_| DsscError::parse(loc(), format!("bad value '{}'", fields[2])))?;
        if !v.is_finite() {
            return Err(DsscError::parse(loc(), format!("non-finite value '{}'", fields[2])));
        }
        if i >= n || j >= n {
            return Err(DsscError::parse(loc(), format!("index ({i}, {j}) out of range for n = {n}")));
        }
        triplets.push((i, j, v));
    }
    CsrMatrix::from_triplets(n, n, &triplets).map_err(|e| DsscError::parse(source, e.to_string()))
}

/// Row-major triplets after the dimension line.
pub fn format_sparse(m: &CsrMatrix) -> String {
    let mut out = format!("# n={}\n", m.nrows());
    for (i, j, v) in m.iter() {
        out.push_str(&format!("{i},{j},{v}\n"));
    }
    out
}

pub fn read_sparse_affinity(path: &Path) -> Result<CsrMatrix> {
    let bytes = read_file(path)?;
    let source = path.display().to_string();
    let text = String::from_utf8(bytes).map_err(|_| DsscError::parse(&source, "not UTF-8 text"))?;
    parse_sparse(&text, &source)
}

pub fn write_sparse_affinity(path: &Path, m: &CsrMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(DsscError::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    write_file(path, format_sparse(m).as_bytes())
}

pub fn parse_labels(text: &str, source: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: i64 = line
            .parse()
            .map_err(|_| DsscError::parse(format!("{source}:{}", lineno + 1), format!("not an integer: '{line}'")))?;
        let v = usize::try_from(v)
            .map_err(|_| DsscError::parse(format!("{source}:{}", lineno + 1), format!("negative label {v}")))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(DsscError::parse(source, "no labels"));
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let source = path.display().to_string();
    let text = String::from_utf8(bytes).map_err(|_| DsscError::parse(&source, "not UTF-8 text"))?;
    parse_labels(&text, &source)
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    write_file(path, format_labels(labels).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Jdssc,
    Adssc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Jdssc => "jdssc",
            Method::Adssc => "adssc",
        })
    }
}

impl FromStr for Method {
    type Err = DsscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jdssc" => Ok(Method::Jdssc),
            "adssc" => Ok(Method::Adssc),
            _ => Err(DsscError::invalid(format!("unknown method '{s}' (expected jdssc or adssc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    LsrDense,
    LsrWoodbury,
    Ensc,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::LsrDense => "lsr_dense",
            Backend::LsrWoodbury => "lsr_woodbury",
            Backend::Ensc => "ensc",
        })
    }
}

impl FromStr for Backend {
    type Err = DsscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsr_dense" => Ok(Backend::LsrDense),
            "lsr_woodbury" => Ok(Backend::LsrWoodbury),
            "ensc" => Ok(Backend::Ensc),
            _ => Err(DsscError::invalid(format!(
                "unknown backend '{s}' (expected lsr_dense, lsr_woodbury or ensc)"
            ))),
        }
    }
}

/// Projection solver choice; `auto` is the full dual up to
/// [`AUTO_DUAL_MAX_N`] points and the active set above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionChoice {
    Auto,
    Dual,
    ActiveSet,
    Altproj,
}

pub const AUTO_DUAL_MAX_N: usize = 3000;

impl ProjectionChoice {
    pub fn resolve(self, n: usize) -> ProjectionMethod {
        match self {
            ProjectionChoice::Auto if n <= AUTO_DUAL_MAX_N => ProjectionMethod::Dual,
            ProjectionChoice::Auto => ProjectionMethod::ActiveSet,
            ProjectionChoice::Dual => ProjectionMethod::Dual,
            ProjectionChoice::ActiveSet => ProjectionMethod::ActiveSet,
            ProjectionChoice::Altproj => ProjectionMethod::AltProj,
        }
    }
}

impl FromStr for ProjectionChoice {
    type Err = DsscError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(ProjectionChoice::Auto);
        }
        Ok(match s.parse::<ProjectionMethod>()? {
            ProjectionMethod::Dual => ProjectionChoice::Dual,
            ProjectionMethod::ActiveSet => ProjectionChoice::ActiveSet,
            ProjectionMethod::AltProj => ProjectionChoice::Altproj,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub name: Method,
    pub backend: Backend,
    pub projection: ProjectionChoice,
    /// Joint-model iteration cap.
    pub max_iter: usize,
    /// Joint-model residual tolerance (default `1e-5·√n`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection {
            name: Method::Adssc,
            backend: Backend::LsrWoodbury,
            projection: ProjectionChoice::Auto,
            max_iter: 20_000,
            tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportSection {
    pub k_top: usize,
    pub n_perms: usize,
    pub seed: u64,
    pub include_diagonal: bool,
}

impl Default for SupportSection {
    fn default() -> Self {
        let s = SupportInit::default();
        SupportSection {
            k_top: s.k_top,
            n_perms: s.n_perms,
            seed: s.seed,
            include_diagonal: s.include_diagonal,
        }
    }
}

impl SupportSection {
    pub fn to_init(self) -> SupportInit {
        SupportInit {
            k_top: self.k_top,
            n_perms: self.n_perms,
            seed: self.seed,
            include_diagonal: self.include_diagonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub restarts: usize,
    pub extra_vec: bool,
    pub seed: u64,
    pub laplacian: String,
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            restarts: 16,
            extra_vec: false,
            seed: 0,
            laplacian: "auto".into(),
        }
    }
}

impl SpectralSection {
    pub fn laplacian_mode(&self) -> Result<LaplacianMode> {
        self.laplacian.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub format: MatrixFormat,
    pub transpose: bool,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            data: None,
            labels: None,
            out_dir: None,
            format: MatrixFormat::Csv,
            transpose: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: MethodSection,
    pub params: DsscParams,
    pub support: SupportSection,
    pub spectral: SpectralSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: MethodSection::default(),
            params: DsscParams::default(),
            support: SupportSection::default(),
            spectral: SpectralSection::default(),
            io: IoSection::default(),
        }
    }
}

/// One row of the published parameter table.
struct PresetRow {
    name: &'static str,
    k: usize,
    jdssc: Option<(f64, f64, f64)>,
    adssc: (f64, f64, f64),
}

const PRESET_TABLE: &[PresetRow] = &[
    PresetRow { name: "yaleb", k: 38, jdssc: Some((0.25, 0.2, 0.0)), adssc: (0.5, 0.1, 0.0) },
    PresetRow { name: "coil40", k: 40, jdssc: Some((25.0, 0.01, 0.1)), adssc: (25.0, 0.001, 0.0) },
    PresetRow { name: "coil40-scattered", k: 40, jdssc: Some((0.25, 0.2, 0.0)), adssc: (50.0, 0.001, 0.0) },
    PresetRow { name: "coil100", k: 100, jdssc: Some((25.0, 0.01, 0.1)), adssc: (50.0, 0.0005, 0.0) },
    PresetRow { name: "coil100-scattered", k: 100, jdssc: Some((0.25, 0.1, 0.0)), adssc: (0.1, 0.025, 0.0) },
    PresetRow { name: "umist", k: 20, jdssc: Some((1.0, 0.05, 0.0)), adssc: (0.5, 0.05, 0.0) },
    PresetRow { name: "umist-scattered", k: 20, jdssc: Some((0.01, 0.2, 0.0)), adssc: (0.5, 0.01, 0.0) },
    PresetRow { name: "orl", k: 40, jdssc: Some((1.0, 0.1, 0.1)), adssc: (1.0, 0.05, 0.0) },
    PresetRow { name: "mnist-scattered", k: 10, jdssc: None, adssc: (10.0, 0.001, 0.0) },
    PresetRow { name: "emnist-scattered", k: 26, jdssc: None, adssc: (50.0, 0.001, 0.0) },
];

/// Names accepted by [`preset`], e.g. `yaleb-jdssc` or `mnist-scattered-adssc`.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for row in PRESET_TABLE {
        if row.jdssc.is_some() {
            out.push(format!("{}-jdssc", row.name));
        }
        out.push(format!("{}-adssc", row.name));
    }
    out
}

/// A configuration populated from a named preset.
pub fn preset(name: &str) -> Result<RunConfig> {
    let unknown = || DsscError::invalid(format!("unknown preset '{name}' (known: {})", preset_names().join(", ")));
    let (dataset, method) = name.rsplit_once('-').ok_or_else(unknown)?;
    let row = PRESET_TABLE.iter().find(|r| r.name == dataset).ok_or_else(unknown)?;
    let (method, (eta1, eta2, eta3)) = match method {
        "jdssc" => (Method::Jdssc, row.jdssc.ok_or_else(unknown)?),
        "adssc" => (Method::Adssc, row.adssc),
        _ => return Err(unknown()),
    };
    let mut cfg = RunConfig::default();
    cfg.method.name = method;
    cfg.params = DsscParams::new(eta1, eta2, eta3, row.k);
    if method == Method::Adssc && eta3 > 0.0 {
        cfg.method.backend = Backend::Ensc;
    }
    Ok(cfg)
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Parses configuration text over an optional preset. Keys present in the
/// text override the preset; absent keys keep their defaults.
pub fn parse_config(text: &str, preset_name: Option<&str>, source: &str) -> Result<RunConfig> {
    let over: toml::Table = toml::from_str(text).map_err(|e| DsscError::parse(source, e.to_string()))?;
    let base = match preset_name {
        Some(name) => preset(name)?,
        None => RunConfig::default(),
    };
    let mut table = toml::Table::try_from(&base).map_err(|e| DsscError::parse(source, e.to_string()))?;
    merge_tables(&mut table, over);
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| DsscError::parse(source, e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a configuration file (see [`parse_config`]) and checks that the
/// files it references exist.
pub fn load_config(path: &Path, preset_name: Option<&str>) -> Result<RunConfig> {
    let bytes = read_file(path)?;
    let source = path.display().to_string();
    let text = String::from_utf8(bytes).map_err(|_| DsscError::parse(&source, "not UTF-8 text"))?;
    let cfg = parse_config(&text, preset_name, &source)?;
    cfg.check_files()?;
    Ok(cfg)
}

impl RunConfig {
    /// Parameter, section and compatibility checks.
    pub fn validate(&self) -> Result<()> {
        self.params.validate(None)?;
        self.spectral.laplacian_mode()?;
        if self.spectral.restarts == 0 {
            return Err(DsscError::invalid("spectral.restarts must be >= 1"));
        }
        if self.method.max_iter == 0 {
            return Err(DsscError::invalid("method.max_iter must be >= 1"));
        }
        if let Some(t) = self.method.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(DsscError::invalid(format!("method.tol must be > 0, got {t}")));
            }
        }
        if self.method.name == Method::Adssc
            && self.method.backend == Backend::LsrWoodbury
            && self.method.projection != ProjectionChoice::Dual
            && self.support.k_top == 0
            && self.support.n_perms == 0
        {
            return Err(DsscError::invalid(
                "lsr_woodbury needs an initial support: set support.k_top or support.n_perms",
            ));
        }
        Ok(())
    }

    /// Referenced input files must exist.
    pub fn check_files(&self) -> Result<()> {
        for path in [&self.io.data, &self.io.labels].into_iter().flatten() {
            if !path.exists() {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{}: referenced file does not exist", path.display()),
                )
                .into());
            }
        }
        Ok(())
    }

    /// TOML text that [`parse_config`] reads back to an equal value.
    pub fn dump(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DsscError::invalid(format!("cannot serialize config: {e}")))
    }
}

/// Worker count from `DSSC_THREADS` (unset or 0 means all cores).
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("DSSC_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| DsscError::invalid(format!("DSSC_THREADS must be a non-negative integer, got '{v}'")))?;
            Ok((n > 0).then_some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Sizes the global thread pool from `DSSC_THREADS`. Returns the worker
/// count in effect.
pub fn configure_threads() -> Result<usize> {
    if let Some(n) = threads_from_env()? {
        // Fails only if a pool was already built; the existing one is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csv_points_become_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1,2\n3,4\n5,6\n").unwrap();
        let x = read_matrix(&p, MatrixFormat::Csv, false).unwrap();
        assert_eq!((x.dim(), x.n_points()), (2, 3));
        assert_eq!(x.values()[(1, 2)], 6.0);
        let t = read_matrix(&p, MatrixFormat::Csv, true).unwrap();
        assert_eq!((t.dim(), t.n_points()), (3, 2));
    }

    #[test]
    fn csv_errors_name_the_location() {
        let e = parse_csv("1,2\n3,nan\n", "x.csv").unwrap_err().to_string();
        assert!(e.contains("x.csv:2") && e.contains("column 2"), "{e}");
        let e = parse_csv("1,2\n3\n", "x.csv").unwrap_err().to_string();
        assert!(e.contains("ragged"), "{e}");
        assert!(parse_csv("", "x.csv").is_err());
    }

    #[test]
    fn bin_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(7, 11, |_, _| rng.random::<f64>() * 1e3 - 500.0);
        let x = DataMatrix::new(m.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_matrix(&p, &x, MatrixFormat::Bin).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"DSSC");
        assert_eq!(bytes.len(), 16 + 8 * 77);
        let y = read_matrix(&p, MatrixFormat::Bin, false).unwrap();
        for (a, b) in x.values().iter().zip(y.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // CSV keeps values exactly too.
        let q = dir.path().join("x.csv");
        write_matrix(&q, &x, MatrixFormat::Csv).unwrap();
        assert_eq!(read_matrix(&q, MatrixFormat::Csv, false).unwrap().values(), x.values());
    }

    #[test]
    fn bin_rejects_bad_magic() {
        let mut bytes = format_bin(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        bytes[0] = b'X';
        assert!(parse_bin(&bytes, "f").unwrap_err().to_string().contains("magic"));
        let bytes = format_bin(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(parse_bin(&bytes[..bytes.len() - 1], "f").is_err());
    }

    #[test]
    fn sparse_identity_format() {
        let text = format_sparse(&CsrMatrix::identity(2));
        assert_eq!(text, "# n=2\n0,0,1\n1,1,1\n");
        assert_eq!(parse_sparse(&text, "s").unwrap(), CsrMatrix::identity(2));
    }

    #[test]
    fn sparse_errors() {
        assert!(parse_sparse("", "s").is_err());
        assert!(parse_sparse("0,0,1\n", "s").is_err());
        assert!(parse_sparse("# n=2\n0,2,1\n", "s").unwrap_err().to_string().contains("out of range"));
        assert!(parse_sparse("# n=2\n0,1,1\n0,1,2\n", "s").is_err());
    }

    #[test]
    fn sparse_random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                if rng.random::<f64>() < 0.2 {
                    t.push((i, j, rng.random::<f64>() / 3.0));
                }
            }
        }
        let m = CsrMatrix::from_triplets(30, 30, &t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_sparse_affinity(&p, &m).unwrap();
        assert_eq!(read_sparse_affinity(&p).unwrap(), m);
        // Deterministic bytes.
        let q = dir.path().join("b.csv");
        write_sparse_affinity(&q, &m).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn labels_round_trip() {
        let l = vec![0, 3, 1, 1, 2];
        assert_eq!(parse_labels(&format_labels(&l), "l").unwrap(), l);
        assert!(parse_labels("1\n-1\n", "l").is_err());
        assert!(parse_labels("1\nx\n", "l").is_err());
    }

    #[test]
    fn preset_populates_published_parameters() {
        let cfg = parse_config("", Some("yaleb-jdssc"), "c").unwrap();
        assert_eq!(cfg.method.name, Method::Jdssc);
        assert_eq!((cfg.params.eta1, cfg.params.eta2, cfg.params.eta3), (0.25, 0.2, 0.0));
        let cfg = parse_config("", Some("mnist-scattered-adssc"), "c").unwrap();
        assert_eq!((cfg.params.eta1, cfg.params.eta2, cfg.params.eta3), (10.0, 0.001, 0.0));
        assert!(preset("mnist-scattered-jdssc").is_err());
        for name in preset_names() {
            preset(&name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn file_keys_override_preset() {
        let cfg = parse_config("[params]\neta2 = 0.3\n", Some("umist-adssc"), "c").unwrap();
        assert_eq!((cfg.params.eta1, cfg.params.eta2, cfg.params.k), (0.5, 0.3, 20));
    }

    #[test]
    fn config_validation() {
        let e = parse_config("[params]\neta2 = -1\n", None, "c").unwrap_err();
        assert!(e.to_string().contains("eta2"));
        assert!(parse_config("[params]\neta4 = 1\n", None, "c").is_err());
        assert!(parse_config("[bogus]\n", None, "c").is_err());
        assert!(parse_config("[params]\neta1 = \"x\"\n", None, "c").is_err());
        assert!(parse_config("[spectral]\nlaplacian = \"weird\"\n", None, "c").is_err());
    }

    #[test]
    fn config_dump_round_trip() {
        let mut cfg = preset("coil100-jdssc").unwrap();
        cfg.method.tol = Some(1e-6);
        cfg.support.seed = 99;
        cfg.spectral.extra_vec = true;
        cfg.io.out_dir = Some(PathBuf::from("out"));
        let text = cfg.dump().unwrap();
        assert_eq!(parse_config(&text, None, "c").unwrap(), cfg);
    }

    #[test]
    fn missing_data_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[io]\ndata = \"/nonexistent/x.csv\"\n").unwrap();
        assert!(matches!(load_config(&p, None), Err(DsscError::Io(_))));
    }
}
