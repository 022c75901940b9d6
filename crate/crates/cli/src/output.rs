//! Error mapping, run manifests and file output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// A config or input file could not be read.
    Input { path: PathBuf, source: std::io::Error },
    /// An input file was readable but malformed.
    Data { path: PathBuf, message: String },
    /// Malformed invocation detected after argument parsing.
    Usage(String),
    /// Writing outputs failed.
    Output { path: PathBuf, message: String },
    Core(nlfb::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            CliError::Data { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Output { path, message } => write!(f, "cannot write {}: {message}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<nlfb::Error> for CliError {
    fn from(e: nlfb::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input { .. } => 66,
            CliError::Data { .. } => 65,
            CliError::Usage(_) => 64,
            CliError::Output { .. } => 2,
            CliError::Core(e) if e.is_model_input() => 1,
            CliError::Core(_) => 2,
        }
    }

    pub fn output(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Serialize)]
pub struct KernelInfo {
    pub label: String,
    pub hash: String,
}

impl KernelInfo {
    pub fn of(k: &nlfb::RadialKernel) -> Self {
        Self {
            label: k.label(),
            hash: format!("{:016x}", k.hash64()),
        }
    }
}

/// Provenance record written next to every set of output files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_file: Option<PathBuf>,
    pub config_echo: BTreeMap<String, String>,
    pub kernel: Option<KernelInfo>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, config_file: Option<&Path>, config: Option<&nlfb::Config>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_file: config_file.map(Path::to_path_buf),
            config_echo: config.map(|c| c.entries().clone()).unwrap_or_default(),
            kernel: None,
            started: now(),
            finished: String::new(),
            outputs: Vec::new(),
        }
    }

    /// Stamps the finish time and writes the manifest to `path`; every
    /// listed output must exist.
    pub fn finish(mut self, path: &Path) -> CliResult<()> {
        if let Some(missing) = self.outputs.iter().find(|p| !p.exists()) {
            return Err(CliError::output(missing, "listed output is missing"));
        }
        self.finished = now();
        write_json(path, &self)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::output(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::output(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::output(path, e))
}

pub fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::output(Path::new("<stdout>"), e))?;
    println!("{s}");
    Ok(())
}

/// Headerless CSV to `path`, or to stdout when `path` is `None`; callers
/// write the header row so empty tables still carry one.
pub fn csv_writer(path: Option<&Path>) -> CliResult<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(sink))
}

/// `<file>.manifest.json` beside a single output file.
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
