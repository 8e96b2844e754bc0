use std::path::Path;

use serde::Serialize;

use crate::CliResult;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub seed: u64,
    pub crystal: &'a str,
    #[serde(flatten)]
    pub body: T,
}

impl<'a, T: Serialize> Report<'a, T> {
    pub fn new(command: &'a str, seed: u64, crystal: &'a str, body: T) -> Self {
        Report { schema_version: SCHEMA_VERSION, command, seed, crystal, body }
    }
}

/// Write pretty JSON to `path`, or to stdout.
pub fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(multilattice::Error::from)?;
    match path {
        Some(p) => {
            ensure_parent(p)?;
            std::fs::write(p, text + "\n").map_err(multilattice::Error::from)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(multilattice::Error::from)?;
    }
    Ok(())
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| crate::CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn csv_error(e: csv::Error) -> crate::CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => multilattice::Error::from(io).into(),
        other => crate::CliError::Usage(format!("csv: {other:?}")),
    }
}
