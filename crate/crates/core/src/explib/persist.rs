use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Experience, ExperienceLibrary, LibraryConfig};
use crate::error::{invalid, Result};

pub const LIBRARY_FORMAT: &str = "dualnav-library";
pub const LIBRARY_VERSION: u32 = 1;

/// First line of a library file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryHeader {
    pub format: String,
    pub version: u32,
    pub config: LibraryConfig,
}

pub fn write_library<W: Write>(mut w: W, lib: &ExperienceLibrary) -> Result<()> {
    let header = LibraryHeader {
        format: LIBRARY_FORMAT.into(),
        version: LIBRARY_VERSION,
        config: lib.config().clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for e in lib.entries() {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_library<R: BufRead>(r: R) -> Result<ExperienceLibrary> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let Some((_, first)) = lines.next() else {
        return Err(invalid("library file is empty"));
    };
    let header: LibraryHeader = serde_json::from_str(&first?)?;
    if header.format != LIBRARY_FORMAT || header.version != LIBRARY_VERSION {
        return Err(invalid(format!("unsupported library format {} v{}", header.format, header.version)));
    }
    let mut entries = Vec::new();
    for (n, line) in lines {
        let e: Experience = serde_json::from_str(&line?)
            .map_err(|err| invalid(format!("library line {}: {err}", n + 1)))?;
        entries.push(e);
    }
    ExperienceLibrary::from_entries(header.config, entries)
}

impl ExperienceLibrary {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_library(BufWriter::new(File::create(path)?), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_library(BufReader::new(File::open(path)?))
    }
}
