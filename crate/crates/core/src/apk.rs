//! Reading Dalvik executables out of APK (ZIP) containers.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use thiserror::Error;
use zip::result::ZipError;
use zip::ZipArchive;

use crate::dex::{self, DexError, ExtractOptions, HEADER_SIZE};
use crate::sequence::OpcodeSequence;

#[derive(Debug, Error)]
pub enum ApkError {
    #[error("{0}: not a ZIP archive")]
    NotAnArchive(PathBuf),
    #[error("{archive}: no entry named `{entry}`")]
    EntryNotFound { archive: PathBuf, entry: String },
    #[error("{archive}: corrupt entry `{entry}`: {reason}")]
    CorruptEntry {
        archive: PathBuf,
        entry: String,
        reason: String,
    },
    #[error("{archive}: `{entry}` is {len} bytes, too small to be a DEX file")]
    NotDex { archive: PathBuf, entry: String, len: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryInfo {
    pub name: String,
    pub compressed_size: u64,
    pub uncompressed_size: u64,
}

/// Central directory listing of an archive. Reading entries reopens the file,
/// so a handle is cheap to keep around and never holds a descriptor.
#[derive(Debug, Clone)]
pub struct ApkArchive {
    pub path: PathBuf,
    pub entries: Vec<EntryInfo>,
}

/// Raw bytes of one `classes*.dex` entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexBlob {
    /// `archive!entry`, or the plain path for bare DEX files.
    pub source: String,
    pub bytes: Vec<u8>,
    /// 1 for `classes.dex`, N for `classesN.dex`.
    pub ordinal: u32,
}

/// Ordinal of a top-level multidex entry name.
pub fn dex_ordinal(name: &str) -> Option<u32> {
    let middle = name.strip_prefix("classes")?.strip_suffix(".dex")?;
    if middle.is_empty() {
        return Some(1);
    }
    if middle.starts_with('0') || !middle.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    middle.parse().ok().filter(|&n| n >= 2)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ApkError + '_ {
    move |source| ApkError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn starts_like_zip(path: &Path) -> bool {
    let mut sig = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut sig))
        .map(|_| &sig[..2] == b"PK")
        .unwrap_or(false)
}

fn open_zip(path: &Path) -> Result<ZipArchive<File>, ApkError> {
    let file = File::open(path).map_err(io_err(path))?;
    ZipArchive::new(file).map_err(|e| match e {
        ZipError::Io(source) if source.kind() != io::ErrorKind::UnexpectedEof => ApkError::Io {
            path: path.to_path_buf(),
            source,
        },
        // A local file header signature with an unreadable central directory
        // means the archive was cut short or damaged, not that it is some
        // other kind of file.
        other if starts_like_zip(path) => ApkError::CorruptEntry {
            archive: path.to_path_buf(),
            entry: "<central directory>".into(),
            reason: other.to_string(),
        },
        _ => ApkError::NotAnArchive(path.to_path_buf()),
    })
}

impl ApkArchive {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ApkError> {
        let path = path.as_ref();
        let mut zip = open_zip(path)?;
        let mut entries = Vec::with_capacity(zip.len());
        for i in 0..zip.len() {
            let f = zip.by_index_raw(i).map_err(|e| ApkError::CorruptEntry {
                archive: path.to_path_buf(),
                entry: format!("#{i}"),
                reason: e.to_string(),
            })?;
            entries.push(EntryInfo {
                name: f.name().to_string(),
                compressed_size: f.compressed_size(),
                uncompressed_size: f.size(),
            });
        }
        Ok(ApkArchive {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// `classes.dex`, `classes2.dex`, ... sorted by ordinal.
    pub fn dex_entries(&self) -> Vec<String> {
        let mut found: Vec<(u32, &str)> = self
            .entries
            .iter()
            .filter_map(|e| dex_ordinal(&e.name).map(|n| (n, e.name.as_str())))
            .collect();
        found.sort_unstable();
        found.into_iter().map(|(_, name)| name.to_string()).collect()
    }

    /// Decompresses one entry, checking its CRC and declared size.
    pub fn read_dex(&self, entry: &str) -> Result<DexBlob, ApkError> {
        let corrupt = |reason: String| ApkError::CorruptEntry {
            archive: self.path.clone(),
            entry: entry.to_string(),
            reason,
        };
        let mut zip = open_zip(&self.path)?;
        let mut file = match zip.by_name(entry) {
            Ok(f) => f,
            Err(ZipError::FileNotFound) => {
                return Err(ApkError::EntryNotFound {
                    archive: self.path.clone(),
                    entry: entry.to_string(),
                })
            }
            Err(e) => return Err(corrupt(e.to_string())),
        };
        let declared = file.size();
        let mut bytes = Vec::with_capacity(declared.min(1 << 28) as usize);
        // The reader validates the CRC-32 once it reaches the end of the entry.
        file.read_to_end(&mut bytes).map_err(|e| corrupt(e.to_string()))?;
        if bytes.len() as u64 != declared {
            return Err(corrupt(format!(
                "decompressed {} bytes, central directory declares {declared}",
                bytes.len()
            )));
        }
        if bytes.len() < HEADER_SIZE {
            return Err(ApkError::NotDex {
                archive: self.path.clone(),
                entry: entry.to_string(),
                len: bytes.len(),
            });
        }
        Ok(DexBlob {
            source: format!("{}!{}", self.path.display(), entry),
            bytes,
            ordinal: dex_ordinal(entry).unwrap_or(1),
        })
    }
}

/// Names of the DEX entries in an archive, sorted by ordinal.
pub fn list_dex_entries(apk_path: impl AsRef<Path>) -> Result<Vec<String>, ApkError> {
    Ok(ApkArchive::open(apk_path)?.dex_entries())
}

pub fn read_dex_blob(apk_path: impl AsRef<Path>, entry: &str) -> Result<DexBlob, ApkError> {
    ApkArchive::open(apk_path)?.read_dex(entry)
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Apk(#[from] ApkError),
    #[error("{source_name}: {error}")]
    Dex {
        source_name: String,
        #[source]
        error: DexError,
    },
    #[error("{0}: archive contains no classes*.dex entries")]
    NoDex(PathBuf),
}

/// Whether a file starts with a DEX magic, which routes it past the archive
/// reader.
pub fn is_bare_dex(path: &Path) -> Result<bool, ApkError> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path).map_err(io_err(path))?;
    match f.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == b"dex\n"),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Opcode sequence of one application: a bare `.dex` file, or every
/// `classesN.dex` of an APK concatenated in ordinal order.
pub fn extract_application(path: &Path, opts: &ExtractOptions) -> Result<OpcodeSequence, ExtractError> {
    let source = path.display().to_string();
    if is_bare_dex(path)? {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        return dex::extract_opcode_sequence(&bytes, source.clone(), opts).map_err(|error| ExtractError::Dex {
            source_name: source,
            error,
        });
    }
    let archive = ApkArchive::open(path)?;
    let names = archive.dex_entries();
    if names.is_empty() {
        return Err(ExtractError::NoDex(path.to_path_buf()));
    }
    let mut out = OpcodeSequence::new(source, Vec::new());
    for name in names {
        let blob = archive.read_dex(&name)?;
        let seq = dex::extract_opcode_sequence(&blob.bytes, blob.source.clone(), opts).map_err(|error| {
            ExtractError::Dex {
                source_name: blob.source.clone(),
                error,
            }
        })?;
        out.extend(&seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinals() {
        assert_eq!(dex_ordinal("classes.dex"), Some(1));
        assert_eq!(dex_ordinal("classes2.dex"), Some(2));
        assert_eq!(dex_ordinal("classes17.dex"), Some(17));
        assert_eq!(dex_ordinal("classes1.dex"), None);
        assert_eq!(dex_ordinal("classes02.dex"), None);
        assert_eq!(dex_ordinal("lib/classes.dex"), None);
        assert_eq!(dex_ordinal("classes.dex.bak"), None);
        assert_eq!(dex_ordinal("resources.arsc"), None);
    }
}
