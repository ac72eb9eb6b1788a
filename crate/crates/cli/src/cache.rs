//! On-disk spectrum cache.
//!
//! One file per entry, named by the hex key. Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `DICKESPC` |
//! | 4     | format version (u32) |
//! | 32    | key (sha256) |
//! | 4     | kind: 0 eigenvalues only, 1 eigenvalues and eigenvectors (u32) |
//! | 4     | subspace: 0 full, 1 plus, 2 minus (u32) |
//! | 32    | model fingerprint |
//! | 8     | rows (u64) |
//! | 8     | eigenvalue count (u64) |
//! | 8·count | eigenvalues (f64) |
//! | 8·rows·count | eigenvectors, column-major (f64), kind 1 only |
//!
//! Writes go to a temporary file and are renamed into place.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use dicke::eigensolver::{DirectSolve, Spectrum, SpectrumSource, SOLVER_VERSION};
use dicke::hilbert::{Fingerprint, ModelParams, Sector, Subspace};
use dicke::{DickeError, Result};

const MAGIC: &[u8; 8] = b"DICKESPC";
const FORMAT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 32 + 4 + 4 + 32 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Values = 0,
    Vectors = 1,
}

/// sha256 over the model constants, sector, payload kind, solver name and
/// solver version.
pub fn cache_key(params: &ModelParams, subspace: Subspace, kind: Kind, solver: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"dicke-spectrum");
    h.update(params.omega.to_le_bytes());
    h.update(params.omega0.to_le_bytes());
    h.update(params.lambda.to_le_bytes());
    h.update(params.n_atoms.to_le_bytes());
    h.update(params.n_max.to_le_bytes());
    h.update(subspace_code(subspace).to_le_bytes());
    h.update((kind as u32).to_le_bytes());
    h.update((solver.len() as u64).to_le_bytes());
    h.update(solver.as_bytes());
    h.update(SOLVER_VERSION.to_le_bytes());
    h.finalize().into()
}

fn subspace_code(s: Subspace) -> u32 {
    match s {
        Subspace::Full => 0,
        Subspace::Parity(Sector::Plus) => 1,
        Subspace::Parity(Sector::Minus) => 2,
    }
}

fn subspace_from(code: u32) -> Option<Subspace> {
    match code {
        0 => Some(Subspace::Full),
        1 => Some(Subspace::Parity(Sector::Plus)),
        2 => Some(Subspace::Parity(Sector::Minus)),
        _ => None,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Decoded cache payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: [u8; 32],
    pub subspace: Subspace,
    pub fingerprint: Fingerprint,
    pub eigenvalues: Vec<f64>,
    /// Present for [`Kind::Vectors`].
    pub eigenvectors: Option<DMatrix<f64>>,
}

pub fn encode(e: &Entry) -> Vec<u8> {
    let count = e.eigenvalues.len();
    let rows = e.eigenvectors.as_ref().map_or(0, |m| m.nrows());
    let kind = if e.eigenvectors.is_some() {
        Kind::Vectors
    } else {
        Kind::Values
    };
    let mut out = Vec::with_capacity(HEADER + 8 * count * (1 + rows));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&e.key);
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&subspace_code(e.subspace).to_le_bytes());
    out.extend_from_slice(&e.fingerprint.0);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for v in &e.eigenvalues {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(m) = &e.eigenvectors {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Why a cache file could not be used.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeError {
    /// Truncated, wrong magic, bad sizes: recompute.
    Corrupt(String),
    /// Well-formed entry for a different key.
    KeyMismatch,
}

fn take<const N: usize>(b: &[u8], at: &mut usize) -> [u8; N] {
    let out = b[*at..*at + N].try_into().expect("length checked");
    *at += N;
    out
}

pub fn decode(bytes: &[u8], expected_key: &[u8; 32]) -> std::result::Result<Entry, DecodeError> {
    let corrupt = |m: &str| DecodeError::Corrupt(m.to_owned());
    if bytes.len() < HEADER {
        return Err(corrupt("shorter than the header"));
    }
    let mut at = 0;
    if &take::<8>(bytes, &mut at) != MAGIC {
        return Err(corrupt("bad magic"));
    }
    if u32::from_le_bytes(take(bytes, &mut at)) != FORMAT_VERSION {
        return Err(corrupt("unsupported format version"));
    }
    let key: [u8; 32] = take(bytes, &mut at);
    let kind = u32::from_le_bytes(take(bytes, &mut at));
    let subspace = subspace_from(u32::from_le_bytes(take(bytes, &mut at)))
        .ok_or_else(|| corrupt("bad subspace"))?;
    let fingerprint = Fingerprint(take(bytes, &mut at));
    let rows = u64::from_le_bytes(take(bytes, &mut at)) as usize;
    let count = u64::from_le_bytes(take(bytes, &mut at)) as usize;
    let floats = match kind {
        0 if rows == 0 => Some(count),
        1 => count.checked_mul(rows).and_then(|x| x.checked_add(count)),
        _ => return Err(corrupt("bad kind")),
    }
    .ok_or_else(|| corrupt("size overflow"))?;
    if floats.checked_mul(8).and_then(|x| x.checked_add(HEADER)) != Some(bytes.len()) {
        return Err(corrupt("payload length does not match the header"));
    }
    if &key != expected_key {
        return Err(DecodeError::KeyMismatch);
    }
    let mut read = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| f64::from_le_bytes(take(bytes, &mut at)))
            .collect()
    };
    let eigenvalues = read(count);
    let eigenvectors = (kind == 1).then(|| DMatrix::from_vec(rows, count, read(rows * count)));
    Ok(Entry {
        key,
        subspace,
        fingerprint,
        eigenvalues,
        eigenvectors,
    })
}

/// A [`SpectrumSource`] that consults the cache directory before solving.
pub struct SpectrumCache {
    dir: PathBuf,
    inner: DirectSolve,
    solves: AtomicUsize,
    hits: AtomicUsize,
    warnings: std::sync::Mutex<Vec<String>>,
}

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>, inner: DirectSolve) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            inner,
            solves: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            warnings: Default::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Eigensolver invocations so far.
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().expect("warning lock").clone()
    }

    pub fn path_for(&self, key: &[u8; 32]) -> PathBuf {
        self.dir.join(format!("{}.spec", hex(key)))
    }

    fn io_err(&self, what: &str, path: &Path, e: std::io::Error) -> DickeError {
        DickeError::Storage(format!("cache {what} {}: {e}", path.display()))
    }

    fn lookup(&self, key: &[u8; 32]) -> Result<Option<Entry>> {
        let path = self.path_for(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(self.io_err("read", &path, e)),
        };
        match decode(&bytes, key) {
            Ok(e) => Ok(Some(e)),
            Err(DecodeError::KeyMismatch) => Err(DickeError::Storage(format!(
                "cache entry {} holds a different key",
                path.display()
            ))),
            Err(DecodeError::Corrupt(why)) => {
                let msg = format!(
                    "warning: corrupt cache entry {} ({why}); recomputing",
                    path.display()
                );
                eprintln!("{msg}");
                self.warnings.lock().expect("warning lock").push(msg);
                Ok(None)
            }
        }
    }

    fn store(&self, entry: &Entry) -> Result<()> {
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let path = self.path_for(&entry.key);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            hex(&entry.key),
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, encode(entry)).map_err(|e| self.io_err("write", &tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| self.io_err("rename", &path, e))
    }

    fn checked(&self, entry: Entry, params: &ModelParams, subspace: Subspace) -> Result<Entry> {
        if entry.subspace != subspace || entry.fingerprint != params.fingerprint() {
            return Err(DickeError::Storage(
                "cache entry header disagrees with its key".into(),
            ));
        }
        Ok(entry)
    }
}

impl SpectrumSource for SpectrumCache {
    fn spectrum(&self, params: &ModelParams, subspace: Subspace) -> Result<Spectrum> {
        let key = cache_key(params, subspace, Kind::Vectors, self.inner.vectors.name());
        if let Some(e) = self.lookup(&key)? {
            if let Some(vectors) = e.eigenvectors.clone() {
                let e = self.checked(e, params, subspace)?;
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Spectrum {
                    eigenvalues: e.eigenvalues,
                    eigenvectors: vectors,
                    subspace,
                    fingerprint: e.fingerprint,
                });
            }
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        let s = self.inner.spectrum(params, subspace)?;
        self.store(&Entry {
            key,
            subspace,
            fingerprint: s.fingerprint,
            eigenvalues: s.eigenvalues.clone(),
            eigenvectors: Some(s.eigenvectors.clone()),
        })?;
        Ok(s)
    }

    fn eigenvalues(&self, params: &ModelParams, subspace: Subspace) -> Result<Vec<f64>> {
        let key = cache_key(params, subspace, Kind::Values, self.inner.values.name());
        if let Some(e) = self.lookup(&key)? {
            let e = self.checked(e, params, subspace)?;
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(e.eigenvalues);
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        let values = self.inner.eigenvalues(params, subspace)?;
        self.store(&Entry {
            key,
            subspace,
            fingerprint: params.fingerprint(),
            eigenvalues: values.clone(),
            eigenvectors: None,
        })?;
        Ok(values)
    }
}
