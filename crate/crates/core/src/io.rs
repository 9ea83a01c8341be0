//! Edge-list and embedding-table files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{NodeSpace, NodeType, Pair};
use crate::linalg::Matrix;

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Creates parent directories as needed.
pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Runs `body` against a buffered writer for `path` and flushes it.
pub(crate) fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses `<src>\t<dst>` lines; blank lines and `#` comments are skipped.
pub fn read_edge_list<R: BufRead>(r: R, path: &Path) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let mut fields = line.split('\t');
        let (Some(s), Some(d), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err("expected `<src>\\t<dst>`".into()));
        };
        let id = |f: &str| {
            f.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(format!("bad node id `{f}`")))
        };
        out.push((id(s)?, id(d)?));
    }
    Ok(out)
}

pub fn read_edge_file(path: &Path) -> Result<Vec<Pair>> {
    read_edge_list(open(path)?, path)
}

pub fn write_edge_list<W: Write>(mut w: W, pairs: &[Pair]) -> std::io::Result<()> {
    for (s, d) in pairs {
        writeln!(w, "{s}\t{d}")?;
    }
    Ok(())
}

/// Reads the `<node_type>\t<local_id>\t<d_0>...` format back into a
/// global-indexed matrix. Every node of `space` must appear exactly once.
pub fn read_embedding_tsv<R: BufRead>(r: R, path: &Path, space: NodeSpace) -> Result<Matrix> {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; space.total()];
    let mut dim = None;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let mut fields = line.split('\t');
        let ty: NodeType = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err("bad node type".into()))?;
        let local: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("bad node id".into()))?;
        if local >= space.count(ty) {
            return Err(parse_err(format!("{} id {local} out of range", ty.name())));
        }
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(format!("bad value `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(format!(
                    "expected {d} values, found {}",
                    values.len()
                )))
            }
            _ => {}
        }
        let slot = &mut rows[space.global(ty, local)];
        if slot.is_some() {
            return Err(parse_err(format!("duplicate {} {local}", ty.name())));
        }
        *slot = Some(values);
    }
    let dim = dim.unwrap_or(0);
    let mut data = Vec::with_capacity(space.total() * dim);
    for (global, row) in rows.into_iter().enumerate() {
        let (ty, local) = space.locate(global);
        let row = row.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("missing {} {local}", ty.name()),
        })?;
        data.extend(row);
    }
    Matrix::from_vec(space.total(), dim, data)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
