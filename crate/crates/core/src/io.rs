//! File formats.
//!
//! * trajectories: one per line, `<id>\t<lon>,<lat>;<lon>,<lat>;...`;
//! * `TSDM` distance matrices and `TSEM` embedding sets, both little-endian
//!   binary with length-prefixed UTF-8 ids.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Mbr, Trajectory};
use crate::measures::{DistanceMatrix, MeasureKind};

const MATRIX_MAGIC: &[u8; 4] = b"TSDM";
const MATRIX_VERSION: u32 = 1;
const EMBED_MAGIC: &[u8; 4] = b"TSEM";
const EMBED_VERSION: u32 = 1;

/// Parses one record. `line_no` is 1-based and only used for error messages.
pub fn parse_trajectory_line(line: &str, line_no: usize) -> Result<Trajectory> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let (id, body) = line
        .split_once('\t')
        .ok_or_else(|| err("expected `<id>\\t<points>`".into()))?;
    if id.is_empty() {
        return Err(err("empty id".into()));
    }
    let mut points = Vec::new();
    for (k, pair) in body.trim_end().split(';').enumerate() {
        if pair.is_empty() {
            continue;
        }
        let (lon, lat) = pair
            .split_once(',')
            .ok_or_else(|| err(format!("point {k}: expected `lon,lat`, got {pair:?}")))?;
        let num = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| err(format!("point {k}: bad {what} {s:?}")))
        };
        let (lon, lat) = (num(lon, "longitude")?, num(lat, "latitude")?);
        points.push(GeoPoint::new(lat, lon).map_err(|e| err(format!("point {k}: {e}")))?);
    }
    Trajectory::new(id, points).map_err(|e| err(e.to_string()))
}

/// Reads every non-blank line; lines starting with `#` are skipped.
pub fn parse_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_trajectory_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trajectories(BufReader::new(f))
}

pub fn write_trajectories<W: Write>(w: &mut W, ts: &[Trajectory]) -> std::io::Result<()> {
    for t in ts {
        write!(w, "{}\t", t.id)?;
        for (i, p) in t.points.iter().enumerate() {
            if i > 0 {
                w.write_all(b";")?;
            }
            write!(w, "{},{}", p.lon, p.lat)?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_trajectories(path: &Path, ts: &[Trajectory]) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectories(&mut buf, ts).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Drops trajectories with fewer than `min_len` points and, if `area` is
/// set, any trajectory with a point outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestFilter {
    pub min_len: usize,
    pub area: Option<Mbr>,
}

impl Default for IngestFilter {
    fn default() -> Self {
        IngestFilter {
            min_len: 10,
            area: None,
        }
    }
}

impl IngestFilter {
    pub fn keeps(&self, t: &Trajectory) -> bool {
        t.len() >= self.min_len
            && self
                .area
                .is_none_or(|a| t.points.iter().all(|p| a.contains(p)))
    }

    pub fn apply(&self, ts: Vec<Trajectory>) -> Vec<Trajectory> {
        ts.into_iter().filter(|t| self.keeps(t)).collect()
    }
}

fn write_ids<W: Write>(w: &mut W, ids: &[String]) -> std::io::Result<()> {
    for id in ids {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    Ok(())
}

struct Reader<'a, R: Read> {
    r: &'a mut R,
    what: &'static str,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated {}: {e}", self.what)))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let m: [u8; 4] = self.bytes()?;
        if &m != magic {
            return Err(Error::Format(format!(
                "bad {} magic {:?}",
                self.what,
                String::from_utf8_lossy(&m)
            )));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::Version {
                found: v,
                expected: version,
            });
        }
        Ok(())
    }

    fn ids(&mut self, n: usize) -> Result<Vec<String>> {
        (0..n)
            .map(|_| {
                let len = self.u32()? as usize;
                let mut b = vec![0u8; len];
                self.r
                    .read_exact(&mut b)
                    .map_err(|e| Error::Format(format!("truncated {}: {e}", self.what)))?;
                String::from_utf8(b).map_err(|_| Error::Format(format!("{}: id is not UTF-8", self.what)))
            })
            .collect()
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn write_distance_matrix<W: Write>(w: &mut W, dm: &DistanceMatrix) -> std::io::Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&dm.measure.tag().to_le_bytes())?;
    w.write_all(&dm.measure.param().to_le_bytes())?;
    w.write_all(&(dm.rows() as u64).to_le_bytes())?;
    w.write_all(&(dm.cols() as u64).to_le_bytes())?;
    write_ids(w, &dm.row_ids)?;
    write_ids(w, &dm.col_ids)?;
    for v in &dm.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_distance_matrix<R: Read>(r: &mut R) -> Result<DistanceMatrix> {
    let mut rd = Reader { r, what: "distance matrix" };
    rd.header(MATRIX_MAGIC, MATRIX_VERSION)?;
    let tag = rd.u32()?;
    let param = rd.f64()?;
    let measure = MeasureKind::from_tag(tag, param)?;
    let rows = rd.u64()? as usize;
    let cols = rd.u64()? as usize;
    let row_ids = rd.ids(rows)?;
    let col_ids = rd.ids(cols)?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let data = rd.floats(n)?;
    Ok(DistanceMatrix {
        row_ids,
        col_ids,
        measure,
        data,
    })
}

pub fn save_distance_matrix(path: &Path, dm: &DistanceMatrix) -> Result<()> {
    let mut buf = Vec::new();
    write_distance_matrix(&mut buf, dm).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_distance_matrix(path: &Path) -> Result<DistanceMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_distance_matrix(&mut bytes.as_slice())
}

/// Row-major embedding vectors keyed by trajectory id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch {
                op: "embedding set",
                left: vec![ids.len(), dim],
                right: vec![data.len()],
            });
        }
        Ok(EmbeddingSet { ids, dim, data })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

pub fn write_embeddings<W: Write>(w: &mut W, e: &EmbeddingSet) -> std::io::Result<()> {
    w.write_all(EMBED_MAGIC)?;
    w.write_all(&EMBED_VERSION.to_le_bytes())?;
    w.write_all(&(e.len() as u64).to_le_bytes())?;
    w.write_all(&(e.dim as u64).to_le_bytes())?;
    write_ids(w, &e.ids)?;
    for v in &e.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embeddings<R: Read>(r: &mut R) -> Result<EmbeddingSet> {
    let mut rd = Reader { r, what: "embedding file" };
    rd.header(EMBED_MAGIC, EMBED_VERSION)?;
    let count = rd.u64()? as usize;
    let dim = rd.u64()? as usize;
    let ids = rd.ids(count)?;
    let n = count
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("embedding size overflows".into()))?;
    let data = rd.floats(n)?;
    EmbeddingSet::new(ids, dim, data)
}

pub fn save_embeddings(path: &Path, e: &EmbeddingSet) -> Result<()> {
    let mut buf = Vec::new();
    write_embeddings(&mut buf, e).map_err(|err| Error::io(path, err))?;
    std::fs::write(path, buf).map_err(|err| Error::io(path, err))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(&mut bytes.as_slice())
}
