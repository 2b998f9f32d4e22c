//! Binary container for task databases. All integers and floats are
//! little-endian.
//!
//! ```text
//! magic          8 bytes  "SMTASKDB"
//! version        u32      1
//! k              u32      number of tasks
//! has_clusters   u8       0 or 1
//! clusters       k x u32  (only when has_clusters == 1)
//! n_groups       u32
//! groups         n_groups x string
//! tasks          k x { dataset, has_heldout: u8, heldout dataset if 1 }
//!
//! string         u32 byte length + UTF-8 bytes
//! dataset        name: string
//!                kind: u8 (0 binary task, 1 multiclass domain)
//!                classes: u32
//!                rank: u32, dims: rank x u32 (per-sample shape)
//!                n: u64
//!                payload: n * prod(dims) x f64 (row-major)
//!                labels: n x u32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Dataset, DatasetKind, TaskDatabase};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SMTASKDB";
pub const VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_dataset<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    write_str(w, &ds.name)?;
    match ds.kind {
        DatasetKind::BinaryTask => {
            w.write_u8(0)?;
            w.write_u32::<LE>(2)?;
        }
        DatasetKind::MulticlassDomain { classes } => {
            w.write_u8(1)?;
            w.write_u32::<LE>(classes as u32)?;
        }
    }
    let dims = ds.sample_shape();
    w.write_u32::<LE>(dims.len() as u32)?;
    for &d in dims {
        w.write_u32::<LE>(d as u32)?;
    }
    w.write_u64::<LE>(ds.len() as u64)?;
    for &v in ds.inputs.data() {
        w.write_f64::<LE>(v)?;
    }
    for &y in &ds.labels {
        w.write_u32::<LE>(y as u32)?;
    }
    Ok(())
}

pub fn write_db<W: Write>(mut w: W, db: &TaskDatabase) -> Result<()> {
    db.validate()?;
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(db.k() as u32)?;
    match &db.ground_truth_clusters {
        Some(c) => {
            w.write_u8(1)?;
            for &v in c {
                w.write_u32::<LE>(v as u32)?;
            }
        }
        None => w.write_u8(0)?,
    }
    w.write_u32::<LE>(db.group_names.len() as u32)?;
    for g in &db.group_names {
        write_str(&mut w, g)?;
    }
    for (i, ds) in db.datasets.iter().enumerate() {
        write_dataset(&mut w, ds)?;
        match db.heldout.get(i) {
            Some(h) => {
                w.write_u8(1)?;
                write_dataset(&mut w, h)?;
            }
            None => w.write_u8(0)?,
        }
    }
    Ok(())
}

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated task database".into())
    } else {
        Error::Io(e)
    }
}

const MAX_STR: usize = 1 << 20;
const MAX_ELEMS: u64 = 1 << 32;

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LE>().map_err(eof)? as usize;
    if len > MAX_STR {
        return Err(Error::Format(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(eof)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 in name".into()))
}

fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset> {
    let name = read_str(r)?;
    let kind_tag = r.read_u8().map_err(eof)?;
    let classes = r.read_u32::<LE>().map_err(eof)? as usize;
    let kind = match kind_tag {
        0 => DatasetKind::BinaryTask,
        1 => DatasetKind::MulticlassDomain { classes },
        t => return Err(Error::Format(format!("unknown dataset kind {t}"))),
    };
    let rank = r.read_u32::<LE>().map_err(eof)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("invalid sample rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.read_u32::<LE>().map_err(eof)? as usize);
    }
    let n = r.read_u64::<LE>().map_err(eof)?;
    let per: u64 = dims.iter().map(|&d| d as u64).product();
    let total = n.checked_mul(per).filter(|&t| t <= MAX_ELEMS).ok_or_else(|| {
        Error::Format(format!("dataset '{name}' declares too many values"))
    })?;
    let mut data = Vec::with_capacity(total as usize);
    for _ in 0..total {
        data.push(r.read_f64::<LE>().map_err(eof)?);
    }
    let mut labels = Vec::with_capacity(n as usize);
    for _ in 0..n {
        labels.push(r.read_u32::<LE>().map_err(eof)? as usize);
    }
    let mut shape = vec![n as usize];
    shape.extend(dims);
    let inputs = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
    Dataset::new(name, kind, inputs, labels).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_db<R: Read>(mut r: R) -> Result<TaskDatabase> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes: not a task database".into()));
    }
    let version = r.read_u32::<LE>().map_err(eof)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let k = r.read_u32::<LE>().map_err(eof)? as usize;
    let clusters = match r.read_u8().map_err(eof)? {
        0 => None,
        1 => {
            let mut c = Vec::with_capacity(k);
            for _ in 0..k {
                c.push(r.read_u32::<LE>().map_err(eof)? as usize);
            }
            Some(c)
        }
        t => return Err(Error::Format(format!("invalid cluster flag {t}"))),
    };
    let n_groups = r.read_u32::<LE>().map_err(eof)? as usize;
    let mut group_names = Vec::with_capacity(n_groups.min(1024));
    for _ in 0..n_groups {
        group_names.push(read_str(&mut r)?);
    }
    let mut datasets = Vec::with_capacity(k);
    let mut heldout = Vec::new();
    for i in 0..k {
        datasets.push(read_dataset(&mut r)?);
        match r.read_u8().map_err(eof)? {
            0 => {}
            1 => heldout.push(read_dataset(&mut r)?),
            t => return Err(Error::Format(format!("invalid heldout flag {t} for task {i}"))),
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after task database".into()));
    }
    let db = TaskDatabase {
        datasets,
        heldout,
        ground_truth_clusters: clusters,
        group_names,
    };
    db.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(db)
}

pub fn save_db(path: &Path, db: &TaskDatabase) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_db(&mut w, db)?;
    w.flush()?;
    Ok(())
}

pub fn load_db(path: &Path) -> Result<TaskDatabase> {
    read_db(BufReader::new(File::open(path)?))
}
