use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::ArchSpec;
use crate::error::{Error, Result};

/// One task's parameter vector, flattened in layer declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub task_id: usize,
    pub init_seed: u64,
    pub flat: Vec<f64>,
}

/// Borrowed weight and bias of one parameterized layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub layer: usize,
    pub weight: &'a [f64],
    pub bias: &'a [f64],
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn views<'a>(&'a self, spec: &ArchSpec) -> Result<Vec<LayerView<'a>>> {
        self.check(spec)?;
        Ok(spec
            .slots()
            .into_iter()
            .map(|s| LayerView {
                layer: s.layer,
                weight: &self.flat[s.weight_offset..s.weight_offset + s.weight_len],
                bias: &self.flat[s.bias_offset..s.bias_offset + s.bias_len],
            })
            .collect())
    }

    pub fn check(&self, spec: &ArchSpec) -> Result<()> {
        let n = spec.param_count();
        if self.flat.len() != n {
            return Err(Error::Spec(format!(
                "task {} has {} parameters, architecture needs {n}",
                self.task_id,
                self.flat.len()
            )));
        }
        Ok(())
    }

    /// Checkpoint layout, little-endian: `task_id: u64`, `count: u64`,
    /// `seed: u64`, then `count` f64 values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_u64::<LittleEndian>(self.task_id as u64)?;
        w.write_u64::<LittleEndian>(self.flat.len() as u64)?;
        w.write_u64::<LittleEndian>(self.init_seed)?;
        for &v in &self.flat {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let trunc = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format("truncated checkpoint".into())
            } else {
                Error::Io(e)
            }
        };
        let task_id = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let count = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let init_seed = r.read_u64::<LittleEndian>().map_err(trunc)?;
        let mut flat = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            flat.push(r.read_f64::<LittleEndian>().map_err(trunc)?);
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(Self {
            task_id,
            init_seed,
            flat,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Initializes parameters with `uniform(-a, a)`, `a = sqrt(1 / fan_in)`,
/// for both weights and biases of every layer.
pub fn build(spec: &ArchSpec, seed: u64) -> Result<ParamSet> {
    build_for_task(spec, seed, 0)
}

/// Per-task initialization seeded with `experiment_seed + task_id`.
pub fn build_for_task(spec: &ArchSpec, experiment_seed: u64, task_id: usize) -> Result<ParamSet> {
    spec.validate()?;
    let seed = experiment_seed.wrapping_add(task_id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = vec![0.0; spec.param_count()];
    for slot in spec.slots() {
        let a = (1.0 / slot.fan_in as f64).sqrt();
        let end = slot.bias_offset + slot.bias_len;
        for v in &mut flat[slot.weight_offset..end] {
            *v = rng.random_range(-a..a);
        }
    }
    Ok(ParamSet {
        task_id,
        init_seed: seed,
        flat,
    })
}
