use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::transform::{apply_transform, Family, TransformSpec};
use super::{Dataset, DatasetKind, TaskDatabase};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

const CIFAR_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];
const CIFAR_RECORD: usize = 1 + 3072;

/// Procedural multiclass image set used when no CIFAR-10 files are present.
///
/// Class `k` is an oriented sinusoidal grating at angle `k * 180 / classes`
/// degrees with a class-specific tint, plus pixel noise. Rotation, flips and
/// shears therefore change the class evidence, while color and blur shifts
/// leave the geometry intact.
pub fn synthetic_image_base(n: usize, size: usize, classes: usize, seed_value: u64) -> Result<Dataset> {
    if n == 0 || size < 4 || classes < 2 {
        return Err(Error::Precondition(format!(
            "need n >= 1, size >= 4 and classes >= 2 (got {n}, {size}, {classes})"
        )));
    }
    let mut rng = seed::rng(seed_value, "image-base", 0);
    let mut data = Vec::with_capacity(n * size * size * 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let angle = std::f64::consts::PI * k as f64 / classes as f64;
        let (sa, ca) = angle.sin_cos();
        let freq = 2.0 * std::f64::consts::PI * 3.0 / size as f64;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let hue = k as f64 / classes as f64;
        let tint = [
            0.5 + 0.4 * (std::f64::consts::TAU * hue).cos(),
            0.5 + 0.4 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos(),
            0.5 + 0.4 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos(),
        ];
        for y in 0..size {
            for x in 0..size {
                let u = ca * x as f64 + sa * y as f64;
                let wave = 0.5 + 0.5 * (freq * u + phase).sin();
                for t in tint {
                    let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
                    data.push((wave * t + noise).clamp(0.0, 1.0));
                }
            }
        }
        labels.push(k);
    }
    Dataset::new(
        "base",
        DatasetKind::MulticlassDomain { classes },
        Tensor::new(vec![n, size, size, 3], data)?,
        labels,
    )
}

/// Reads CIFAR-10 binary batches from `dir`, keeping at most `max_samples`
/// records. Returns `Ok(None)` when none of the six batch files exist.
pub fn load_cifar10(dir: &Path, max_samples: usize) -> Result<Option<Dataset>> {
    let present: Vec<_> = CIFAR_FILES
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.is_file())
        .collect();
    if present.is_empty() {
        return Ok(None);
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    'files: for path in present {
        let bytes = fs::read(&path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: size {} is not a multiple of {CIFAR_RECORD}",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if labels.len() >= max_samples {
                break 'files;
            }
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::Format(format!("{}: label {label} >= 10", path.display())));
            }
            // planes are R, G, B each 32x32 row-major; convert to HWC
            let px = &rec[1..];
            for i in 0..1024 {
                for ch in 0..3 {
                    data.push(px[ch * 1024 + i] as f64 / 255.0);
                }
            }
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Ok(None);
    }
    let n = labels.len();
    Ok(Some(Dataset::new(
        "cifar10",
        DatasetKind::MulticlassDomain { classes: 10 },
        Tensor::new(vec![n, 32, 32, 3], data)?,
        labels,
    )?))
}

/// One domain per transform; labels are copied unchanged from `base`.
pub fn gen_domain_db(base: &Dataset, specs: &[TransformSpec]) -> Result<TaskDatabase> {
    if !matches!(base.kind, DatasetKind::MulticlassDomain { .. }) {
        return Err(Error::Precondition("domain base dataset must be multiclass".into()));
    }
    if specs.is_empty() {
        return Err(Error::Precondition("no transforms given".into()));
    }
    if base.sample_shape().len() != 3 {
        return Err(Error::Shape {
            node: "domain base".into(),
            expected: vec![0, 0, 0],
            got: base.sample_shape().to_vec(),
        });
    }
    for s in specs {
        s.validate()?;
    }
    let shape = base.sample_shape().to_vec();
    let datasets = specs
        .iter()
        .map(|spec| {
            let mut data = Vec::with_capacity(base.inputs.len());
            for i in 0..base.len() {
                let img = Tensor::new(shape.clone(), base.sample(i).to_vec())?;
                data.extend(apply_transform(&img, spec)?.into_data());
            }
            Dataset::new(
                spec.name(),
                base.kind,
                Tensor::new(base.inputs.shape().to_vec(), data)?,
                base.labels.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskDatabase {
        datasets,
        heldout: Vec::new(),
        ground_truth_clusters: Some(specs.iter().map(|s| s.family().index()).collect()),
        group_names: Family::ALL.iter().map(|f| f.name().to_string()).collect(),
    })
}
