//! Dataset synthesis, file ingestion (IDX and CSV), non-i.i.d. client
//! partitioning and label transforms.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dataset, Labels};
use crate::numkit::{ParamVector, SimRng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Regression data together with the parameters that generated it
/// (layout `[w, b]`, matching the linear models).
#[derive(Debug, Clone)]
pub struct SyntheticRegression {
    pub dataset: Dataset,
    pub truth: ParamVector,
}

/// `y = w*·x + b* + N(0, noise_sigma²)` with `x ~ U[0,1]^d`, `w*, b* ~ N(0,1)`.
pub fn gen_regression(n: usize, d: usize, noise_sigma: f64, rng: &mut SimRng) -> Result<SyntheticRegression> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma {noise_sigma} is negative")));
    }
    let truth: Vec<f64> = (0..=d).map(|_| rng.normal()).collect();
    let features: Vec<f64> = (0..n * d).map(|_| rng.uniform()).collect();
    let targets = features
        .chunks(d)
        .map(|x| {
            let clean: f64 = x.iter().zip(&truth[..d]).map(|(a, b)| a * b).sum::<f64>() + truth[d];
            clean + noise_sigma * rng.normal()
        })
        .collect();
    Ok(SyntheticRegression {
        dataset: Dataset::regression(features, d, targets)?,
        truth: ParamVector::new(truth)?,
    })
}

/// Gaussian blobs (unit variance), one per class, min-max scaled into `[0,1]`.
///
/// When `d >= num_classes` the centers sit on scaled basis vectors, pairwise
/// `separation` apart; otherwise they are spaced `separation` apart along the
/// first axis. Labels cycle through the classes so every class count is
/// within one of `n / num_classes`.
pub fn gen_classification(
    n: usize,
    d: usize,
    num_classes: usize,
    separation: f64,
    rng: &mut SimRng,
) -> Result<Dataset> {
    if d == 0 || num_classes == 0 || n < num_classes {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and n >= num_classes >= 1, got n={n}, d={d}, num_classes={num_classes}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation {separation} is invalid")));
    }
    let center = |class: usize, axis: usize| -> f64 {
        if d >= num_classes {
            if axis == class {
                separation / std::f64::consts::SQRT_2
            } else {
                0.0
            }
        } else if axis == 0 {
            class as f64 * separation
        } else {
            0.0
        }
    };
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut features = Vec::with_capacity(n * d);
    for &l in &labels {
        for axis in 0..d {
            features.push(center(l, axis) + rng.normal());
        }
    }
    minmax_scale(&mut features, d);
    Dataset::classification(features, d, labels, num_classes)
}

/// Scales each column to `[0, 1]`; constant columns become 0.
fn minmax_scale(features: &mut [f64], d: usize) {
    for axis in 0..d {
        let column = features.iter().skip(axis).step_by(d);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for v in features.iter_mut().skip(axis).step_by(d) {
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    file: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(out)
            }
            None => Err(Error::IdxTruncated {
                file: self.file.to_path_buf(),
                offset: self.offset as u64,
                needed: (self.offset + len - self.bytes.len()) as u64,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        file: path.to_path_buf(),
        source,
    })
}

fn parse_idx_images(bytes: &[u8], file: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = IdxReader { bytes, offset: 0, file };
    let magic = r.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            file: file.to_path_buf(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let d = rows * cols;
    let pixels = r.take(n * d)?.to_vec();
    Ok((n, d, pixels))
}

fn parse_idx_labels(bytes: &[u8], file: &Path) -> Result<Vec<u8>> {
    let mut r = IdxReader { bytes, offset: 0, file };
    let magic = r.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxMagic {
            file: file.to_path_buf(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n = r.u32()? as usize;
    Ok(r.take(n)?.to_vec())
}

/// Reads an MNIST-style IDX image/label pair. Pixels are scaled to `[0,1]`,
/// labels are classes 0–9.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (n, d, pixels) = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::IdxCountMismatch {
            images: images_path.to_path_buf(),
            labels: labels_path.to_path_buf(),
            image_count: n,
            label_count: labels.len(),
        });
    }
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::InvalidArgument(format!(
            "{}: label {} at offset {} is not a digit",
            labels_path.display(),
            labels[pos],
            8 + pos
        )));
    }
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::classification(features, d, labels.into_iter().map(usize::from).collect(), 10)
}

/// Writes an IDX image file (`n × rows × cols` unsigned bytes).
pub fn write_idx_images(path: impl AsRef<Path>, rows: u32, cols: u32, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let per = (rows * cols) as usize;
    if per == 0 || pixels.len() % per != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} pixels do not form whole {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut buf = Vec::with_capacity(16 + pixels.len());
    buf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    buf.extend_from_slice(&((pixels.len() / per) as u32).to_be_bytes());
    buf.extend_from_slice(&rows.to_be_bytes());
    buf.extend_from_slice(&cols.to_be_bytes());
    buf.extend_from_slice(pixels);
    write_bytes(path, &buf)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    write_bytes(path.as_ref(), &buf)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        file: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

/// Reads a numeric regression table: a header row, comma separators, `.`
/// decimals. The last column is the target; the rest are features, which
/// must already be scaled into `[0, 1]`.
pub fn load_csv_regression(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |message: String| Error::Csv {
        file: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let columns = reader.headers().map_err(|e| csv_err(e.to_string()))?.len();
    if columns < 2 {
        return Err(csv_err(format!("need at least 2 columns, found {columns}")));
    }
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                csv_err(format!("line {}, column {}: `{field}` is not a number", row + 2, col + 1))
            })?;
            if col + 1 == columns {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
    }
    Dataset::regression(features, columns - 1, targets).map_err(|e| csv_err(e.to_string()))
}

/// Example indices owned by each client, with aggregation weights
/// `p_i = |D_i| / |D|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }
}

/// Non-i.i.d. split with degree `p`.
///
/// Clients are dealt round-robin into one home group per class. Each example
/// of class `l` goes, with probability `p`, to a uniform client of group `l`
/// and otherwise to a uniform client overall.
pub fn partition_noniid(data: &Dataset, num_clients: usize, p: f64, rng: &mut SimRng) -> Result<Partition> {
    let classes = data
        .labels()
        .classes()
        .ok_or_else(|| Error::InvalidArgument("non-i.i.d. partitioning needs class labels".into()))?;
    if num_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("non-i.i.d. degree {p} outside [0, 1]")));
    }
    let groups = data.num_classes();
    if groups > num_clients {
        return Err(Error::InvalidArgument(format!(
            "{groups} class groups cannot be formed from {num_clients} clients"
        )));
    }
    let members: Vec<Vec<usize>> = (0..groups)
        .map(|g| (g..num_clients).step_by(groups).collect())
        .collect();
    let mut assignments = vec![Vec::new(); num_clients];
    for (i, &label) in classes.iter().enumerate() {
        let client = if rng.uniform() < p {
            let group = &members[label];
            group[rng.below(group.len())]
        } else {
            rng.below(num_clients)
        };
        assignments[client].push(i);
    }
    Ok(with_weights(assignments, data.len()))
}

/// Uniform random split, for datasets without class labels.
pub fn partition_uniform(data: &Dataset, num_clients: usize, rng: &mut SimRng) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    let mut assignments = vec![Vec::new(); num_clients];
    for i in 0..data.len() {
        assignments[rng.below(num_clients)].push(i);
    }
    Ok(with_weights(assignments, data.len()))
}

fn with_weights(assignments: Vec<Vec<usize>>, total: usize) -> Partition {
    let weights = assignments
        .iter()
        .map(|a| a.len() as f64 / total as f64)
        .collect();
    Partition { assignments, weights }
}

/// Total map from class ids to class ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LabelMap(Vec<usize>);

impl LabelMap {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let c = mapping.len();
        if c == 0 {
            return Err(Error::Empty("label map"));
        }
        if let Some(bad) = mapping.iter().find(|&&m| m >= c) {
            return Err(Error::InvalidArgument(format!("label map target {bad} outside [0, {c})")));
        }
        Ok(LabelMap(mapping))
    }

    pub fn identity(num_classes: usize) -> Self {
        LabelMap((0..num_classes).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn apply(&self, label: usize) -> usize {
        self.0[label]
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// The inverse map, when this one is a bijection.
    pub fn inverse(&self) -> Option<LabelMap> {
        let mut inv = vec![usize::MAX; self.0.len()];
        for (from, &to) in self.0.iter().enumerate() {
            if inv[to] != usize::MAX {
                return None;
            }
            inv[to] = from;
        }
        Some(LabelMap(inv))
    }
}

impl TryFrom<Vec<usize>> for LabelMap {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        LabelMap::new(v)
    }
}

impl From<LabelMap> for Vec<usize> {
    fn from(m: LabelMap) -> Self {
        m.0
    }
}

/// `l -> (l - 1) mod num_classes`: 0 becomes the last class, every other
/// class shifts down by one.
pub fn paper_target_map(num_classes: usize) -> Result<LabelMap> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("target map needs at least 2 classes".into()));
    }
    Ok(LabelMap(
        (0..num_classes)
            .map(|l| (l + num_classes - 1) % num_classes)
            .collect(),
    ))
}

pub fn flip_labels(data: &Dataset, map: &LabelMap) -> Result<Dataset> {
    let classes = data
        .labels()
        .classes()
        .ok_or_else(|| Error::InvalidArgument("label flipping needs class labels".into()))?;
    if map.num_classes() < data.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "label map covers {} classes, dataset has {}",
            map.num_classes(),
            data.num_classes()
        )));
    }
    let flipped = classes.iter().map(|&l| map.apply(l)).collect();
    data.with_classes(flipped, map.num_classes())
}

/// Even classes become 0, odd classes become 1.
pub fn parity_labels(data: &Dataset) -> Result<Dataset> {
    match data.labels() {
        Labels::Classes(c) => data.with_classes(c.iter().map(|l| l % 2).collect(), 2),
        Labels::Targets(_) => Err(Error::InvalidArgument("parity needs class labels".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{loss, ModelSpec};

    #[test]
    fn noiseless_regression_recovers_truth() {
        let mut rng = SimRng::seed_from(1);
        let gen = gen_regression(50, 4, 0.0, &mut rng).unwrap();
        let spec = ModelSpec::linear_regression(4);
        assert!(loss(&spec, &gen.truth, &gen.dataset).unwrap() < 1e-12);
        let again = gen_regression(50, 4, 0.0, &mut SimRng::seed_from(1)).unwrap();
        assert_eq!(gen.dataset, again.dataset);
        let tiny = gen_regression(1, 1, 0.5, &mut rng).unwrap();
        assert_eq!(tiny.dataset.len(), 1);
        assert_eq!(tiny.dataset.dim(), 1);
    }

    #[test]
    fn classification_is_balanced_and_seeded() {
        let a = gen_classification(100, 5, 3, 4.0, &mut SimRng::seed_from(2)).unwrap();
        let b = gen_classification(100, 5, 3, 4.0, &mut SimRng::seed_from(2)).unwrap();
        assert_eq!(a, b);
        let c = a.labels().classes().unwrap();
        for class in 0..3 {
            let count = c.iter().filter(|&&l| l == class).count();
            assert!((count as f64 - 100.0 / 3.0).abs() <= 1.0);
        }
        assert!(a.features().iter().all(|v| (0.0..=1.0).contains(v)));
        let single = gen_classification(10, 2, 1, 3.0, &mut SimRng::seed_from(0)).unwrap();
        assert!(single.labels().classes().unwrap().iter().all(|&l| l == 0));
        assert!(gen_classification(2, 2, 3, 1.0, &mut SimRng::seed_from(0)).is_err());
    }

    #[test]
    fn target_map_matches_table() {
        let m = paper_target_map(10).unwrap();
        let expected = [9, 0, 1, 2, 3, 4, 5, 6, 7, 8];
        for (l, e) in expected.iter().enumerate() {
            assert_eq!(m.apply(l), *e);
        }
        let two = paper_target_map(2).unwrap();
        assert_eq!((two.apply(0), two.apply(1)), (1, 0));
        assert!(paper_target_map(1).is_err());
    }

    #[test]
    fn target_map_is_a_ten_cycle() {
        let data = gen_classification(40, 3, 10, 2.0, &mut SimRng::seed_from(3)).unwrap();
        let m = paper_target_map(10).unwrap();
        let mut cur = data.clone();
        for step in 1..=10 {
            cur = flip_labels(&cur, &m).unwrap();
            if step < 10 {
                assert_ne!(cur, data);
            }
        }
        assert_eq!(cur, data);
        assert_eq!(flip_labels(&data, &LabelMap::identity(10)).unwrap(), data);
    }

    #[test]
    fn inverse_detects_non_bijection() {
        assert!(LabelMap::new(vec![0, 0, 1]).unwrap().inverse().is_none());
        assert!(LabelMap::new(vec![0, 3]).is_err());
        let m = paper_target_map(5).unwrap();
        let inv = m.inverse().unwrap();
        assert!((0..5).all(|l| inv.apply(m.apply(l)) == l));
    }

    #[test]
    fn full_skew_gives_one_class_per_client() {
        let data = gen_classification(200, 4, 10, 3.0, &mut SimRng::seed_from(4)).unwrap();
        let part = partition_noniid(&data, 10, 1.0, &mut SimRng::seed_from(5)).unwrap();
        let c = data.labels().classes().unwrap();
        for (k, owned) in part.assignments.iter().enumerate() {
            assert!(!owned.is_empty());
            assert!(owned.iter().all(|&i| c[i] == k));
        }
        assert!((part.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_errors() {
        let data = gen_classification(30, 2, 3, 1.0, &mut SimRng::seed_from(0)).unwrap();
        let mut rng = SimRng::seed_from(0);
        assert!(partition_noniid(&data, 2, 0.5, &mut rng).is_err());
        assert!(partition_noniid(&data, 4, 1.5, &mut rng).is_err());
        let reg = gen_regression(10, 2, 0.1, &mut rng).unwrap().dataset;
        assert!(partition_noniid(&reg, 4, 0.5, &mut rng).is_err());
        let part = partition_uniform(&reg, 3, &mut rng).unwrap();
        assert_eq!(part.assignments.iter().map(Vec::len).sum::<usize>(), 10);
    }

    #[test]
    fn parity_relabels() {
        let data = Dataset::classification(vec![0.0; 4], 1, vec![0, 1, 2, 3], 4).unwrap();
        let p = parity_labels(&data).unwrap();
        assert_eq!(p.labels().classes().unwrap(), &[0, 1, 0, 1]);
        assert_eq!(p.num_classes(), 2);
    }
}
