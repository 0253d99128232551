//! Dataset loading, synthesis, splitting, and client partitioning.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::{stream_tag, StreamRng};
use crate::tensor::Example;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        examples: Vec<Example>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for ex in &examples {
            if ex.features.len() != input_dim {
                return Err(Error::ShapeMismatch(format!(
                    "example has {} features, dataset claims {}",
                    ex.features.len(),
                    input_dim
                )));
            }
            if ex.label >= num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "label {} outside {} classes",
                    ex.label, num_classes
                )));
            }
        }
        Ok(Dataset { name: name.into(), examples, input_dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Owned copy of the rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let examples = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Ok(Dataset {
            name: self.name.clone(),
            examples,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        })
    }

    /// Keeps only the listed labels, remapping them to 0..len in list order.
    pub fn restrict_classes(&self, keep: &[usize]) -> Result<Dataset> {
        if keep.len() < 2 {
            return Err(Error::InvalidSpec("a classification task needs at least two classes".into()));
        }
        let examples: Vec<Example> = self
            .examples
            .iter()
            .filter_map(|ex| {
                keep.iter()
                    .position(|&k| k == ex.label)
                    .map(|new_label| Example { features: ex.features.clone(), label: new_label })
            })
            .collect();
        Dataset::new(format!("{}-{}way", self.name, keep.len()), examples, self.input_dim, keep.len())
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path)?;
    let mut bytes = Vec::new();
    let gzipped = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gzipped {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        std::io::BufReader::new(file).read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn take_u32_be(bytes: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::TruncatedFile(format!("{}: ran out of bytes reading {what}", path.display())));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().expect("slice is 4 bytes")))
}

/// Reads an image/label file pair in the classic big-endian IDX layout
/// (unsigned-byte tensors behind magics 0x803 and 0x801). Either path may
/// point at a gzip-compressed file, selected by the .gz extension. Pixels
/// are scaled to [0, 1] by dividing by 255.
pub fn read_idx_dataset(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_all(images_path)?;
    let magic = take_u32_be(&img, 0, "image magic", images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic { expected: IMAGE_MAGIC, found: magic });
    }
    let count = take_u32_be(&img, 4, "image count", images_path)? as usize;
    let rows = take_u32_be(&img, 8, "row count", images_path)? as usize;
    let cols = take_u32_be(&img, 12, "column count", images_path)? as usize;
    let pixels_per = rows * cols;
    let need = 16 + count * pixels_per;
    if img.len() < need {
        return Err(Error::TruncatedFile(format!(
            "{}: {} bytes of pixel data expected, {} present",
            images_path.display(),
            need - 16,
            img.len().saturating_sub(16)
        )));
    }

    let lab = read_all(labels_path)?;
    let magic = take_u32_be(&lab, 0, "label magic", labels_path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic { expected: LABEL_MAGIC, found: magic });
    }
    let label_count = take_u32_be(&lab, 4, "label count", labels_path)? as usize;
    if label_count != count {
        return Err(Error::CountMismatch(format!("{count} images vs {label_count} labels")));
    }
    if lab.len() < 8 + count {
        return Err(Error::TruncatedFile(format!(
            "{}: {} labels expected, {} present",
            labels_path.display(),
            count,
            lab.len().saturating_sub(8)
        )));
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }

    let mut examples = Vec::with_capacity(count);
    let mut max_label = 0usize;
    for i in 0..count {
        let start = 16 + i * pixels_per;
        let features: Vec<f64> =
            img[start..start + pixels_per].iter().map(|&p| p as f64 / 255.0).collect();
        let label = lab[8 + i] as usize;
        max_label = max_label.max(label);
        examples.push(Example { features, label });
    }
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, examples, pixels_per, max_label + 1)
}

/// Synthetic Gaussian blob classification set. Class c sits at
/// separation * e_(c mod dim) (a unit axis vector), points scatter around
/// their center with unit-variance noise, labels cycle through the classes,
/// and every feature is min-max rescaled into [0, 1] so downstream code
/// sees pixel-like ranges. separation = 0 makes all classes coincide.
pub fn synth_blobs(
    num_classes: usize,
    input_dim: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if input_dim == 0 {
        return Err(Error::InvalidSpec("blob features need at least one dimension".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidSpec(format!("{num_classes} classes cannot be classified")));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::InvalidSpec(format!("blob separation {separation} out of range")));
    }
    if n < num_classes {
        return Err(Error::InvalidSpec(format!("{n} examples cannot cover {num_classes} classes")));
    }
    let mut rng = StreamRng::from_parts(&[seed, stream_tag::BLOBS]);
    let mut examples: Vec<Example> = (0..n)
        .map(|i| {
            let label = i % num_classes;
            let axis = label % input_dim;
            let features = (0..input_dim)
                .map(|d| {
                    let center = if d == axis { separation } else { 0.0 };
                    center + rng.standard_normal()
                })
                .collect();
            Example { features, label }
        })
        .collect();
    for d in 0..input_dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ex in &examples {
            lo = lo.min(ex.features[d]);
            hi = hi.max(ex.features[d]);
        }
        let span = hi - lo;
        for ex in &mut examples {
            ex.features[d] = if span > 0.0 { (ex.features[d] - lo) / span } else { 0.5 };
        }
    }
    Dataset::new(format!("blobs-{num_classes}x{input_dim}"), examples, input_dim, num_classes)
}

/// How examples are dealt out to clients.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionSpec {
    /// Shuffle once, deal round robin: shard sizes differ by at most one.
    Iid,
    /// Per class, split its examples by a Dirichlet(beta) draw over clients.
    /// Small beta concentrates each class on few clients.
    Dirichlet { beta: f64 },
}

fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let norm: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    let mut counts: Vec<usize> = norm.iter().map(|p| (p * total as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Ties break toward the lower index so the allocation is reproducible.
    order.sort_by(|&a, &b| {
        let ra = norm[a] * total as f64 - counts[a] as f64;
        let rb = norm[b] * total as f64 - counts[b] as f64;
        rb.partial_cmp(&ra).expect("remainders are comparable").then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Splits example indices into one shard per client. Every client ends up
/// with at least one example; the deficit is covered by moving single rows
/// out of the currently largest shard.
pub fn partition(
    dataset: &Dataset,
    num_clients: usize,
    spec: PartitionSpec,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if num_clients == 0 {
        return Err(Error::InvalidSpec("a federation needs at least one client".into()));
    }
    if num_clients > dataset.len() {
        return Err(Error::TooManyClients { clients: num_clients, examples: dataset.len() });
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    match spec {
        PartitionSpec::Iid => {
            let mut rng = StreamRng::from_parts(&[seed, stream_tag::PARTITION]);
            let mut indices: Vec<usize> = (0..dataset.len()).collect();
            rng.shuffle(&mut indices);
            for (i, idx) in indices.into_iter().enumerate() {
                shards[i % num_clients].push(idx);
            }
        }
        PartitionSpec::Dirichlet { beta } => {
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(Error::InvalidSpec(format!("dirichlet beta {beta} out of range")));
            }
            let gamma = Gamma::new(beta, 1.0)
                .map_err(|e| Error::InvalidSpec(format!("dirichlet beta {beta}: {e}")))?;
            for class in 0..dataset.num_classes {
                let mut members: Vec<usize> = (0..dataset.len())
                    .filter(|&i| dataset.examples[i].label == class)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut rng = StreamRng::from_parts(&[seed, stream_tag::PARTITION, class as u64]);
                rng.shuffle(&mut members);
                let weights: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
                let counts = largest_remainder(&weights, members.len());
                let mut cursor = 0;
                for (client, &count) in counts.iter().enumerate() {
                    shards[client].extend_from_slice(&members[cursor..cursor + count]);
                    cursor += count;
                }
            }
            // Guarantee non-empty shards by raiding the largest one.
            while let Some(empty) = shards.iter().position(Vec::is_empty) {
                let donor = (0..num_clients)
                    .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
                    .expect("at least one shard exists");
                let moved = shards[donor].pop().expect("largest shard cannot be empty");
                shards[empty].push(moved);
            }
        }
    }
    Ok(shards)
}

/// Stratified split: each class contributes a test share proportional to its
/// size, with the overall test count pinned to round(fraction * n) by a
/// largest-remainder allocation over classes.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    let total_test = (test_fraction * dataset.len() as f64).round() as usize;
    if total_test == 0 || total_test == dataset.len() {
        return Err(Error::InvalidSpec(format!(
            "test fraction {test_fraction} leaves an empty side of the split"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, ex) in dataset.examples.iter().enumerate() {
        by_class[ex.label].push(i);
    }
    let sizes: Vec<f64> = by_class.iter().map(|m| m.len() as f64).collect();
    let quotas = largest_remainder(&sizes, total_test);
    let mut train_idx = Vec::with_capacity(dataset.len() - total_test);
    let mut test_idx = Vec::with_capacity(total_test);
    for (class, members) in by_class.iter_mut().enumerate() {
        if quotas[class] > members.len() {
            return Err(Error::InvalidSpec(format!(
                "class {class} has {} examples, cannot supply {} for testing",
                members.len(),
                quotas[class]
            )));
        }
        let mut rng = StreamRng::from_parts(&[seed, stream_tag::SPLIT, class as u64]);
        rng.shuffle(members);
        test_idx.extend_from_slice(&members[..quotas[class]]);
        train_idx.extend_from_slice(&members[quotas[class]..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(&train_idx)?, dataset.subset(&test_idx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, ModelSpec};
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn idx_image_bytes(images: &[[u8; 4]]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        b.extend_from_slice(&(images.len() as u32).to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        for img in images {
            b.extend_from_slice(img);
        }
        b
    }

    fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_a_hand_built_idx_pair() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx3-ubyte");
        let lab_path = dir.path().join("labels.idx1-ubyte");
        std::fs::write(&img_path, idx_image_bytes(&[[0, 128, 255, 64], [255, 0, 0, 0]])).unwrap();
        std::fs::write(&lab_path, idx_label_bytes(&[3, 1])).unwrap();
        let ds = read_idx_dataset(&img_path, &lab_path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim, 4);
        assert_eq!(ds.num_classes, 4);
        assert_eq!(ds.examples[0].label, 3);
        assert_eq!(ds.examples[0].features, vec![0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
        assert_eq!(ds.examples[1].features[0], 1.0);
    }

    #[test]
    fn reads_gzip_compressed_idx() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx3-ubyte.gz");
        let lab_path = dir.path().join("labels.idx1-ubyte.gz");
        for (path, raw) in [
            (&img_path, idx_image_bytes(&[[10, 20, 30, 40]])),
            (&lab_path, idx_label_bytes(&[2])),
        ] {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&raw).unwrap();
            std::fs::write(path, enc.finish().unwrap()).unwrap();
        }
        let ds = read_idx_dataset(&img_path, &lab_path).unwrap();
        assert_eq!(ds.len(), 1);
        assert!((ds.examples[0].features[3] - 40.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("bad.idx3-ubyte");
        let lab_path = dir.path().join("labels.idx1-ubyte");
        let mut bytes = idx_image_bytes(&[[1, 2, 3, 4]]);
        bytes[3] = 0x99;
        std::fs::write(&img_path, bytes).unwrap();
        std::fs::write(&lab_path, idx_label_bytes(&[0])).unwrap();
        let err = read_idx_dataset(&img_path, &lab_path).unwrap_err();
        assert_eq!(err.class(), "bad-magic");
    }

    #[test]
    fn rejects_truncated_pixels_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("short.idx3-ubyte");
        let lab_path = dir.path().join("labels.idx1-ubyte");
        let mut bytes = idx_image_bytes(&[[1, 2, 3, 4]]);
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&img_path, bytes).unwrap();
        std::fs::write(&lab_path, idx_label_bytes(&[0])).unwrap();
        assert_eq!(read_idx_dataset(&img_path, &lab_path).unwrap_err().class(), "truncated-file");

        let empty = dir.path().join("empty.idx3-ubyte");
        std::fs::write(&empty, []).unwrap();
        assert_eq!(read_idx_dataset(&empty, &lab_path).unwrap_err().class(), "truncated-file");
    }

    #[test]
    fn rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx3-ubyte");
        let lab_path = dir.path().join("labels.idx1-ubyte");
        std::fs::write(&img_path, idx_image_bytes(&[[1, 2, 3, 4], [5, 6, 7, 8]])).unwrap();
        std::fs::write(&lab_path, idx_label_bytes(&[1])).unwrap();
        assert_eq!(read_idx_dataset(&img_path, &lab_path).unwrap_err().class(), "count-mismatch");
    }

    #[test]
    fn reads_real_mnist_when_present() {
        let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
        let img = base.join("train-images-idx3-ubyte.gz");
        let lab = base.join("train-labels-idx1-ubyte.gz");
        if !img.exists() || !lab.exists() {
            return;
        }
        let ds = read_idx_dataset(&img, &lab).unwrap();
        assert_eq!(ds.len(), 60_000);
        assert_eq!(ds.input_dim, 784);
        assert_eq!(ds.num_classes, 10);
        for ex in ds.examples.iter().take(100) {
            for &f in &ex.features {
                assert!((0.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn blobs_are_unit_ranged_and_reproducible() {
        let a = synth_blobs(3, 5, 300, 4.0, 7).unwrap();
        let b = synth_blobs(3, 5, 300, 4.0, 7).unwrap();
        for (x, y) in a.examples.iter().zip(&b.examples) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.label, y.label);
        }
        for ex in &a.examples {
            assert!(ex.label < 3);
            for &f in &ex.features {
                assert!((0.0..=1.0).contains(&f));
            }
        }
        let c = synth_blobs(3, 5, 300, 4.0, 8).unwrap();
        assert!(a.examples[0].features != c.examples[0].features);
    }

    #[test]
    fn blob_classes_are_balanced() {
        let ds = synth_blobs(3, 4, 90, 2.0, 1).unwrap();
        for class in 0..3 {
            assert_eq!(ds.examples.iter().filter(|e| e.label == class).count(), 30);
        }
    }

    fn train_logistic(ds: &Dataset, steps: usize, lr: f64) -> (ModelSpec, crate::tensor::ParamVector) {
        let spec = ModelSpec::new(ModelKind::LogisticRegression, ds.input_dim, 0, ds.num_classes).unwrap();
        let mut params = spec.init_params(3);
        for _ in 0..steps {
            let grad = spec.batch_gradient(&params, &ds.examples).unwrap();
            params = params.sub_scaled(lr, &grad);
        }
        (spec, params)
    }

    #[test]
    fn wide_separation_is_linearly_separable() {
        let ds = synth_blobs(2, 2, 200, 10.0, 5).unwrap();
        let (spec, params) = train_logistic(&ds, 400, 2.0);
        let acc = spec.accuracy(&params, &ds.examples).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn zero_separation_is_unlearnable() {
        let train = synth_blobs(2, 3, 400, 0.0, 5).unwrap();
        let holdout = synth_blobs(2, 3, 400, 0.0, 99).unwrap();
        let (spec, params) = train_logistic(&train, 200, 1.0);
        let acc = spec.accuracy(&params, &holdout.examples).unwrap();
        assert!((0.35..=0.65).contains(&acc), "held-out accuracy {acc} should sit near chance");
    }

    #[test]
    fn iid_partition_deals_evenly() {
        let ds = synth_blobs(2, 3, 103, 2.0, 5).unwrap();
        let shards = partition(&ds, 10, PartitionSpec::Iid, 11).unwrap();
        let mut seen = vec![false; ds.len()];
        for shard in &shards {
            assert!(shard.len() == 10 || shard.len() == 11);
            for &i in shard {
                assert!(!seen[i], "index {i} dealt twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let again = partition(&ds, 10, PartitionSpec::Iid, 11).unwrap();
        assert_eq!(shards, again);
    }

    #[test]
    fn one_example_per_client_at_the_boundary() {
        let ds = synth_blobs(2, 3, 12, 2.0, 5).unwrap();
        for spec in [PartitionSpec::Iid, PartitionSpec::Dirichlet { beta: 0.4 }] {
            let shards = partition(&ds, 12, spec, 3).unwrap();
            assert!(shards.iter().all(|s| s.len() == 1), "{spec:?}");
        }
    }

    #[test]
    fn dirichlet_partition_covers_and_never_starves() {
        let ds = synth_blobs(4, 3, 400, 2.0, 5).unwrap();
        for beta in [0.05, 0.5, 100.0] {
            let shards = partition(&ds, 8, PartitionSpec::Dirichlet { beta }, 23).unwrap();
            let mut seen = vec![false; ds.len()];
            for shard in &shards {
                assert!(!shard.is_empty(), "beta {beta} starved a client");
                for &i in shard {
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    fn mean_total_variation(ds: &Dataset, shards: &[Vec<usize>]) -> f64 {
        let n = ds.len() as f64;
        let global: Vec<f64> = (0..ds.num_classes)
            .map(|c| ds.examples.iter().filter(|e| e.label == c).count() as f64 / n)
            .collect();
        let mut total = 0.0;
        for shard in shards {
            let m = shard.len() as f64;
            let tv: f64 = (0..ds.num_classes)
                .map(|c| {
                    let p = shard.iter().filter(|&&i| ds.examples[i].label == c).count() as f64 / m;
                    (p - global[c]).abs()
                })
                .sum::<f64>()
                / 2.0;
            total += tv;
        }
        total / shards.len() as f64
    }

    #[test]
    fn smaller_beta_means_more_label_skew() {
        let ds = synth_blobs(4, 3, 400, 2.0, 5).unwrap();
        let mut last = f64::INFINITY;
        for beta in [0.1, 1.0, 10.0, 1000.0] {
            let mut acc = 0.0;
            for seed in 0..6 {
                let shards = partition(&ds, 8, PartitionSpec::Dirichlet { beta }, seed).unwrap();
                acc += mean_total_variation(&ds, &shards);
            }
            let mean_tv = acc / 6.0;
            assert!(mean_tv < last, "beta {beta}: tv {mean_tv} did not drop below {last}");
            last = mean_tv;
        }
    }

    #[test]
    fn huge_beta_tracks_global_label_proportions() {
        let ds = synth_blobs(4, 3, 400, 2.0, 5).unwrap();
        let shards = partition(&ds, 8, PartitionSpec::Dirichlet { beta: 1e6 }, 23).unwrap();
        for shard in &shards {
            let m = shard.len() as f64;
            for class in 0..4 {
                let p = shard.iter().filter(|&&i| ds.examples[i].label == class).count() as f64 / m;
                assert!((p - 0.25).abs() <= 0.05, "class {class} proportion {p}");
            }
        }
    }

    #[test]
    fn dirichlet_partition_is_reproducible() {
        let ds = synth_blobs(4, 3, 200, 2.0, 5).unwrap();
        let a = partition(&ds, 6, PartitionSpec::Dirichlet { beta: 0.3 }, 9).unwrap();
        let b = partition(&ds, 6, PartitionSpec::Dirichlet { beta: 0.3 }, 9).unwrap();
        assert_eq!(a, b);
        let c = partition(&ds, 6, PartitionSpec::Dirichlet { beta: 0.3 }, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn more_clients_than_examples_is_an_error() {
        let ds = synth_blobs(2, 3, 10, 2.0, 5).unwrap();
        let err = partition(&ds, 11, PartitionSpec::Iid, 1).unwrap_err();
        assert_eq!(err.class(), "too-many-clients");
        assert_eq!(partition(&ds, 0, PartitionSpec::Iid, 1).unwrap_err().class(), "invalid-spec");
    }

    #[test]
    fn split_is_stratified_and_exact() {
        let ds = synth_blobs(5, 4, 500, 2.0, 3).unwrap();
        let (train, test) = train_test_split(&ds, 0.2, 17).unwrap();
        assert_eq!(test.len(), 100);
        assert_eq!(train.len(), 400);
        for class in 0..5 {
            let in_test = test.examples.iter().filter(|e| e.label == class).count();
            assert_eq!(in_test, 20, "class {class} test share");
        }
        let (train2, test2) = train_test_split(&ds, 0.2, 17).unwrap();
        assert_eq!(train.len(), train2.len());
        assert_eq!(test.examples[0].features, test2.examples[0].features);
    }

    #[test]
    fn half_split_of_balanced_ten_is_five_five() {
        let ds = synth_blobs(2, 2, 10, 2.0, 4).unwrap();
        let (train, test) = train_test_split(&ds, 0.5, 8).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 5);
        for class in 0..2 {
            let in_train = train.examples.iter().filter(|e| e.label == class).count();
            let in_test = test.examples.iter().filter(|e| e.label == class).count();
            assert_eq!(in_train + in_test, 5);
            // An odd per-class quota cannot split evenly; 2/3 is as close as it gets.
            assert!((2..=3).contains(&in_test), "class {class} test share {in_test}");
        }
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = synth_blobs(2, 2, 10, 2.0, 3).unwrap();
        for f in [0.0, 1.0, -0.2, 0.01] {
            assert!(train_test_split(&ds, f, 1).is_err(), "fraction {f} accepted");
        }
    }

    #[test]
    fn class_restriction_remaps_labels() {
        let ds = synth_blobs(4, 3, 80, 2.0, 3).unwrap();
        let pair = ds.restrict_classes(&[3, 1]).unwrap();
        assert_eq!(pair.num_classes, 2);
        assert_eq!(pair.len(), 40);
        assert!(pair.examples.iter().all(|e| e.label < 2));
    }
}
