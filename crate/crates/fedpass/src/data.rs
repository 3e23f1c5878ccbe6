//! Dataset ingestion and vertical feature partitioning: the IDX binary image
//! format, a synthetic Gaussian-blob generator, a deterministic rendered-digit
//! corpus for offline runs, and contiguous column splitting across parties.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parses a big-endian IDX image/label file pair: pixels scaled to [0, 1],
/// output shape n x 1 x rows x cols.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let mut r = BufReader::new(File::open(images_path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image magic: expected {IDX_IMAGES_MAGIC:#010x}, got {magic:#010x}"
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let rows = r.read_u32::<BigEndian>()? as usize;
    let cols = r.read_u32::<BigEndian>()? as usize;
    let mut bytes = vec![0u8; n * rows * cols];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated image file".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after image data".into()));
    }
    let images = Tensor::new(
        vec![n, 1, rows, cols],
        bytes.iter().map(|&b| b as f64 / 255.0).collect(),
    )?;

    let mut r = BufReader::new(File::open(labels_path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label magic: expected {IDX_LABELS_MAGIC:#010x}, got {magic:#010x}"
        )));
    }
    let ln = r.read_u32::<BigEndian>()? as usize;
    if ln != n {
        return Err(Error::Format(format!(
            "count mismatch: {n} images but {ln} labels"
        )));
    }
    let mut labels = vec![0u8; ln];
    r.read_exact(&mut labels)
        .map_err(|_| Error::Format("truncated label file".into()))?;
    Ok((images, labels.into_iter().map(|b| b as usize).collect()))
}

/// Writes images (values in [0, 1], shape n x 1 x rows x cols) as an IDX file.
pub fn write_idx_images(path: &Path, images: &Tensor) -> Result<()> {
    let shape = images.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::Shape("expected n x 1 x rows x cols images".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    w.write_u32::<BigEndian>(shape[0] as u32)?;
    w.write_u32::<BigEndian>(shape[2] as u32)?;
    w.write_u32::<BigEndian>(shape[3] as u32)?;
    for &v in images.data() {
        w.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
    }
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    for &l in labels {
        if l > 255 {
            return Err(Error::Format(format!("label {l} does not fit a byte")));
        }
        w.write_all(&[l as u8])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub dims: usize,
    pub classes: usize,
    pub blob_sep: f64,
}

/// Gaussian blobs: each class is centered at a random unit direction scaled
/// by `blob_sep`, with unit-variance isotropic noise.
pub fn synth_dataset(spec: &SynthSpec, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
    if spec.classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if spec.n == 0 || spec.dims == 0 {
        return Err(Error::Config("empty synthetic dataset".into()));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut centers = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut dir: Vec<f64> = (0..spec.dims).map(|_| normal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut dir {
            *v *= spec.blob_sep / norm;
        }
        centers.push(dir);
    }
    let mut data = Vec::with_capacity(spec.n * spec.dims);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.classes;
        labels.push(c);
        for d in 0..spec.dims {
            data.push(centers[c][d] + normal.sample(rng));
        }
    }
    Ok((Tensor::new(vec![spec.n, spec.dims], data)?, labels))
}

const DIGIT_FONT: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

/// Procedurally rendered 28x28 digit images: a 5x7 glyph scaled 3x, placed
/// at a jittered offset with additive pixel noise. A deterministic stand-in
/// when the real handwritten corpus is absent.
pub fn render_digit_corpus(n: usize, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Config("empty rendered corpus".into()));
    }
    let noise = Normal::new(0.0, 0.08).unwrap();
    let mut data = Vec::with_capacity(n * 28 * 28);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        labels.push(digit);
        let dx = 3 + rng.random_range(0..7) as isize;
        let dy = 1 + rng.random_range(0..5) as isize;
        let intensity = 0.75 + 0.25 * rng.random::<f64>();
        let mut img = vec![0.0f64; 28 * 28];
        for (gy, row) in DIGIT_FONT[digit].iter().enumerate() {
            for (gx, ch) in row.chars().enumerate() {
                if ch != '#' {
                    continue;
                }
                for sy in 0..3isize {
                    for sx in 0..3isize {
                        let y = dy + 3 * gy as isize + sy;
                        let x = dx + 3 * gx as isize + sx;
                        if (0..28).contains(&y) && (0..28).contains(&x) {
                            img[(y * 28 + x) as usize] = intensity;
                        }
                    }
                }
            }
        }
        for v in &mut img {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
        data.extend_from_slice(&img);
    }
    Ok((Tensor::new(vec![n, 1, 28, 28], data)?, labels))
}

/// Contiguous column blocks across K parties. Images (n x c x h x w) are cut
/// along the width; flat features (n x d) along the coordinate axis. When the
/// dimension is not divisible, the leading shards take one extra column.
pub fn vertical_split(features: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let shape = features.shape();
    if shape.len() != 2 && shape.len() != 4 {
        return Err(Error::Shape("expected n x d or n x c x h x w features".into()));
    }
    let dim = *shape.last().unwrap();
    if k == 0 || k > dim {
        return Err(Error::Config(format!(
            "cannot split {dim} columns across {k} parties"
        )));
    }
    let base = dim / k;
    let rem = dim % k;
    let widths: Vec<usize> = (0..k).map(|i| base + usize::from(i < rem)).collect();
    let outer: usize = shape[..shape.len() - 1].iter().product();
    let mut shards = Vec::with_capacity(k);
    let mut start = 0usize;
    for &w in &widths {
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let row = &features.data()[o * dim..(o + 1) * dim];
            data.extend_from_slice(&row[start..start + w]);
        }
        let mut s = shape.to_vec();
        *s.last_mut().unwrap() = w;
        shards.push(Tensor::new(s, data)?);
        start += w;
    }
    Ok(shards)
}

/// Inverse of `vertical_split`: concatenates shards along the last axis.
pub fn reassemble(shards: &[Tensor]) -> Result<Tensor> {
    if shards.is_empty() {
        return Err(Error::Shape("no shards to reassemble".into()));
    }
    let first = shards[0].shape();
    let outer: usize = first[..first.len() - 1].iter().product();
    for s in shards {
        if s.shape()[..first.len() - 1] != first[..first.len() - 1] {
            return Err(Error::Shape("shards disagree on leading axes".into()));
        }
    }
    let widths: Vec<usize> = shards.iter().map(|s| *s.shape().last().unwrap()).collect();
    let dim: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * dim);
    for o in 0..outer {
        for (s, &w) in shards.iter().zip(&widths) {
            data.extend_from_slice(&s.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.to_vec();
    *shape.last_mut().unwrap() = dim;
    Tensor::new(shape, data)
}

/// The dataset root: the FEDPASS_DATA_DIR environment variable when set.
pub fn data_dir() -> Option<std::path::PathBuf> {
    std::env::var_os("FEDPASS_DATA_DIR").map(std::path::PathBuf::from)
}

/// Loads the real handwritten-digit IDX files from `dir` when present,
/// otherwise renders the procedural corpus. Returns (train, test) pairs of
/// the requested sizes.
#[allow(clippy::type_complexity)]
pub fn digits_dataset(
    dir: Option<&Path>,
    train_n: usize,
    test_n: usize,
    rng: &mut impl Rng,
) -> Result<((Tensor, Vec<usize>), (Tensor, Vec<usize>))> {
    if let Some(dir) = dir {
        let train_img = dir.join("train-images-idx3-ubyte");
        let train_lbl = dir.join("train-labels-idx1-ubyte");
        let test_img = dir.join("t10k-images-idx3-ubyte");
        let test_lbl = dir.join("t10k-labels-idx1-ubyte");
        if train_img.exists() && train_lbl.exists() && test_img.exists() && test_lbl.exists() {
            let (xi, yi) = load_mnist_idx(&train_img, &train_lbl)?;
            let (xt, yt) = load_mnist_idx(&test_img, &test_lbl)?;
            let tr: Vec<usize> = (0..train_n.min(xi.shape()[0])).collect();
            let te: Vec<usize> = (0..test_n.min(xt.shape()[0])).collect();
            return Ok((
                (xi.select_rows(&tr)?, tr.iter().map(|&i| yi[i]).collect()),
                (xt.select_rows(&te)?, te.iter().map(|&i| yt[i]).collect()),
            ));
        }
    }
    let (train, test) = (
        render_digit_corpus(train_n, rng)?,
        render_digit_corpus(test_n, rng)?,
    );
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn idx_round_trip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs");
        let lbl_path = dir.path().join("lbls");
        // two 2x3 images written byte by byte
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 255, 51, 102, 153, 204, 10, 20, 30, 40, 50, 60]);
        std::fs::write(&img_path, &bytes).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[7, 3]);
        std::fs::write(&lbl_path, &lbl).unwrap();

        let (imgs, labels) = load_mnist_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(imgs.shape(), &[2, 1, 2, 3]);
        assert_eq!(labels, vec![7, 3]);
        assert_eq!(imgs.data()[0], 0.0);
        assert_eq!(imgs.data()[1], 1.0);
        assert_eq!(imgs.data()[2], 51.0 / 255.0);
    }

    #[test]
    fn idx_writer_reader_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (imgs, labels) = render_digit_corpus(6, &mut rng).unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        write_idx_images(&ip, &imgs).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        let (back, lback) = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(lback, labels);
        // quantization to bytes, then back: within half a step
        assert!(imgs.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn idx_wrong_magic_names_values() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("bad");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0802u32.to_be_bytes());
        bytes.extend_from_slice(&[0; 12]);
        std::fs::write(&img_path, &bytes).unwrap();
        let err = load_mnist_idx(&img_path, &img_path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("0x00000803") && msg.contains("0x00000802"), "{msg}");
    }

    #[test]
    fn idx_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("trunc");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        bytes.extend_from_slice(&5u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]); // far fewer than 20 pixels
        std::fs::write(&img_path, &bytes).unwrap();
        let lbl_path = dir.path().join("lbl");
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[1, 2]);
        std::fs::write(&lbl_path, &lbl).unwrap();
        assert!(load_mnist_idx(&img_path, &lbl_path).is_err());

        // valid images but mismatched label count
        let dir2 = tempfile::tempdir().unwrap();
        let ip = dir2.path().join("i");
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let (imgs, _) = render_digit_corpus(3, &mut rng).unwrap();
        write_idx_images(&ip, &imgs).unwrap();
        let lp = dir2.path().join("l");
        write_idx_labels(&lp, &[1, 2]).unwrap();
        let err = load_mnist_idx(&ip, &lp).unwrap_err();
        assert!(format!("{err}").contains("count mismatch"));
    }

    #[test]
    fn rendered_corpus_deterministic_and_balanced() {
        let a = render_digit_corpus(30, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let b = render_digit_corpus(30, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        for d in 0..10 {
            assert_eq!(a.1.iter().filter(|&&l| l == d).count(), 3);
        }
        assert!(a.0.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn split_examples() {
        let img = Tensor::zeros(vec![2, 1, 28, 28]);
        let shards = vertical_split(&img, 2).unwrap();
        assert_eq!(shards[0].shape(), &[2, 1, 28, 14]);
        assert_eq!(shards[1].shape(), &[2, 1, 28, 14]);

        let flat = Tensor::new(vec![1, 10], (0..10).map(|v| v as f64).collect()).unwrap();
        let shards = vertical_split(&flat, 3).unwrap();
        assert_eq!(
            shards.iter().map(|s| s.shape()[1]).collect::<Vec<_>>(),
            vec![4, 3, 3]
        );
        assert_eq!(shards[0].data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(shards[2].data(), &[7.0, 8.0, 9.0]);

        assert!(vertical_split(&flat, 11).is_err());
    }

    #[test]
    fn split_reassemble_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for &(k, d) in &[(2usize, 8usize), (3, 10), (5, 7)] {
            let t = Tensor::new(vec![4, d], (0..4 * d).map(|_| rng.random::<f64>()).collect())
                .unwrap();
            let back = reassemble(&vertical_split(&t, k).unwrap()).unwrap();
            assert_eq!(back, t);
        }
        let img = Tensor::new(
            vec![2, 1, 4, 5],
            (0..40).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let back = reassemble(&vertical_split(&img, 2).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn synth_blobs_separable_and_deterministic() {
        let spec = SynthSpec {
            n: 300,
            dims: 8,
            classes: 3,
            blob_sep: 10.0,
        };
        let (xa, ya) = synth_dataset(&spec, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        let (xb, _) = synth_dataset(&spec, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        assert_eq!(xa, xb);

        // nearest-centroid oracle
        let mut centroids = vec![vec![0.0; 8]; 3];
        let mut counts = vec![0usize; 3];
        for (i, &c) in ya.iter().enumerate() {
            counts[c] += 1;
            for d in 0..8 {
                centroids[c][d] += xa.data()[i * 8 + d];
            }
        }
        for (c, count) in counts.iter().enumerate() {
            for d in 0..8 {
                centroids[c][d] /= *count as f64;
            }
        }
        let mut correct = 0;
        for (i, &c) in ya.iter().enumerate() {
            let x = &xa.data()[i * 8..(i + 1) * 8];
            let pred = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&centroids[a]).map(|(v, m)| (v - m) * (v - m)).sum();
                    let db: f64 = x.iter().zip(&centroids[b]).map(|(v, m)| (v - m) * (v - m)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if pred == c {
                correct += 1;
            }
        }
        assert!(correct as f64 / 300.0 >= 0.99);

        assert!(synth_dataset(
            &SynthSpec { n: 10, dims: 2, classes: 1, blob_sep: 1.0 },
            &mut ChaCha20Rng::seed_from_u64(0)
        )
        .is_err());
    }
}
