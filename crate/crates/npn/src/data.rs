//! Dataset readers and generators: IDX image/label pairs, bag-of-words
//! triplet files, numeric regression CSVs, and seeded synthetic sets.

use crate::error::{NpnError, Result};
use crate::matrix::Matrix;
use crate::train::Dataset;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

/// What the targets of a loaded set mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Regression,
    Classification,
    Autoencoder,
}

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

fn read_be_u32(r: &mut impl Read, path: &str, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| NpnError::parse(path, format!("truncated while reading {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// IDX image/label pair: pixels scaled to [0,1] row-major, labels one-hot
/// over 0..=max label.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let ipath = images_path.display().to_string();
    let mut ir =
        BufReader::new(File::open(images_path).map_err(|e| NpnError::parse(&ipath, e.to_string()))?);
    let magic = read_be_u32(&mut ir, &ipath, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(NpnError::parse(
            &ipath,
            format!("expected magic {IDX_IMAGES_MAGIC}, found {magic}"),
        ));
    }
    let count = read_be_u32(&mut ir, &ipath, "image count")? as usize;
    let rows = read_be_u32(&mut ir, &ipath, "row count")? as usize;
    let cols = read_be_u32(&mut ir, &ipath, "column count")? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; count * dim];
    ir.read_exact(&mut pixels)
        .map_err(|_| NpnError::parse(&ipath, format!("truncated: expected {count}x{dim} pixels")))?;

    let lpath = labels_path.display().to_string();
    let mut lr =
        BufReader::new(File::open(labels_path).map_err(|e| NpnError::parse(&lpath, e.to_string()))?);
    let magic = read_be_u32(&mut lr, &lpath, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(NpnError::parse(
            &lpath,
            format!("expected magic {IDX_LABELS_MAGIC}, found {magic}"),
        ));
    }
    let lcount = read_be_u32(&mut lr, &lpath, "label count")? as usize;
    if lcount != count {
        return Err(NpnError::parse(
            &lpath,
            format!("{lcount} labels for {count} images"),
        ));
    }
    let mut labels = vec![0u8; count];
    lr.read_exact(&mut labels)
        .map_err(|_| NpnError::parse(&lpath, format!("truncated: expected {count} labels")))?;

    let x = Matrix::from_vec(
        count,
        dim,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    );
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let y = Matrix::from_fn(count, classes, |i, j| (labels[i] as usize == j) as u8 as f64);
    Dataset::new(x, y)
}

/// Per-document normalization of bag-of-words counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BowNorm {
    /// x <- x / max(x) per document.
    Max,
    /// Raw counts.
    None,
}

/// A parsed bag-of-words corpus: dense document matrix (targets equal
/// inputs) plus bookkeeping about dropped empty documents.
#[derive(Debug, Clone)]
pub struct BowCorpus {
    pub data: Dataset,
    pub vocab: usize,
    /// Documents dropped because every count was zero (including gaps in
    /// the document-id range).
    pub dropped: usize,
}

/// Reads "doc_id term_id count" triplet lines (0-based ids, whitespace
/// separated, blank lines ignored). `vocab` fixes the matrix width and
/// makes out-of-range term ids an error; without it the width is the
/// largest term id plus one.
pub fn read_bow(path: &Path, vocab: Option<usize>, norm: BowNorm) -> Result<BowCorpus> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| NpnError::parse(&name, e.to_string()))?;
    read_bow_from(BufReader::new(file), &name, vocab, norm)
}

pub fn read_bow_from(
    r: impl BufRead,
    path: &str,
    vocab: Option<usize>,
    norm: BowNorm,
) -> Result<BowCorpus> {
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut max_doc = None::<usize>;
    let mut max_term = None::<usize>;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let mut it = t.split_whitespace();
        let mut field = |name: &str| -> Result<&str> {
            it.next().ok_or_else(|| {
                NpnError::parse(path, format!("line {}: missing {name}", ln + 1))
            })
        };
        let doc: usize = field("doc_id")?.parse().map_err(|_| {
            NpnError::parse(path, format!("line {}: bad doc_id", ln + 1))
        })?;
        let term: usize = field("term_id")?.parse().map_err(|_| {
            NpnError::parse(path, format!("line {}: bad term_id", ln + 1))
        })?;
        let count: f64 = field("count")?.parse().map_err(|_| {
            NpnError::parse(path, format!("line {}: bad count", ln + 1))
        })?;
        if it.next().is_some() {
            return Err(NpnError::parse(
                path,
                format!("line {}: expected 3 fields", ln + 1),
            ));
        }
        if count < 0.0 || !count.is_finite() {
            return Err(NpnError::parse(
                path,
                format!("line {}: count {count} must be a finite nonnegative number", ln + 1),
            ));
        }
        if let Some(v) = vocab {
            if term >= v {
                return Err(NpnError::parse(
                    path,
                    format!("line {}: term_id {term} outside vocabulary of size {v}", ln + 1),
                ));
            }
        }
        max_doc = Some(max_doc.map_or(doc, |m: usize| m.max(doc)));
        max_term = Some(max_term.map_or(term, |m: usize| m.max(term)));
        triplets.push((doc, term, count));
    }
    let width = vocab.unwrap_or_else(|| max_term.map_or(0, |m| m + 1));
    if width == 0 {
        return Err(NpnError::parse(path, "no terms in corpus".to_string()));
    }
    let docs = max_doc.map_or(0, |m| m + 1);
    let mut dense = Matrix::zeros(docs, width);
    for (d, t, c) in triplets {
        *dense.at_mut(d, t) += c;
    }
    let keep: Vec<usize> = (0..docs)
        .filter(|&i| (0..width).any(|j| dense.at(i, j) > 0.0))
        .collect();
    let dropped = docs - keep.len();
    let mut x = dense.gather_rows(&keep);
    if norm == BowNorm::Max {
        for i in 0..x.rows() {
            let row_max = (0..width).fold(0.0f64, |m, j| m.max(x.at(i, j)));
            // Kept rows have a positive entry, so row_max > 0.
            for j in 0..width {
                *x.at_mut(i, j) /= row_max;
            }
        }
    }
    let data = Dataset::new(x.clone(), x)?;
    Ok(BowCorpus {
        data,
        vocab: width,
        dropped,
    })
}

/// Numeric CSV with features in the leading columns and the target in the
/// last. A non-numeric first row is treated as a header.
pub fn read_csv_regression(path: &Path) -> Result<Dataset> {
    let pathstr = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| NpnError::parse(&pathstr, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if vals.len() < 2 {
                    return Err(NpnError::parse(
                        &pathstr,
                        format!("line {}: need at least one feature and a target", ln + 1),
                    ));
                }
                rows.push(vals);
            }
            Err(_) if ln == 0 => continue,
            Err(e) => {
                return Err(NpnError::parse(&pathstr, format!("line {}: {e}", ln + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(NpnError::parse(&pathstr, "no data rows".to_string()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(NpnError::parse(&pathstr, "ragged rows".to_string()));
    }
    let n = rows.len();
    let x = Matrix::from_fn(n, width - 1, |i, j| rows[i][j]);
    let y = Matrix::from_fn(n, 1, |i, _| rows[i][width - 1]);
    Dataset::new(x, y)
}

/// Cubic toy set: x ~ U[-4,4], y = x^3 + N(0, 9).
pub fn gen_toy_regression(n: usize, seed: u64) -> Dataset {
    assert!(n >= 1, "need at least one point");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 3.0).expect("valid normal");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.gen_range(-4.0..=4.0);
        xs.push(x);
        ys.push(x * x * x + noise.sample(&mut rng));
    }
    Dataset::new(Matrix::from_vec(n, 1, xs), Matrix::from_vec(n, 1, ys))
        .expect("matching row counts")
}

/// Seeded synthetic bag-of-words corpus with topic structure: each document
/// mixes one of `topics` topic profiles with uniform background noise, and
/// per-document length varies so reconstruction difficulty varies too.
pub fn gen_bow_corpus(docs: usize, vocab: usize, topics: usize, seed: u64) -> Matrix {
    assert!(docs >= 1 && vocab >= 2 && topics >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_topic = (vocab / topics).max(1);
    let mut x = Matrix::zeros(docs, vocab);
    for i in 0..docs {
        let topic = rng.gen_range(0..topics);
        let lo = topic * per_topic;
        let hi = ((topic + 1) * per_topic).min(vocab);
        let tokens = rng.gen_range(20..200);
        for _ in 0..tokens {
            let j = if rng.gen::<f64>() < 0.8 {
                rng.gen_range(lo..hi)
            } else {
                rng.gen_range(0..vocab)
            };
            *x.at_mut(i, j) += 1.0;
        }
        let row_max = (0..vocab).fold(0.0f64, |m, j| m.max(x.at(i, j)));
        for j in 0..vocab {
            *x.at_mut(i, j) /= row_max;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    /// Two 2x2 images with labels, written byte by byte.
    fn golden_idx(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("imgs-idx3-ubyte");
        let labels = dir.join("lbls-idx1-ubyte");
        let mut f = File::create(&images).unwrap();
        f.write_all(&[0, 0, 8, 3]).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[0, 51, 102, 255, 255, 204, 153, 0]).unwrap();
        let mut f = File::create(&labels).unwrap();
        f.write_all(&[0, 0, 8, 1]).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[3, 0]).unwrap();
        (images, labels)
    }

    #[test]
    fn idx_golden_fixture_parses_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = golden_idx(dir.path());
        let ds = read_idx(&images, &labels).unwrap();
        assert_eq!(ds.x.shape(), (2, 4));
        assert_eq!(
            ds.x.data(),
            &[0.0, 0.2, 0.4, 1.0, 1.0, 0.8, 0.6, 0.0]
        );
        assert_eq!(ds.y.shape(), (2, 4));
        assert_eq!(ds.y.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn idx_rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = golden_idx(dir.path());
        // Labels handed to the images slot: magic 2049 where 2051 expected.
        let err = read_idx(&labels, &images).unwrap_err().to_string();
        assert!(err.contains("expected magic 2051"), "{err}");
        let err = read_idx(&images, &images).unwrap_err().to_string();
        assert!(err.contains("expected magic 2049"), "{err}");

        let truncated = dir.path().join("short-idx3-ubyte");
        let mut f = File::create(&truncated).unwrap();
        f.write_all(&[0, 0, 8, 3]).unwrap();
        f.write_all(&9u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[1, 2, 3]).unwrap();
        let err = read_idx(&truncated, &labels).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let (images2, labels2) = golden_idx(dir.path());
        let wrong = dir.path().join("count-idx1-ubyte");
        let mut f = File::create(&wrong).unwrap();
        f.write_all(&[0, 0, 8, 1]).unwrap();
        f.write_all(&3u32.to_be_bytes()).unwrap();
        f.write_all(&[1, 2, 3]).unwrap();
        drop(labels2);
        let err = read_idx(&images2, &wrong).unwrap_err().to_string();
        assert!(err.contains("3 labels for 2 images"), "{err}");
    }

    #[test]
    fn bow_normalizes_per_document_and_drops_empty() {
        let text = "0 0 3\n0 1 1\n2 1 2\n";
        let corpus =
            read_bow_from(text.as_bytes(), "test", None, BowNorm::Max).unwrap();
        // Doc 1 never appears: dropped.
        assert_eq!(corpus.dropped, 1);
        assert_eq!(corpus.vocab, 2);
        assert_eq!(corpus.data.x.shape(), (2, 2));
        assert_eq!(corpus.data.x.data(), &[1.0, 1.0 / 3.0, 0.0, 1.0]);
        assert_eq!(corpus.data.x.data(), corpus.data.y.data());

        let raw = read_bow_from(text.as_bytes(), "test", None, BowNorm::None).unwrap();
        assert_eq!(raw.data.x.data(), &[3.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn bow_rejects_malformed_lines_and_vocab_overflow() {
        let err = read_bow_from("0 0\n".as_bytes(), "t", None, BowNorm::Max)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1"), "{err}");
        let err = read_bow_from("0 x 1\n".as_bytes(), "t", None, BowNorm::Max)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1: bad term_id"), "{err}");
        let err = read_bow_from("0 0 1\n0 7 1\n".as_bytes(), "t", Some(5), BowNorm::Max)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("vocabulary"), "{err}");
    }

    #[test]
    fn toy_regression_is_seeded_and_in_range() {
        let a = gen_toy_regression(20, 9);
        let b = gen_toy_regression(20, 9);
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.y.data(), b.y.data());
        assert_eq!(a.len(), 20);
        assert!(a.x.data().iter().all(|&v| (-4.0..=4.0).contains(&v)));
        let c = gen_toy_regression(20, 10);
        assert_ne!(a.x.data(), c.x.data());
    }

    #[test]
    fn toy_noise_statistics() {
        let ds = gen_toy_regression(1_000_000, 3);
        let resid: Vec<f64> = (0..ds.len())
            .map(|i| {
                let x = ds.x.at(i, 0);
                ds.y.at(i, 0) - x * x * x
            })
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / resid.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 9.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn csv_regression_reads_header_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "x,y\n1.0,2.0\n-0.5,3.5\n").unwrap();
        let ds = read_csv_regression(&path).unwrap();
        assert_eq!(ds.x.data(), &[1.0, -0.5]);
        assert_eq!(ds.y.data(), &[2.0, 3.5]);

        std::fs::write(&path, "x,y\n1.0,oops\n").unwrap();
        let err = read_csv_regression(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn synthetic_corpus_shape_and_range() {
        let x = gen_bow_corpus(50, 40, 4, 1);
        assert_eq!(x.shape(), (50, 40));
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Every row is max-normalized, so each has a 1.
        for i in 0..50 {
            assert!((0..40).any(|j| x.at(i, j) == 1.0));
        }
        let y = gen_bow_corpus(50, 40, 4, 1);
        assert_eq!(x.data(), y.data());
    }
}
