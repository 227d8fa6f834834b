//! Desk-scale datasets: a two-class Gaussian-blob image task, a digit-glyph
//! reconstruction task, and plain CSV ingestion for user data. Everything
//! is seeded and deterministic.

use crate::error::{Error, Result};
use crate::io;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// A supervised dataset. `inputs` are n x d_in with values in [0, 1];
/// `targets` are n x d_out (one-hot rows for classification, the
/// reconstruction target otherwise). `labels` carries the class index when
/// the task is classification.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        targets: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        if inputs.nrows() != targets.nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} target rows", inputs.nrows()),
                actual: targets.nrows().to_string(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != inputs.nrows() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} labels", inputs.nrows()),
                    actual: l.len().to_string(),
                });
            }
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite dataset values".into()));
        }
        Ok(Dataset {
            inputs,
            targets,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.ncols()
    }

    /// Split off the first `n` rows as one dataset and the rest as another.
    /// The generators already shuffle, so a prefix split is unbiased.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidInput(format!(
                "split at {n} of {} rows",
                self.len()
            )));
        }
        let take = |lo: usize, hi: usize| Dataset {
            inputs: self.inputs.slice(ndarray::s![lo..hi, ..]).to_owned(),
            targets: self.targets.slice(ndarray::s![lo..hi, ..]).to_owned(),
            labels: self.labels.as_ref().map(|l| l[lo..hi].to_vec()),
        };
        Ok((take(0, n), take(n, self.len())))
    }
}

/// Two-class 8x8 blob images: each sample is a Gaussian bump centered in
/// the upper-left (class 0) or lower-right (class 1) region, with jittered
/// center and light pixel noise. Classes alternate, then the whole set is
/// shuffled. Targets are one-hot.
pub fn blobs8x8(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidInput("n_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.02).expect("fixed sigma");
    let n = 2 * n_per_class;
    let mut inputs = Array2::zeros((n, 64));
    let mut targets = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);

    for s in 0..n {
        let class = s % 2;
        let (cx0, cy0) = if class == 0 { (2.5, 2.5) } else { (5.5, 5.5) };
        let cx = cx0 + rng.gen_range(-0.75..=0.75);
        let cy = cy0 + rng.gen_range(-0.75..=0.75);
        let sigma2 = 2.0 * 1.2f64.powi(2);
        for y in 0..8 {
            for x in 0..8 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = (-d2 / sigma2).exp() + noise.sample(&mut rng);
                inputs[[s, y * 8 + x]] = v.clamp(0.0, 1.0);
            }
        }
        targets[[s, class]] = 1.0;
        labels.push(class);
    }

    shuffle_rows(&mut inputs, &mut targets, &mut labels, &mut rng);
    Dataset::new(inputs, targets, Some(labels))
}

/// Two-class 8x8 signed composites: one bump minus another, class 1 being
/// the negation of class 0. Pixel values are signed and every pixel sees a
/// sign-symmetric stream across the set, so the per-line drive statistics
/// match up to magnitude. Centers jitter per sample; light pixel noise;
/// targets one-hot.
pub fn antipodal_blobs8x8(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidInput("n_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.02).expect("fixed sigma");
    let n = 2 * n_per_class;
    let mut inputs = Array2::zeros((n, 64));
    let mut targets = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);

    for s in 0..n {
        let class = s % 2;
        let sign = if class == 0 { 1.0 } else { -1.0 };
        let ax = 2.5 + rng.gen_range(-0.75..=0.75);
        let ay = 2.5 + rng.gen_range(-0.75..=0.75);
        let bx = 5.5 + rng.gen_range(-0.75..=0.75);
        let by = 5.5 + rng.gen_range(-0.75..=0.75);
        let sigma2 = 2.0 * 1.2f64.powi(2);
        for y in 0..8 {
            for x in 0..8 {
                let da = (x as f64 - ax).powi(2) + (y as f64 - ay).powi(2);
                let db = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                let v = 0.5 * ((-da / sigma2).exp() - (-db / sigma2).exp());
                let v = sign * v + noise.sample(&mut rng);
                inputs[[s, y * 8 + x]] = v.clamp(-0.5, 0.5);
            }
        }
        targets[[s, class]] = 1.0;
        labels.push(class);
    }

    shuffle_rows(&mut inputs, &mut targets, &mut labels, &mut rng);
    Dataset::new(inputs, targets, Some(labels))
}

/// 8x8 digit glyphs with per-sample shift jitter and pixel noise; the
/// target is the noisy image itself (reconstruction task). Digits cycle
/// 0..9 before shuffling; `labels` records the digit.
pub fn digits8x8(n_samples: usize, seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let glyphs = digit_glyphs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("fixed sigma");
    let mut inputs = Array2::zeros((n_samples, 64));
    let mut labels = Vec::with_capacity(n_samples);

    for s in 0..n_samples {
        let digit = s % 10;
        let dx = rng.gen_range(-1i64..=1);
        let dy = rng.gen_range(-1i64..=1);
        for y in 0..8i64 {
            for x in 0..8i64 {
                let (sy, sx) = (y - dy, x - dx);
                let base = if (0..8).contains(&sy) && (0..8).contains(&sx) {
                    glyphs[digit][sy as usize * 8 + sx as usize]
                } else {
                    0.0
                };
                let v = base + noise.sample(&mut rng);
                inputs[[s, (y * 8 + x) as usize]] = v.clamp(0.0, 1.0);
            }
        }
        labels.push(digit);
    }

    let mut targets = inputs.clone();
    shuffle_rows(&mut inputs, &mut targets, &mut labels, &mut rng);
    // reconstruction target is the (shuffled) input itself
    let targets = inputs.clone();
    Dataset::new(inputs, targets, Some(labels))
}

fn shuffle_rows(
    inputs: &mut Array2<f64>,
    targets: &mut Array2<f64>,
    labels: &mut [usize],
    rng: &mut ChaCha8Rng,
) {
    let n = inputs.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let in_copy = inputs.clone();
    let tg_copy = targets.clone();
    let lb_copy = labels.to_vec();
    for (dst, &src) in order.iter().enumerate() {
        inputs.row_mut(dst).assign(&in_copy.row(src));
        targets.row_mut(dst).assign(&tg_copy.row(src));
        labels[dst] = lb_copy[src];
    }
}

/// One 8x8 glyph per digit, row-major, 1.0 where inked.
fn digit_glyphs() -> Vec<Array1<f64>> {
    const ART: [[&str; 8]; 10] = [
        [
            "........", ".####...", "#....#..", "#....#..", "#....#..", "#....#..", ".####...",
            "........",
        ],
        [
            "........", "...#....", "..##....", "...#....", "...#....", "...#....", "..###...",
            "........",
        ],
        [
            "........", ".####...", "#....#..", "....#...", "...#....", "..#.....", "######..",
            "........",
        ],
        [
            "........", "#####...", ".....#..", "..###...", ".....#..", ".....#..", "#####...",
            "........",
        ],
        [
            "........", "#...#...", "#...#...", "#...#...", "######..", "....#...", "....#...",
            "........",
        ],
        [
            "........", "######..", "#.......", "#####...", ".....#..", ".....#..", "#####...",
            "........",
        ],
        [
            "........", ".####...", "#.......", "#####...", "#....#..", "#....#..", ".####...",
            "........",
        ],
        [
            "........", "######..", ".....#..", "....#...", "...#....", "..#.....", "..#.....",
            "........",
        ],
        [
            "........", ".####...", "#....#..", ".####...", "#....#..", "#....#..", ".####...",
            "........",
        ],
        [
            "........", ".####...", "#....#..", "#....#..", ".#####..", ".....#..", ".####...",
            "........",
        ],
    ];
    ART.iter()
        .map(|rows| {
            let mut g = Array1::zeros(64);
            for (y, row) in rows.iter().enumerate() {
                for (x, ch) in row.chars().enumerate() {
                    if ch == '#' {
                        g[y * 8 + x] = 1.0;
                    }
                }
            }
            g
        })
        .collect()
}

/// Load a dataset from a numeric CSV: the first `n_inputs` columns are
/// features, the rest are targets. Labels are derived by row argmax when
/// there are at least two target columns.
pub fn load_dataset_csv<P: AsRef<Path>>(path: P, n_inputs: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let (header, rows) = io::read_numeric_csv(path)?;
    if n_inputs == 0 || n_inputs >= header.len() {
        return Err(Error::InvalidInput(format!(
            "n_inputs {n_inputs} of {} columns",
            header.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: "no data rows".into(),
        });
    }
    let n_out = header.len() - n_inputs;
    let n = rows.len();
    let mut inputs = Array2::zeros((n, n_inputs));
    let mut targets = Array2::zeros((n, n_out));
    for (i, row) in rows.iter().enumerate() {
        for j in 0..n_inputs {
            inputs[[i, j]] = row[j];
        }
        for j in 0..n_out {
            targets[[i, j]] = row[n_inputs + j];
        }
    }
    let labels = (n_out >= 2).then(|| {
        targets
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
                    .unwrap_or(0)
            })
            .collect()
    });
    Dataset::new(inputs, targets, labels)
}

/// Write a dataset as one CSV, features first, targets after.
pub fn write_dataset_csv<P: AsRef<Path>>(path: P, seed: u64, data: &Dataset) -> Result<()> {
    let header: Vec<String> = (0..data.n_inputs())
        .map(|j| format!("x_{j}"))
        .chain((0..data.n_outputs()).map(|j| format!("t_{j}")))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_csv(
        path,
        seed,
        &[],
        &header_refs,
        (0..data.len()).map(|i| {
            data.inputs
                .row(i)
                .iter()
                .chain(data.targets.row(i).iter())
                .map(|v| io::fmt_f64(*v))
                .collect()
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_class_separated() {
        let a = blobs8x8(40, 5).unwrap();
        let b = blobs8x8(40, 5).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.len(), 80);
        assert!(a.inputs.iter().all(|v| (0.0..=1.0).contains(v)));

        // class 0 lights the upper-left region, class 1 the lower-right
        let labels = a.labels.as_ref().unwrap();
        let mean_at = |class: usize, pix: usize| {
            let rows: Vec<usize> = (0..a.len()).filter(|&i| labels[i] == class).collect();
            rows.iter().map(|&i| a.inputs[[i, pix]]).sum::<f64>() / rows.len() as f64
        };
        let ul = 2 * 8 + 2;
        let lr = 5 * 8 + 5;
        assert!(mean_at(0, ul) > mean_at(1, ul) + 0.3);
        assert!(mean_at(1, lr) > mean_at(0, lr) + 0.3);
    }

    #[test]
    fn antipodal_classes_mirror_each_other() {
        let a = antipodal_blobs8x8(40, 5).unwrap();
        let b = antipodal_blobs8x8(40, 5).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.len(), 80);
        assert!(a.inputs.iter().all(|v| (-0.5..=0.5).contains(v)));

        // per-pixel class means are opposite up to jitter and noise
        let labels = a.labels.as_ref().unwrap();
        let mean_at = |class: usize, pix: usize| {
            let rows: Vec<usize> = (0..a.len()).filter(|&i| labels[i] == class).collect();
            rows.iter().map(|&i| a.inputs[[i, pix]]).sum::<f64>() / rows.len() as f64
        };
        let ul = 2 * 8 + 2;
        let lr = 5 * 8 + 5;
        assert!(mean_at(0, ul) > 0.25 && mean_at(1, ul) < -0.25);
        assert!(mean_at(0, lr) < -0.25 && mean_at(1, lr) > 0.25);
        for pix in 0..64 {
            assert!((mean_at(0, pix) + mean_at(1, pix)).abs() < 0.1);
        }
    }

    #[test]
    fn digits_cycle_all_ten_glyphs() {
        let d = digits8x8(50, 9).unwrap();
        assert_eq!(d.len(), 50);
        assert_eq!(d.targets, d.inputs);
        let labels = d.labels.as_ref().unwrap();
        for digit in 0..10 {
            assert_eq!(labels.iter().filter(|&&l| l == digit).count(), 5);
        }
        assert!(d.inputs.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn split_keeps_rows_aligned() {
        let d = blobs8x8(10, 1).unwrap();
        let (a, b) = d.split_at(6).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(b.len(), 14);
        assert_eq!(a.inputs.row(0), d.inputs.row(0));
        assert_eq!(b.inputs.row(0), d.inputs.row(6));
        assert_eq!(b.labels.as_ref().unwrap()[0], d.labels.as_ref().unwrap()[6]);
        assert!(d.split_at(0).is_err());
        assert!(d.split_at(20).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let d = blobs8x8(6, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, 2, &d).unwrap();
        let back = load_dataset_csv(&path, 64).unwrap();
        assert_eq!(d.inputs, back.inputs);
        assert_eq!(d.targets, back.targets);
        assert_eq!(d.labels, back.labels);
    }
}
