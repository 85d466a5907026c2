//! User-aspect (X) and item-aspect (Y) matrices from train-review mentions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::DatasetSplit;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Mention counts and mean item sentiment, dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_features: usize,
    /// `n_users x n_features` mention counts.
    pub user_counts: Vec<u32>,
    /// `n_items x n_features` mention counts.
    pub item_counts: Vec<u32>,
    /// `n_items x n_features` mean sentiment; 0 where the count is 0.
    pub item_sentiment: Vec<f64>,
}

impl MentionStats {
    pub fn user_count(&self, u: usize, f: usize) -> u32 {
        self.user_counts[u * self.n_features + f]
    }

    pub fn item_count(&self, v: usize, f: usize) -> u32 {
        self.item_counts[v * self.n_features + f]
    }

    pub fn item_mean_sentiment(&self, v: usize, f: usize) -> f64 {
        self.item_sentiment[v * self.n_features + f]
    }
}

/// Counts every train triple once per occurrence.
pub fn count_mentions(split: &DatasetSplit) -> MentionStats {
    let (nu, nv, nf) = (split.n_users(), split.n_items(), split.n_features());
    let mut user_counts = vec![0u32; nu * nf];
    let mut item_counts = vec![0u32; nv * nf];
    let mut sentiment_sum = vec![0i64; nv * nf];
    for it in &split.train {
        for m in &it.mentions {
            user_counts[it.user * nf + m.feature] += 1;
            item_counts[it.item * nf + m.feature] += 1;
            sentiment_sum[it.item * nf + m.feature] += i64::from(m.sentiment);
        }
    }
    let item_sentiment = item_counts
        .iter()
        .zip(&sentiment_sum)
        .map(|(&t, &s)| if t == 0 { 0.0 } else { s as f64 / f64::from(t) })
        .collect();
    MentionStats {
        n_users: nu,
        n_items: nv,
        n_features: nf,
        user_counts,
        item_counts,
        item_sentiment,
    }
}

/// User attention to a feature mentioned `count` times; 0 when never mentioned.
pub fn user_aspect_value(count: u32, rating_scale: u32) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let n = f64::from(rating_scale);
    1.0 + (n - 1.0) * (2.0 / (1.0 + (-f64::from(count)).exp()) - 1.0)
}

/// Item quality on a feature with `count` mentions of mean polarity `mean_sentiment`.
pub fn item_aspect_value(count: u32, mean_sentiment: f64, rating_scale: u32) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let n = f64::from(rating_scale);
    1.0 + (n - 1.0) / (1.0 + (-f64::from(count) * mean_sentiment).exp())
}

pub fn build_x(stats: &MentionStats, rating_scale: u32) -> Result<Tensor> {
    check_scale(rating_scale)?;
    let data = stats
        .user_counts
        .iter()
        .map(|&t| user_aspect_value(t, rating_scale))
        .collect();
    Tensor::new(stats.n_users, stats.n_features, data)
}

pub fn build_y(stats: &MentionStats, rating_scale: u32) -> Result<Tensor> {
    check_scale(rating_scale)?;
    let data = stats
        .item_counts
        .iter()
        .zip(&stats.item_sentiment)
        .map(|(&t, &w)| item_aspect_value(t, w, rating_scale))
        .collect();
    Tensor::new(stats.n_items, stats.n_features, data)
}

fn check_scale(rating_scale: u32) -> Result<()> {
    if rating_scale < 2 {
        return Err(Error::Validation(format!(
            "rating scale must be >= 2, got {rating_scale}"
        )));
    }
    Ok(())
}

/// X, Y and the rating-scale bound N.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectMatrices {
    pub x: Tensor,
    pub y: Tensor,
    pub rating_scale: u32,
}

impl AspectMatrices {
    pub fn from_split(split: &DatasetSplit) -> Result<Self> {
        let stats = count_mentions(split);
        Ok(Self {
            x: build_x(&stats, split.rating_scale)?,
            y: build_y(&stats, split.rating_scale)?,
            rating_scale: split.rating_scale,
        })
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn with_y(&self, y: Tensor) -> Self {
        Self {
            x: self.x.clone(),
            y,
            rating_scale: self.rating_scale,
        }
    }

    /// Writes the binary cache: magic, version, dims, N, then row-major little-endian f64 X and Y.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for d in [self.x.rows(), self.x.cols(), self.y.rows(), self.y.cols()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.rating_scale.to_le_bytes())?;
        for v in self.x.data().iter().chain(self.y.data()) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut dims = [0usize; 4];
        let mut b8 = [0u8; 8];
        for d in &mut dims {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        r.read_exact(&mut b4)?;
        let rating_scale = u32::from_le_bytes(b4);
        let mut read_matrix = |rows: usize, cols: usize| -> Result<Tensor> {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut b8)?;
                data.push(f64::from_le_bytes(b8));
            }
            Tensor::new(rows, cols, data)
        };
        let x = read_matrix(dims[0], dims[1])?;
        let y = read_matrix(dims[2], dims[3])?;
        Ok(Self { x, y, rating_scale })
    }
}

const MAGIC: &[u8; 4] = b"RRAM";
const VERSION: u32 = 1;
