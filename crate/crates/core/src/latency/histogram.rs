use std::io::Write;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{LatencyError, LatencyModel, SECONDS_PER_WEEK};

/// Fixed-width histogram over `[lo, hi]`. Values outside the range land in
/// the first or last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self, LatencyError> {
        if bins == 0 {
            return Err(LatencyError::ZeroBins);
        }
        let hi = if hi > lo { hi } else { lo + 1e-9 };
        Ok(Self {
            lo,
            hi,
            counts: vec![0; bins],
        })
    }

    pub fn from_samples(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self, LatencyError> {
        let mut h = Self::new(bins, lo, hi)?;
        for &x in samples {
            h.add(x);
        }
        Ok(h)
    }

    pub fn add(&mut self, x: f64) {
        let idx = self.bin_of(x);
        self.counts[idx] += 1;
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let n = self.counts.len();
        let pos = ((x - self.lo) / self.width()).floor();
        if pos < 0.0 || pos.is_nan() {
            0
        } else {
            (pos as usize).min(n - 1)
        }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, idx: usize) -> f64 {
        self.lo + (idx as f64 + 0.5) * self.width()
    }

    /// `(low, high, count)` per bin.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        let w = self.width();
        self.counts
            .iter()
            .enumerate()
            .map(move |(i, &c)| (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w, c))
    }

    pub fn nonempty_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn peak_bin(&self) -> usize {
        // first maximum
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    pub fn same_binning(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.counts.len() == other.counts.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_low", "bin_high", "count"])?;
        for (lo, hi, c) in self.rows() {
            w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn modes(&self) -> Vec<f64> {
        ModeDetector::default().detect(self)
    }
}

/// Peak finder: Gaussian-smooths the counts, then keeps local maxima whose
/// topographic prominence is at least `min_prominence` of the tallest peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDetector {
    pub smoothing_bins: f64,
    pub min_prominence: f64,
}

impl Default for ModeDetector {
    fn default() -> Self {
        Self {
            smoothing_bins: 2.0,
            min_prominence: 0.08,
        }
    }
}

impl ModeDetector {
    pub fn smooth(&self, counts: &[u64]) -> Vec<f64> {
        let n = counts.len();
        if self.smoothing_bins <= 0.0 {
            return counts.iter().map(|&c| c as f64).collect();
        }
        let sigma = self.smoothing_bins;
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        (0..n as isize)
            .map(|i| {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (j, w) in (-radius..=radius).zip(&kernel) {
                    let idx = i + j;
                    if idx >= 0 && (idx as usize) < n {
                        acc += w * counts[idx as usize] as f64;
                        norm += w;
                    }
                }
                acc / norm
            })
            .collect()
    }

    /// Centers of the detected modes, ascending.
    pub fn detect(&self, h: &Histogram) -> Vec<f64> {
        let s = self.smooth(h.counts());
        let top = s.iter().cloned().fold(0.0, f64::max);
        if top <= 0.0 {
            return Vec::new();
        }
        let threshold = self.min_prominence * top;
        let n = s.len();
        let mut modes = Vec::new();
        let mut i = 0;
        while i < n {
            // plateau [i, j)
            let mut j = i + 1;
            while j < n && s[j] == s[i] {
                j += 1;
            }
            let left_lower = i == 0 || s[i - 1] < s[i];
            let right_lower = j == n || s[j] < s[i];
            if left_lower && right_lower && s[i] > 0.0 {
                let prominence = s[i] - key_col(&s, i, j);
                if prominence >= threshold {
                    modes.push(h.bin_center((i + j - 1) / 2));
                }
            }
            i = j;
        }
        modes
    }
}

/// Higher of the two lowest points separating the plateau `[i, j)` from
/// higher ground on each side. The histogram is treated as zero beyond its
/// edges, so a side with no higher ground bottoms out at zero.
fn key_col(s: &[f64], i: usize, j: usize) -> f64 {
    let peak = s[i];
    let side = |iter: &mut dyn Iterator<Item = usize>| {
        let mut low = peak;
        for k in iter {
            if s[k] > peak {
                return low;
            }
            low = low.min(s[k]);
        }
        0.0
    };
    let left = side(&mut (0..i).rev());
    let right = side(&mut (j..s.len()));
    left.max(right)
}

/// Draws `n` samples from `model` at instants spread evenly over one week
/// and bins them over `[0, hard_max]`.
pub fn empirical_histogram<R: Rng + ?Sized>(
    model: &LatencyModel,
    n: usize,
    bins: usize,
    rng: &mut R,
) -> Result<Histogram, LatencyError> {
    if bins == 0 {
        return Err(LatencyError::ZeroBins);
    }
    if n == 0 {
        return Err(LatencyError::NoSamples);
    }
    let mut h = Histogram::new(bins, 0.0, model.hard_max())?;
    let step = SECONDS_PER_WEEK / n as f64;
    for i in 0..n {
        h.add(model.sample(rng, i as f64 * step));
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sample chi-square test of homogeneity. Adjacent bins are pooled
/// until each pooled cell holds at least 10 combined observations.
pub fn chi_square_homogeneity(a: &Histogram, b: &Histogram) -> Result<ChiSquare, LatencyError> {
    if !a.same_binning(b) {
        return Err(LatencyError::BinningMismatch);
    }
    let (na, nb) = (a.total() as f64, b.total() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(LatencyError::NoSamples);
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut ca, mut cb) = (0.0, 0.0);
    for (&x, &y) in a.counts().iter().zip(b.counts()) {
        ca += x as f64;
        cb += y as f64;
        if ca + cb >= 10.0 {
            cells.push((ca, cb));
            ca = 0.0;
            cb = 0.0;
        }
    }
    if ca + cb > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => cells.push((ca, cb)),
        }
    }
    let total = na + nb;
    let mut statistic = 0.0;
    for &(x, y) in &cells {
        let col = x + y;
        let ea = na * col / total;
        let eb = nb * col / total;
        statistic += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive dof");
        1.0 - dist.cdf(statistic)
    };
    Ok(ChiSquare {
        statistic,
        dof,
        p_value,
    })
}
