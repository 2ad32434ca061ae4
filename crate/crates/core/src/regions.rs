//! Foreground / boundary / global region partition.
//!
//! The boundary band is the ring between a dilation and an erosion of the
//! target mask. Both are thresholds on an exact squared Euclidean distance
//! transform, computed with the separable lower-envelope-of-parabolas
//! algorithm in pure integer arithmetic so `d² ≤ r²` has no rounding slack.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::depth::{check_dims, BinaryMask};
use crate::error::{Error, Result};

/// Band radius used by the benchmark, in pixels.
pub const DEFAULT_BAND_RADIUS: usize = 10;

/// Squared Euclidean distances to the nearest source pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceField {
    height: usize,
    width: usize,
    values: Vec<u64>,
}

impl DistanceField {
    /// Sentinel for "no source pixel anywhere".
    pub const INFINITE: u64 = u64::MAX;

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    /// Squared distance at `(x, y)`, `None` when no source exists.
    pub fn get(&self, x: usize, y: usize) -> Option<u64> {
        let v = self.values[y * self.width + x];
        (v != Self::INFINITE).then_some(v)
    }

    /// Euclidean distance, `+inf` when no source exists.
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.get(x, y).map_or(f64::INFINITY, |d| (d as f64).sqrt())
    }

    fn within(&self, radius_sq: u64) -> BinaryMask {
        BinaryMask::new(
            self.height,
            self.width,
            self.values.iter().map(|&d| d <= radius_sq).collect(),
        )
        .expect("dimensions match by construction")
    }
}

/// Exact squared Euclidean distance transform of `sources`.
pub fn exact_edt(sources: &BinaryMask) -> DistanceField {
    let (h, w) = sources.dims();
    let inf = DistanceField::INFINITE;
    let mut grid: Vec<u64> = sources.bits().iter().map(|&b| if b { 0 } else { inf }).collect();

    let n = h.max(w);
    let mut line = vec![0u64; n];
    let mut out = vec![0u64; n];
    let mut env = Envelope::with_capacity(n);

    // Columns first, then rows over the column result.
    for x in 0..w {
        for y in 0..h {
            line[y] = grid[y * w + x];
        }
        env.transform(&line[..h], &mut out[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let row = &mut grid[y * w..(y + 1) * w];
        line[..w].copy_from_slice(row);
        env.transform(&line[..w], &mut out[..w]);
        row.copy_from_slice(&out[..w]);
    }

    DistanceField {
        height: h,
        width: w,
        values: grid,
    }
}

/// Scratch space for the 1-D lower envelope of parabolas `(q - v)² + f(v)`.
///
/// Only sites with finite `f` enter the envelope. Breakpoints between
/// neighbouring parabolas are kept as exact rationals `num / den` with
/// `den > 0`.
struct Envelope {
    sites: Vec<usize>,
    // breaks[k] is where parabola k starts to win over parabola k - 1.
    breaks: Vec<(i128, i128)>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            sites: Vec::with_capacity(n),
            breaks: Vec::with_capacity(n),
        }
    }

    fn transform(&mut self, f: &[u64], out: &mut [u64]) {
        self.sites.clear();
        self.breaks.clear();

        for (q, &fq) in f.iter().enumerate() {
            if fq == DistanceField::INFINITE {
                continue;
            }
            loop {
                let Some(&v) = self.sites.last() else {
                    self.sites.push(q);
                    self.breaks.push((i128::MIN, 1));
                    break;
                };
                let s = intersection(f, v, q);
                let k = self.sites.len() - 1;
                // Drop parabola k when the new one overtakes it no later than
                // it overtook its predecessor.
                if k > 0 && rational_le(s, self.breaks[k]) {
                    self.sites.pop();
                    self.breaks.pop();
                    continue;
                }
                self.sites.push(q);
                self.breaks.push(s);
                break;
            }
        }

        if self.sites.is_empty() {
            out.fill(DistanceField::INFINITE);
            return;
        }

        let mut k = 0;
        for (q, slot) in out.iter_mut().enumerate() {
            while k + 1 < self.sites.len() && rational_le(self.breaks[k + 1], (q as i128, 1)) {
                k += 1;
            }
            let v = self.sites[k];
            let dq = q.abs_diff(v) as u64;
            *slot = dq * dq + f[v];
        }
    }
}

/// Abscissa where parabola at `q` starts to be no higher than the one at `v`
/// (`v < q`), as an unreduced fraction.
fn intersection(f: &[u64], v: usize, q: usize) -> (i128, i128) {
    let (v, q) = (v as i128, q as i128);
    let num = (f[q as usize] as i128 + q * q) - (f[v as usize] as i128 + v * v);
    (num, 2 * (q - v))
}

fn rational_le(a: (i128, i128), b: (i128, i128)) -> bool {
    if a.0 == i128::MIN {
        return true;
    }
    if b.0 == i128::MIN {
        return false;
    }
    a.0 * b.1 <= b.0 * a.1
}

/// Structuring element for the boundary band.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandShape {
    /// Euclidean disk, `dx² + dy² ≤ r²`.
    #[default]
    Disk,
    /// Chebyshev square, `max(|dx|, |dy|) ≤ r`.
    Square,
}

impl fmt::Display for BandShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Disk => "disk",
            Self::Square => "square",
        })
    }
}

impl FromStr for BandShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(Self::Disk),
            "square" => Ok(Self::Square),
            other => Err(Error::invalid(format!("unknown band shape `{other}`"))),
        }
    }
}

/// Morphological dilation: pixels within `radius` of a set pixel. Pixels
/// outside the image count as background.
pub fn dilate(mask: &BinaryMask, radius: usize, shape: BandShape) -> BinaryMask {
    match shape {
        BandShape::Disk => exact_edt(mask).within((radius * radius) as u64),
        BandShape::Square => dilate_square(mask, radius),
    }
}

/// Morphological erosion: set pixels farther than `radius` from every unset
/// pixel. Pixels outside the image count as foreground, so the image frame
/// never erodes the mask.
pub fn erode(mask: &BinaryMask, radius: usize, shape: BandShape) -> BinaryMask {
    // dist(p, M^c) > r  <=>  p not in dilate(M^c, r); for p in M^c the distance is 0.
    dilate(&mask.not(), radius, shape).not()
}

/// Ring `dilate(M, r) \ erode(M, r)` around the mask.
pub fn boundary_band(mask: &BinaryMask, radius: usize, shape: BandShape) -> Result<BinaryMask> {
    if radius < 1 {
        return Err(Error::invalid("band radius must be at least 1"));
    }
    Ok(dilate(mask, radius, shape).and_not(&erode(mask, radius, shape)))
}

fn dilate_square(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    let rows = sliding_any(mask.bits(), h, w, radius, true);
    let both = sliding_any(&rows, h, w, radius, false);
    BinaryMask::new(h, w, both).expect("dimensions match by construction")
}

/// For each pixel, whether any set pixel lies within `radius` along one axis.
fn sliding_any(bits: &[bool], h: usize, w: usize, radius: usize, along_rows: bool) -> Vec<bool> {
    let (lines, len) = if along_rows { (h, w) } else { (w, h) };
    let idx = |line: usize, i: usize| {
        if along_rows {
            line * w + i
        } else {
            i * w + line
        }
    };
    let mut out = vec![false; h * w];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + bits[idx(line, i)] as usize;
        }
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(len);
            out[idx(line, i)] = prefix[hi] > prefix[lo];
        }
    }
    out
}

/// Pixel counts of each region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub foreground: usize,
    pub boundary: usize,
    pub global: usize,
}

/// `fg = V ∩ M`, `bd = V ∩ B`, `glb = V`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSet {
    pub fg: BinaryMask,
    pub bd: BinaryMask,
    pub glb: BinaryMask,
    pub radius: usize,
    pub counts: RegionCounts,
}

pub fn region_partition(mask: &BinaryMask, valid: &BinaryMask, radius: usize, shape: BandShape) -> Result<RegionSet> {
    check_dims("valid mask", valid.dims(), mask.dims())?;
    let band = boundary_band(mask, radius, shape)?;
    let fg = valid.and(mask);
    let bd = valid.and(&band);
    let glb = valid.clone();
    let counts = RegionCounts {
        foreground: fg.count(),
        boundary: bd.count(),
        global: glb.count(),
    };
    Ok(RegionSet {
        fg,
        bd,
        glb,
        radius,
        counts,
    })
}
