//! Dense depth grids, binary masks, and the small geometric helpers shared by
//! the region, metric, and benchmark modules.
//!
//! All grids are row-major: pixel `(x, y)` lives at index `y * width + x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the values of a [`DepthMap`] measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthUnit {
    Metric,
    Relative,
    Disparity,
}

/// Dense per-pixel depth. Non-finite entries are allowed and are never valid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    unit: DepthUnit,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, unit: DepthUnit) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "depth grid has {} values, expected {}x{}",
                values.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            unit,
        })
    }

    pub fn from_fn(height: usize, width: usize, unit: DepthUnit, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            height,
            width,
            values,
            unit,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn unit(&self) -> DepthUnit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Elementwise map that keeps the dimensions.
    pub fn map(&self, unit: DepthUnit, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
            unit,
        }
    }
}

/// Row-major boolean grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid(format!(
                "mask has {} values, expected {}x{}",
                bits.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn not(&self) -> Self {
        self.zip_with(self, |a, _| !a)
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && !b)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        debug_assert_eq!(self.dims(), other.dims());
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Half-open pixel box: `[x_min, x_max) x [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

/// Accepted depth range used to derive the valid-pixel mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityBounds {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl ValidityBounds {
    pub const METRIC: Self = Self {
        min_depth: 0.01,
        max_depth: 80.0,
    };

    pub const RELATIVE: Self = Self {
        min_depth: 1e-6,
        max_depth: f64::INFINITY,
    };

    pub fn new(min_depth: f64, max_depth: f64) -> Result<Self> {
        if !(min_depth > 0.0) || !(max_depth > min_depth) {
            return Err(Error::invalid(format!(
                "validity bounds need 0 < min_depth < max_depth, got [{min_depth}, {max_depth}]"
            )));
        }
        Ok(Self { min_depth, max_depth })
    }

    pub fn default_for(unit: DepthUnit) -> Self {
        match unit {
            DepthUnit::Metric => Self::METRIC,
            DepthUnit::Relative | DepthUnit::Disparity => Self::RELATIVE,
        }
    }
}

impl Default for ValidityBounds {
    fn default() -> Self {
        Self::METRIC
    }
}

/// Valid-depth mask: finite values inside `[min_depth, max_depth]`.
pub fn compute_valid(depth: &DepthMap, bounds: ValidityBounds) -> BinaryMask {
    BinaryMask {
        height: depth.height,
        width: depth.width,
        bits: depth
            .values
            .iter()
            .map(|&v| v.is_finite() && v >= bounds.min_depth && v <= bounds.max_depth)
            .collect(),
    }
}

/// Minimal half-open box enclosing every set pixel.
pub fn tight_bbox(mask: &BinaryMask) -> Result<BBox> {
    let mut bbox: Option<BBox> = None;
    for y in 0..mask.height {
        let row = &mask.bits[y * mask.width..(y + 1) * mask.width];
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        bbox = Some(match bbox {
            None => BBox {
                x_min: first,
                y_min: y,
                x_max: last + 1,
                y_max: y + 1,
            },
            Some(b) => BBox {
                x_min: b.x_min.min(first),
                y_min: b.y_min,
                x_max: b.x_max.max(last + 1),
                y_max: y + 1,
            },
        });
    }
    bbox.ok_or(Error::EmptyMask)
}

pub(crate) fn check_dims(what: &'static str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch {
            what,
            got_h: got.0,
            got_w: got.1,
            want_h: want.0,
            want_w: want.1,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth_row(values: &[f64]) -> DepthMap {
        DepthMap::new(1, values.len(), values.to_vec(), DepthUnit::Metric).unwrap()
    }

    #[test]
    fn valid_mask_rejects_nan_zero_and_out_of_range() {
        let bounds = ValidityBounds::new(0.01, 10.0).unwrap();
        let valid = compute_valid(&depth_row(&[f64::NAN, 0.0, 2.0]), bounds);
        assert_eq!(valid.bits(), &[false, false, true]);

        let valid = compute_valid(&depth_row(&[10.5, 10.0, f64::INFINITY]), bounds);
        assert_eq!(valid.bits(), &[false, true, false]);

        let valid = compute_valid(&depth_row(&[0.5, 1.0, 9.0]), bounds);
        assert!(valid.bits().iter().all(|&b| b));
    }

    #[test]
    fn bounds_are_checked() {
        assert!(ValidityBounds::new(0.0, 1.0).is_err());
        assert!(ValidityBounds::new(1.0, 1.0).is_err());
        assert!(ValidityBounds::new(1e-6, f64::INFINITY).is_ok());
    }

    #[test]
    fn bbox_of_single_pixel() {
        let mut mask = BinaryMask::filled(8, 8, false);
        mask.set(3, 4, true);
        assert_eq!(
            tight_bbox(&mask).unwrap(),
            BBox {
                x_min: 3,
                y_min: 4,
                x_max: 4,
                y_max: 5
            }
        );
    }

    #[test]
    fn bbox_of_two_pixels() {
        let mut mask = BinaryMask::filled(8, 8, false);
        mask.set(1, 1, true);
        mask.set(5, 2, true);
        assert_eq!(
            tight_bbox(&mask).unwrap(),
            BBox {
                x_min: 1,
                y_min: 1,
                x_max: 6,
                y_max: 3
            }
        );
    }

    #[test]
    fn bbox_of_empty_mask_fails() {
        let mask = BinaryMask::filled(4, 4, false);
        assert!(matches!(tight_bbox(&mask), Err(Error::EmptyMask)));
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(proptest::bool::weighted(0.2), h * w)
                .prop_map(move |bits| BinaryMask::new(h, w, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn bbox_is_tight(mask in arb_mask()) {
            prop_assume!(!mask.is_empty());
            let b = tight_bbox(&mask).unwrap();
            let (h, w) = mask.dims();
            prop_assert!(b.x_min < b.x_max && b.x_max <= w);
            prop_assert!(b.y_min < b.y_max && b.y_max <= h);
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x, y) {
                        prop_assert!(b.contains(x, y));
                    }
                }
            }
            // Each side touches a set pixel.
            prop_assert!((b.y_min..b.y_max).any(|y| mask.get(b.x_min, y)));
            prop_assert!((b.y_min..b.y_max).any(|y| mask.get(b.x_max - 1, y)));
            prop_assert!((b.x_min..b.x_max).any(|x| mask.get(x, b.y_min)));
            prop_assert!((b.x_min..b.x_max).any(|x| mask.get(x, b.y_max - 1)));
        }

        #[test]
        fn widening_bounds_never_removes_valid_pixels(
            values in proptest::collection::vec(-1.0f64..100.0, 1..64),
            lo in 0.01f64..5.0,
            span in 0.1f64..50.0,
            widen_lo in 0.0f64..1.0,
            widen_hi in 0.0f64..50.0,
        ) {
            let depth = depth_row(&values);
            let narrow = ValidityBounds::new(lo, lo + span).unwrap();
            let wide = ValidityBounds::new(lo * (1.0 - widen_lo).max(1e-3), lo + span + widen_hi).unwrap();
            let a = compute_valid(&depth, narrow);
            let b = compute_valid(&depth, wide);
            prop_assert!(a.is_subset_of(&b));
        }
    }
}
