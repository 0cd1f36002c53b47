//! Saliency maps in the 8-bit pixel domain and their unit-interval view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel 8-bit salience grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "saliency map must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} map needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty saliency map");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "empty saliency map");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.data
    }

    /// Number of nonzero pixels.
    pub fn support_size(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0).count()
    }

    pub fn to_unit(&self) -> UnitMap {
        to_unit(self)
    }
}

/// Floating-point view of a saliency map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl UnitMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} unit map with {} values",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ShapeMismatch(format!(
                "unit map value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Build from values already known to lie in `[0, 1]`; out-of-range
    /// values are clamped.
    pub(crate) fn from_clamped(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Scale back to 8 bits, rounding half away from zero.
    pub fn to_saliency(&self) -> SaliencyMap {
        SaliencyMap {
            width: self.width,
            height: self.height,
            data: self
                .values
                .iter()
                .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }
}

/// Raw annotations collected for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub sample_id: String,
    pub annotator_maps: Vec<SaliencyMap>,
    pub annotator_correct: Vec<bool>,
}

impl AnnotationSet {
    pub fn new(
        sample_id: impl Into<String>,
        annotator_maps: Vec<SaliencyMap>,
        annotator_correct: Vec<bool>,
    ) -> Result<Self> {
        if annotator_maps.len() != annotator_correct.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} annotator maps but {} correctness flags",
                annotator_maps.len(),
                annotator_correct.len()
            )));
        }
        if let Some(first) = annotator_maps.first() {
            if let Some(bad) = annotator_maps.iter().find(|m| m.dims() != first.dims()) {
                return Err(Error::dims(first.dims(), bad.dims()));
            }
        }
        Ok(Self {
            sample_id: sample_id.into(),
            annotator_maps,
            annotator_correct,
        })
    }

    pub fn correct_count(&self) -> usize {
        self.annotator_correct.iter().filter(|&&c| c).count()
    }
}

/// Pixelwise mean over the maps whose annotator classified the sample
/// correctly, rounded half away from zero.
pub fn aggregate_annotations(set: &AnnotationSet) -> Result<SaliencyMap> {
    if set.annotator_maps.len() != set.annotator_correct.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} annotator maps but {} correctness flags",
            set.annotator_maps.len(),
            set.annotator_correct.len()
        )));
    }
    let mut selected = set
        .annotator_maps
        .iter()
        .zip(&set.annotator_correct)
        .filter_map(|(m, &ok)| ok.then_some(m));
    let first = selected.next().ok_or(Error::NoCorrectAnnotations)?;
    // Dimensions are checked over every map, flagged or not.
    if let Some(bad) = set
        .annotator_maps
        .iter()
        .find(|m| m.dims() != first.dims())
    {
        return Err(Error::dims(first.dims(), bad.dims()));
    }

    let mut sums: Vec<u32> = first.pixels().iter().map(|&v| u32::from(v)).collect();
    let mut count = 1u32;
    for map in selected {
        count += 1;
        for (acc, &v) in sums.iter_mut().zip(map.pixels()) {
            *acc += u32::from(v);
        }
    }
    // round(sum / n) half away from zero, in exact integer arithmetic
    let data = sums
        .into_iter()
        .map(|s| ((2 * s + count) / (2 * count)) as u8)
        .collect();
    Ok(SaliencyMap {
        width: first.width,
        height: first.height,
        data,
    })
}

pub fn to_unit(map: &SaliencyMap) -> UnitMap {
    UnitMap {
        width: map.width,
        height: map.height,
        values: map.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
    }
}

/// Stretch values to span `[0, 1]`. A constant map becomes all zeros.
pub fn minmax_normalize(map: &UnitMap) -> UnitMap {
    UnitMap {
        width: map.width,
        height: map.height,
        values: minmax_values(&map.values),
    }
}

pub(crate) fn minmax_values(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi > lo {
        let span = hi - lo;
        values.iter().map(|&v| (v - lo) / span).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
///
/// # Panics
/// If a target dimension is zero.
pub fn resize_bilinear(map: &UnitMap, new_width: usize, new_height: usize) -> UnitMap {
    assert!(new_width > 0 && new_height > 0, "resize target must be non-empty");
    let xs = axis_samples(map.width, new_width);
    let ys = axis_samples(map.height, new_height);
    let mut values = Vec::with_capacity(new_width * new_height);
    for &(y0, y1, ty) in &ys {
        let row0 = &map.values[y0 * map.width..(y0 + 1) * map.width];
        let row1 = &map.values[y1 * map.width..(y1 + 1) * map.width];
        for &(x0, x1, tx) in &xs {
            let top = row0[x0] + (row0[x1] - row0[x0]) * tx;
            let bottom = row1[x0] + (row1[x1] - row1[x0]) * tx;
            values.push(top + (bottom - top) * ty);
        }
    }
    UnitMap::from_clamped(new_width, new_height, values)
}

fn axis_samples(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}
