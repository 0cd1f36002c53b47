//! FOI / AOI / BOI derivation.
//!
//! FOI is the aggregated fine-grained map itself. AOI is its binarized
//! support. BOI is the single minimal axis-aligned rectangle enclosing every
//! salient pixel, optionally after one 3x3 erosion pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::SaliencyMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityLevel {
    Boi,
    Aoi,
    Foi,
}

impl GranularityLevel {
    pub const ALL: [GranularityLevel; 3] = [Self::Boi, Self::Aoi, Self::Foi];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Boi => "BOI",
            Self::Aoi => "AOI",
            Self::Foi => "FOI",
        }
    }
}

impl fmt::Display for GranularityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GranularityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "boi" => Ok(Self::Boi),
            "aoi" => Ok(Self::Aoi),
            "foi" => Ok(Self::Foi),
            other => Err(Error::ConfigInvalid(format!("unknown granularity `{other}`"))),
        }
    }
}

/// Binarization rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// `v > 0` becomes 255.
    Positive,
    /// `v > 127` becomes 255.
    Half,
}

impl ThresholdMode {
    fn keeps(self, v: u8) -> bool {
        match self {
            Self::Positive => v > 0,
            Self::Half => v > 127,
        }
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Ok(Self::Positive),
            "half" => Ok(Self::Half),
            other => Err(Error::ConfigInvalid(format!("unknown threshold mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GranularitySpec {
    pub level: GranularityLevel,
    pub threshold_mode: ThresholdMode,
    /// Only consulted for [`GranularityLevel::Boi`].
    #[serde(default)]
    pub erode_before_boi: bool,
}

impl GranularitySpec {
    /// Recipe for maps aggregated from human annotators.
    pub fn human(level: GranularityLevel) -> Self {
        Self {
            level,
            threshold_mode: ThresholdMode::Positive,
            erode_before_boi: false,
        }
    }

    /// Recipe for mimic-generated iris maps: half threshold, eroded BOI.
    pub fn mimic_iris(level: GranularityLevel) -> Self {
        Self {
            level,
            threshold_mode: ThresholdMode::Half,
            erode_before_boi: true,
        }
    }

    /// Recipe for mimic-generated face maps: half threshold, no erosion.
    pub fn mimic_face(level: GranularityLevel) -> Self {
        Self {
            level,
            threshold_mode: ThresholdMode::Half,
            erode_before_boi: false,
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl Rect {
    pub fn new(min_x: usize, min_y: usize, max_x: usize, max_y: usize) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width - 1, height - 1)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.min_x..=self.max_x).contains(&x) && (self.min_y..=self.max_y).contains(&y)
    }

    pub fn area(&self) -> usize {
        (self.max_x - self.min_x + 1) * (self.max_y - self.min_y + 1)
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Rect({}, {}, {}, {})",
            self.min_x, self.min_y, self.max_x, self.max_y
        )
    }
}

pub fn binarize(map: &SaliencyMap, mode: ThresholdMode) -> SaliencyMap {
    let data = map
        .pixels()
        .iter()
        .map(|&v| if mode.keeps(v) { 255 } else { 0 })
        .collect();
    SaliencyMap::new(map.width(), map.height(), data).expect("dimensions preserved")
}

/// One pass of binary erosion with a full 3x3 structuring element.
/// Pixels outside the image count as background.
pub fn erode_3x3(map: &SaliencyMap) -> Result<SaliencyMap> {
    if let Some(&bad) = map.pixels().iter().find(|&&v| v != 0 && v != 255) {
        return Err(Error::NotBinary(bad));
    }
    let (w, h) = map.dims();
    let px = map.pixels();
    // Horizontal pass: a pixel survives if it and both row neighbours are set.
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &px[y * w..(y + 1) * w];
        for x in 1..w.saturating_sub(1) {
            horiz[y * w + x] = row[x - 1] == 255 && row[x] == 255 && row[x + 1] == 255;
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 0..w {
            if horiz[(y - 1) * w + x] && horiz[y * w + x] && horiz[(y + 1) * w + x] {
                out[y * w + x] = 255;
            }
        }
    }
    SaliencyMap::new(w, h, out)
}

/// Smallest rectangle containing every nonzero pixel.
pub fn bounding_rectangle(map: &SaliencyMap) -> Result<Rect> {
    let w = map.width();
    let mut rect: Option<Rect> = None;
    for (y, row) in map.pixels().chunks_exact(w).enumerate() {
        let Some(first) = row.iter().position(|&v| v > 0) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v > 0).unwrap_or(first);
        rect = Some(match rect {
            None => Rect::new(first, y, last, y),
            Some(r) => Rect::new(r.min_x.min(first), r.min_y, r.max_x.max(last), y),
        });
    }
    rect.ok_or(Error::EmptySaliency)
}

pub fn rasterize_rect(rect: Rect, width: usize, height: usize) -> Result<SaliencyMap> {
    if width == 0
        || height == 0
        || rect.min_x > rect.max_x
        || rect.min_y > rect.max_y
        || rect.max_x >= width
        || rect.max_y >= height
    {
        return Err(Error::OutOfBounds(rect.to_string(), width, height));
    }
    Ok(SaliencyMap::from_fn(width, height, |x, y| {
        if rect.contains(x, y) {
            255
        } else {
            0
        }
    }))
}

/// Derive the requested granularity from an FOI map.
pub fn derive(foi: &SaliencyMap, spec: &GranularitySpec) -> Result<SaliencyMap> {
    match spec.level {
        GranularityLevel::Foi => Ok(foi.clone()),
        GranularityLevel::Aoi => Ok(binarize(foi, spec.threshold_mode)),
        GranularityLevel::Boi => {
            let mut support = binarize(foi, spec.threshold_mode);
            if spec.erode_before_boi {
                support = erode_3x3(&support)?;
            }
            let rect = bounding_rectangle(&support)?;
            rasterize_rect(rect, foi.width(), foi.height())
        }
    }
}

/// [`derive`], but a map left empty by the recipe (an error for BOI, an
/// all-zero AOI) falls back to a full-image rectangle so one degenerate
/// sample cannot abort a run.
pub fn derive_or_full(foi: &SaliencyMap, spec: &GranularitySpec) -> Result<SaliencyMap> {
    let derived = derive(foi, spec).and_then(|m| {
        if spec.level == GranularityLevel::Aoi && m.support_size() == 0 {
            Err(Error::EmptySaliency)
        } else {
            Ok(m)
        }
    });
    match derived {
        Err(Error::EmptySaliency) => {
            log::warn!(
                "empty {} saliency, falling back to the full image",
                spec.level
            );
            Ok(SaliencyMap::filled(foi.width(), foi.height(), 255))
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SaliencyMap {
        SaliencyMap::from_fn(w, h, |_, _| rng.gen())
    }

    fn erode_oracle(m: &SaliencyMap) -> SaliencyMap {
        let (w, h) = m.dims();
        SaliencyMap::from_fn(w, h, |x, y| {
            let mut all = true;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    let set = nx >= 0
                        && ny >= 0
                        && (nx as usize) < w
                        && (ny as usize) < h
                        && m.get(nx as usize, ny as usize) == 255;
                    all &= set;
                }
            }
            if all {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn half_threshold_boundary() {
        let m = SaliencyMap::new(2, 1, vec![127, 128]).unwrap();
        assert_eq!(binarize(&m, ThresholdMode::Half).pixels(), &[0, 255]);
        assert_eq!(binarize(&m, ThresholdMode::Positive).pixels(), &[255, 255]);
        let z = SaliencyMap::filled(4, 4, 0);
        assert_eq!(binarize(&z, ThresholdMode::Half), z);
        assert_eq!(binarize(&z, ThresholdMode::Positive), z);
    }

    #[test]
    fn binarize_matches_predicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 32, 32);
        let pos = binarize(&m, ThresholdMode::Positive);
        let half = binarize(&m, ThresholdMode::Half);
        for y in 0..32 {
            for x in 0..32 {
                let v = m.get(x, y);
                assert_eq!(pos.get(x, y), if v > 0 { 255 } else { 0 });
                assert_eq!(half.get(x, y), if v > 127 { 255 } else { 0 });
            }
        }
    }

    #[test]
    fn erosion_border_and_singleton() {
        let full = SaliencyMap::filled(6, 5, 255);
        let e = erode_3x3(&full).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let interior = (1..5).contains(&x) && (1..4).contains(&y);
                assert_eq!(e.get(x, y) == 255, interior);
            }
        }
        let mut single = SaliencyMap::filled(5, 5, 0).into_pixels();
        single[12] = 255;
        let single = SaliencyMap::new(5, 5, single).unwrap();
        assert_eq!(erode_3x3(&single).unwrap(), SaliencyMap::filled(5, 5, 0));
        assert!(matches!(
            erode_3x3(&SaliencyMap::filled(2, 2, 7)),
            Err(Error::NotBinary(7))
        ));
        // degenerate thin maps erode to nothing
        assert_eq!(
            erode_3x3(&SaliencyMap::filled(1, 4, 255)).unwrap(),
            SaliencyMap::filled(1, 4, 0)
        );
    }

    #[test]
    fn erosion_matches_neighbourhood_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = rng.gen_range(0.5..0.95);
            let m = SaliencyMap::from_fn(32, 32, |_, _| if rng.gen_bool(p) { 255 } else { 0 });
            assert_eq!(erode_3x3(&m).unwrap(), erode_oracle(&m));
        }
    }

    #[test]
    fn rectangle_examples() {
        let m = SaliencyMap::from_fn(6, 6, |x, y| if (x, y) == (2, 3) { 9 } else { 0 });
        assert_eq!(bounding_rectangle(&m).unwrap(), Rect::new(2, 3, 2, 3));
        assert_eq!(
            bounding_rectangle(&SaliencyMap::filled(7, 4, 1)).unwrap(),
            Rect::new(0, 0, 6, 3)
        );
        assert!(matches!(
            bounding_rectangle(&SaliencyMap::filled(3, 3, 0)),
            Err(Error::EmptySaliency)
        ));
    }

    #[test]
    fn rectangle_matches_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let m = SaliencyMap::from_fn(20, 13, |_, _| if rng.gen_bool(0.02) { 200 } else { 0 });
            let coords: Vec<(usize, usize)> = (0..13)
                .flat_map(|y| (0..20).map(move |x| (x, y)))
                .filter(|&(x, y)| m.get(x, y) > 0)
                .collect();
            if coords.is_empty() {
                assert!(bounding_rectangle(&m).is_err());
                continue;
            }
            let expect = Rect::new(
                coords.iter().map(|c| c.0).min().unwrap(),
                coords.iter().map(|c| c.1).min().unwrap(),
                coords.iter().map(|c| c.0).max().unwrap(),
                coords.iter().map(|c| c.1).max().unwrap(),
            );
            assert_eq!(bounding_rectangle(&m).unwrap(), expect);
        }
    }

    #[test]
    fn rasterize_examples() {
        assert_eq!(
            rasterize_rect(Rect::full(4, 3), 4, 3).unwrap(),
            SaliencyMap::filled(4, 3, 255)
        );
        let c = rasterize_rect(Rect::new(1, 1, 1, 1), 3, 3).unwrap();
        assert_eq!(c.pixels(), &[0, 0, 0, 0, 255, 0, 0, 0, 0]);
        assert!(matches!(
            rasterize_rect(Rect::new(0, 0, 3, 1), 3, 3),
            Err(Error::OutOfBounds(..))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let (x0, x1) = {
                let a = rng.gen_range(0..10);
                let b = rng.gen_range(0..10);
                (a.min(b), a.max(b))
            };
            let (y0, y1) = {
                let a = rng.gen_range(0..8);
                let b = rng.gen_range(0..8);
                (a.min(b), a.max(b))
            };
            let r = Rect::new(x0, y0, x1, y1);
            let m = rasterize_rect(r, 10, 8).unwrap();
            for y in 0..8 {
                for x in 0..10 {
                    let inside = x >= x0 && x <= x1 && y >= y0 && y <= y1;
                    assert_eq!(m.get(x, y), if inside { 255 } else { 0 });
                }
            }
        }
    }

    #[test]
    fn derive_human_blob() {
        // blob of varying intensity
        let foi = SaliencyMap::from_fn(12, 10, |x, y| {
            if (3..7).contains(&x) && (2..5).contains(&y) {
                (10 * (x + y)) as u8
            } else {
                0
            }
        });
        let aoi = derive(&foi, &GranularitySpec::human(GranularityLevel::Aoi)).unwrap();
        let boi = derive(&foi, &GranularitySpec::human(GranularityLevel::Boi)).unwrap();
        for y in 0..10 {
            for x in 0..12 {
                let inside = (3..7).contains(&x) && (2..5).contains(&y);
                assert_eq!(aoi.get(x, y) == 255, inside);
                assert_eq!(boi.get(x, y) == 255, inside);
            }
        }
        let foi_out = derive(&foi, &GranularitySpec::human(GranularityLevel::Foi)).unwrap();
        assert_eq!(foi_out, foi);
    }

    #[test]
    fn mimic_iris_singleton_erodes_away() {
        let foi = SaliencyMap::from_fn(9, 9, |x, y| match (x, y) {
            (4, 4) => 200,
            (1, 1) => 100,
            _ => 0,
        });
        let spec = GranularitySpec::mimic_iris(GranularityLevel::Boi);
        assert!(matches!(derive(&foi, &spec), Err(Error::EmptySaliency)));
        assert_eq!(
            derive_or_full(&foi, &spec).unwrap(),
            SaliencyMap::filled(9, 9, 255)
        );
        let face = GranularitySpec::mimic_face(GranularityLevel::Boi);
        assert_eq!(
            bounding_rectangle(&derive(&foi, &face).unwrap()).unwrap(),
            Rect::new(4, 4, 4, 4)
        );
        let faint = SaliencyMap::filled(5, 5, 90);
        let aoi = GranularitySpec::mimic_iris(GranularityLevel::Aoi);
        assert_eq!(derive(&faint, &aoi).unwrap().support_size(), 0);
        assert_eq!(derive_or_full(&faint, &aoi).unwrap(), SaliencyMap::filled(5, 5, 255));
    }

    fn arb_map() -> impl Strategy<Value = SaliencyMap> {
        (1usize..14, 1usize..14, 0u8..4).prop_flat_map(|(w, h, style)| {
            proptest::collection::vec(any::<u8>(), w * h).prop_map(move |d| {
                let d = match style {
                    0 => d,
                    1 => d.into_iter().map(|v| if v < 230 { 0 } else { v }).collect(),
                    2 => d.into_iter().map(|v| if v < 100 { 0 } else { 255 }).collect(),
                    _ => d.into_iter().map(|v| v / 64 * 85).collect(),
                };
                SaliencyMap::new(w, h, d).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn binarize_is_idempotent(m in arb_map(), half in any::<bool>()) {
            let mode = if half { ThresholdMode::Half } else { ThresholdMode::Positive };
            let b = binarize(&m, mode);
            prop_assert_eq!(binarize(&b, ThresholdMode::Positive), b);
        }

        #[test]
        fn erosion_shrinks(m in arb_map()) {
            let b = binarize(&m, ThresholdMode::Positive);
            let e = erode_3x3(&b).unwrap();
            prop_assert!(e.pixels().iter().zip(b.pixels()).all(|(&a, &b)| a == 0 || b == 255));
            prop_assert_eq!(e, erode_oracle(&b));
        }

        #[test]
        fn coverage_chain_holds(m in arb_map(), recipe in 0u8..3) {
            let make = match recipe {
                0 => GranularitySpec::human,
                1 => GranularitySpec::mimic_iris,
                _ => GranularitySpec::mimic_face,
            };
            let covered = |inner: &SaliencyMap, outer: &SaliencyMap| {
                inner.pixels().iter().zip(outer.pixels()).all(|(&a, &b)| a == 0 || b > 0)
            };
            if let (Ok(aoi), Ok(boi)) = (derive(&m, &make(GranularityLevel::Aoi)), derive(&m, &make(GranularityLevel::Boi))) {
                prop_assert!(covered(&aoi, &m));
                prop_assert!(aoi.pixels().iter().all(|&v| v == 0 || v == 255));
                prop_assert!(boi.pixels().iter().all(|&v| v == 0 || v == 255));
                if !make(GranularityLevel::Boi).erode_before_boi {
                    prop_assert!(covered(&aoi, &boi));
                }
            }
        }

        #[test]
        fn rectangle_is_minimal(m in arb_map()) {
            match bounding_rectangle(&m) {
                Err(_) => prop_assert_eq!(m.support_size(), 0),
                Ok(r) => {
                    let (w, h) = m.dims();
                    let any_in = |f: &dyn Fn(usize, usize) -> bool| {
                        (0..h).any(|y| (0..w).any(|x| f(x, y) && m.get(x, y) > 0))
                    };
                    prop_assert!(!any_in(&|x, y| !r.contains(x, y)));
                    prop_assert!(any_in(&|x, y| x == r.min_x && r.contains(x, y)));
                    prop_assert!(any_in(&|x, y| x == r.max_x && r.contains(x, y)));
                    prop_assert!(any_in(&|x, y| y == r.min_y && r.contains(x, y)));
                    prop_assert!(any_in(&|x, y| y == r.max_y && r.contains(x, y)));
                }
            }
        }
    }
}
