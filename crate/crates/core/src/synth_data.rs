//! Procedural two-concept glyph datasets.
//!
//! The first labeled concept is the glyph shape, the second its hue. Shapes
//! are random star-shaped polygons (5 to 15 vertices) drawn from a PRNG keyed
//! only by the shape id, so shape identity is stable across datasets and
//! seeds. Nuisance concepts move, rotate or scale the glyph.
//!
//! Images are RGB in `[0, 1]`, stored height x width x channel, one flattened
//! image per row. Rasterization is hard (no anti-aliasing) so bytes are
//! identical across platforms and thread counts.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept_space::{select_value_indices, Combo, ConceptSpec, NuisanceDim};
use crate::error::{Error, Result};
use crate::io;
use crate::par::{self, Execution};

pub const CHANNELS: usize = 3;
const SHAPE_STREAM: u64 = 0x5348_4150_455f_4944;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Filled glyph in the value's hue on a black background.
    SpriteGlyph,
    /// Glyph outline in the value's hue on a mid-gray background.
    ColoredGlyph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    /// Balanced full-grid data for probing and structure metrics.
    Probe,
}

impl SplitTag {
    fn stream(self) -> u64 {
        match self {
            SplitTag::Train => 1,
            SplitTag::Test => 2,
            SplitTag::Probe => 3,
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Probe => "probe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    pub concept_spec: ConceptSpec,
    pub n_cell: usize,
    pub seed: u64,
}

fn default_image_size() -> usize {
    32
}

impl DatasetSpec {
    /// 40 shapes x 40 hues, 4 positions x 8 rotations x 2 scales.
    pub fn standard(family: Family, image_size: usize, n_cell: usize, seed: u64) -> Self {
        Self {
            family,
            image_size,
            concept_spec: ConceptSpec {
                name: "glyphs".into(),
                cardinality_c1: 40,
                cardinality_c2: 40,
                nuisance_dims: vec![
                    NuisanceDim::new("position", 4),
                    NuisanceDim::new("rotation", 8),
                    NuisanceDim::new("scale", 2),
                ],
            },
            n_cell,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.concept_spec.validate()?;
        if self.image_size < 8 {
            return Err(Error::InvalidParameter(format!(
                "image_size must be >= 8, got {}",
                self.image_size
            )));
        }
        if self.n_cell == 0 {
            return Err(Error::InvalidParameter("n_cell must be >= 1".into()));
        }
        for dim in &self.concept_spec.nuisance_dims {
            NuisanceKind::parse(&dim.name)?;
        }
        Ok(())
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_size * self.image_size * CHANNELS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NuisanceKind {
    Position,
    Rotation,
    Scale,
}

impl NuisanceKind {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "position" => Ok(Self::Position),
            "rotation" => Ok(Self::Rotation),
            "scale" => Ok(Self::Scale),
            other => Err(Error::InvalidParameter(format!(
                "unknown nuisance dimension `{other}` (expected position, rotation or scale)"
            ))),
        }
    }
}

/// Geometric placement of one glyph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    /// Offset of the glyph center as a fraction of the image side.
    pub dx: f64,
    pub dy: f64,
    pub angle: f64,
    pub scale: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            angle: 0.0,
            scale: 1.0,
        }
    }
}

impl Placement {
    /// Placement for one nuisance assignment (one value per dimension).
    pub fn from_nuisance(dims: &[NuisanceDim], values: &[usize]) -> Result<Self> {
        let mut p = Placement::default();
        for (dim, &v) in dims.iter().zip(values) {
            if v >= dim.cardinality {
                return Err(Error::InvalidParameter(format!(
                    "nuisance `{}` value {v} >= cardinality {}",
                    dim.name, dim.cardinality
                )));
            }
            match NuisanceKind::parse(&dim.name)? {
                NuisanceKind::Position => {
                    let cols = (dim.cardinality as f64).sqrt().ceil() as usize;
                    let rows = dim.cardinality.div_ceil(cols);
                    let spread = |idx: usize, count: usize| {
                        if count <= 1 {
                            0.0
                        } else {
                            -0.15 + 0.3 * idx as f64 / (count - 1) as f64
                        }
                    };
                    p.dx = spread(v % cols, cols);
                    p.dy = spread(v / cols, rows);
                }
                NuisanceKind::Rotation => p.angle = TAU * v as f64 / dim.cardinality as f64,
                NuisanceKind::Scale => {
                    p.scale = if dim.cardinality <= 1 {
                        1.0
                    } else {
                        0.75 + 0.25 * v as f64 / (dim.cardinality - 1) as f64
                    }
                }
            }
        }
        Ok(p)
    }
}

/// Star-shaped polygon of shape `shape_id` in unit coordinates
/// (radii in `[0.35, 1]`).
pub fn glyph_polygon(shape_id: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_STREAM ^ (shape_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let count = rng.random_range(5..=15);
    let mut angles: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let r = rng.random_range(0.35..1.0);
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Fully saturated RGB for hue `color_id` out of `palette_size` evenly
/// spaced hues.
pub fn palette_color(color_id: usize, palette_size: usize) -> [f32; 3] {
    let h = 6.0 * color_id as f64 / palette_size.max(1) as f64;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r as f32, g as f32, b as f32]
}

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut odd = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            odd = !odd;
        }
        j = i;
    }
    odd
}

fn dist_to_outline(poly: &[(f64, f64)], x: f64, y: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (ax, ay) = poly[j];
        let (bx, by) = poly[i];
        let (ex, ey) = (bx - ax, by - ay);
        let len2 = ex * ex + ey * ey;
        let t = if len2 > 0.0 {
            (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (ax + t * ex - x, ay + t * ey - y);
        best = best.min((px * px + py * py).sqrt());
        j = i;
    }
    best
}

/// Rasterize one glyph into a `size x size x 3` buffer.
pub fn render_glyph(
    family: Family,
    shape_id: usize,
    color_id: usize,
    palette_size: usize,
    placement: Placement,
    size: usize,
) -> Vec<f32> {
    let s = size as f64;
    let radius = 0.3 * s * placement.scale;
    let (cx, cy) = (s / 2.0 + placement.dx * s, s / 2.0 + placement.dy * s);
    let (sin, cos) = placement.angle.sin_cos();
    let poly: Vec<(f64, f64)> = glyph_polygon(shape_id)
        .into_iter()
        .map(|(x, y)| {
            (
                cx + radius * (x * cos - y * sin),
                cy + radius * (x * sin + y * cos),
            )
        })
        .collect();
    let color = palette_color(color_id, palette_size);
    let (background, stroke) = match family {
        Family::SpriteGlyph => ([0.0f32; 3], None),
        Family::ColoredGlyph => ([0.5f32; 3], Some((s / 16.0).max(0.75))),
    };
    let mut out = Vec::with_capacity(size * size * CHANNELS);
    for py in 0..size {
        for px in 0..size {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let on = match stroke {
                None => inside(&poly, x, y),
                Some(w) => dist_to_outline(&poly, x, y) <= w,
            };
            out.extend_from_slice(if on { &color } else { &background });
        }
    }
    out
}

/// Where a [`LabeledImageSet`] came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: DatasetSpec,
    pub n: usize,
    pub combos: Vec<Combo>,
    pub split_tag: SplitTag,
}

/// Rendered images with their labels and nuisance assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    /// One flattened `size x size x 3` image per row.
    pub pixels: Array2<f32>,
    pub labels_c1: Vec<usize>,
    pub labels_c2: Vec<usize>,
    /// One value per nuisance dimension, per sample.
    pub nuisance: Vec<Vec<usize>>,
    pub provenance: Provenance,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels_c1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels_c1.is_empty()
    }

    pub fn n(&self) -> usize {
        self.provenance.n
    }

    pub fn image_size(&self) -> usize {
        self.provenance.spec.image_size
    }

    /// Write `data.f32` (`CEMB` layout) and `labels.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_cemb(dir.join("data.f32"), &self.pixels)?;
        let names: Vec<String> = self
            .provenance
            .spec
            .concept_spec
            .nuisance_dims
            .iter()
            .map(|d| d.name.clone())
            .collect();
        io::write_labels(
            dir.join("labels.csv"),
            &self.labels_c1,
            &self.labels_c2,
            &names,
            &self.nuisance,
        )?;
        let meta = serde_json::to_string_pretty(&self.provenance)?;
        fs::write(dir.join("provenance.json"), meta).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let pixels = io::read_cemb(dir.join("data.f32"))?;
        let labels = io::read_labels(dir.join("labels.csv"))?;
        let meta_path = dir.join("provenance.json");
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let provenance: Provenance = serde_json::from_str(&meta)?;
        if pixels.nrows() != labels.c1.len() {
            return Err(crate::error::FormatError::RowCountMismatch {
                matrix: pixels.nrows(),
                labels: labels.c1.len(),
            }
            .into());
        }
        if pixels.ncols() != provenance.spec.pixels_per_image() {
            return Err(Error::DimensionMismatch {
                expected: provenance.spec.pixels_per_image(),
                found: pixels.ncols(),
            });
        }
        Ok(Self {
            pixels,
            labels_c1: labels.c1,
            labels_c2: labels.c2,
            nuisance: labels.extra,
            provenance,
        })
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cell_seed(seed: u64, tag: SplitTag, (i, j): Combo) -> u64 {
    mix(mix(mix(seed ^ tag.stream()) ^ i as u64) ^ (j as u64).rotate_left(32))
}

/// Flat nuisance indices for one cell: consecutive shuffled passes over the
/// whole nuisance space, so every assignment appears once before any repeats.
fn cell_nuisance(space: usize, n_cell: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_cell);
    let mut perm: Vec<usize> = (0..space).collect();
    while out.len() < n_cell {
        perm.shuffle(&mut rng);
        let take = (n_cell - out.len()).min(space);
        out.extend_from_slice(&perm[..take]);
    }
    out
}

/// Render `n_cell` samples for each combination in `combos`.
///
/// Combination indices are in `0..n` and map to concept values through
/// [`select_value_indices`]. Cells are generated independently from
/// counter-derived seeds, so the output does not depend on `exec`.
pub fn generate(
    spec: &DatasetSpec,
    n: usize,
    combos: &[Combo],
    split_tag: SplitTag,
    exec: Execution,
) -> Result<LabeledImageSet> {
    spec.validate()?;
    if combos.is_empty() {
        return Err(Error::InvalidParameter("no combinations to generate".into()));
    }
    let cs = &spec.concept_spec;
    if n > cs.cardinality_c1 || n > cs.cardinality_c2 {
        return Err(Error::InvalidParameter(format!(
            "n = {n} exceeds concept cardinalities ({}, {})",
            cs.cardinality_c1, cs.cardinality_c2
        )));
    }
    if let Some(&(i, j)) = combos.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::InvalidParameter(format!(
            "combination ({i}, {j}) references a value index >= {n}"
        )));
    }
    let shapes = select_value_indices(cs.cardinality_c1, n)?;
    let colors = select_value_indices(cs.cardinality_c2, n)?;
    let space = cs.nuisance_space_size();
    let size = spec.image_size;
    let ppi = spec.pixels_per_image();

    let cells = par::map(exec, combos.to_vec(), |combo| -> Result<_> {
        let flat = cell_nuisance(space, spec.n_cell, cell_seed(spec.seed, split_tag, combo));
        let mut pixels = Vec::with_capacity(spec.n_cell * ppi);
        let mut nuisance = Vec::with_capacity(spec.n_cell);
        for f in flat {
            let values = cs.decode_nuisance(f);
            let placement = Placement::from_nuisance(&cs.nuisance_dims, &values)?;
            pixels.extend(render_glyph(
                spec.family,
                shapes[combo.0],
                colors[combo.1],
                cs.cardinality_c2,
                placement,
                size,
            ));
            nuisance.push(values);
        }
        Ok((combo, pixels, nuisance))
    });

    let total = combos.len() * spec.n_cell;
    let mut flat_pixels = Vec::with_capacity(total * ppi);
    let mut labels_c1 = Vec::with_capacity(total);
    let mut labels_c2 = Vec::with_capacity(total);
    let mut nuisance = Vec::with_capacity(total);
    for cell in cells {
        let ((i, j), px, nu) = cell?;
        flat_pixels.extend(px);
        labels_c1.extend(std::iter::repeat_n(i, nu.len()));
        labels_c2.extend(std::iter::repeat_n(j, nu.len()));
        nuisance.extend(nu);
    }
    Ok(LabeledImageSet {
        pixels: Array2::from_shape_vec((total, ppi), flat_pixels).expect("sizes agree"),
        labels_c1,
        labels_c2,
        nuisance,
        provenance: Provenance {
            spec: spec.clone(),
            n,
            combos: combos.to_vec(),
            split_tag,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn spec(n_cell: usize) -> DatasetSpec {
        DatasetSpec::standard(Family::SpriteGlyph, 32, n_cell, 11)
    }

    #[test]
    fn glyph_has_foreground_and_is_deterministic() {
        let a = render_glyph(Family::SpriteGlyph, 0, 0, 10, Placement::default(), 32);
        assert_eq!(a.len(), 32 * 32 * 3);
        assert!(a.chunks(3).filter(|p| p.iter().any(|&v| v > 0.0)).count() > 0);
        let b = render_glyph(Family::SpriteGlyph, 0, 0, 10, Placement::default(), 32);
        assert_eq!(a, b);
    }

    #[test]
    fn polygons_have_5_to_15_vertices() {
        for id in 0..200 {
            let n = glyph_polygon(id).len();
            assert!((5..=15).contains(&n), "shape {id} has {n} vertices");
        }
    }

    #[test]
    fn distinct_shapes_differ_at_fixed_nuisance() {
        for family in [Family::SpriteGlyph, Family::ColoredGlyph] {
            let patches: Vec<Vec<f32>> = (0..40)
                .map(|s| render_glyph(family, s, 0, 40, Placement::default(), 32))
                .collect();
            for a in 0..patches.len() {
                for b in a + 1..patches.len() {
                    assert_ne!(patches[a], patches[b], "{family:?}: shapes {a} and {b}");
                }
            }
        }
    }

    #[test]
    fn palette_is_evenly_spaced() {
        assert_eq!(palette_color(0, 6), [1.0, 0.0, 0.0]);
        assert_eq!(palette_color(2, 6), [0.0, 1.0, 0.0]);
        assert_eq!(palette_color(4, 6), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn full_coverage_gives_unique_images() {
        let mut s = spec(96);
        s.concept_spec.nuisance_dims =
            vec![NuisanceDim::new("position", 8), NuisanceDim::new("rotation", 12)];
        let split = crate::concept_space::build_nk_split(4, 2).unwrap();
        let set = generate(&s, 4, &split.train_combos, SplitTag::Train, Execution::Sequential)
            .unwrap();
        assert_eq!(set.len(), 768);
        let unique: BTreeSet<(usize, usize, Vec<usize>)> = (0..set.len())
            .map(|r| (set.labels_c1[r], set.labels_c2[r], set.nuisance[r].clone()))
            .collect();
        assert_eq!(unique.len(), 768);
    }

    #[test]
    fn one_sample() {
        let set = generate(&spec(1), 2, &[(1, 0)], SplitTag::Test, Execution::Sequential).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!((set.labels_c1[0], set.labels_c2[0]), (1, 0));
    }

    #[test]
    fn deterministic_across_calls_and_modes() {
        let split = crate::concept_space::build_nk_split(5, 2).unwrap();
        let a = generate(&spec(6), 5, &split.train_combos, SplitTag::Train, Execution::Parallel)
            .unwrap();
        let b = generate(&spec(6), 5, &split.train_combos, SplitTag::Train, Execution::Sequential)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs() {
        assert!(generate(&spec(1), 2, &[], SplitTag::Train, Execution::Sequential).is_err());
        assert!(matches!(
            generate(&spec(1), 2, &[(2, 0)], SplitTag::Train, Execution::Sequential),
            Err(Error::InvalidParameter(_))
        ));
        assert!(generate(&spec(1), 41, &[(0, 0)], SplitTag::Train, Execution::Sequential).is_err());
        let mut tiny = spec(1);
        tiny.image_size = 4;
        assert!(generate(&tiny, 2, &[(0, 0)], SplitTag::Train, Execution::Sequential).is_err());
        let mut odd = spec(1);
        odd.concept_spec.nuisance_dims = vec![NuisanceDim::new("background", 2)];
        assert!(generate(&odd, 2, &[(0, 0)], SplitTag::Train, Execution::Sequential).is_err());
    }

    #[test]
    fn label_balance() {
        let split = crate::concept_space::build_nk_split(6, 3).unwrap();
        let set = generate(&spec(4), 6, &split.train_combos, SplitTag::Train, Execution::Sequential)
            .unwrap();
        let mut c1 = BTreeMap::new();
        let mut c2 = BTreeMap::new();
        for r in 0..set.len() {
            *c1.entry(set.labels_c1[r]).or_insert(0) += 1;
            *c2.entry(set.labels_c2[r]).or_insert(0) += 1;
        }
        assert!(c1.values().all(|&v| v == 12));
        assert!(c2.values().all(|&v| v == 12));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let set = generate(&spec(2), 3, &[(0, 1), (2, 2)], SplitTag::Train, Execution::Sequential)
            .unwrap();
        set.save(dir.path()).unwrap();
        let header = fs::read_to_string(dir.path().join("labels.csv")).unwrap();
        assert!(header.starts_with("index,c1,c2,position,rotation,scale\n"));
        assert_eq!(LabeledImageSet::load(dir.path()).unwrap(), set);
    }
}
