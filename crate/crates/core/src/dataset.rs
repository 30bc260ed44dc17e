//! Synthetic four-quadrant shape images and their 90° rotation action.
//!
//! Each 64×64 binary image holds one of eight glyphs in each 32×32 quadrant.
//! Rotating the whole image counterclockwise permutes quadrants
//! (`0 → 2 → 3 → 1 → 0`, with 0 = top-left, 1 = top-right, 2 = bottom-left,
//! 3 = bottom-right) and advances every glyph's orientation by one.

use std::fmt;
use std::path::Path;

use eqsae_numerics::{io as etns, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

pub const IMAGE_SIDE: usize = 64;
pub const CELL_SIDE: usize = 32;
pub const N_SHAPES: usize = 8;
pub const N_QUADRANTS: usize = 4;
/// Order of the rotation group.
pub const GROUP_ORDER: usize = 4;

/// Quadrant reached by one counterclockwise quarter turn.
const QUADRANT_AFTER_TURN: [usize; 4] = [2, 0, 3, 1];

const SHAPE_NAMES: [&str; N_SHAPES] =
    ["horizontal_rectangle", "diagonal_line", "right_triangle", "l_shape", "t_shape", "chevron", "half_disk", "staircase"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ShapeId(u8);

impl ShapeId {
    pub fn new(id: u8) -> Result<Self> {
        if (id as usize) < N_SHAPES {
            Ok(Self(id))
        } else {
            Err(Error::Input(format!("shape id {id} outside 0..{N_SHAPES}")))
        }
    }

    pub fn all() -> impl Iterator<Item = ShapeId> {
        (0..N_SHAPES as u8).map(ShapeId)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        SHAPE_NAMES[self.0 as usize]
    }

    pub fn period(self) -> u8 {
        orientation_period(self) as u8
    }
}

impl TryFrom<u8> for ShapeId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        ShapeId::new(v)
    }
}

impl From<ShapeId> for u8 {
    fn from(s: ShapeId) -> u8 {
        s.0
    }
}

impl fmt::Display for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of distinct orientations a glyph takes under quarter turns.
pub fn orientation_period(shape: ShapeId) -> usize {
    if shape.0 < 2 {
        2
    } else {
        4
    }
}

// ---------------------------------------------------------------------------
// Glyphs and rotation
// ---------------------------------------------------------------------------

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Orientation-0 raster of a glyph, row-major 32×32.
fn base_glyph(shape: ShapeId) -> Vec<f32> {
    let inside = |r: usize, c: usize| -> bool {
        let (ri, ci) = (r as i32, c as i32);
        match shape.0 {
            0 => (12..=19).contains(&ri) && (4..=27).contains(&ci),
            1 => (3..=28).contains(&ri) && (3..=28).contains(&ci) && (ri - ci).abs() <= 1,
            2 => (4..=27).contains(&ri) && (4..=27).contains(&ci) && ci <= ri,
            3 => {
                let stem = (6..=11).contains(&ci) && (4..=27).contains(&ri);
                let foot = (22..=27).contains(&ri) && (6..=25).contains(&ci);
                stem || foot
            }
            4 => {
                let bar = (5..=10).contains(&ri) && (4..=27).contains(&ci);
                let stem = (13..=18).contains(&ci) && (5..=27).contains(&ri);
                bar || stem
            }
            5 => {
                let p = (r as f64, c as f64);
                let tip = (15.5, 25.0);
                segment_distance(p, (4.0, 6.0), tip) <= 2.2 || segment_distance(p, (27.0, 6.0), tip) <= 2.2
            }
            6 => {
                let (dr, dc) = (r as f64 - 20.0, c as f64 - 15.5);
                r <= 20 && dr * dr + dc * dc <= 144.0
            }
            _ => {
                if !(4..=27).contains(&ri) || !(4..=27).contains(&ci) {
                    return false;
                }
                let (br, bc) = ((ri - 4) / 6, (ci - 4) / 6);
                bc == br || bc == br - 1
            }
        }
    };
    (0..CELL_SIDE * CELL_SIDE).map(|i| if inside(i / CELL_SIDE, i % CELL_SIDE) { 1.0 } else { 0.0 }).collect()
}

/// One counterclockwise quarter turn of a square plane: `(i, j) ↦ (side − 1 − j, i)`.
fn quarter_turn(src: &[f32], side: usize, dst: &mut [f32]) {
    for i in 0..side {
        for j in 0..side {
            dst[(side - 1 - j) * side + i] = src[i * side + j];
        }
    }
}

fn rotate_plane(src: &[f32], side: usize, p: usize) -> Vec<f32> {
    let mut cur = src.to_vec();
    let mut tmp = vec![0.0; cur.len()];
    for _ in 0..p % GROUP_ORDER {
        quarter_turn(&cur, side, &mut tmp);
        std::mem::swap(&mut cur, &mut tmp);
    }
    cur
}

/// Binary 32×32 raster of `shape` rotated by `orientation` quarter turns.
pub fn render_glyph(shape: ShapeId, orientation: u8) -> Result<Tensor<f32>> {
    if orientation as usize >= orientation_period(shape) {
        return Err(Error::Input(format!("orientation {orientation} invalid for shape {shape}")));
    }
    let data = rotate_plane(&base_glyph(shape), CELL_SIDE, orientation as usize);
    Ok(Tensor::new(vec![CELL_SIDE, CELL_SIDE], data)?)
}

/// Rotates every square plane of `img` (trailing two axes) by `p` counterclockwise
/// quarter turns. An exact pixel permutation; `p` is taken modulo 4.
pub fn rotate_image(img: &Tensor<f32>, p: usize) -> Tensor<f32> {
    let d = img.dims();
    let side = d[d.len() - 1];
    assert!(d.len() >= 2 && d[d.len() - 2] == side, "rotate_image needs square planes, got {d:?}");
    let mut out = Vec::with_capacity(img.len());
    for plane in img.data().chunks(side * side) {
        out.extend(rotate_plane(plane, side, p));
    }
    Tensor::new(d.to_vec(), out).expect("same extents")
}

// ---------------------------------------------------------------------------
// Image specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub shape: ShapeId,
    pub orientation: u8,
}

/// Canonical quadrant contents plus the number of quarter turns applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSpec {
    pub quadrants: [Placement; N_QUADRANTS],
    pub power: u8,
}

impl ImageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.power as usize >= GROUP_ORDER {
            return Err(Error::Input(format!("power {} outside 0..4", self.power)));
        }
        for q in &self.quadrants {
            if q.orientation >= q.shape.period() {
                return Err(Error::Input(format!("orientation {} invalid for shape {}", q.orientation, q.shape)));
            }
        }
        Ok(())
    }

    pub fn with_power(&self, power: u8) -> Self {
        Self { power, ..*self }
    }

    pub fn canonical(&self) -> Self {
        self.with_power(0)
    }

    /// Quadrant contents as they appear after the rotation, indexed by position.
    pub fn observed(&self) -> [Placement; N_QUADRANTS] {
        let mut out = self.quadrants;
        for (q, pl) in self.quadrants.iter().enumerate() {
            let pos = rotate_position(q as u8, self.power as usize) as usize;
            out[pos] = Placement { shape: pl.shape, orientation: (pl.orientation + self.power) % pl.shape.period() };
        }
        out
    }
}

/// Quadrant index reached from `position` after `p` quarter turns.
pub fn rotate_position(position: u8, p: usize) -> u8 {
    let mut q = position as usize;
    for _ in 0..p % GROUP_ORDER {
        q = QUADRANT_AFTER_TURN[q];
    }
    q as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[1, 64, 64]`, values in {0, 1}.
    pub pixels: Tensor<f32>,
    pub spec: ImageSpec,
}

/// Renders the canonical layout, then applies the spec's rotation power.
pub fn compose_image(spec: &ImageSpec) -> Result<LabeledImage> {
    spec.validate()?;
    let mut canvas = vec![0.0f32; IMAGE_SIDE * IMAGE_SIDE];
    for (q, pl) in spec.quadrants.iter().enumerate() {
        let glyph = render_glyph(pl.shape, pl.orientation)?;
        let (r0, c0) = ((q / 2) * CELL_SIDE, (q % 2) * CELL_SIDE);
        for r in 0..CELL_SIDE {
            let dst = (r0 + r) * IMAGE_SIDE + c0;
            canvas[dst..dst + CELL_SIDE].copy_from_slice(&glyph.data()[r * CELL_SIDE..(r + 1) * CELL_SIDE]);
        }
    }
    let canonical = Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], canvas)?;
    let pixels = rotate_image(&canonical, spec.power as usize);
    Ok(LabeledImage { pixels, spec: *spec })
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    None,
    AllRotations,
    RandomRotation,
}

pub fn random_spec(rng: &mut impl Rng) -> ImageSpec {
    let quadrants = std::array::from_fn(|_| {
        let shape = ShapeId(rng.gen_range(0..N_SHAPES as u8));
        Placement { shape, orientation: rng.gen_range(0..shape.period()) }
    });
    ImageSpec { quadrants, power: 0 }
}

/// `n_canonical` random layouts, each emitted once (`None`, `RandomRotation`) or as
/// its full orbit `p = 0..3` (`AllRotations`). Image `i` draws from its own stream
/// of the seeded generator, so the output does not depend on evaluation order.
pub fn generate_dataset(n_canonical: usize, seed: u64, augment: Augment) -> Result<Vec<LabeledImage>> {
    if n_canonical == 0 {
        return Err(Error::Input("n_canonical must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n_canonical * if augment == Augment::AllRotations { 4 } else { 1 });
    for i in 0..n_canonical {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let spec = random_spec(&mut rng);
        match augment {
            Augment::None => out.push(compose_image(&spec)?),
            Augment::RandomRotation => out.push(compose_image(&spec.with_power(rng.gen_range(0..4)))?),
            Augment::AllRotations => {
                for p in 0..GROUP_ORDER as u8 {
                    out.push(compose_image(&spec.with_power(p))?);
                }
            }
        }
    }
    Ok(out)
}

/// `[n, 1, 64, 64]` stack of the images' pixels.
pub fn stack_pixels(images: &[LabeledImage]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(images.len() * IMAGE_SIDE * IMAGE_SIDE);
    for img in images {
        data.extend_from_slice(img.pixels.data());
    }
    Tensor::new(vec![images.len().max(1), 1, IMAGE_SIDE, IMAGE_SIDE], data)
        .unwrap_or_else(|_| Tensor::zeros(&[1, 1, IMAGE_SIDE, IMAGE_SIDE]))
}

/// Every image followed by its three further rotations, orbit-major.
pub fn expand_orbits(images: &[LabeledImage]) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::with_capacity(images.len() * GROUP_ORDER);
    for img in images {
        let canonical = img.spec.canonical();
        for p in 0..GROUP_ORDER as u8 {
            out.push(compose_image(&canonical.with_power(p))?);
        }
    }
    Ok(out)
}

/// Number of orbits when `images` are consecutive full orbits (`p = 0, 1, 2, 3` of one layout).
pub fn orbit_count(images: &[LabeledImage]) -> Result<usize> {
    if images.is_empty() || images.len() % GROUP_ORDER != 0 {
        return Err(Error::Input(format!("{} images do not form whole orbits", images.len())));
    }
    for (o, group) in images.chunks(GROUP_ORDER).enumerate() {
        let base = group[0].spec.canonical();
        for (p, img) in group.iter().enumerate() {
            if img.spec.power as usize != p || img.spec.canonical() != base {
                return Err(Error::Input(format!("images are not orbit-grouped (orbit {o}, member {p})")));
            }
        }
    }
    Ok(images.len() / GROUP_ORDER)
}

// ---------------------------------------------------------------------------
// Probing tasks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskFamily {
    S,
    SP,
    SO,
    SPO,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 4] = [TaskFamily::S, TaskFamily::SP, TaskFamily::SO, TaskFamily::SPO];

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::S => "S",
            TaskFamily::SP => "SP",
            TaskFamily::SO => "SO",
            TaskFamily::SPO => "SPO",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub shape: ShapeId,
    pub position: Option<u8>,
    pub orientation: Option<u8>,
}

impl TaskSpec {
    /// The task asking the same question about an image rotated by `p` quarter turns.
    pub fn rotated(&self, p: usize) -> Self {
        Self {
            position: self.position.map(|q| rotate_position(q, p)),
            orientation: self.orientation.map(|o| ((o as usize + p) % orientation_period(self.shape)) as u8),
            ..*self
        }
    }

    pub fn label(&self, spec: &ImageSpec) -> bool {
        let observed = spec.observed();
        observed.iter().enumerate().any(|(pos, pl)| {
            pl.shape == self.shape
                && self.position.map_or(true, |q| q as usize == pos)
                && self.orientation.map_or(true, |o| o == pl.orientation)
        })
    }
}

/// The 180 binary tasks: 8 S, 28 SO, 32 SP and 112 SPO, in that order.
pub fn enumerate_tasks() -> Vec<TaskSpec> {
    let mut tasks = Vec::with_capacity(180);
    for shape in ShapeId::all() {
        tasks.push(TaskSpec { family: TaskFamily::S, shape, position: None, orientation: None });
    }
    for shape in ShapeId::all() {
        for o in 0..shape.period() {
            tasks.push(TaskSpec { family: TaskFamily::SO, shape, position: None, orientation: Some(o) });
        }
    }
    for shape in ShapeId::all() {
        for q in 0..N_QUADRANTS as u8 {
            tasks.push(TaskSpec { family: TaskFamily::SP, shape, position: Some(q), orientation: None });
        }
    }
    for shape in ShapeId::all() {
        for q in 0..N_QUADRANTS as u8 {
            for o in 0..shape.period() {
                tasks.push(TaskSpec { family: TaskFamily::SPO, shape, position: Some(q), orientation: Some(o) });
            }
        }
    }
    tasks
}

pub fn task_label(img: &LabeledImage, task: &TaskSpec) -> bool {
    task.label(&img.spec)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

pub const DATASET_SCHEMA: &str = "eqsae-dataset/1";

/// Sidecar manifest stored next to the pixel tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: String,
    pub count: usize,
    pub image_side: usize,
    pub seed: u64,
    pub augment: Augment,
    pub specs: Vec<ImageSpec>,
}

/// Writes `<stem>.etns` (pixels `[n, 1, 64, 64]`, f32) and `<stem>.json`.
pub fn save_dataset(dir: &Path, stem: &str, images: &[LabeledImage], seed: u64, augment: Augment) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensor_path = dir.join(format!("{stem}.etns"));
    etns::save(&tensor_path, &stack_pixels(images)).map_err(|e| match e {
        eqsae_numerics::Error::Io(io) => Error::io(&tensor_path, io),
        other => other.into(),
    })?;
    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.into(),
        count: images.len(),
        image_side: IMAGE_SIDE,
        seed,
        augment,
        specs: images.iter().map(|i| i.spec).collect(),
    };
    write_json(&dir.join(format!("{stem}.json")), &manifest)
}

pub fn load_dataset(dir: &Path, stem: &str) -> Result<(Vec<LabeledImage>, DatasetManifest)> {
    let manifest: DatasetManifest = read_json(&dir.join(format!("{stem}.json")))?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(Error::Input(format!("unsupported dataset schema {}", manifest.schema)));
    }
    let tensor_path = dir.join(format!("{stem}.etns"));
    let pixels: Tensor<f32> = etns::load(&tensor_path).map_err(|e| match e {
        eqsae_numerics::Error::Io(io) => Error::io(&tensor_path, io),
        other => other.into(),
    })?;
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    if pixels.len() != manifest.count * plane || manifest.specs.len() != manifest.count {
        return Err(Error::Input(format!("{}: pixel tensor and manifest disagree", tensor_path.display())));
    }
    let images = manifest
        .specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            spec.validate()?;
            let px = Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], pixels.data()[i * plane..(i + 1) * plane].to_vec())?;
            Ok(LabeledImage { pixels: px, spec: *spec })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((images, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(q: [(u8, u8); 4], power: u8) -> ImageSpec {
        ImageSpec {
            quadrants: q.map(|(s, o)| Placement { shape: ShapeId::new(s).unwrap(), orientation: o }),
            power,
        }
    }

    #[test]
    fn periods() {
        let periods: Vec<usize> = ShapeId::all().map(orientation_period).collect();
        assert_eq!(periods, vec![2, 2, 4, 4, 4, 4, 4, 4]);
        assert!(ShapeId::new(8).is_err());
    }

    #[test]
    fn glyph_rejects_invalid_orientation() {
        assert!(render_glyph(ShapeId::new(0).unwrap(), 2).is_err());
        assert!(render_glyph(ShapeId::new(3).unwrap(), 4).is_err());
    }

    #[test]
    fn glyphs_respect_margin_and_are_binary() {
        for s in ShapeId::all() {
            let g = render_glyph(s, 0).unwrap();
            assert!(g.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(g.data().iter().any(|&v| v == 1.0));
            for (i, &v) in g.data().iter().enumerate() {
                let (r, c) = (i / CELL_SIDE, i % CELL_SIDE);
                if r < 2 || c < 2 || r >= CELL_SIDE - 2 || c >= CELL_SIDE - 2 {
                    assert_eq!(v, 0.0, "shape {s} touches margin at ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn glyph_periods_are_exact() {
        for s in ShapeId::all() {
            let base = render_glyph(s, 0).unwrap();
            let period = (1..=4).find(|&p| rotate_image(&base, p) == base).unwrap();
            assert_eq!(period, orientation_period(s), "shape {s}");
            let rasters: Vec<_> = (0..s.period()).map(|o| render_glyph(s, o).unwrap()).collect();
            for o in 0..4u8 {
                assert_eq!(rotate_image(&base, o as usize), rasters[(o % s.period()) as usize]);
            }
            for a in 0..rasters.len() {
                for b in a + 1..rasters.len() {
                    assert_ne!(rasters[a], rasters[b]);
                }
            }
        }
    }

    #[test]
    fn composed_pixels_are_sum_of_glyphs() {
        let s = spec([(2, 3), (6, 1), (1, 1), (7, 0)], 2);
        let img = compose_image(&s).unwrap();
        let glyphs: f32 = s.quadrants.iter().map(|q| render_glyph(q.shape, q.orientation).unwrap().sum()).sum();
        assert_eq!(img.pixels.sum(), glyphs);
        let canonical = compose_image(&s.canonical()).unwrap();
        assert_eq!(rotate_image(&canonical.pixels, 2), img.pixels);
    }

    #[test]
    fn single_pixel_turn() {
        let mut img = Tensor::<f32>::zeros(&[1, 64, 64]);
        img.data_mut()[0] = 1.0;
        let r = rotate_image(&img, 1);
        assert_eq!(r.data()[63 * 64], 1.0);
        assert_eq!(r.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(rotate_image(&img, 0), img);
    }

    #[test]
    fn same_shape_everywhere_gives_identical_blocks() {
        let img = compose_image(&spec([(4, 0); 4], 0)).unwrap();
        let block = |q: usize| -> Vec<f32> {
            let (r0, c0) = ((q / 2) * 32, (q % 2) * 32);
            (0..32).flat_map(|r| img.pixels.data()[(r0 + r) * 64 + c0..][..32].to_vec()).collect()
        };
        for q in 1..4 {
            assert_eq!(block(0), block(q));
        }
    }

    #[test]
    fn quadrant_bookkeeping_follows_the_turn() {
        let s = spec([(3, 1), (0, 0), (5, 2), (7, 3)], 1);
        let obs = s.observed();
        // 0 → 2, 1 → 0, 2 → 3, 3 → 1
        assert_eq!(obs[2], Placement { shape: ShapeId::new(3).unwrap(), orientation: 2 });
        assert_eq!(obs[0], Placement { shape: ShapeId::new(0).unwrap(), orientation: 1 });
        assert_eq!(obs[3], Placement { shape: ShapeId::new(5).unwrap(), orientation: 3 });
        assert_eq!(obs[1], Placement { shape: ShapeId::new(7).unwrap(), orientation: 0 });
    }

    #[test]
    fn task_labels() {
        let img = compose_image(&spec([(3, 1), (0, 0), (5, 2), (7, 3)], 0)).unwrap();
        let s3 = ShapeId::new(3).unwrap();
        let t = |family, position, orientation| TaskSpec { family, shape: s3, position, orientation };
        assert!(task_label(&img, &t(TaskFamily::S, None, None)));
        assert!(task_label(&img, &t(TaskFamily::SPO, Some(0), Some(1))));
        assert!(!task_label(&img, &t(TaskFamily::SPO, Some(1), Some(1))));
        assert!(task_label(&img, &t(TaskFamily::SO, None, Some(1))));
        assert!(!task_label(&img, &t(TaskFamily::SO, None, Some(0))));
        assert!(task_label(&img, &t(TaskFamily::SP, Some(0), None)));
    }

    #[test]
    fn task_counts() {
        let tasks = enumerate_tasks();
        assert_eq!(tasks.len(), 180);
        let count = |f| tasks.iter().filter(|t| t.family == f).count();
        assert_eq!(
            [count(TaskFamily::S), count(TaskFamily::SO), count(TaskFamily::SP), count(TaskFamily::SPO)],
            [8, 28, 32, 112]
        );
        for t in &tasks {
            assert_eq!(t.position.is_some(), matches!(t.family, TaskFamily::SP | TaskFamily::SPO));
            assert_eq!(t.orientation.is_some(), matches!(t.family, TaskFamily::SO | TaskFamily::SPO));
            if let Some(o) = t.orientation {
                assert!(o < t.shape.period());
            }
        }
    }

    #[test]
    fn generation_modes() {
        let orbit = generate_dataset(1, 7, Augment::AllRotations).unwrap();
        assert_eq!(orbit.len(), 4);
        assert_eq!(orbit_count(&orbit).unwrap(), 1);
        let plain = generate_dataset(5, 7, Augment::None).unwrap();
        assert!(plain.iter().all(|i| i.spec.power == 0));
        assert_eq!(plain[0].spec, orbit[0].spec);
        assert_eq!(generate_dataset(5, 7, Augment::RandomRotation).unwrap(), generate_dataset(5, 7, Augment::RandomRotation).unwrap());
        assert!(generate_dataset(0, 7, Augment::None).is_err());
        assert!(orbit_count(&plain[..4]).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = generate_dataset(3, 11, Augment::AllRotations).unwrap();
        save_dataset(dir.path(), "train", &imgs, 11, Augment::AllRotations).unwrap();
        let (back, manifest) = load_dataset(dir.path(), "train").unwrap();
        assert_eq!(back, imgs);
        assert_eq!(manifest.count, 12);
    }
}
