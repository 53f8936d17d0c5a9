//! Synthetic colored scenes and derived line art pairs with exact region
//! maps and correspondences.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corr::CorrSet;
use crate::error::{Error, Result};
use crate::imaging::{rgb_distance, GrayImage, LabelMap, Raster, RgbImage};
use crate::io;
use crate::manifest::{Manifest, ManifestRecord};
use crate::regionmap::RegionMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub canvas: usize,
    pub n_shapes: usize,
    /// Largest absolute rotation of image b, in degrees.
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Largest absolute translation of image b per axis, in pixels.
    pub max_translation: f64,
    /// Largest extra per-shape offset in image b, in pixels.
    pub jitter: f64,
    /// Probability that a shape is missing from image b.
    pub dropout: f64,
    /// Per-contour-pixel gap rate; 0 keeps every contour closed.
    pub gap_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            canvas: 128,
            n_shapes: 5,
            max_rotation_deg: 25.0,
            scale_min: 0.8,
            scale_max: 1.25,
            max_translation: 10.0,
            jitter: 3.0,
            dropout: 0.1,
            gap_noise: 0.0,
        }
    }
}

impl SceneSpec {
    /// A spec whose image b equals image a.
    pub fn still(seed: u64, n_shapes: usize) -> Self {
        Self {
            seed,
            n_shapes,
            max_rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            max_translation: 0.0,
            jitter: 0.0,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas < 16 {
            return Err(Error::invalid("canvas must be at least 16 px"));
        }
        if self.n_shapes == 0 {
            return Err(Error::invalid("scene needs at least one shape"));
        }
        if !(0.0..=25.0).contains(&self.max_rotation_deg) {
            return Err(Error::invalid("rotation must lie in [0, 25] degrees"));
        }
        if !(0.8 <= self.scale_min && self.scale_min <= self.scale_max && self.scale_max <= 1.25) {
            return Err(Error::invalid("scale range must lie within [0.8, 1.25]"));
        }
        if !(0.0..=0.3).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 0.3]"));
        }
        if !(0.0..=1.0).contains(&self.gap_noise) {
            return Err(Error::invalid("gap noise must lie in [0, 1]"));
        }
        if !(self.max_translation >= 0.0 && self.jitter >= 0.0) {
            return Err(Error::invalid("translation and jitter must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        angle: f64,
    },
    /// Polygon with vertices in angular order around an interior point;
    /// covers the intersection of its edge half-planes.
    Polygon { vertices: Vec<(f64, f64)> },
    Capsule {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        r: f64,
    },
}

impl Shape {
    /// Whether the pixel centre `(x + 0.5, y + 0.5)` lies inside.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (dx, dy) = (px - cx, py - cy);
                let (s, c) = angle.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).all(|i| {
                    let (ax, ay) = vertices[i];
                    let (bx, by) = vertices[(i + 1) % n];
                    (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
                })
            }
            Shape::Capsule { x0, y0, x1, y1, r } => {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (x0 + t * dx - px, y0 + t * dy - py);
                qx * qx + qy * qy <= r * r
            }
        }
    }

    fn transformed(&self, t: &Similarity) -> Shape {
        match self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (cx, cy) = t.apply(*cx, *cy);
                Shape::Ellipse {
                    cx,
                    cy,
                    rx: rx * t.scale,
                    ry: ry * t.scale,
                    angle: angle + t.angle,
                }
            }
            Shape::Polygon { vertices } => Shape::Polygon {
                vertices: vertices.iter().map(|&(x, y)| t.apply(x, y)).collect(),
            },
            Shape::Capsule { x0, y0, x1, y1, r } => {
                let (x0, y0) = t.apply(*x0, *y0);
                let (x1, y1) = t.apply(*x1, *y1);
                Shape::Capsule {
                    x0,
                    y0,
                    x1,
                    y1,
                    r: r * t.scale,
                }
            }
        }
    }
}

/// Rotation and scale about `center`, then translation.
#[derive(Debug, Clone, Copy)]
struct Similarity {
    center: (f64, f64),
    angle: f64,
    scale: f64,
    tx: f64,
    ty: f64,
}

impl Similarity {
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        (
            self.center.0 + self.scale * (c * dx - s * dy) + self.tx,
            self.center.1 + self.scale * (s * dx + c * dy) + self.ty,
        )
    }
}

/// Shapes in z-order (later on top) with their fill colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub canvas: usize,
    pub shapes: Vec<(Shape, [u8; 3])>,
}

impl Scene {
    /// Label of the top-most shape covering each pixel (`index + 1`), or 0.
    /// Shapes whose `present` flag is false are skipped.
    pub fn labels(&self, present: &[bool]) -> LabelMap {
        let mut out = Raster::filled(self.canvas, self.canvas, 1, 0u32);
        for (i, (shape, _)) in self.shapes.iter().enumerate() {
            if !present[i] {
                continue;
            }
            for y in 0..self.canvas {
                for x in 0..self.canvas {
                    if shape.contains(x, y) {
                        out.set(x, y, i as u32 + 1);
                    }
                }
            }
        }
        out
    }
}

fn random_color(rng: &mut ChaCha8Rng, taken: &[[u8; 3]]) -> [u8; 3] {
    let mut best = [128; 3];
    let mut best_d = -1.0;
    for _ in 0..200 {
        let c = [
            rng.random_range(40..=215u8),
            rng.random_range(40..=215u8),
            rng.random_range(40..=215u8),
        ];
        let d = taken
            .iter()
            .map(|t| rgb_distance(c.map(f64::from), t.map(f64::from)))
            .fold(f64::INFINITY, f64::min);
        if d >= 30.0 {
            return c;
        }
        if d > best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn random_shape(rng: &mut ChaCha8Rng, canvas: f64) -> Shape {
    let k = canvas / 128.0;
    let margin = 30.0 * k;
    let cx = rng.random_range(margin..canvas - margin);
    let cy = rng.random_range(margin..canvas - margin);
    match rng.random_range(0..3) {
        0 => Shape::Ellipse {
            cx,
            cy,
            rx: rng.random_range(12.0..32.0) * k,
            ry: rng.random_range(12.0..32.0) * k,
            angle: rng.random_range(0.0..PI),
        },
        1 => {
            let n = rng.random_range(3..=6);
            let offset = rng.random_range(0.0..2.0 * PI);
            let step = 2.0 * PI / n as f64;
            // Bounded jitter keeps every angular gap below pi, so the centre
            // stays inside every edge's half-plane.
            let angles: Vec<f64> = (0..n)
                .map(|i| offset + step * (i as f64 + rng.random_range(-0.2..0.2)))
                .collect();
            let vertices = angles
                .iter()
                .map(|&a| {
                    let r = rng.random_range(14.0..34.0) * k;
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect();
            Shape::Polygon { vertices }
        }
        _ => {
            let len = rng.random_range(20.0..60.0) * k;
            let a = rng.random_range(0.0..PI);
            let (dx, dy) = (0.5 * len * a.cos(), 0.5 * len * a.sin());
            Shape::Capsule {
                x0: cx - dx,
                y0: cy - dy,
                x1: cx + dx,
                y1: cy + dy,
                r: rng.random_range(6.0..14.0) * k,
            }
        }
    }
}

/// Line art of a label map: a pixel is ink when its right or lower
/// neighbour carries a different label.
pub fn contour_lineart(labels: &LabelMap) -> GrayImage {
    let (w, h) = labels.dims();
    Raster::from_fn(w, h, |x, y| {
        let l = labels.get(x, y);
        let edge = (x + 1 < w && labels.get(x + 1, y) != l) || (y + 1 < h && labels.get(x, y + 1) != l);
        if edge {
            0
        } else {
            255
        }
    })
}

/// Erases square runs of the contour: each ink pixel starts a gap with
/// probability `rate / 4`, clearing an `L x L` square (L in 2..=6) at it.
pub fn add_gap_noise(lineart: &mut GrayImage, rate: f64, rng: &mut ChaCha8Rng) {
    if rate <= 0.0 {
        return;
    }
    let (w, h) = lineart.dims();
    let ink: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| lineart.get(x, y) == 0)
        .collect();
    for (x, y) in ink {
        if rng.random::<f64>() < rate / 4.0 {
            let l = rng.random_range(2..=6usize);
            let (x0, y0) = (x.saturating_sub(l / 2), y.saturating_sub(l / 2));
            for yy in y0..(y0 + l).min(h) {
                for xx in x0..(x0 + l).min(w) {
                    lineart.set(xx, yy, 255);
                }
            }
        }
    }
}

fn colorize(scene: &Scene, labels: &LabelMap, lineart: &GrayImage) -> RgbImage {
    let (w, h) = labels.dims();
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let c = if lineart.get(x, y) == 0 {
                [0, 0, 0]
            } else {
                match labels.get(x, y) {
                    0 => [255, 255, 255],
                    l => scene.shapes[l as usize - 1].1,
                }
            };
            data.extend_from_slice(&c);
        }
    }
    Raster::new(w, h, 3, data).expect("rgb dims")
}

/// One generated pair.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub scene_a: Scene,
    pub scene_b: Scene,
    pub present_b: Vec<bool>,
    pub colored_a: RgbImage,
    pub colored_b: RgbImage,
    pub lineart_a: GrayImage,
    pub lineart_b: GrayImage,
    pub regions_a: RegionMap,
    pub regions_b: RegionMap,
    pub corr: CorrSet,
}

pub fn generate_pair(spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let canvas = spec.canvas as f64;
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut shapes = Vec::with_capacity(spec.n_shapes);
    for _ in 0..spec.n_shapes {
        let shape = random_shape(&mut rng, canvas);
        let color = random_color(&mut rng, &colors);
        colors.push(color);
        shapes.push((shape, color));
    }
    let scene_a = Scene {
        canvas: spec.canvas,
        shapes,
    };

    let global = Similarity {
        center: (canvas / 2.0, canvas / 2.0),
        angle: rng.random_range(-1.0..=1.0) * spec.max_rotation_deg.to_radians(),
        scale: rng.random_range(spec.scale_min..=spec.scale_max),
        tx: rng.random_range(-1.0..=1.0) * spec.max_translation,
        ty: rng.random_range(-1.0..=1.0) * spec.max_translation,
    };
    let mut present_b = Vec::with_capacity(spec.n_shapes);
    let mut shapes_b = Vec::with_capacity(spec.n_shapes);
    for (shape, color) in &scene_a.shapes {
        let t = Similarity {
            tx: global.tx + rng.random_range(-1.0..=1.0) * spec.jitter,
            ty: global.ty + rng.random_range(-1.0..=1.0) * spec.jitter,
            ..global
        };
        shapes_b.push((shape.transformed(&t), *color));
        present_b.push(rng.random::<f64>() >= spec.dropout);
    }
    if !present_b.iter().any(|&p| p) {
        present_b[0] = true;
    }
    let scene_b = Scene {
        canvas: spec.canvas,
        shapes: shapes_b,
    };

    let labels_a = scene_a.labels(&vec![true; spec.n_shapes]);
    if labels_a.data().iter().all(|&l| l == 0) {
        return Err(Error::Degenerate(format!("scene {} is empty", spec.seed)));
    }
    let labels_b = scene_b.labels(&present_b);
    let mut lineart_a = contour_lineart(&labels_a);
    let mut lineart_b = contour_lineart(&labels_b);
    add_gap_noise(&mut lineart_a, spec.gap_noise, &mut rng);
    add_gap_noise(&mut lineart_b, spec.gap_noise, &mut rng);
    let colored_a = colorize(&scene_a, &labels_a, &lineart_a);
    let colored_b = colorize(&scene_b, &labels_b, &lineart_b);
    let regions_a = RegionMap::from_labels(labels_a);
    let regions_b = RegionMap::from_labels(labels_b);
    let ids_a: Vec<u32> = regions_a.ids().collect();
    let ids_b: Vec<u32> = regions_b.ids().collect();
    let corr = CorrSet::identity(&ids_a, &ids_b);
    Ok(ScenePair {
        scene_a,
        scene_b,
        present_b,
        colored_a,
        colored_b,
        lineart_a,
        lineart_b,
        regions_a,
        regions_b,
        corr,
    })
}

/// Knobs for a whole dataset; each pair draws its own seed and shape count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkOptions {
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub scene: SceneSpec,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            min_shapes: 3,
            max_shapes: 6,
            scene: SceneSpec::default(),
        }
    }
}

/// Spec of pair `index` in a dataset generated from `seed`.
pub fn pair_spec(opts: &BenchmarkOptions, seed: u64, index: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let lo = opts.min_shapes.max(1);
    let hi = opts.max_shapes.max(lo);
    SceneSpec {
        seed: rng.random(),
        n_shapes: rng.random_range(lo..=hi),
        ..opts.scene.clone()
    }
}

/// Writes `count` pairs under `out_dir/pair_XXXX/` plus `manifest.jsonl`.
pub fn generate_benchmark(out_dir: &Path, count: usize, seed: u64, opts: &BenchmarkOptions) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::invalid("pair count must be >= 1"));
    }
    let mut manifest = Manifest::new(out_dir);
    for i in 0..count {
        let spec = pair_spec(opts, seed, i);
        let pair = generate_pair(&spec)?;
        let dir = format!("pair_{i:04}");
        let rel = |name: &str| format!("{dir}/{name}");
        io::write_gray_png(&out_dir.join(rel("lineart_a.png")), &pair.lineart_a)?;
        io::write_gray_png(&out_dir.join(rel("lineart_b.png")), &pair.lineart_b)?;
        io::write_rgb_png(&out_dir.join(rel("colored_a.png")), &pair.colored_a)?;
        io::write_rgb_png(&out_dir.join(rel("colored_b.png")), &pair.colored_b)?;
        pair.regions_a.save(&out_dir.join(rel("regions_a.png")))?;
        pair.regions_b.save(&out_dir.join(rel("regions_b.png")))?;
        pair.corr.save(&out_dir.join(rel("corr.json")))?;
        manifest.records.push(ManifestRecord {
            img_a: rel("lineart_a.png"),
            img_b: rel("lineart_b.png"),
            colored_a: Some(rel("colored_a.png")),
            colored_b: Some(rel("colored_b.png")),
            regions_a: Some(rel("regions_a.png")),
            regions_b: Some(rel("regions_b.png")),
            corr: Some(rel("corr.json")),
        });
    }
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
