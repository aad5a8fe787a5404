//! Synthetic orthophoto-like scenes.
//!
//! A green textured background carries one or two elongated, irregular
//! landslide scars. Depending on the scene's tag it also carries confusers
//! that look landslide-ish but are not labelled: thin bright roads, compact
//! bare-earth patches or a river band. Masks mark only the scars.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize, write_mask_png, write_rgb_png, DataError, Raster, Sample, TileIndex};

pub const SYNTH_TAGS: [&str; 4] = ["plain", "road", "bare_earth", "river"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSample {
    pub id: String,
    pub image: Raster,
    /// Labels in {0, 1}.
    pub mask: Raster,
    pub tag: String,
}

/// What to draw in one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub tag: &'static str,
    pub landslides: usize,
}

struct Canvas {
    size: usize,
    rgb: Vec<[f64; 3]>,
    mask: Vec<u8>,
}

impl Canvas {
    fn paint(&mut self, x: usize, y: usize, color: [f64; 3], label: Option<u8>) {
        let i = y * self.size + x;
        self.rgb[i] = color;
        if let Some(l) = label {
            self.mask[i] = l;
        }
    }
}

/// Smooth random field from a few plane waves, roughly in [−1, 1].
struct Waves(Vec<(f64, f64, f64)>);

impl Waves {
    fn new(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Self {
        let s = size as f64;
        Self(
            (0..n)
                .map(|_| {
                    let angle = rng.random_range(0.0..PI);
                    let freq = rng.random_range(2.0..6.0) * 2.0 * PI / s;
                    (freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..2.0 * PI))
                })
                .collect(),
        )
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.0.iter().map(|(fx, fy, p)| (fx * x + fy * y + p).sin()).sum::<f64>() / self.0.len() as f64
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    let shared = rng.random_range(-amount..amount);
    base.map(|c| c + shared + rng.random_range(-amount..amount) * 0.3)
}

/// Stamps a disk of `radius` around every point of a sampled curve.
fn stroke(canvas: &mut Canvas, points: &[(f64, f64)], radius: f64, rng: &mut ChaCha8Rng, color: [f64; 3]) {
    let n = canvas.size as isize;
    let r = radius.ceil() as isize;
    for &(cx, cy) in points {
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (cx.round() as isize + dx, cy.round() as isize + dy);
                if x < 0 || y < 0 || x >= n || y >= n {
                    continue;
                }
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= radius {
                    let c = jitter(rng, color, 6.0);
                    canvas.paint(x as usize, y as usize, c, None);
                }
            }
        }
    }
}

/// A wavy path crossing the scene from one edge to the opposite one.
fn crossing_path(rng: &mut ChaCha8Rng, size: usize, amplitude: f64) -> Vec<(f64, f64)> {
    let s = size as f64;
    let start = rng.random_range(0.15 * s..0.85 * s);
    let slope = rng.random_range(-0.4..0.4);
    let freq = rng.random_range(1.0..3.0) * 2.0 * PI / s;
    let phase = rng.random_range(0.0..2.0 * PI);
    let vertical = rng.random::<bool>();
    (0..size * 4)
        .map(|i| {
            let t = i as f64 / 4.0;
            let off = start + slope * (t - s / 2.0) + amplitude * (freq * t + phase).sin();
            if vertical {
                (off, t)
            } else {
                (t, off)
            }
        })
        .collect()
}

fn draw_roads(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let size = canvas.size;
    for _ in 0..rng.random_range(1..=2) {
        let width = (size as f64 / 48.0).max(1.0);
        let path = crossing_path(rng, size, size as f64 * 0.05);
        stroke(canvas, &path, width, rng, [208.0, 203.0, 190.0]);
    }
}

fn draw_river(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let size = canvas.size;
    let width = size as f64 * rng.random_range(0.03..0.05);
    let path = crossing_path(rng, size, size as f64 * 0.12);
    stroke(canvas, &path, width, rng, [78.0, 104.0, 128.0]);
}

/// Irregular star-convex region; `elongation` is the minor/major axis ratio.
fn blob(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    radius: (f64, f64),
    elongation: (f64, f64),
    color: [f64; 3],
    label: Option<u8>,
) {
    let s = canvas.size as f64;
    let (cx, cy) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s));
    let a = rng.random_range(radius.0 * s..radius.1 * s);
    let b = a * rng.random_range(elongation.0..elongation.1);
    let theta = rng.random_range(0.0..PI);
    let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let texture = Waves::new(rng, 3, canvas.size * 4);
    for y in 0..canvas.size {
        for x in 0..canvas.size {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = (dx * theta.cos() + dy * theta.sin()) / a;
            let v = (-dx * theta.sin() + dy * theta.cos()) / b;
            let rho = (u * u + v * v).sqrt();
            let phi = v.atan2(u);
            let edge = 1.0 + 0.2 * (3.0 * phi + p1).sin() + 0.12 * (5.0 * phi + p2).sin();
            if rho <= edge {
                let shade = 10.0 * texture.at(x as f64, y as f64);
                let c = jitter(rng, color.map(|c| c + shade), 12.0);
                canvas.paint(x, y, c, label);
            }
        }
    }
}

/// Renders one scene with the given contents.
pub fn render_scene(size: usize, spec: SceneSpec, rng: &mut ChaCha8Rng) -> (Raster, Raster) {
    let waves = Waves::new(rng, 4, size);
    let tint = [rng.random_range(-6.0..6.0), rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0)];
    let mut canvas = Canvas {
        size,
        rgb: Vec::with_capacity(size * size),
        mask: vec![0; size * size],
    };
    for y in 0..size {
        for x in 0..size {
            let shade = 14.0 * waves.at(x as f64, y as f64);
            let base = [58.0 + tint[0], 104.0 + tint[1], 48.0 + tint[2]].map(|c| c + shade);
            canvas.rgb.push(jitter(rng, base, 8.0));
        }
    }
    match spec.tag {
        "road" => draw_roads(&mut canvas, rng),
        "river" => draw_river(&mut canvas, rng),
        "bare_earth" => {
            for _ in 0..rng.random_range(1..=3) {
                blob(&mut canvas, rng, (0.05, 0.1), (0.8, 1.0), [148.0, 104.0, 66.0], None);
            }
        }
        _ => {}
    }
    for _ in 0..spec.landslides {
        blob(&mut canvas, rng, (0.14, 0.26), (0.3, 0.55), [174.0, 160.0, 140.0], Some(1));
    }
    let image = Raster::from_fn(size, size, 3, |x, y, c| canvas.rgb[y * size + x][c].round().clamp(0.0, 255.0) as u8);
    let mask = Raster::new(size, size, 1, canvas.mask).expect("sized from canvas");
    (image, mask)
}

/// Scene `index` of the dataset seeded by `seed`. Each scene has its own
/// generator stream, so a dataset is a prefix of any larger one.
pub fn synth_sample(size: usize, seed: u64, index: usize) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let tag = SYNTH_TAGS[rng.random_range(0..SYNTH_TAGS.len())];
    let landslides = rng.random_range(1..=2);
    let (image, mask) = render_scene(size, SceneSpec { tag, landslides }, &mut rng);
    SynthSample {
        id: format!("synth_{index:04}"),
        image,
        mask,
        tag: tag.to_owned(),
    }
}

impl SynthSample {
    /// The scene as a single training tile.
    pub fn to_sample(&self) -> Sample {
        let size = self.image.width();
        Sample {
            id: self.id.clone(),
            image: normalize(&self.image),
            mask: self.mask.data().to_vec(),
            tag: self.tag.clone(),
            tile: TileIndex {
                parent: self.id.clone(),
                parent_width: size,
                parent_height: self.image.height(),
                x_offset: 0,
                y_offset: 0,
                tile_size: size,
                overlap: 0,
            },
        }
    }
}

pub fn generate(config: &SynthConfig) -> Vec<SynthSample> {
    (0..config.count).map(|i| synth_sample(config.size, config.seed, i)).collect()
}

/// Writes `images/`, `masks/` (0/255 PNGs) and `tags.tsv` under `out_dir`.
pub fn write_dataset(samples: &[SynthSample], out_dir: &Path) -> Result<(), DataError> {
    let io = |path: &Path, e: std::io::Error| DataError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let (images, masks) = (out_dir.join("images"), out_dir.join("masks"));
    for dir in [&images, &masks] {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    let tags_path = out_dir.join("tags.tsv");
    let mut tags = Vec::new();
    writeln!(tags, "# id\ttag").expect("in-memory write");
    for s in samples {
        write_rgb_png(&s.image, &images.join(format!("{}.png", s.id)))?;
        write_mask_png(&s.mask, &masks.join(format!("{}.png", s.id)))?;
        writeln!(tags, "{}\t{}", s.id, s.tag).expect("in-memory write");
    }
    fs::write(&tags_path, tags).map_err(|e| io(&tags_path, e))
}
