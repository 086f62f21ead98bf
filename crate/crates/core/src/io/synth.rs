//! Procedural labeled image sets: one coloured shape per image on a
//! uniform background, with optional size, position and brightness jitter.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Stripes,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Stripes => "stripes",
        })
    }
}

/// Background and foreground colours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Palette {
    pub background: [f32; 3],
    pub foreground: [f32; 3],
}

pub const PALETTES: [Palette; 3] = [
    Palette {
        background: [0.1, 0.1, 0.3],
        foreground: [0.95, 0.6, 0.1],
    },
    Palette {
        background: [0.9, 0.9, 0.8],
        foreground: [0.1, 0.5, 0.5],
    },
    Palette {
        background: [0.2, 0.45, 0.2],
        foreground: [0.85, 0.2, 0.7],
    },
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recipe {
    pub shape: Shape,
    pub palette: usize,
}

const SHAPES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Stripes];

/// The twelve (shape, palette) combinations. The first eight form the
/// default source set; the last four pair every shape with a palette it is
/// not drawn in within the source set.
pub fn catalogue() -> Vec<Recipe> {
    let held_out = [(0, 0), (1, 1), (2, 2), (3, 0)];
    let mut source = Vec::new();
    for p in 0..PALETTES.len() {
        for s in 0..SHAPES.len() {
            if !held_out.contains(&(s, p)) {
                source.push((s, p));
            }
        }
    }
    source
        .into_iter()
        .chain(held_out)
        .map(|(s, p)| Recipe {
            shape: SHAPES[s],
            palette: p,
        })
        .collect()
}

pub const SOURCE_RECIPES: std::ops::Range<usize> = 0..8;
pub const TARGET_RECIPES: std::ops::Range<usize> = 8..12;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetSpec {
    /// Catalogue indices, one per class.
    pub recipes: Vec<usize>,
    pub images_per_class: usize,
    /// Square image extent in pixels.
    pub size: usize,
    /// Jitter strength in `[0, 1]`; 0 makes all images of a class identical.
    pub jitter: f32,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn source(images_per_class: usize, seed: u64) -> Self {
        Self {
            recipes: SOURCE_RECIPES.collect(),
            images_per_class,
            size: 32,
            jitter: 1.0,
            seed,
        }
    }

    pub fn target(images_per_class: usize, seed: u64) -> Self {
        Self {
            recipes: TARGET_RECIPES.collect(),
            ..Self::source(images_per_class, seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    /// Per-image index in generation order.
    pub instance_ids: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Builds a dataset from labeled images; instance ids follow input order.
    pub fn from_labeled(images: Vec<Image>, labels: Vec<usize>) -> Result<Self> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::invalid("dataset needs one label per image and at least one image"));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            instance_ids: (0..images.len()).collect(),
            images,
            labels,
            classes,
        })
    }

    /// Images with label `c`.
    pub fn class_images(&self, c: usize) -> Vec<Image> {
        self.images
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == c)
            .map(|(im, _)| im.clone())
            .collect()
    }
}

fn inside(shape: Shape, dx: f32, dy: f32, r: f32) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        Shape::Triangle => dy.abs() <= r && dx.abs() <= 0.5 * (dy + r),
        Shape::Stripes => {
            dx.abs() <= r && dy.abs() <= r && ((dy + r) / (0.5 * r)).floor() as i64 % 2 == 0
        }
    }
}

fn render(recipe: &Recipe, size: usize, jitter: f32, rng: &mut ChaCha8Rng) -> Image {
    let mut u = |lo: f32, hi: f32| rng.random_range(lo..=hi);
    let s = size as f32;
    let (ox, oy) = (u(-1.0, 1.0) * 0.15 * s * jitter, u(-1.0, 1.0) * 0.15 * s * jitter);
    let r = 0.3 * s * (1.0 + jitter * u(-0.25, 0.25));
    let bright = 1.0 + jitter * u(-0.1, 0.1);
    let pal = PALETTES[recipe.palette];
    let fg = pal.foreground.map(|c| (c * bright).clamp(0.0, 1.0));
    let mut image = Image::filled(size, size, pal.background);
    let centre = 0.5 * s;
    for y in 0..size {
        for x in 0..size {
            let dx = x as f32 + 0.5 - centre - ox;
            let dy = y as f32 + 0.5 - centre - oy;
            if inside(recipe.shape, dx, dy, r) {
                image.set_pixel(x, y, fg);
            }
        }
    }
    image
}

/// Renders `images_per_class` images for each recipe, class by class.
pub fn synth_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    if spec.recipes.is_empty() || spec.images_per_class == 0 || spec.size == 0 {
        return Err(Error::invalid("synthetic dataset needs classes, images and a positive size"));
    }
    if !(0.0..=1.0).contains(&spec.jitter) {
        return Err(Error::invalid("jitter must lie in [0, 1]"));
    }
    let cat = catalogue();
    let mut recipes = Vec::with_capacity(spec.recipes.len());
    for &i in &spec.recipes {
        let r = *cat
            .get(i)
            .ok_or_else(|| Error::OutOfRange(format!("recipe {i} of {}", cat.len())))?;
        if recipes.contains(&r) {
            return Err(Error::invalid(format!("recipe {i} listed twice")));
        }
        recipes.push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (c, recipe) in recipes.iter().enumerate() {
        for _ in 0..spec.images_per_class {
            images.push(render(recipe, spec.size, spec.jitter, &mut rng));
            labels.push(c);
        }
    }
    Ok(Dataset {
        instance_ids: (0..images.len()).collect(),
        images,
        labels,
        classes: recipes.len(),
    })
}
