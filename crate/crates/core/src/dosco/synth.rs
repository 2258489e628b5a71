use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::split::carve_val;
use super::{DomainSplit, Entry, Role};
use crate::data::LabeledDataset;
use crate::error::{bail, Result};
use crate::nets::InputKind;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Largest jigsaw grid side the generated images must support.
const JIGSAW_MAX_GRID: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Waveform,
}

/// Recipe for a synthetic domain-shift dataset.
///
/// The class decides a foreground motif: a square of `motif_grid²` cells,
/// half of them lit, at a random position. The domain decides the
/// background: a per-channel colour offset plus an oriented sinusoidal
/// texture. Every class shares the same domain palette; each class trains on
/// a window of half the domains, and every domain is a training source for
/// the same number of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDGSpec {
    pub modality: Modality,
    pub num_classes: usize,
    pub num_domains: usize,
    pub samples_per_cell: usize,
    pub image_side: usize,
    pub channels: usize,
    /// Waveform length, used when `modality` is `waveform`.
    pub wave_length: usize,
    pub motif_side: usize,
    pub motif_grid: usize,
    pub motif_amplitude: f64,
    pub background_amplitude: f64,
    pub texture_amplitude: f64,
    /// Range of texture frequencies, in cycles per image side.
    pub texture_cycles: (f64, f64),
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticDGSpec {
    fn default() -> Self {
        Self {
            modality: Modality::Image,
            num_classes: 4,
            num_domains: 6,
            samples_per_cell: 60,
            image_side: 32,
            channels: 3,
            wave_length: 1024,
            motif_side: 16,
            motif_grid: 2,
            motif_amplitude: 1.5,
            background_amplitude: 0.05,
            texture_amplitude: 0.2,
            texture_cycles: (2.0, 8.0),
            noise_level: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticDGSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("num_domains", self.num_domains),
            ("samples_per_cell", self.samples_per_cell),
            ("channels", self.channels),
            ("motif_grid", self.motif_grid),
        ] {
            if v == 0 {
                bail!(Spec, "{name} must be positive");
            }
        }
        if self.num_classes < 2 {
            bail!(Spec, "at least 2 classes are needed, got {}", self.num_classes);
        }
        if self.num_domains == 1 && self.samples_per_cell < 2 {
            bail!(Spec, "a single domain needs at least 2 samples per class to fill both roles");
        }
        if self.motif_patterns().len() < self.num_classes {
            bail!(Spec, "a {g}x{g} motif grid cannot encode {} classes", self.num_classes, g = self.motif_grid);
        }
        if self.motif_side == 0 || !self.motif_side.is_multiple_of(self.motif_grid) {
            bail!(Spec, "motif_side {} must be a positive multiple of motif_grid {}", self.motif_side, self.motif_grid);
        }
        match self.modality {
            Modality::Image => {
                if self.image_side == 0 || !self.image_side.is_multiple_of(JIGSAW_MAX_GRID) {
                    bail!(Spec, "image_side {} must be a positive multiple of {JIGSAW_MAX_GRID}", self.image_side);
                }
                if self.motif_side > self.image_side {
                    bail!(Spec, "motif_side {} exceeds image_side {}", self.motif_side, self.image_side);
                }
            }
            Modality::Waveform => {
                if self.motif_len_1d() > self.wave_length {
                    bail!(Spec, "a {}-sample motif does not fit a {}-sample waveform", self.motif_len_1d(), self.wave_length);
                }
            }
        }
        let (lo, hi) = self.texture_cycles;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            bail!(Spec, "texture_cycles must satisfy 0 < lo <= hi, got ({lo}, {hi})");
        }
        for (name, v) in [
            ("motif_amplitude", self.motif_amplitude),
            ("background_amplitude", self.background_amplitude),
            ("texture_amplitude", self.texture_amplitude),
            ("noise_level", self.noise_level),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Spec, "{name} must be a non-negative number, got {v}");
            }
        }
        Ok(())
    }

    pub fn input_kind(&self) -> InputKind {
        match self.modality {
            Modality::Image => InputKind::Image2d,
            Modality::Waveform => InputKind::Waveform1d,
        }
    }

    /// Per-example input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.modality {
            Modality::Image => vec![self.channels, self.image_side, self.image_side],
            Modality::Waveform => vec![self.channels, self.wave_length],
        }
    }

    fn motif_len_1d(&self) -> usize {
        self.motif_side * self.motif_grid
    }

    /// Cell masks with exactly half the cells lit (rounded down), in
    /// lexicographic order. Equal lit counts keep mean intensity from
    /// revealing the class.
    pub fn motif_patterns(&self) -> Vec<Vec<bool>> {
        let cells = self.motif_grid * self.motif_grid;
        if cells > 20 {
            return Vec::new();
        }
        let lit = (cells / 2).max(1);
        (0u32..1 << cells)
            .filter(|m| m.count_ones() as usize == lit)
            .map(|m| (0..cells).map(|b| m >> b & 1 == 1).collect())
            .collect()
    }
}

struct Domain {
    bias: Vec<f64>,
    weights: Vec<f64>,
    cycles: f64,
    angle: f64,
}

/// Evenly spaced domain backgrounds under a random rotation: colour
/// offsets on a circle in channel space, texture frequencies on a uniform
/// grid of the configured range, orientations spread over half a turn.
fn palette(spec: &SyntheticDGSpec, r: &mut Rng) -> Vec<Domain> {
    let (lo, hi) = spec.texture_cycles;
    let d = spec.num_domains;
    let hue0 = r.random_range(0.0..2.0 * PI);
    let angle0 = r.random_range(0.0..PI);
    let mut cycles: Vec<f64> = (0..d).map(|i| if d > 1 { lo + (hi - lo) * i as f64 / (d - 1) as f64 } else { lo }).collect();
    cycles.shuffle(r);
    (0..d)
        .map(|i| {
            let hue = hue0 + 2.0 * PI * i as f64 / d as f64;
            let wave = |ch: usize, shift: f64| (hue + shift + 2.0 * PI * ch as f64 / spec.channels as f64).cos();
            Domain {
                bias: (0..spec.channels).map(|ch| spec.background_amplitude * wave(ch, 0.0)).collect(),
                weights: (0..spec.channels).map(|ch| wave(ch, PI / 2.0)).collect(),
                cycles: cycles[i],
                angle: angle0 + PI * i as f64 / d as f64,
            }
        })
        .collect()
}

/// Zero-padded id of the `index`-th generated example.
pub fn example_id(index: usize) -> String {
    format!("ex{index:06}")
}

/// Generates the dataset and its 50/50 domain split. With a single domain
/// the roles are assigned per example instead, so ID and OOD coincide.
pub fn generate_synthetic(spec: &SyntheticDGSpec) -> Result<(LabeledDataset, DomainSplit)> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, rng::SYNTH);
    let domains = palette(spec, &mut r);
    let patterns = spec.motif_patterns();
    let noise = Normal::new(0.0, spec.noise_level.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let shape = spec.input_shape();
    let per: usize = shape.iter().product();
    let n = spec.num_classes * spec.num_domains * spec.samples_per_cell;

    let (mut data, mut labels, mut doms, mut ids) = (Vec::with_capacity(n * per), Vec::new(), Vec::new(), Vec::new());
    #[allow(clippy::needless_range_loop)]
    for class in 0..spec.num_classes {
        for (d, dom) in domains.iter().enumerate() {
            for _ in 0..spec.samples_per_cell {
                let start = data.len();
                data.resize(start + per, 0.0);
                let x = &mut data[start..];
                match spec.modality {
                    Modality::Image => draw_image(spec, dom, &patterns[class], x, &mut r),
                    Modality::Waveform => draw_wave(spec, dom, &patterns[class], x, &mut r),
                }
                if spec.noise_level > 0.0 {
                    x.iter_mut().for_each(|v| *v += noise.sample(&mut r));
                }
                ids.push(example_id(ids.len()));
                labels.push(class);
                doms.push(d);
            }
        }
    }
    let inputs = Tensor::new([vec![n], shape].concat(), data)?;
    let split = assign_roles(spec, &ids, &labels, &doms)?;
    let ds = LabeledDataset::new(spec.input_kind(), ids, inputs, labels, Some(doms), spec.num_classes)?;
    Ok((ds, split))
}

fn draw_image(spec: &SyntheticDGSpec, dom: &Domain, pattern: &[bool], x: &mut [f64], r: &mut Rng) {
    let s = spec.image_side;
    let phase = r.random_range(0.0..2.0 * PI);
    let (ca, sa) = (dom.angle.cos(), dom.angle.sin());
    let k = 2.0 * PI * dom.cycles / s as f64;
    for yy in 0..s {
        for xx in 0..s {
            let t = spec.texture_amplitude * (k * (xx as f64 * ca + yy as f64 * sa) + phase).sin();
            for ch in 0..spec.channels {
                x[(ch * s + yy) * s + xx] = dom.bias[ch] + dom.weights[ch] * t;
            }
        }
    }
    let (m, g) = (spec.motif_side, spec.motif_grid);
    let cell = m / g;
    let oy = r.random_range(0..=s - m);
    let ox = r.random_range(0..=s - m);
    for (c, _) in pattern.iter().enumerate().filter(|(_, &on)| on) {
        let (cy, cx) = (oy + (c / g) * cell, ox + (c % g) * cell);
        for yy in cy..cy + cell {
            for xx in cx..cx + cell {
                for ch in 0..spec.channels {
                    x[(ch * s + yy) * s + xx] += spec.motif_amplitude;
                }
            }
        }
    }
}

fn draw_wave(spec: &SyntheticDGSpec, dom: &Domain, pattern: &[bool], x: &mut [f64], r: &mut Rng) {
    let l = spec.wave_length;
    let phase = r.random_range(0.0..2.0 * PI);
    let k = 2.0 * PI * dom.cycles * 4.0 / l as f64;
    for t in 0..l {
        let hum = spec.texture_amplitude * (k * t as f64 + phase).sin();
        for ch in 0..spec.channels {
            x[ch * l + t] = dom.bias[ch] + dom.weights[ch] * hum;
        }
    }
    // on/off bursts: each lit cell is a short tone
    let cell = spec.motif_side / spec.motif_grid;
    let start = r.random_range(0..=l - spec.motif_len_1d());
    for (c, _) in pattern.iter().enumerate().filter(|(_, &on)| on) {
        for t in 0..cell {
            let v = spec.motif_amplitude * (PI * t as f64 / 2.0).cos();
            for ch in 0..spec.channels {
                x[ch * l + start + c * cell + t] += v;
            }
        }
    }
}

/// Train-role domains for `class`: a window of `ceil(D/2)` consecutive
/// entries of a shuffled domain order, with window starts spread evenly over
/// the classes so every domain is a training source for about the same
/// number of classes.
fn train_window(order: &[usize], class: usize, num_classes: usize) -> Vec<usize> {
    let d = order.len();
    let start = class * d / num_classes;
    (0..d.div_ceil(2)).map(|j| order[(start + j) % d]).collect()
}

fn assign_roles(spec: &SyntheticDGSpec, ids: &[String], labels: &[usize], doms: &[usize]) -> Result<DomainSplit> {
    let mut split = DomainSplit::new(spec.num_domains, spec.seed);
    let mut order: Vec<usize> = (0..spec.num_domains).collect();
    order.shuffle(&mut rng::substream(spec.seed, rng::SPLIT, 0));
    for class in 0..spec.num_classes {
        let rows: Vec<usize> = (0..ids.len()).filter(|&i| labels[i] == class).collect();
        let train_rows: Vec<usize> = if spec.num_domains == 1 {
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rng::substream(spec.seed, rng::SPLIT, 1 + class as u64));
            shuffled.truncate(rows.len().div_ceil(2));
            shuffled
        } else {
            let train_domains = train_window(&order, class, spec.num_classes);
            rows.iter().copied().filter(|&i| train_domains.contains(&doms[i])).collect()
        };
        for &i in &rows {
            let role = if train_rows.contains(&i) { Role::Train } else { Role::Test };
            split.insert(ids[i].clone(), Entry { class, domain: doms[i], role })?;
        }
    }
    carve_val(&mut split, &mut rng::substream(spec.seed, rng::SPLIT, u64::MAX));
    Ok(split)
}
