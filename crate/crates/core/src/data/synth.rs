//! Procedural stand-in dataset: striped elliptical "specimens" on a
//! textured background. Each species is a point in a small parameter
//! space; samples jitter pose, color and texture around it.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_seen_species: usize,
    pub n_unseen_species: usize,
    pub samples_per_species: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Minimum normalized parameter distance between any two species.
    pub separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_seen_species: 12,
            n_unseen_species: 6,
            samples_per_species: 200,
            resolution: 64,
            seed: 0,
            separation: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesParams {
    /// Body hue in [0,1).
    pub hue: f64,
    pub stripe_count: u32,
    /// Dark fraction of each stripe period.
    pub stripe_width: f64,
    /// Major/minor axis ratio of the body.
    pub aspect: f64,
    /// Amplitude of per-pixel texture noise.
    pub noise_scale: f64,
}

impl SpeciesParams {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            hue: rng.random_range(0.0..1.0),
            stripe_count: rng.random_range(2..=6),
            stripe_width: rng.random_range(0.25..0.6),
            aspect: rng.random_range(1.3..2.2),
            noise_scale: rng.random_range(0.02..0.12),
        }
    }

    /// Distance in a space where each coordinate spans roughly [0,1].
    pub fn distance(&self, other: &Self) -> f64 {
        let dh = (self.hue - other.hue).abs();
        let hue = dh.min(1.0 - dh) * 2.0;
        let stripes = (f64::from(self.stripe_count) - f64::from(other.stripe_count)) / 4.0;
        let width = (self.stripe_width - other.stripe_width) / 0.35;
        let aspect = (self.aspect - other.aspect) / 0.9;
        let noise = (self.noise_scale - other.noise_scale) / 0.1;
        (hue * hue * 4.0 + stripes * stripes + width * width + aspect * aspect + noise * noise)
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpecies {
    pub name: String,
    pub unseen: bool,
    pub params: SpeciesParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub unseen_list: PathBuf,
    pub species: Vec<SynthSpecies>,
    pub samples: usize,
}

/// Draw species parameter vectors, rejecting any closer than the floor.
pub fn draw_species(cfg: &SynthConfig) -> Result<Vec<SynthSpecies>> {
    let mut rng = seed::rng_for(cfg.seed, "synth/species");
    let total = cfg.n_seen_species + cfg.n_unseen_species;
    let mut species: Vec<SynthSpecies> = Vec::with_capacity(total);
    for i in 0..total {
        let mut attempts = 0;
        let params = loop {
            attempts += 1;
            if attempts > 20_000 {
                return Err(Error::Data(format!(
                    "parameter space exhausted: could not place species {} of {total} at separation {}",
                    i + 1,
                    cfg.separation
                )));
            }
            let p = SpeciesParams::sample(&mut rng);
            if species
                .iter()
                .all(|s| s.params.distance(&p) >= cfg.separation)
            {
                break p;
            }
        };
        let unseen = i >= cfg.n_seen_species;
        let name = if unseen {
            format!("unseen-{:02}", i - cfg.n_seen_species)
        } else {
            format!("seen-{i:02}")
        };
        species.push(SynthSpecies {
            name,
            unseen,
            params,
        });
    }
    Ok(species)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Render one specimen as interleaved RGB bytes.
pub fn render_sample<R: Rng + ?Sized>(
    params: &SpeciesParams,
    resolution: usize,
    rng: &mut R,
) -> Vec<u8> {
    let r = resolution as f64;
    let cx = r * (0.5 + rng.random_range(-0.08..0.08));
    let cy = r * (0.5 + rng.random_range(-0.08..0.08));
    let major = r * rng.random_range(0.30..0.38);
    let minor = major / params.aspect;
    let angle: f64 = rng.random_range(-0.35..0.35);
    let (sin, cos) = angle.sin_cos();
    let hue = params.hue + rng.random_range(-0.015..0.015);
    let value = rng.random_range(0.8..0.95);
    let body = hsv_to_rgb(hue, 0.85, value);
    let band = hsv_to_rgb(hue, 0.6, 0.15);
    let stripe_phase = rng.random_range(-0.05..0.05);

    let bg_hue = rng.random_range(0.22..0.38);
    let bg_a = hsv_to_rgb(bg_hue, 0.35, rng.random_range(0.35..0.55));
    let bg_b = hsv_to_rgb(bg_hue + 0.05, 0.3, rng.random_range(0.5..0.7));
    let fx = rng.random_range(0.05..0.2);
    let fy = rng.random_range(0.05..0.2);
    let bg_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut out = Vec::with_capacity(resolution * resolution * 3);
    for y in 0..resolution {
        for x in 0..resolution {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = (dx * cos + dy * sin) / major;
            let v = (-dx * sin + dy * cos) / minor;
            let rho = u * u + v * v;
            let mut rgb = if rho <= 1.0 {
                let pos = (u + 1.0) / 2.0 * f64::from(params.stripe_count) + stripe_phase;
                let in_band = pos.rem_euclid(1.0) < params.stripe_width;
                let base = if in_band { band } else { body };
                let shade = 1.0 - 0.25 * rho;
                base.map(|c| c * shade)
            } else {
                let t = 0.5 + 0.5 * (fx * x as f64 + fy * y as f64 + bg_phase).sin();
                [0, 1, 2].map(|k| bg_a[k] * (1.0 - t) + bg_b[k] * t)
            };
            let noise = if rho <= 1.0 { params.noise_scale } else { 0.04 };
            for c in &mut rgb {
                *c = (*c + rng.random_range(-noise..=noise)).clamp(0.0, 1.0);
            }
            out.extend(rgb.iter().map(|&c| (c * 255.0).round() as u8));
        }
    }
    out
}

/// Write a synthetic dataset under `out_dir`: PNGs in `images/<species>/`,
/// `manifest.csv`, and `unseen_species.txt`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    if cfg.n_seen_species == 0 || cfg.n_unseen_species == 0 || cfg.samples_per_species == 0 {
        return Err(Error::InvalidArgument(
            "species and sample counts must all be at least 1".into(),
        ));
    }
    if cfg.resolution < 16 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least 16, got {}",
            cfg.resolution
        )));
    }
    let out_dir = out_dir.as_ref();
    let species = draw_species(cfg)?;
    let mut rows = Vec::new();
    let res = cfg.resolution as u32;
    for (si, sp) in species.iter().enumerate() {
        let dir = out_dir.join("images").join(&sp.name);
        fs::create_dir_all(&dir)?;
        for k in 0..cfg.samples_per_species {
            let mut rng = seed::rng_for_indexed(
                cfg.seed,
                "synth/sample",
                (si * cfg.samples_per_species + k) as u64,
            );
            let pixels = render_sample(&sp.params, cfg.resolution, &mut rng);
            let id = format!("{}_{k:04}", sp.name);
            let rel = format!("images/{}/{id}.png", sp.name);
            image::save_buffer(
                out_dir.join(&rel),
                &pixels,
                res,
                res,
                image::ColorType::Rgb8,
            )
            .map_err(|e| Error::Image {
                path: out_dir.join(&rel),
                message: e.to_string(),
            })?;
            rows.push((id, sp.name.clone(), rel));
        }
    }
    let manifest = out_dir.join("manifest.csv");
    super::dataset::write_manifest(&manifest, &rows)?;
    let unseen_list = out_dir.join("unseen_species.txt");
    let unseen: String = species
        .iter()
        .filter(|s| s.unseen)
        .map(|s| format!("{}\n", s.name))
        .collect();
    fs::write(&unseen_list, unseen)?;
    Ok(SynthOutput {
        manifest,
        unseen_list,
        species,
        samples: rows.len(),
    })
}

/// Read a newline-separated species list (as written to `unseen_species.txt`).
pub fn read_species_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
