use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One labeled specimen image with pixels in `[0,1]`, shape `[H,W,3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub species: String,
    pub pixels: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub species: String,
    pub path: PathBuf,
}

/// Per-species census with the member ids in manifest order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpeciesCatalog {
    members: BTreeMap<String, Vec<String>>,
    /// `(id, species)` in manifest order.
    order: Vec<(String, String)>,
}

impl SpeciesCatalog {
    pub fn from_pairs<I, A, B>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut catalog = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (id, species) in rows {
            let (id, species) = (id.into(), species.into());
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            catalog
                .members
                .entry(species.clone())
                .or_default()
                .push(id.clone());
            catalog.order.push((id, species));
        }
        Ok(catalog)
    }

    /// Catalog with synthesized ids (`<species>/<index>`), for census-only work.
    pub fn from_counts<S: AsRef<str>>(counts: &[(S, usize)]) -> Result<Self> {
        let mut rows = Vec::new();
        for (species, n) in counts {
            if *n == 0 {
                return Err(Error::Data(format!(
                    "species `{}` has a zero count",
                    species.as_ref()
                )));
            }
            for i in 0..*n {
                rows.push((
                    format!("{}/{i:06}", species.as_ref()),
                    species.as_ref().to_string(),
                ));
            }
        }
        Self::from_pairs(rows)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn num_species(&self) -> usize {
        self.members.len()
    }

    pub fn num_samples(&self) -> usize {
        self.order.len()
    }

    pub fn count(&self, species: &str) -> usize {
        self.members.get(species).map_or(0, Vec::len)
    }

    /// Species → sample count, sorted by species name.
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        self.members
            .iter()
            .map(|(s, ids)| (s.as_str(), ids.len()))
            .collect()
    }

    pub fn members(&self) -> &BTreeMap<String, Vec<String>> {
        &self.members
    }

    pub fn rows(&self) -> &[(String, String)] {
        &self.order
    }

    /// Species with fewer than `min_count` samples.
    pub fn unseen_species(&self, min_count: usize) -> Vec<&str> {
        self.members
            .iter()
            .filter(|(_, ids)| ids.len() < min_count)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Parse a dataset manifest (`id,species,path`). Relative paths resolve
/// against the manifest's directory. Images are not decoded.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, header)) if header.trim() == "id,species,path" => {}
        Some((_, header)) => {
            return Err(Error::Format(format!(
                "manifest header must be `id,species,path`, got `{header}`"
            )))
        }
    }
    let mut rows = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, species, rel] = fields[..] else {
            return Err(Error::Format(format!(
                "manifest line {}: expected 3 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        };
        if id.is_empty() || species.is_empty() {
            return Err(Error::Format(format!(
                "manifest line {}: empty id or species",
                lineno + 1
            )));
        }
        if !ids.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let p = Path::new(rel);
        rows.push(ManifestRow {
            id: id.to_string(),
            species: species.to_string(),
            path: if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            },
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[(String, String, String)]) -> Result<()> {
    let mut out = String::from("id,species,path\n");
    for (id, species, p) in rows {
        out.push_str(&format!("{id},{species},{p}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn catalog_of(rows: &[ManifestRow]) -> Result<SpeciesCatalog> {
    SpeciesCatalog::from_pairs(rows.iter().map(|r| (r.id.clone(), r.species.clone())))
}

/// Decode a PNG/JPEG into an `[H,W,3]` RGB tensor scaled to `[0,1]`.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::new([h as usize, w as usize, 3], data)
}

/// Decoded samples plus their census.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    index: HashMap<String, usize>,
    catalog: SpeciesCatalog,
}

impl Dataset {
    pub fn from_samples(samples: Vec<ImageSample>) -> Result<Self> {
        let catalog =
            SpeciesCatalog::from_pairs(samples.iter().map(|s| (s.id.clone(), s.species.clone())))?;
        let index = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        Ok(Self {
            samples,
            index,
            catalog,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn catalog(&self) -> &SpeciesCatalog {
        &self.catalog
    }

    /// `[height, width, channels]` shared by every sample (empty if none).
    pub fn input_shape(&self) -> Vec<usize> {
        self.samples
            .first()
            .map(|s| s.pixels.shape().to_vec())
            .unwrap_or_default()
    }

    pub fn get(&self, id: &str) -> Option<&ImageSample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn species_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(|s| s.species.as_str())
    }
}

/// Read a manifest and decode every image it lists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let rows = read_manifest(path)?;
    let mut samples = Vec::with_capacity(rows.len());
    let mut shape: Option<Vec<usize>> = None;
    for row in rows {
        let pixels = decode_image(&row.path)?;
        match &shape {
            None => shape = Some(pixels.shape().to_vec()),
            Some(s) if s != pixels.shape() => {
                return Err(Error::Data(format!(
                    "image {} has shape {:?}, expected {s:?}",
                    row.path.display(),
                    pixels.shape()
                )))
            }
            _ => {}
        }
        samples.push(ImageSample {
            id: row.id,
            species: row.species,
            pixels,
        });
    }
    Dataset::from_samples(samples)
}
