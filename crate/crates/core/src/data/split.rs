use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::dataset::SpeciesCatalog;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(Error::Format(format!("unknown partition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    /// Species with fewer samples than this go entirely to test.
    pub min_count: usize,
    pub test_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
    /// Species held out as unseen regardless of their count.
    pub unseen_species: BTreeSet<String>,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            min_count: 1000,
            test_frac: 0.2,
            val_frac: 0.2,
            seed: 0,
            unseen_species: BTreeSet::new(),
        }
    }
}

/// Partition assignment for every sample of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    /// `(id, species, partition)` in dataset order.
    pub rows: Vec<(String, String, Partition)>,
    pub params: SplitParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCensus {
    pub seen_species: usize,
    pub unseen_species: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub unseen_samples: usize,
}

impl fmt::Display for SplitCensus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} seen / {} unseen, train={} validation={} test={} (unseen samples={})",
            self.seen_species,
            self.unseen_species,
            self.train,
            self.validation,
            self.test,
            self.unseen_samples
        )
    }
}

/// Assign samples to train/validation/test.
///
/// Unseen species (count below `min_count`, or listed explicitly) go
/// entirely to test. Each seen species sends `⌊test_frac·n⌋` randomly drawn
/// samples to test; of the remaining `r`, `⌊val_frac·r⌋` go to validation
/// and the rest to train.
pub fn make_split(catalog: &SpeciesCatalog, params: &SplitParams) -> Result<SplitManifest> {
    for (name, v) in [
        ("test_frac", params.test_frac),
        ("val_frac", params.val_frac),
    ] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Split(format!("{name} must be in (0, 1), got {v}")));
        }
    }
    if catalog.is_empty() {
        return Err(Error::Split("catalog is empty".into()));
    }
    for s in &params.unseen_species {
        if catalog.count(s) == 0 {
            return Err(Error::Split(format!(
                "unseen species `{s}` is not in the dataset"
            )));
        }
    }

    let mut rng = seed::rng_for(params.seed, "split");
    let mut assignment: HashMap<&str, Partition> = HashMap::with_capacity(catalog.num_samples());
    let mut any_seen = false;
    for (species, ids) in catalog.members() {
        let unseen = ids.len() < params.min_count || params.unseen_species.contains(species);
        if unseen {
            for id in ids {
                assignment.insert(id, Partition::Test);
            }
            continue;
        }
        any_seen = true;
        let mut shuffled: Vec<&str> = ids.iter().map(String::as_str).collect();
        shuffled.shuffle(&mut rng);
        let n_test = (params.test_frac * ids.len() as f64).floor() as usize;
        let rest = ids.len() - n_test;
        let n_val = (params.val_frac * rest as f64).floor() as usize;
        for (i, id) in shuffled.into_iter().enumerate() {
            let part = if i < n_test {
                Partition::Test
            } else if i < n_test + n_val {
                Partition::Validation
            } else {
                Partition::Train
            };
            assignment.insert(id, part);
        }
    }
    if !any_seen {
        return Err(Error::Split(format!(
            "every species is unseen (min_count = {}); nothing left to train on",
            params.min_count
        )));
    }
    let rows: Vec<_> = catalog
        .rows()
        .iter()
        .map(|(id, sp)| (id.clone(), sp.clone(), assignment[id.as_str()]))
        .collect();
    if !rows.iter().any(|r| r.2 == Partition::Train) {
        return Err(Error::Split("train partition is empty".into()));
    }
    Ok(SplitManifest {
        rows,
        params: params.clone(),
    })
}

impl SplitManifest {
    pub fn ids(&self, part: Partition) -> impl Iterator<Item = &str> {
        self.rows
            .iter()
            .filter(move |r| r.2 == part)
            .map(|r| r.0.as_str())
    }

    pub fn count(&self, part: Partition) -> usize {
        self.rows.iter().filter(|r| r.2 == part).count()
    }

    /// Species with at least one train or validation sample.
    pub fn seen_species(&self) -> BTreeSet<&str> {
        self.rows
            .iter()
            .filter(|r| r.2 != Partition::Test)
            .map(|r| r.1.as_str())
            .collect()
    }

    pub fn unseen_species(&self) -> BTreeSet<&str> {
        let seen = self.seen_species();
        self.rows
            .iter()
            .map(|r| r.1.as_str())
            .filter(|s| !seen.contains(s))
            .collect()
    }

    /// Members of one partition grouped by species.
    pub fn groups(&self, part: Partition) -> BTreeMap<String, Vec<String>> {
        let mut g: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (id, sp, p) in &self.rows {
            if *p == part {
                g.entry(sp.clone()).or_default().push(id.clone());
            }
        }
        g
    }

    pub fn census(&self) -> SplitCensus {
        let seen = self.seen_species();
        let unseen = self.unseen_species();
        SplitCensus {
            seen_species: seen.len(),
            unseen_species: unseen.len(),
            train: self.count(Partition::Train),
            validation: self.count(Partition::Validation),
            test: self.count(Partition::Test),
            unseen_samples: self
                .rows
                .iter()
                .filter(|r| unseen.contains(r.1.as_str()))
                .count(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,species,partition\n");
        for (id, sp, p) in &self.rows {
            out.push_str(&format!("{id},{sp},{p}\n"));
        }
        let p = &self.params;
        out.push_str(&format!("# seed={}\n", p.seed));
        out.push_str(&format!("# min_count={}\n", p.min_count));
        out.push_str(&format!("# test_frac={}\n", p.test_frac));
        out.push_str(&format!("# val_frac={}\n", p.val_frac));
        let unseen: Vec<&str> = p.unseen_species.iter().map(String::as_str).collect();
        out.push_str(&format!("# unseen_species={}\n", unseen.join(";")));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "id,species,partition" => {}
            other => {
                return Err(Error::Format(format!(
                    "split manifest header must be `id,species,partition`, got {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        let mut params = SplitParams::default();
        let mut ids = std::collections::HashSet::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    let bad = || Error::Format(format!("bad split parameter `{line}`"));
                    match k {
                        "seed" => params.seed = v.parse().map_err(|_| bad())?,
                        "min_count" => params.min_count = v.parse().map_err(|_| bad())?,
                        "test_frac" => params.test_frac = v.parse().map_err(|_| bad())?,
                        "val_frac" => params.val_frac = v.parse().map_err(|_| bad())?,
                        "unseen_species" => {
                            params.unseen_species = v
                                .split(';')
                                .filter(|s| !s.is_empty())
                                .map(String::from)
                                .collect()
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [id, sp, part] = fields[..] else {
                return Err(Error::Format(format!("malformed split row `{line}`")));
            };
            if !ids.insert(id.to_string()) {
                return Err(Error::DuplicateId(id.to_string()));
            }
            rows.push((id.to_string(), sp.to_string(), part.parse()?));
        }
        Ok(Self { rows, params })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
