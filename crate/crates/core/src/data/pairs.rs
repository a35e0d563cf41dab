use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::split::{Partition, SplitManifest};
use crate::error::{Error, Result};
use crate::loss::PairLabel;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pair {
    pub id_a: String,
    pub id_b: String,
    pub label: PairLabel,
}

/// Which species of a partition pairs may be drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Seen,
    Unseen,
    All,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Self::Seen => "seen",
            Self::Unseen => "unseen",
            Self::All => "all",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(Self::Seen),
            "unseen" => Ok(Self::Unseen),
            "all" => Ok(Self::All),
            other => Err(Error::InvalidArgument(format!(
                "scope must be seen, unseen or all, got `{other}`"
            ))),
        }
    }
}

/// Number of positives in a set of `n_pairs` at `pos_ratio`.
pub fn positive_count(n_pairs: usize, pos_ratio: f64) -> usize {
    (pos_ratio * n_pairs as f64).round() as usize
}

/// Draw `n_pairs` distinct unordered pairs from species-grouped ids.
///
/// Positives pick a species uniformly among those with at least two
/// samples, then two distinct members. Negatives pick two distinct species
/// uniformly, then one member of each. The returned list is shuffled.
pub fn sample_pairs_from<R: Rng + ?Sized>(
    groups: &BTreeMap<String, Vec<String>>,
    n_pairs: usize,
    pos_ratio: f64,
    rng: &mut R,
) -> Result<Vec<Pair>> {
    if !(0.0..=1.0).contains(&pos_ratio) {
        return Err(Error::InvalidArgument(format!(
            "pos_ratio must be in [0, 1], got {pos_ratio}"
        )));
    }
    let species: Vec<(&String, &Vec<String>)> =
        groups.iter().filter(|(_, ids)| !ids.is_empty()).collect();
    let n_pos = positive_count(n_pairs, pos_ratio);
    let n_neg = n_pairs - n_pos;

    let pos_species: Vec<&Vec<String>> = species
        .iter()
        .filter(|(_, ids)| ids.len() >= 2)
        .map(|(_, ids)| *ids)
        .collect();
    let pos_capacity: u128 = pos_species
        .iter()
        .map(|ids| (ids.len() as u128) * (ids.len() as u128 - 1) / 2)
        .sum();
    let total: u128 = species.iter().map(|(_, ids)| ids.len() as u128).sum();
    let same: u128 = species
        .iter()
        .map(|(_, ids)| (ids.len() as u128).pow(2))
        .sum();
    let neg_capacity = (total * total - same) / 2;

    if n_pos > 0 && pos_species.is_empty() {
        return Err(Error::Sampling(
            "positive pairs need a species with at least two samples".into(),
        ));
    }
    if n_neg > 0 && species.len() < 2 {
        return Err(Error::Sampling(
            "negative pairs need at least two species in scope".into(),
        ));
    }
    if n_pos as u128 > pos_capacity {
        return Err(Error::Sampling(format!(
            "requested {n_pos} positive pairs but only {pos_capacity} distinct ones exist"
        )));
    }
    if n_neg as u128 > neg_capacity {
        return Err(Error::Sampling(format!(
            "requested {n_neg} negative pairs but only {neg_capacity} distinct ones exist"
        )));
    }

    let max_attempts = 1000 * n_pairs + 10_000;
    let mut seen: HashSet<(&str, &str)> = HashSet::with_capacity(n_pairs);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut attempts = 0;
    while pairs.len() < n_pos {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Sampling(format!(
                "could not draw {n_pos} distinct positive pairs"
            )));
        }
        let ids = pos_species.choose(rng).expect("non-empty");
        let i = rng.random_range(0..ids.len());
        let mut j = rng.random_range(0..ids.len() - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (ids[i].as_str(), ids[j].as_str());
        let k = if a <= b { (a, b) } else { (b, a) };
        if seen.insert(k) {
            pairs.push(Pair {
                id_a: a.to_string(),
                id_b: b.to_string(),
                label: PairLabel::Similar,
            });
        }
    }

    attempts = 0;
    while pairs.len() < n_pairs {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Sampling(format!(
                "could not draw {n_neg} distinct negative pairs"
            )));
        }
        let s = rng.random_range(0..species.len());
        let mut t = rng.random_range(0..species.len() - 1);
        if t >= s {
            t += 1;
        }
        let a = species[s].1.choose(rng).expect("non-empty").as_str();
        let b = species[t].1.choose(rng).expect("non-empty").as_str();
        let k = if a <= b { (a, b) } else { (b, a) };
        if seen.insert(k) {
            pairs.push(Pair {
                id_a: a.to_string(),
                id_b: b.to_string(),
                label: PairLabel::Dissimilar,
            });
        }
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

/// Species-grouped members of `part` restricted to `scope`.
pub fn scoped_groups(
    split: &SplitManifest,
    part: Partition,
    scope: Scope,
) -> BTreeMap<String, Vec<String>> {
    let seen = split.seen_species();
    split
        .groups(part)
        .into_iter()
        .filter(|(sp, _)| match scope {
            Scope::All => true,
            Scope::Seen => seen.contains(sp.as_str()),
            Scope::Unseen => !seen.contains(sp.as_str()),
        })
        .collect()
}

/// Balanced pairs from one partition of a split.
pub fn sample_pairs(
    split: &SplitManifest,
    part: Partition,
    scope: Scope,
    n_pairs: usize,
    pos_ratio: f64,
    seed: u64,
) -> Result<Vec<Pair>> {
    let groups = scoped_groups(split, part, scope);
    if groups.is_empty() {
        return Err(Error::Sampling(format!(
            "no {scope} species in the {part} partition"
        )));
    }
    let mut rng = seed::rng_for(seed, &format!("pairs/{part}/{scope}"));
    sample_pairs_from(&groups, n_pairs, pos_ratio, &mut rng)
}

pub fn pairs_to_csv(pairs: &[Pair]) -> String {
    let mut out = String::from("id_a,id_b,label\n");
    for p in pairs {
        out.push_str(&format!("{},{},{}\n", p.id_a, p.id_b, p.label.as_u8()));
    }
    out
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[Pair]) -> Result<()> {
    fs::write(path, pairs_to_csv(pairs))?;
    Ok(())
}

pub fn parse_pairs(text: &str) -> Result<Vec<Pair>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) if h.trim() == "id_a,id_b,label" => {}
        Some(h) => {
            return Err(Error::Format(format!(
                "pair list header must be `id_a,id_b,label`, got `{h}`"
            )))
        }
    }
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [a, b, y] = fields[..] else {
                return Err(Error::Format(format!("malformed pair row `{line}`")));
            };
            let y: u8 = y
                .parse()
                .map_err(|_| Error::Format(format!("bad label in `{line}`")))?;
            Ok(Pair {
                id_a: a.to_string(),
                id_b: b.to_string(),
                label: PairLabel::from_u8(y)?,
            })
        })
        .collect()
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    parse_pairs(&fs::read_to_string(path)?)
}
