//! Triple files, vocabularies, reciprocal augmentation, negative sampling and
//! the filtered-candidate index.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub const fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Which end of a triple is being predicted or corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Head => Side::Tail,
            Side::Tail => Side::Head,
        }
    }
}

/// Name ↔ id dictionary with ids in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(id) = self.index.get(name) {
            return *id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }
}

/// Reads `head<TAB>relation<TAB>tail` lines. Blank lines are skipped.
///
/// With `extend` set, unseen names receive fresh ids; otherwise they are an error.
pub fn load_triples(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
    extend: bool,
) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&text, path, entities, relations, extend)
}

fn parse_triples(
    text: &str,
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
    extend: bool,
) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let lookup = |vocab: &mut Vocab, kind: &'static str, name: &str| -> Result<u32> {
            if extend {
                Ok(vocab.get_or_insert(name))
            } else {
                vocab.get(name).ok_or_else(|| Error::UnknownName {
                    kind,
                    name: name.to_owned(),
                })
            }
        };
        let head = lookup(entities, "entity", fields[0])?;
        let relation = lookup(relations, "relation", fields[1])?;
        let tail = lookup(entities, "entity", fields[2])?;
        out.push(Triple::new(head, relation, tail));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Entity/relation dictionaries, the three splits, and the index of known-true
/// answers over their union.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Relation count before reciprocal augmentation.
    base_relations: usize,
    reciprocal: bool,
    true_tails: HashMap<(u32, u32), HashSet<u32>>,
    true_heads: HashMap<(u32, u32), HashSet<u32>>,
}

impl Dataset {
    /// Builds a dataset from already-interned splits.
    pub fn from_splits(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let (ne, nr) = (entities.len(), relations.len());
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head as usize >= ne || t.tail as usize >= ne {
                let index = t.head.max(t.tail) as usize;
                return Err(Error::IndexOutOfRange {
                    kind: "entity",
                    index,
                    size: ne,
                });
            }
            if t.relation as usize >= nr {
                return Err(Error::IndexOutOfRange {
                    kind: "relation",
                    index: t.relation as usize,
                    size: nr,
                });
            }
        }
        let mut ds = Self {
            base_relations: relations.len(),
            entities,
            relations,
            train,
            valid,
            test,
            reciprocal: false,
            true_tails: HashMap::new(),
            true_heads: HashMap::new(),
        };
        ds.rebuild_index();
        let overlaps = ds.split_overlaps();
        if overlaps > 0 {
            log::warn!("{overlaps} triples appear in more than one split");
        }
        Ok(ds)
    }

    /// Builds a dataset from anonymous integer ids; names are the decimal ids.
    pub fn from_ids(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let mut entities = Vocab::new();
        for e in 0..num_entities {
            entities.get_or_insert(&format!("e{e}"));
        }
        let mut relations = Vocab::new();
        for r in 0..num_relations {
            relations.get_or_insert(&format!("r{r}"));
        }
        Self::from_splits(entities, relations, train, valid, test)
    }

    fn rebuild_index(&mut self) {
        self.true_tails.clear();
        self.true_heads.clear();
        let all: Vec<Triple> = self.all_triples().copied().collect();
        for t in all {
            self.insert_true(t);
        }
    }

    fn insert_true(&mut self, t: Triple) {
        self.true_tails
            .entry((t.head, t.relation))
            .or_default()
            .insert(t.tail);
        self.true_heads
            .entry((t.tail, t.relation))
            .or_default()
            .insert(t.head);
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Relation vocabulary size, including reciprocal relations when present.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn base_relations(&self) -> usize {
        self.base_relations
    }

    pub fn is_reciprocal(&self) -> bool {
        self.reciprocal
    }

    /// Id of the reciprocal counterpart of a base relation, when augmented.
    pub fn inverse_relation(&self, relation: u32) -> Option<u32> {
        (self.reciprocal && (relation as usize) < self.base_relations)
            .then(|| relation + self.base_relations as u32)
    }

    /// Number of `(entity, relation)` keys in the known-true index (head side plus tail side).
    pub fn index_entries(&self) -> usize {
        self.true_tails.len() + self.true_heads.len()
    }

    pub fn true_tails(&self, head: u32, relation: u32) -> Option<&HashSet<u32>> {
        self.true_tails.get(&(head, relation))
    }

    pub fn true_heads(&self, tail: u32, relation: u32) -> Option<&HashSet<u32>> {
        self.true_heads.get(&(tail, relation))
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.true_tails(t.head, t.relation)
            .is_some_and(|s| s.contains(&t.tail))
    }

    /// Count of triples occurring in more than one split.
    pub fn split_overlaps(&self) -> usize {
        let train: HashSet<&Triple> = self.train.iter().collect();
        let valid: HashSet<&Triple> = self.valid.iter().collect();
        let test: HashSet<&Triple> = self.test.iter().collect();
        valid.iter().filter(|t| train.contains(*t)).count()
            + test
                .iter()
                .filter(|t| train.contains(*t) || valid.contains(*t))
                .count()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }
}

/// Loads the three splits, extending the dictionaries from every split so that
/// entities seen only in valid/test still receive ids.
pub fn build_dataset(train_path: &Path, valid_path: &Path, test_path: &Path) -> Result<Dataset> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let train = load_triples(train_path, &mut entities, &mut relations, true)?;
    let valid = load_triples(valid_path, &mut entities, &mut relations, true)?;
    let test = load_triples(test_path, &mut entities, &mut relations, true)?;
    Dataset::from_splits(entities, relations, train, valid, test)
}

/// Loads `<dir>/train.txt`, `<dir>/valid.txt` and `<dir>/test.txt`.
pub fn build_dataset_dir(dir: &Path) -> Result<Dataset> {
    build_dataset(
        &dir.join("train.txt"),
        &dir.join("valid.txt"),
        &dir.join("test.txt"),
    )
}

/// Adds a reversed relation `r + R` for every relation `r` and the reversed copy of
/// every training triple. Valid/test are unchanged; the known-true index gains the
/// reversed view of every split.
pub fn augment_reciprocal(ds: &Dataset) -> Result<Dataset> {
    if ds.reciprocal {
        return Err(Error::AlreadyAugmented);
    }
    let mut out = ds.clone();
    let base = ds.relations.len() as u32;
    for name in ds.relations.names() {
        out.relations.get_or_insert(&format!("{name}_reverse"));
    }
    out.train.extend(
        ds.train
            .iter()
            .map(|t| Triple::new(t.tail, t.relation + base, t.head)),
    );
    let reversed: Vec<Triple> = ds
        .all_triples()
        .map(|t| Triple::new(t.tail, t.relation + base, t.head))
        .collect();
    for t in reversed {
        out.insert_true(t);
    }
    out.reciprocal = true;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeBatch {
    pub positive: Triple,
    pub corrupted: Vec<u32>,
    pub side: Side,
}

impl NegativeBatch {
    /// The `j`-th corrupted triple.
    pub fn triple(&self, j: usize) -> Triple {
        let e = self.corrupted[j];
        match self.side {
            Side::Head => Triple::new(e, self.positive.relation, self.positive.tail),
            Side::Tail => Triple::new(self.positive.head, self.positive.relation, e),
        }
    }

    pub fn len(&self) -> usize {
        self.corrupted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corrupted.is_empty()
    }
}

/// Draws `n` uniform entity ids to replace the given side. Negatives are not
/// filtered against known-true triples.
pub fn sample_negatives<R: Rng + ?Sized>(
    triple: Triple,
    n: usize,
    entity_count: usize,
    side: Side,
    rng: &mut R,
) -> Result<NegativeBatch> {
    if n == 0 {
        return Err(Error::Config(
            "negative sample count must be at least 1".into(),
        ));
    }
    if entity_count < 2 {
        return Err(Error::Config(
            "negative sampling needs at least 2 entities".into(),
        ));
    }
    let corrupted = (0..n)
        .map(|_| rng.gen_range(0..entity_count as u32))
        .collect();
    Ok(NegativeBatch {
        positive: triple,
        corrupted,
        side,
    })
}

/// Entities to exclude when ranking the `side` answer of `query`: every other
/// known-true answer for the same `(entity, relation)` key. The gold answer is
/// never excluded.
pub fn filtered_candidates(query: Triple, side: Side, ds: &Dataset) -> Vec<bool> {
    let mut mask = vec![false; ds.num_entities()];
    let (known, gold) = match side {
        Side::Tail => (ds.true_tails(query.head, query.relation), query.tail),
        Side::Head => (ds.true_heads(query.tail, query.relation), query.head),
    };
    if let Some(known) = known {
        for &e in known {
            mask[e as usize] = true;
        }
    }
    if let Some(m) = mask.get_mut(gold as usize) {
        *m = false;
    }
    mask
}
