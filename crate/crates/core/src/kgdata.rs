//! Triple dataset ingestion: vocabularies, filter indexes, reciprocal
//! augmentation and random subgraph sampling.
//!
//! Triple files are plain text with one `source⟨TAB⟩relation⟨TAB⟩target`
//! record per line. Ids are assigned in first-appearance order across the
//! train, valid and test splits (in that order) so that runs are
//! reproducible from the raw files alone.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Suffix appended to a relation name to form the name of its inverse.
pub const INVERSE_SUFFIX: &str = "⁻¹";

/// One `(source, relation, target)` statement, all fields vocabulary ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub source: usize,
    pub relation: usize,
    pub target: usize,
}

impl Triple {
    pub fn new(source: usize, relation: usize, target: usize) -> Self {
        Triple {
            source,
            relation,
            target,
        }
    }
}

/// Ordered identifier vocabulary with O(1) lookup in both directions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let mut v = Vocab::new();
        for n in names {
            v.intern(n.as_ref());
        }
        v
    }

    /// Returns the id of `name`, inserting it at the end if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(|s| s.as_str())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Which split of the dataset a query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split '{other}' (expected train, valid or test)"
            ))),
        }
    }
}

/// Entity and relation vocabularies, split triple lists, and the filter
/// index over the union of all splits.
///
/// Immutable after construction; shareable across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// `(source, relation) -> set of true targets` over train ∪ valid ∪ test.
    pub filter_index: HashMap<(usize, usize), HashSet<usize>>,
    raw_relation_count: usize,
    augmented: bool,
}

impl KnowledgeGraph {
    /// Builds a graph from in-memory string triples. Duplicates within a
    /// split are dropped, keeping the first occurrence.
    pub fn from_named_triples<S: AsRef<str>>(
        train: &[(S, S, S)],
        valid: &[(S, S, S)],
        test: &[(S, S, S)],
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidDataset(
                "training split contains no triples".into(),
            ));
        }
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
        for raw in [train, valid, test] {
            let mut seen = HashSet::new();
            let mut triples = Vec::with_capacity(raw.len());
            for (s, r, t) in raw {
                let triple = Triple::new(
                    entities.intern(s.as_ref()),
                    relations.intern(r.as_ref()),
                    entities.intern(t.as_ref()),
                );
                if seen.insert(triple) {
                    triples.push(triple);
                }
            }
            splits.push(triples);
        }
        let test = splits.pop().unwrap();
        let valid = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        let filter_index = build_filter_index([&train, &valid, &test]);
        let raw_relation_count = relations.len();
        Ok(KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            filter_index,
            raw_relation_count,
            augmented: false,
        })
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Number of relations before reciprocal augmentation.
    pub fn raw_relation_count(&self) -> usize {
        self.raw_relation_count
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Inverse relation id for `relation`, valid on augmented graphs.
    pub fn inverse_relation(&self, relation: usize) -> usize {
        if relation < self.raw_relation_count {
            relation + self.raw_relation_count
        } else {
            relation - self.raw_relation_count
        }
    }

    /// True targets for `(source, relation)` across all splits.
    pub fn filter_set(&self, source: usize, relation: usize) -> Option<&HashSet<usize>> {
        self.filter_index.get(&(source, relation))
    }
}

fn build_filter_index(splits: [&[Triple]; 3]) -> HashMap<(usize, usize), HashSet<usize>> {
    let mut index: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
    for split in splits {
        for t in split {
            index
                .entry((t.source, t.relation))
                .or_default()
                .insert(t.target);
        }
    }
    index
}

fn parse_triple_file(path: &Path) -> Result<Vec<(String, String, String)>> {
    let file = File::open(path).map_err(|e| {
        Error::InvalidDataset(format!("cannot open {}: {e}", path.display()))
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                reason: format!("got {} fields", fields.len()),
            });
        }
        out.push((
            fields[0].to_owned(),
            fields[1].to_owned(),
            fields[2].to_owned(),
        ));
    }
    Ok(out)
}

/// Loads the three split files and assembles vocabularies and the filter
/// index. Entities or relations that appear only in valid/test are admitted.
pub fn load_dataset(
    train_path: impl AsRef<Path>,
    valid_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
) -> Result<KnowledgeGraph> {
    let train = parse_triple_file(train_path.as_ref())?;
    let valid = parse_triple_file(valid_path.as_ref())?;
    let test = parse_triple_file(test_path.as_ref())?;
    if train.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "training file {} contains no triples",
            train_path.as_ref().display()
        )));
    }
    KnowledgeGraph::from_named_triples(&train, &valid, &test)
}

/// Adds the inverse `(t, r⁻¹, s)` of every triple to its split. The inverse
/// of relation `k` gets id `k + raw_relation_count`; the filter index is
/// rebuilt over the augmented splits.
pub fn add_reciprocals(kg: KnowledgeGraph) -> Result<KnowledgeGraph> {
    if kg.augmented {
        return Err(Error::State(
            "graph is already reciprocally augmented".into(),
        ));
    }
    let raw = kg.relations.len();
    let mut relations = kg.relations.clone();
    for k in 0..raw {
        let name = format!("{}{}", kg.relations.name(k).unwrap(), INVERSE_SUFFIX);
        relations.intern(&name);
    }
    debug_assert_eq!(relations.len(), 2 * raw);
    let augment = |split: &[Triple]| -> Vec<Triple> {
        let mut out = Vec::with_capacity(2 * split.len());
        out.extend_from_slice(split);
        out.extend(
            split
                .iter()
                .map(|t| Triple::new(t.target, t.relation + raw, t.source)),
        );
        out
    };
    let train = augment(&kg.train);
    let valid = augment(&kg.valid);
    let test = augment(&kg.test);
    let filter_index = build_filter_index([&train, &valid, &test]);
    Ok(KnowledgeGraph {
        entities: kg.entities,
        relations,
        train,
        valid,
        test,
        filter_index,
        raw_relation_count: raw,
        augmented: true,
    })
}

/// A set of sampled training triples together with the in-edge adjacency
/// they induce.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub triples: Vec<Triple>,
    /// `in_edges[v]` lists `(neighbor, relation)` for every sampled triple
    /// `(neighbor, relation, v)`. Indexed by entity id over the full
    /// vocabulary; entities outside the sample have empty lists.
    pub in_edges: Vec<Vec<(usize, usize)>>,
    /// Sorted ids of entities appearing in the sampled triples.
    pub active_entities: Vec<usize>,
}

impl Subgraph {
    /// Builds the adjacency for an explicit triple list.
    pub fn from_triples(n_entities: usize, triples: Vec<Triple>) -> Self {
        let mut in_edges = vec![Vec::new(); n_entities];
        let mut active = BTreeSet::new();
        for t in &triples {
            in_edges[t.target].push((t.source, t.relation));
            active.insert(t.source);
            active.insert(t.target);
        }
        Subgraph {
            triples,
            in_edges,
            active_entities: active.into_iter().collect(),
        }
    }

    /// The full training graph as a single subgraph (used at evaluation
    /// time, where no sampling takes place).
    pub fn full_train_graph(kg: &KnowledgeGraph) -> Self {
        Subgraph::from_triples(kg.entities.len(), kg.train.clone())
    }

    pub fn n_edges(&self) -> usize {
        self.triples.len()
    }
}

/// Draws `min(g_s, |train|)` distinct training triples uniformly without
/// replacement and returns the subgraph they induce. Deterministic given
/// the rng state.
pub fn sample_subgraph<R: Rng>(
    kg: &KnowledgeGraph,
    g_s: usize,
    rng: &mut R,
) -> Result<Subgraph> {
    if g_s == 0 {
        return Err(Error::InvalidArgument(
            "subgraph size g_s must be at least 1".into(),
        ));
    }
    let n = g_s.min(kg.train.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, kg.train.len(), n).into_vec();
    // Stable triple order regardless of the sampler's internal order.
    picked.sort_unstable();
    let triples: Vec<Triple> = picked.into_iter().map(|i| kg.train[i]).collect();
    Ok(Subgraph::from_triples(kg.entities.len(), triples))
}

/// Triples as name strings, one vector per split.
pub type NamedTriples = Vec<(String, String, String)>;

/// Generates a synthetic cluster-structured dataset: entities are divided
/// into `n_clusters` equal blocks and relation `k` links every entity of
/// block `k % n_clusters` to every entity of block `(k + offset) % n_clusters`.
/// The triple list is shuffled and split into train/valid/test by the given
/// fractions. Returned as string triples so that it can be written to the
/// standard file format or fed to [`KnowledgeGraph::from_named_triples`].
pub fn synthetic_cluster_triples<R: Rng>(
    n_entities: usize,
    n_relations: usize,
    n_clusters: usize,
    valid_frac: f64,
    test_frac: f64,
    rng: &mut R,
) -> (NamedTriples, NamedTriples, NamedTriples) {
    assert!(n_clusters >= 2 && n_entities.is_multiple_of(n_clusters));
    let block = n_entities / n_clusters;
    let offset = n_clusters / 2 + 1;
    let mut all = Vec::new();
    for k in 0..n_relations {
        let a = k % n_clusters;
        let b = (k + offset) % n_clusters;
        for i in 0..block {
            for j in 0..block {
                all.push((
                    format!("e{}", a * block + i),
                    format!("r{k}"),
                    format!("e{}", b * block + j),
                ));
            }
        }
    }
    use rand::seq::SliceRandom;
    all.shuffle(rng);
    let n_valid = (all.len() as f64 * valid_frac).round() as usize;
    let n_test = (all.len() as f64 * test_frac).round() as usize;
    let test = all.split_off(all.len() - n_test);
    let valid = all.split_off(all.len() - n_valid);
    (all, valid, test)
}

/// Writes triples in the standard tab-separated format.
pub fn write_triple_file<S: AsRef<str>>(
    path: impl AsRef<Path>,
    triples: &[(S, S, S)],
) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for (s, r, t) in triples {
        writeln!(f, "{}\t{}\t{}", s.as_ref(), r.as_ref(), t.as_ref())?;
    }
    Ok(())
}
