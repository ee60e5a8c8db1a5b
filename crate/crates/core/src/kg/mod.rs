//! Knowledge-graph data model: vocabularies, the deduplicated triple set,
//! and neighbor indexes.

mod table;

pub use table::EmbeddingTable;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index into the entity vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub usize);

/// Dense index into the relation vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Label vocabulary with indices assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::default();
        for label in labels {
            let label = label.into();
            if vocab.index.contains_key(&label) {
                return Err(Error::Format(format!("duplicate label `{label}`")));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), i);
        i
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A multi-relational directed graph `(entities, relations, triples)`.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a triple by label, interning unseen labels. Returns `false`
    /// when the triple was already present.
    pub fn insert(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = EntityId(self.entities.intern(head));
        let r = RelationId(self.relations.intern(relation));
        let t = EntityId(self.entities.intern(tail));
        self.insert_ids(h, r, t)
    }

    fn insert_ids(&mut self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        let triple = Triple { head, relation, tail };
        if !self.seen.insert(triple) {
            return false;
        }
        self.triples.push(triple);
        self.tails.entry((head, relation)).or_default().push(tail);
        self.heads.entry((relation, tail)).or_default().push(head);
        true
    }

    /// Registers an entity without any edge (isolated node).
    pub fn add_entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.seen.contains(triple)
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).expect("entity id out of range")
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0).expect("relation id out of range")
    }

    fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.0 >= self.entities.len() {
            return Err(Error::Lookup(format!("unknown entity id {}", id.0)));
        }
        Ok(())
    }

    fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.0 >= self.relations.len() {
            return Err(Error::Lookup(format!("unknown relation id {}", id.0)));
        }
        Ok(())
    }

    /// All `t` with `(head, relation, t)` in the graph, in insertion order.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> Result<&[EntityId]> {
        self.check_entity(head)?;
        self.check_relation(relation)?;
        Ok(self.tails.get(&(head, relation)).map_or(&[], Vec::as_slice))
    }

    /// All `h` with `(h, relation, tail)` in the graph, in insertion order.
    /// Equivalent to `tails` over the inverse relation.
    pub fn heads(&self, relation: RelationId, tail: EntityId) -> Result<&[EntityId]> {
        self.check_entity(tail)?;
        self.check_relation(relation)?;
        Ok(self.heads.get(&(relation, tail)).map_or(&[], Vec::as_slice))
    }

    /// Serializes the triple list as TSV in stored order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_label(t.head),
                self.relation_label(t.relation),
                self.entity_label(t.tail)
            );
        }
        out
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        load_triples(&std::fs::read_to_string(path)?)
    }
}

/// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped,
/// duplicate triples dropped.
pub fn load_triples(source: &str) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse { line: line_no, message: "empty label".into() });
        }
        kg.insert(fields[0], fields[1], fields[2]);
    }
    Ok(kg)
}
