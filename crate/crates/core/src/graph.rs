//! Multi-relational graph with oriented-relation adjacency.
//!
//! Every stored edge `(head, p, tail)` yields two adjacency entries: the tail
//! sees the head through `p` in the [`Direction::Forward`] orientation (the
//! relation points from the neighbor into the node), and the head sees the
//! tail through `p` in the [`Direction::Reverse`] orientation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::error::GraphError;

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(
    /// Dense entity index.
    EntityId
);
dense_id!(
    /// Dense relation-type index.
    RelationId
);
dense_id!(
    /// Dense attribute-type index.
    AttrTypeId
);

/// Bijective mapping between string labels and dense indices `0..len`.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    labels: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index for `label`, allocating the next one if unseen.
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.lookup.get(label) {
            return id;
        }
        let id = u32::try_from(self.labels.len()).expect("more than u32::MAX labels");
        self.labels.push(label.to_owned());
        self.lookup.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.lookup.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, s.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

/// A relation type together with its traversal direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrientedRelation {
    pub relation: RelationId,
    pub direction: Direction,
}

impl OrientedRelation {
    pub fn forward(relation: RelationId) -> Self {
        Self {
            relation,
            direction: Direction::Forward,
        }
    }

    pub fn reverse(relation: RelationId) -> Self {
        Self {
            relation,
            direction: Direction::Reverse,
        }
    }

    /// `p` becomes `p⁻¹` and vice versa.
    pub fn reversed(self) -> Self {
        Self {
            relation: self.relation,
            direction: self.direction.flip(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// One adjacency entry: the neighbor and the orientation `r(v, n)`.
pub type Incidence = (EntityId, OrientedRelation);

/// Immutable multi-relational graph.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Incidence>>,
}

impl KnowledgeGraph {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).unwrap_or("<invalid>")
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0).unwrap_or("<invalid>")
    }

    /// All incidences of `v`, sorted by neighbor id, then relation id, then
    /// direction (`Forward` first).
    pub fn neighbors(&self, v: EntityId) -> Result<&[Incidence], GraphError> {
        self.adjacency
            .get(v.index())
            .map(Vec::as_slice)
            .ok_or(GraphError::InvalidEntity {
                id: v.0,
                count: self.entities.len(),
            })
    }

    /// Unchecked variant for hot loops over known-valid ids.
    #[inline]
    pub(crate) fn incidences(&self, v: EntityId) -> &[Incidence] {
        &self.adjacency[v.index()]
    }

    pub fn adjacency_len(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Deduplicated edges as label triples, in first-occurrence order.
    pub fn triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.edges.iter().map(|e| {
            (
                self.entity_label(e.head),
                self.relation_label(e.relation),
                self.entity_label(e.tail),
            )
        })
    }
}

/// Incremental construction; frozen into a [`KnowledgeGraph`] by [`GraphBuilder::build`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Interner,
    relations: Interner,
    edges: Vec<Edge>,
    seen: HashSet<Edge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    pub fn add_relation(&mut self, label: &str) -> RelationId {
        RelationId(self.relations.intern(label))
    }

    /// Adds the triple, returning `false` if it was already present.
    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let edge = Edge {
            head: self.add_entity(head),
            relation: self.add_relation(relation),
            tail: self.add_entity(tail),
        };
        if self.seen.insert(edge) {
            self.edges.push(edge);
            true
        } else {
            false
        }
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut adjacency: Vec<Vec<Incidence>> = vec![Vec::new(); self.entities.len()];
        for e in &self.edges {
            adjacency[e.tail.index()].push((e.head, OrientedRelation::forward(e.relation)));
            adjacency[e.head.index()].push((e.tail, OrientedRelation::reverse(e.relation)));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            edges: self.edges,
            adjacency,
        }
    }
}

/// Builds a graph from label triples. Duplicate triples are stored once.
pub fn build_graph<S: AsRef<str>>(triples: &[(S, S, S)]) -> KnowledgeGraph {
    let mut builder = GraphBuilder::new();
    for (h, r, t) in triples {
        builder.add_triple(h.as_ref(), r.as_ref(), t.as_ref());
    }
    builder.build()
}
