//! Typed multi-relational knowledge graph over users, ads, products,
//! categories and interest tags.
//!
//! The graph is immutable after [`KnowledgeGraph::build`]. Entities are
//! addressed internally by a dense [`EntityId`] assigned in input order;
//! adjacency is stored for both endpoints of every triple with a
//! [`Direction`] flag, so neighborhoods are undirected.

pub mod io;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    User,
    Ad,
    Product,
    Category,
    InterestTag,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::User,
        EntityKind::Ad,
        EntityKind::Product,
        EntityKind::Category,
        EntityKind::InterestTag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "User",
            EntityKind::Ad => "Ad",
            EntityKind::Product => "Product",
            EntityKind::Category => "Category",
            EntityKind::InterestTag => "InterestTag",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown entity kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    Clicks,
    Promotes,
    LikesCategory,
    BelongsTo,
    InterestedIn,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::Clicks,
        RelationKind::Promotes,
        RelationKind::LikesCategory,
        RelationKind::BelongsTo,
        RelationKind::InterestedIn,
    ];
    pub const COUNT: usize = 5;

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Clicks => "Clicks",
            RelationKind::Promotes => "Promotes",
            RelationKind::LikesCategory => "LikesCategory",
            RelationKind::BelongsTo => "BelongsTo",
            RelationKind::InterestedIn => "InterestedIn",
        }
    }

    /// Row of this relation in a relation embedding table.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::UnknownRelation(s.to_string()))
    }
}

/// Dense entity handle, valid only for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    pub label: String,
}

impl Entity {
    pub fn new(id: impl Into<String>, kind: EntityKind, label: impl Into<String>) -> Self {
        Entity {
            id: id.into(),
            kind,
            label: label.into(),
        }
    }
}

/// A triple as it appears in files: endpoints named by external id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NamedTriple {
    pub head: String,
    pub relation: RelationKind,
    pub tail: String,
}

impl NamedTriple {
    pub fn new(head: impl Into<String>, relation: RelationKind, tail: impl Into<String>) -> Self {
        NamedTriple {
            head: head.into(),
            relation,
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationKind,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// The entity owning the adjacency list is the triple's head.
    Outgoing,
    /// The entity owning the adjacency list is the triple's tail.
    Incoming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighbor {
    pub relation: RelationKind,
    pub entity: EntityId,
    pub direction: Direction,
}

/// Alternating entity/relation sequence; `entities.len() == relations.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationKind>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn end(&self) -> EntityId {
        *self.entities.last().expect("path has a start entity")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: EntityId,
    pub ad: EntityId,
    pub label: u8,
    pub timestamp: i64,
}

pub const MAX_HOP_DEPTH: usize = 4;
const NEGATIVE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    lookup: HashMap<String, EntityId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    adjacency: Vec<Vec<Neighbor>>,
    by_kind: [Vec<EntityId>; 5],
}

impl KnowledgeGraph {
    /// Builds the graph, deduplicating repeated triples (first occurrence wins
    /// the position in [`KnowledgeGraph::triples`]).
    pub fn build(entities: Vec<Entity>, triples: &[NamedTriple]) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entities.len());
        let mut by_kind: [Vec<EntityId>; 5] = Default::default();
        for (i, e) in entities.iter().enumerate() {
            let id = EntityId(i as u32);
            if lookup.insert(e.id.clone(), id).is_some() {
                return Err(Error::DuplicateEntity(e.id.clone()));
            }
            by_kind[e.kind.slot()].push(id);
        }

        let mut resolved = Vec::with_capacity(triples.len());
        let mut triple_set = HashSet::with_capacity(triples.len());
        for t in triples {
            let head = *lookup
                .get(&t.head)
                .ok_or_else(|| Error::DanglingEntity(t.head.clone()))?;
            let tail = *lookup
                .get(&t.tail)
                .ok_or_else(|| Error::DanglingEntity(t.tail.clone()))?;
            if head == tail {
                return Err(Error::SelfLoop(t.head.clone()));
            }
            let triple = Triple {
                head,
                relation: t.relation,
                tail,
            };
            if triple_set.insert(triple) {
                resolved.push(triple);
            }
        }

        let adjacency = derive_adjacency(entities.len(), &resolved);
        Ok(KnowledgeGraph {
            entities,
            lookup,
            triples: resolved,
            triple_set,
            adjacency,
            by_kind,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, id: EntityId) -> &Entity {
        &self.entities[id.index()]
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn lookup(&self, external: &str) -> Result<EntityId> {
        self.lookup
            .get(external)
            .copied()
            .ok_or_else(|| Error::UnknownEntity(external.to_string()))
    }

    pub fn entities_of_kind(&self, kind: EntityKind) -> &[EntityId] {
        &self.by_kind[kind.slot()]
    }

    fn check(&self, id: EntityId) -> Result<()> {
        if id.index() < self.entities.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(format!("#{}", id.0)))
        }
    }

    /// Incident triples of `entity`, sorted by (relation, neighbor, direction).
    pub fn neighbors(&self, entity: EntityId) -> Result<&[Neighbor]> {
        self.check(entity)?;
        Ok(&self.adjacency[entity.index()])
    }

    /// Distinct neighbor ids, ascending. This is the message-passing
    /// neighborhood used by the attention layers.
    pub fn neighbor_set(&self, entity: EntityId) -> Vec<EntityId> {
        let mut ids: Vec<EntityId> = self.adjacency[entity.index()]
            .iter()
            .map(|n| n.entity)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Every simple path (no repeated entity) of exactly `depth` hops from
    /// `start`, in depth-first order over sorted adjacency.
    pub fn multi_hop_paths(&self, start: EntityId, depth: usize) -> Result<Vec<Path>> {
        self.check(start)?;
        if depth == 0 || depth > MAX_HOP_DEPTH {
            return Err(Error::InvalidDepth(depth));
        }
        let mut out = Vec::new();
        let mut entities = vec![start];
        let mut relations = Vec::with_capacity(depth);
        self.extend_paths(depth, &mut entities, &mut relations, &mut out);
        Ok(out)
    }

    fn extend_paths(
        &self,
        depth: usize,
        entities: &mut Vec<EntityId>,
        relations: &mut Vec<RelationKind>,
        out: &mut Vec<Path>,
    ) {
        if relations.len() == depth {
            out.push(Path {
                entities: entities.clone(),
                relations: relations.clone(),
            });
            return;
        }
        let last = *entities.last().unwrap();
        for n in &self.adjacency[last.index()] {
            if entities.contains(&n.entity) {
                continue;
            }
            entities.push(n.entity);
            relations.push(n.relation);
            self.extend_paths(depth, entities, relations, out);
            entities.pop();
            relations.pop();
        }
    }

    /// Corrupts one side of `positive` (fair coin) with a uniformly drawn
    /// entity of the same kind, rejecting corruptions that are true triples.
    pub fn sample_negative<R: Rng + ?Sized>(&self, positive: &Triple, rng: &mut R) -> Result<Triple> {
        for _ in 0..NEGATIVE_ATTEMPTS {
            let corrupt_head = rng.random_bool(0.5);
            let candidate = self.corrupt(positive, corrupt_head, rng);
            if self.is_valid_negative(&candidate) {
                return Ok(candidate);
            }
        }
        // Rejection failed repeatedly: enumerate the legal corruptions.
        let legal = self.legal_corruptions(positive);
        if legal.is_empty() {
            return Err(Error::NoNegativeAvailable(self.describe(positive)));
        }
        Ok(legal[rng.random_range(0..legal.len())])
    }

    fn corrupt<R: Rng + ?Sized>(&self, t: &Triple, corrupt_head: bool, rng: &mut R) -> Triple {
        let replaced = if corrupt_head { t.head } else { t.tail };
        let pool = self.entities_of_kind(self.entity(replaced).kind);
        let pick = pool[rng.random_range(0..pool.len())];
        if corrupt_head {
            Triple { head: pick, ..*t }
        } else {
            Triple { tail: pick, ..*t }
        }
    }

    fn is_valid_negative(&self, t: &Triple) -> bool {
        t.head != t.tail && !self.triple_set.contains(t)
    }

    fn legal_corruptions(&self, t: &Triple) -> Vec<Triple> {
        let heads = self
            .entities_of_kind(self.entity(t.head).kind)
            .iter()
            .map(|&h| Triple { head: h, ..*t });
        let tails = self
            .entities_of_kind(self.entity(t.tail).kind)
            .iter()
            .map(|&tl| Triple { tail: tl, ..*t });
        heads
            .chain(tails)
            .filter(|c| self.is_valid_negative(c))
            .collect()
    }

    pub fn describe(&self, t: &Triple) -> String {
        format!(
            "{}, {}, {}",
            self.entity(t.head).id,
            t.relation,
            self.entity(t.tail).id
        )
    }

    /// Rebuilds adjacency from the triple set; equal to the stored adjacency
    /// for every well-formed graph.
    pub fn rebuild_adjacency(&self) -> Vec<Vec<Neighbor>> {
        derive_adjacency(self.entities.len(), &self.triples)
    }

    pub fn adjacency(&self) -> &[Vec<Neighbor>] {
        &self.adjacency
    }

    pub fn resolve_interaction(&self, raw: &io::RawInteraction) -> Result<InteractionRecord> {
        let user = self.lookup(&raw.user)?;
        let ad = self.lookup(&raw.ad)?;
        if self.entity(user).kind != EntityKind::User {
            return Err(Error::InvalidConfig(format!("`{}` is not a User", raw.user)));
        }
        if self.entity(ad).kind != EntityKind::Ad {
            return Err(Error::InvalidConfig(format!("`{}` is not an Ad", raw.ad)));
        }
        if raw.label > 1 {
            return Err(Error::InvalidConfig(format!("label {} not in {{0,1}}", raw.label)));
        }
        Ok(InteractionRecord {
            user,
            ad,
            label: raw.label,
            timestamp: raw.ts,
        })
    }
}

fn derive_adjacency(n: usize, triples: &[Triple]) -> Vec<Vec<Neighbor>> {
    let mut adjacency = vec![Vec::new(); n];
    for t in triples {
        adjacency[t.head.index()].push(Neighbor {
            relation: t.relation,
            entity: t.tail,
            direction: Direction::Outgoing,
        });
        adjacency[t.tail.index()].push(Neighbor {
            relation: t.relation,
            entity: t.head,
            direction: Direction::Incoming,
        });
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}
