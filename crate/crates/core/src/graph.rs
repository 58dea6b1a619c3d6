//! Entity–pattern co-occurrence graph.
//!
//! Nodes are addressed either by [`NodeRef`] or by a flat index where
//! entities occupy `0..entity_count` and patterns follow.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{EntityId, PatternId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRef {
    Entity(EntityId),
    Pattern(PatternId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub entity: EntityId,
    pub pattern: PatternId,
    pub count: u32,
}

/// Message-passing layout over flat node indices, sorted by target then source.
///
/// Edges of target `t` are `offsets[t]..offsets[t + 1]`; each edge appears once
/// per direction.
#[derive(Clone, Debug)]
pub struct MessageLayout {
    pub offsets: Arc<[usize]>,
    pub targets: Arc<[usize]>,
    pub sources: Arc<[usize]>,
    pub counts: Arc<[u32]>,
}

/// Immutable bipartite graph. Entity–entity and pattern–pattern edges are
/// unrepresentable: every [`Edge`] joins one entity with one pattern.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    entity_count: usize,
    pattern_count: usize,
    edges: Vec<Edge>,
    entity_adj: Vec<Vec<(PatternId, u32)>>,
    pattern_adj: Vec<Vec<(EntityId, u32)>>,
    layout: MessageLayout,
}

impl BipartiteGraph {
    /// Builds the graph, merging duplicate pairs by summing counts.
    pub fn build(
        entity_count: usize,
        pattern_count: usize,
        records: &[(EntityId, PatternId, u32)],
    ) -> Result<Self> {
        let bad: Vec<String> = records
            .iter()
            .enumerate()
            .filter(|(_, &(e, p, c))| e >= entity_count || p >= pattern_count || c == 0)
            .map(|(i, r)| format!("#{i} {r:?}"))
            .collect();
        if !bad.is_empty() {
            return Err(Error::Validation(format!(
                "invalid co-occurrence records (entities < {entity_count}, patterns < {pattern_count}, count >= 1): {}",
                bad.join(", ")
            )));
        }

        let mut merged: BTreeMap<(EntityId, PatternId), u32> = BTreeMap::new();
        for &(e, p, c) in records {
            *merged.entry((e, p)).or_default() += c;
        }
        let edges: Vec<Edge> = merged
            .into_iter()
            .map(|((entity, pattern), count)| Edge {
                entity,
                pattern,
                count,
            })
            .collect();

        let mut entity_adj = vec![Vec::new(); entity_count];
        let mut pattern_adj = vec![Vec::new(); pattern_count];
        for e in &edges {
            entity_adj[e.entity].push((e.pattern, e.count));
            pattern_adj[e.pattern].push((e.entity, e.count));
        }
        // edges are sorted by (entity, pattern) so entity lists already are
        for list in &mut pattern_adj {
            list.sort_unstable();
        }

        let layout = Self::message_layout(entity_count, &entity_adj, &pattern_adj);
        Ok(BipartiteGraph {
            entity_count,
            pattern_count,
            edges,
            entity_adj,
            pattern_adj,
            layout,
        })
    }

    fn message_layout(
        entity_count: usize,
        entity_adj: &[Vec<(PatternId, u32)>],
        pattern_adj: &[Vec<(EntityId, u32)>],
    ) -> MessageLayout {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut sources = Vec::new();
        let mut counts = Vec::new();
        for (e, list) in entity_adj.iter().enumerate() {
            for &(p, c) in list {
                targets.push(e);
                sources.push(entity_count + p);
                counts.push(c);
            }
            offsets.push(targets.len());
        }
        for (p, list) in pattern_adj.iter().enumerate() {
            for &(e, c) in list {
                targets.push(entity_count + p);
                sources.push(e);
                counts.push(c);
            }
            offsets.push(targets.len());
        }
        MessageLayout {
            offsets: offsets.into(),
            targets: targets.into(),
            sources: sources.into(),
            counts: counts.into(),
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_count
    }

    pub fn node_count(&self) -> usize {
        self.entity_count + self.pattern_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn layout(&self) -> &MessageLayout {
        &self.layout
    }

    pub fn node_index(&self, node: NodeRef) -> Result<usize> {
        match node {
            NodeRef::Entity(e) if e < self.entity_count => Ok(e),
            NodeRef::Pattern(p) if p < self.pattern_count => Ok(self.entity_count + p),
            other => Err(Error::argument(format!("no such node {other:?}"))),
        }
    }

    /// Sorted `(neighbor id, count)` list; neighbor ids are patterns for an
    /// entity and entities for a pattern.
    pub fn neighbors(&self, node: NodeRef) -> Result<&[(usize, u32)]> {
        match node {
            NodeRef::Entity(e) if e < self.entity_count => Ok(&self.entity_adj[e]),
            NodeRef::Pattern(p) if p < self.pattern_count => Ok(&self.pattern_adj[p]),
            other => Err(Error::argument(format!("no such node {other:?}"))),
        }
    }

    pub fn entity_patterns(&self, entity: EntityId) -> &[(PatternId, u32)] {
        &self.entity_adj[entity]
    }

    pub fn pattern_entities(&self, pattern: PatternId) -> &[(EntityId, u32)] {
        &self.pattern_adj[pattern]
    }
}
