//! The bootstrapping network: a GNN encoder over the bipartite graph and a GRU
//! decoder whose hidden state tracks one category's semantics across
//! iterations.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::layers::{self, uniform, GnnLayer, Gru};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::{CategoryId, EntityId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Embedding and hidden width.
    pub dim: usize,
    /// Number of stacked message-passing layers.
    pub layers: usize,
    /// Dropout on encoder layer inputs while training.
    pub dropout: f64,
    pub leaky_slope: f64,
    /// Add `ln(1 + count)` to attention logits.
    pub attention_count_bias: bool,
    /// Half-width of the uniform init for the embedding table.
    pub embedding_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim: 64,
            layers: 2,
            dropout: 0.1,
            leaky_slope: 0.2,
            attention_count_bias: false,
            embedding_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    params: ParamStore,
    embeddings: ParamId,
    layers: Vec<GnnLayer>,
    gru: Gru,
    projection: ParamId,
    entity_count: usize,
    pattern_count: usize,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, graph: &BipartiteGraph, rng: &mut impl Rng) -> Result<Self> {
        Self::build(config, graph.entity_count(), graph.pattern_count(), rng)
    }

    fn build(config: GeneratorConfig, entity_count: usize, pattern_count: usize, rng: &mut impl Rng) -> Result<Self> {
        if config.dim == 0 || config.layers == 0 {
            return Err(Error::argument("generator needs dim >= 1 and layers >= 1"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::argument("dropout must lie in [0, 1)"));
        }
        let d = config.dim;
        let mut params = ParamStore::new();
        let embeddings = params.add(
            "embeddings",
            uniform(rng, &[entity_count + pattern_count, d], config.embedding_scale),
        );
        let layers = (0..config.layers)
            .map(|l| {
                GnnLayer::new(
                    &mut params,
                    &format!("encoder.{l}"),
                    d,
                    config.leaky_slope,
                    config.attention_count_bias,
                    rng,
                )
            })
            .collect();
        let gru = Gru::new(&mut params, "decoder", d, rng);
        let projection = params.add("projection", uniform(rng, &[d, d], 1.0 / (d as f64).sqrt()));
        Ok(GeneratorModel {
            config,
            params,
            embeddings,
            layers,
            gru,
            projection,
            entity_count,
            pattern_count,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &[GnnLayer] {
        &self.layers
    }

    pub fn gru(&self) -> &Gru {
        &self.gru
    }

    pub fn embeddings_id(&self) -> ParamId {
        self.embeddings
    }

    pub fn projection_id(&self) -> ParamId {
        self.projection
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    fn check_bound(&self, graph: &BipartiteGraph) -> Result<()> {
        if graph.entity_count() != self.entity_count || graph.pattern_count() != self.pattern_count {
            return Err(Error::State(format!(
                "generator bound to {} entities / {} patterns, graph has {} / {}",
                self.entity_count,
                self.pattern_count,
                graph.entity_count(),
                graph.pattern_count()
            )));
        }
        Ok(())
    }

    /// Node embeddings after every encoder layer, one row per flat node index.
    /// Passing an rng activates dropout on each layer's input.
    pub fn encode(
        &self,
        tape: &mut Tape,
        graph: &BipartiteGraph,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_bound(graph)?;
        let mut x = tape.param(&self.params, self.embeddings);
        for layer in &self.layers {
            x = layers::dropout(tape, x, self.config.dropout, dropout.as_deref_mut())?;
            x = layer.forward(tape, &self.params, graph, x)?;
        }
        Ok(x)
    }

    /// `encode` without dropout, as a plain tensor.
    pub fn encode_values(&self, graph: &BipartiteGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.encode(&mut tape, graph, None)?;
        Ok(tape.value(v).clone())
    }

    pub fn initial_hidden(&self, tape: &mut Tape) -> Var {
        tape.constant(Tensor::zeros(&[1, self.config.dim]))
    }

    /// GRU update whose input is the mean embedding of `inputs`.
    pub fn decoder_step(&self, tape: &mut Tape, hidden: Var, inputs: &[EntityId], embeddings: Var) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::argument("decoder step needs at least one input entity"));
        }
        if let Some(&bad) = inputs.iter().find(|&&e| e >= self.entity_count) {
            return Err(Error::argument(format!("entity {bad} has no embedding")));
        }
        let rows = tape.gather_rows(embeddings, layers::arc(inputs.to_vec()))?;
        let x = tape.mean_rows(rows)?;
        self.gru.forward(tape, &self.params, hidden, x)
    }

    /// Log of the expansion distribution over `candidates` (`1 x m`).
    pub fn expansion_log_probs(
        &self,
        tape: &mut Tape,
        hidden: Var,
        embeddings: Var,
        candidates: &[EntityId],
    ) -> Result<Var> {
        if candidates.is_empty() {
            return Err(Error::PoolExhausted("no candidates left to expand".into()));
        }
        let m = tape.param(&self.params, self.projection);
        let query = tape.matmul(hidden, m)?;
        let query = tape.transpose(query)?;
        let cand = tape.gather_rows(embeddings, layers::arc(candidates.to_vec()))?;
        let logits = tape.matmul(cand, query)?;
        let logits = tape.transpose(logits)?;
        tape.log_softmax_rows(logits)
    }

    pub fn expansion_probs(
        &self,
        tape: &mut Tape,
        hidden: Var,
        embeddings: Var,
        candidates: &[EntityId],
    ) -> Result<Vec<f64>> {
        let lp = self.expansion_log_probs(tape, hidden, embeddings, candidates)?;
        Ok(tape.value(lp).values().iter().map(|v| v.exp()).collect())
    }

    /// Hidden states `h^1..=h^k` for `category`, teacher-forced on the
    /// committed expansions in `state`. An empty earlier expansion leaves the
    /// hidden state unchanged.
    pub fn hidden_states(
        &self,
        tape: &mut Tape,
        embeddings: Var,
        state: &ExpansionState,
        category: CategoryId,
        k: usize,
    ) -> Result<Vec<Var>> {
        if k > state.iterations() + 1 {
            return Err(Error::State(format!(
                "iteration {k} requested but only {} are committed",
                state.iterations()
            )));
        }
        let h0 = self.initial_hidden(tape);
        let mut hs = Vec::with_capacity(k);
        if k == 0 {
            return Ok(hs);
        }
        let mut h = self.decoder_step(tape, h0, state.seeds(category), embeddings)?;
        hs.push(h);
        for i in 1..k {
            let prev = state.expanded(i, category);
            if !prev.is_empty() {
                h = self.decoder_step(tape, h, prev, embeddings)?;
            }
            hs.push(h);
        }
        Ok(hs)
    }

    /// Per-category expansion distributions for the next iteration, over the
    /// current unclaimed pool.
    pub fn next_distributions(&self, graph: &BipartiteGraph, state: &ExpansionState) -> Result<Vec<Vec<(EntityId, f64)>>> {
        let k = state.iterations() + 1;
        let pool = state.pool_before(k);
        let mut tape = Tape::new();
        let emb = self.encode(&mut tape, graph, None)?;
        let mut out = Vec::with_capacity(state.category_count());
        for c in 0..state.category_count() {
            let hs = self.hidden_states(&mut tape, emb, state, c, k)?;
            let probs = if pool.is_empty() {
                Vec::new()
            } else {
                self.expansion_probs(&mut tape, hs[k - 1], emb, &pool)?
            };
            out.push(pool.iter().copied().zip(probs).collect());
        }
        Ok(out)
    }

    /// Inference path: decodes the next iteration and commits its top-N.
    pub fn expand_next(&self, graph: &BipartiteGraph, state: &mut ExpansionState, n: usize) -> Result<ExpansionOutcome> {
        let dists = self.next_distributions(graph, state)?;
        expand_top_n(&dists, n, state)
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Result<Checkpoint> {
        Checkpoint::from_store(
            ModelKind::Generator,
            config_hash,
            serde_json::to_value(&self.config)?,
            vec![self.entity_count, self.pattern_count],
            &self.params,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Generator)?;
        let config: GeneratorConfig = serde_json::from_value(ckpt.model_config.clone())?;
        let [entity_count, pattern_count] = ckpt.dims.as_slice() else {
            return Err(Error::Checkpoint("generator checkpoint needs [entities, patterns] dims".into()));
        };
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::build(config, *entity_count, *pattern_count, &mut rng)?;
        ckpt.load_into(&mut model.params)?;
        Ok(model)
    }
}

/// Result of one committed expansion step.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionOutcome {
    pub lists: Vec<Vec<EntityId>>,
    /// Some category received fewer than N entities.
    pub partial: bool,
}

/// Seeds plus every committed expansion, per category and iteration.
///
/// Entities are owned by at most one category; iteration 0 denotes a seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionState {
    entity_count: usize,
    seeds: Vec<Vec<EntityId>>,
    iterations: Vec<Vec<Vec<EntityId>>>,
    partial: Vec<bool>,
    owner: Vec<Option<(CategoryId, usize)>>,
}

impl ExpansionState {
    pub fn new(entity_count: usize, seeds: Vec<Vec<EntityId>>) -> Result<Self> {
        let mut owner = vec![None; entity_count];
        for (c, set) in seeds.iter().enumerate() {
            for &e in set {
                if e >= entity_count {
                    return Err(Error::Validation(format!("seed entity {e} out of range")));
                }
                if let Some((other, _)) = owner[e] {
                    return Err(Error::Validation(format!(
                        "seed entity {e} appears in categories {other} and {c}"
                    )));
                }
                owner[e] = Some((c, 0));
            }
        }
        Ok(ExpansionState {
            entity_count,
            seeds,
            iterations: Vec::new(),
            partial: Vec::new(),
            owner,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn category_count(&self) -> usize {
        self.seeds.len()
    }

    /// Committed iterations.
    pub fn iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn seeds(&self, category: CategoryId) -> &[EntityId] {
        &self.seeds[category]
    }

    /// Expansion of 1-based `iteration` for `category`.
    pub fn expanded(&self, iteration: usize, category: CategoryId) -> &[EntityId] {
        &self.iterations[iteration - 1][category]
    }

    pub fn is_partial(&self, iteration: usize) -> bool {
        self.partial[iteration - 1]
    }

    pub fn any_partial(&self) -> bool {
        self.partial.iter().any(|&p| p)
    }

    pub fn owner(&self, entity: EntityId) -> Option<(CategoryId, usize)> {
        self.owner[entity]
    }

    /// `S^c` together with `G^c_i` for every `i < k`.
    pub fn positives_before(&self, category: CategoryId, k: usize) -> Vec<EntityId> {
        let mut out = self.seeds[category].clone();
        for it in self.iterations.iter().take(k.saturating_sub(1)) {
            out.extend_from_slice(&it[category]);
        }
        out
    }

    /// Entities unclaimed by any category before iteration `k`, ascending.
    pub fn pool_before(&self, k: usize) -> Vec<EntityId> {
        (0..self.entity_count)
            .filter(|&e| match self.owner[e] {
                None => true,
                Some((_, it)) => it >= k && it > 0,
            })
            .collect()
    }

    /// Every expanded entity of `category` through `k` (seeds excluded).
    pub fn expanded_through(&self, category: CategoryId, k: usize) -> Vec<EntityId> {
        self.iterations
            .iter()
            .take(k)
            .flat_map(|it| it[category].iter().copied())
            .collect()
    }

    pub fn commit(&mut self, lists: Vec<Vec<EntityId>>, partial: bool) -> Result<()> {
        if lists.len() != self.category_count() {
            return Err(Error::argument(format!(
                "expansion has {} categories, state has {}",
                lists.len(),
                self.category_count()
            )));
        }
        let k = self.iterations.len() + 1;
        let mut seen = BTreeSet::new();
        for list in &lists {
            for &e in list {
                if e >= self.entity_count || self.owner[e].is_some() || !seen.insert(e) {
                    return Err(Error::State(format!(
                        "entity {e} cannot be expanded at iteration {k}: already claimed"
                    )));
                }
            }
        }
        for (c, list) in lists.iter().enumerate() {
            for &e in list {
                self.owner[e] = Some((c, k));
            }
        }
        self.iterations.push(lists);
        self.partial.push(partial);
        Ok(())
    }

    /// Drops every iteration after `k`, releasing the claimed entities.
    pub fn truncate(&mut self, k: usize) {
        while self.iterations.len() > k {
            for list in self.iterations.pop().unwrap() {
                for e in list {
                    self.owner[e] = None;
                }
            }
            self.partial.pop();
        }
    }

    /// Re-derives ownership from the lists and checks disjointness.
    pub fn check_invariants(&self) -> Result<()> {
        let mut owner: Vec<Option<CategoryId>> = vec![None; self.entity_count];
        for it in std::iter::once(&self.seeds).chain(&self.iterations) {
            for (c, list) in it.iter().enumerate() {
                for &e in list {
                    if owner[e].replace(c).is_some() {
                        return Err(Error::State(format!("entity {e} claimed twice")));
                    }
                }
            }
        }
        Ok(())
    }

    /// TSV trace: `iteration, category_id, category, rank, entity_id, entity`.
    pub fn write_trace(&self, mut w: impl Write, categories: &[String], entities: &[String]) -> Result<()> {
        writeln!(w, "iteration\tcategory_id\tcategory\trank\tentity_id\tentity")?;
        for (i, it) in self.iterations.iter().enumerate() {
            if self.partial[i] {
                writeln!(w, "# partial\t{}", i + 1)?;
            }
            for (c, list) in it.iter().enumerate() {
                for (rank, &e) in list.iter().enumerate() {
                    writeln!(
                        w,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        i + 1,
                        c,
                        categories.get(c).map_or("", |s| s.as_str()),
                        rank + 1,
                        e,
                        entities.get(e).map_or("", |s| s.as_str())
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Reads a trace written by [`write_trace`](Self::write_trace) on top of
    /// a fresh state built from `seeds`.
    pub fn read_trace(r: impl BufRead, entity_count: usize, seeds: Vec<Vec<EntityId>>) -> Result<Self> {
        let mut state = Self::new(entity_count, seeds)?;
        let cats = state.category_count();
        let mut pending: Vec<Vec<Vec<EntityId>>> = Vec::new();
        let mut partial = BTreeSet::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if lineno == 1 && line.starts_with("iteration") {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# partial\t") {
                let it: usize = rest.trim().parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: "bad partial marker".into(),
                })?;
                partial.insert(it);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parse = |i: usize, name: &str| -> Result<usize> {
                fields
                    .get(i)
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: format!("missing or invalid {name}"),
                    })
            };
            let it = parse(0, "iteration")?;
            let c = parse(1, "category_id")?;
            let e = parse(4, "entity_id")?;
            if it == 0 || c >= cats {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("iteration {it} / category {c} out of range"),
                });
            }
            while pending.len() < it {
                pending.push(vec![Vec::new(); cats]);
            }
            pending[it - 1][c].push(e);
        }
        for (i, lists) in pending.into_iter().enumerate() {
            state.commit(lists, partial.contains(&(i + 1)))?;
        }
        Ok(state)
    }
}

/// Greedy conflict-free top-N assignment across categories.
///
/// All `(category, entity, prob)` triples are pooled and visited by
/// descending probability (ties: lower entity id, then lower category id); a
/// triple is accepted when its entity is still free and its category still
/// needs entities. The result is committed to `state`.
pub fn expand_top_n(
    probs: &[Vec<(EntityId, f64)>],
    n: usize,
    state: &mut ExpansionState,
) -> Result<ExpansionOutcome> {
    if probs.len() != state.category_count() {
        return Err(Error::argument(format!(
            "{} distributions for {} categories",
            probs.len(),
            state.category_count()
        )));
    }
    let mut triples: Vec<(f64, EntityId, CategoryId)> = Vec::new();
    for (c, dist) in probs.iter().enumerate() {
        for &(e, p) in dist {
            if e >= state.entity_count() || state.owner(e).is_some() {
                return Err(Error::argument(format!("candidate {e} is already claimed")));
            }
            triples.push((p, e, c));
        }
    }
    triples.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut lists = vec![Vec::with_capacity(n); probs.len()];
    let mut taken = BTreeSet::new();
    let mut open = probs.len();
    for (_, e, c) in triples {
        if open == 0 {
            break;
        }
        if lists[c].len() >= n || taken.contains(&e) {
            continue;
        }
        taken.insert(e);
        lists[c].push(e);
        if lists[c].len() == n {
            open -= 1;
        }
    }
    let partial = lists.iter().any(|l| l.len() < n);
    if partial {
        log::warn!(
            "candidate pool exhausted at iteration {}: {:?} entities per category",
            state.iterations() + 1,
            lists.iter().map(Vec::len).collect::<Vec<_>>()
        );
    }
    state.commit(lists.clone(), partial)?;
    Ok(ExpansionOutcome { lists, partial })
}

/// Draws `m` distinct positions from `probs` without replacement, renormalising
/// after each draw. Zero-mass leftovers are drawn uniformly once the positive
/// mass is used up.
pub fn sample_expansion(probs: &[f64], m: usize, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<usize>> {
    if m > probs.len() {
        return Err(Error::argument(format!(
            "cannot sample {m} entities from a pool of {}",
            probs.len()
        )));
    }
    let mut remaining: Vec<usize> = (0..probs.len()).collect();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mass: f64 = remaining.iter().map(|&i| probs[i].max(0.0)).sum();
        let pick = if mass > 0.0 {
            let u = rng.gen::<f64>() * mass;
            let mut acc = 0.0;
            let mut chosen = None;
            for (pos, &i) in remaining.iter().enumerate() {
                let p = probs[i].max(0.0);
                acc += p;
                if p > 0.0 && u < acc {
                    chosen = Some(pos);
                    break;
                }
            }
            // rounding can leave u just above the final partial sum
            chosen.unwrap_or_else(|| remaining.iter().rposition(|&i| probs[i] > 0.0).unwrap())
        } else {
            rng.gen_range(0..remaining.len())
        };
        out.push(remaining.remove(pick));
    }
    Ok(out)
}
