//! Multi-class boundary classifier: one message-passing layer over the
//! bipartite graph, then a one-hidden-layer MLP with a softmax over the seed
//! categories.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::layers::{self, uniform, GnnLayer};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::{CategoryId, EntityId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Dropout on the MLP hidden layer while training.
    pub dropout: f64,
    pub leaky_slope: f64,
    pub attention_count_bias: bool,
    pub embedding_scale: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            dim: 64,
            hidden: 64,
            dropout: 0.1,
            leaky_slope: 0.2,
            attention_count_bias: false,
            embedding_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorModel {
    config: DiscriminatorConfig,
    params: ParamStore,
    embeddings: ParamId,
    gnn: GnnLayer,
    hidden_w: ParamId,
    hidden_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    categories: usize,
    entity_count: usize,
    pattern_count: usize,
    frozen: bool,
}

impl DiscriminatorModel {
    /// Fresh model: uniform `±1/sqrt(fan_in)` weights and a zeroed output
    /// layer, so the first predictions are exactly uniform.
    pub fn new(config: DiscriminatorConfig, graph: &BipartiteGraph, categories: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::build(config, graph.entity_count(), graph.pattern_count(), categories, rng)
    }

    fn build(
        config: DiscriminatorConfig,
        entity_count: usize,
        pattern_count: usize,
        categories: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if categories == 0 || config.dim == 0 || config.hidden == 0 {
            return Err(Error::argument("discriminator needs >= 1 category and non-zero widths"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::argument("dropout must lie in [0, 1)"));
        }
        let mut params = ParamStore::new();
        let embeddings = params.add(
            "embeddings",
            uniform(rng, &[entity_count + pattern_count, config.dim], config.embedding_scale),
        );
        let gnn = GnnLayer::new(&mut params, "gnn", config.dim, config.leaky_slope, config.attention_count_bias, rng);
        let hidden_w = params.add(
            "mlp.hidden_w",
            uniform(rng, &[config.dim, config.hidden], 1.0 / (config.dim as f64).sqrt()),
        );
        let hidden_b = params.add("mlp.hidden_b", Tensor::zeros(&[1, config.hidden]));
        let out_w = params.add("mlp.out_w", Tensor::zeros(&[config.hidden, categories]));
        let out_b = params.add("mlp.out_b", Tensor::zeros(&[1, categories]));
        Ok(DiscriminatorModel {
            config,
            params,
            embeddings,
            gnn,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
            categories,
            entity_count,
            pattern_count,
            frozen: false,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn category_count(&self) -> usize {
        self.categories
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable parameters; refused once the model is frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParamStore> {
        if self.frozen {
            return Err(Error::State("discriminator is frozen".into()));
        }
        Ok(&mut self.params)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn gnn(&self) -> &GnnLayer {
        &self.gnn
    }

    pub fn embeddings_id(&self) -> ParamId {
        self.embeddings
    }

    pub fn output_ids(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    pub fn hidden_ids(&self) -> (ParamId, ParamId) {
        (self.hidden_w, self.hidden_b)
    }

    /// Deep copy that is trainable regardless of the source's frozen flag.
    /// Optimizer state is never shared: callers build a new one.
    pub fn clone_from_predecessor(predecessor: &DiscriminatorModel) -> Self {
        let mut copy = predecessor.clone();
        copy.frozen = false;
        copy.params.zero_grad();
        copy
    }

    /// Row-wise log `p_D(.|e)` for `entities` (`m x |C|`).
    pub fn forward_log_probs(
        &self,
        tape: &mut Tape,
        graph: &BipartiteGraph,
        entities: &[EntityId],
        dropout: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<Var> {
        if graph.entity_count() != self.entity_count || graph.pattern_count() != self.pattern_count {
            return Err(Error::State("discriminator is bound to a different graph".into()));
        }
        if let Some(&bad) = entities.iter().find(|&&e| e >= self.entity_count) {
            return Err(Error::argument(format!("no such entity {bad}")));
        }
        let x = tape.param(&self.params, self.embeddings);
        let nodes = self.gnn.forward(tape, &self.params, graph, x)?;
        let rows = tape.gather_rows(nodes, layers::arc(entities.to_vec()))?;
        let hw = tape.param(&self.params, self.hidden_w);
        let hb = tape.param(&self.params, self.hidden_b);
        let h = tape.matmul(rows, hw)?;
        let h = tape.add_row(h, hb)?;
        let h = tape.tanh(h);
        let h = layers::dropout(tape, h, self.config.dropout, dropout)?;
        let ow = tape.param(&self.params, self.out_w);
        let ob = tape.param(&self.params, self.out_b);
        let logits = tape.matmul(h, ow)?;
        let logits = tape.add_row(logits, ob)?;
        tape.log_softmax_rows(logits)
    }

    /// `p_D(c|e)` for every category.
    pub fn discriminate(&self, graph: &BipartiteGraph, entity: EntityId) -> Result<Vec<f64>> {
        Ok(self.probability_table(graph, &[entity])?.remove(0))
    }

    /// `p_D(.|e)` for each of `entities`, without dropout.
    pub fn probability_table(&self, graph: &BipartiteGraph, entities: &[EntityId]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let lp = self.forward_log_probs(&mut tape, graph, entities, None)?;
        let t = tape.value(lp);
        Ok((0..entities.len())
            .map(|i| t.row_slice(i).iter().map(|v| v.exp()).collect())
            .collect())
    }

    pub fn to_checkpoint(&self, config_hash: &str, iteration: usize) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_store(
            ModelKind::Discriminator,
            config_hash,
            serde_json::to_value(&self.config)?,
            vec![self.entity_count, self.pattern_count, self.categories],
            &self.params,
        )?;
        ckpt.meta.insert("iteration".into(), iteration.into());
        ckpt.meta.insert("frozen".into(), self.frozen.into());
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Discriminator)?;
        let config: DiscriminatorConfig = serde_json::from_value(ckpt.model_config.clone())?;
        let [entities, patterns, categories] = ckpt.dims.as_slice() else {
            return Err(Error::Checkpoint("discriminator checkpoint needs 3 dims".into()));
        };
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::build(config, *entities, *patterns, *categories, &mut rng)?;
        ckpt.load_into(&mut model.params)?;
        model.frozen = ckpt.meta.get("frozen").and_then(|v| v.as_bool()).unwrap_or(false);
        Ok(model)
    }
}

/// Category with the highest probability; ties go to the lower id.
pub fn assign_positive_category(p: &[f64]) -> CategoryId {
    let mut best = 0;
    for (c, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = c;
        }
    }
    best
}
