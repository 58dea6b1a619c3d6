//! Generator pre-training, per-iteration adversarial rounds and full
//! bootstrapping runs.
//!
//! Each iteration `k` trains a fresh discriminator `D_k` (cloned from
//! `D_{k-1}`) against the generator, freezes it, and commits the generator's
//! top-N expansion. With [`RefiningMode::Global`] every earlier frozen `D_i`
//! keeps rewarding the generator's re-decoded iteration-`i` expansions, so
//! later training cannot drift away from boundaries already learned.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::generator::{sample_expansion, ExpansionOutcome, ExpansionState, GeneratorConfig, GeneratorModel};
use crate::graph::BipartiteGraph;
use crate::numerics::{OptimizerState, Tape, Tensor, Var};
use crate::{CategoryId, EntityId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefiningMode {
    /// Frozen `D_1..D_{k-1}` keep constraining earlier iterations.
    Global,
    /// Ablation: seeds are the only positives, every generated entity is a
    /// negative, and only iteration `k` receives policy gradient.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Weight of the cross-entropy term in the discriminator loss.
    pub lambda: f64,
    /// Reward baseline; `None` means `1 / |C|`.
    pub baseline: Option<f64>,
    /// Entities expanded per category per iteration (N).
    pub per_iteration: usize,
    /// Bootstrapping iterations (K).
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Let pre-training update entity rows of the embedding table. Off by
    /// default: free per-entity vectors let the surrogate memorise the seeds
    /// instead of learning from shared patterns.
    pub pretrain_entity_embeddings: bool,
    pub refining: RefiningMode,
    pub dim: usize,
    pub encoder_layers: usize,
    pub discriminator_hidden: usize,
    pub leaky_slope: f64,
    pub attention_count_bias: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 1.0,
            baseline: None,
            per_iteration: 10,
            iterations: 20,
            epochs_per_iteration: 10,
            generator_lr: 1e-4,
            discriminator_lr: 1e-4,
            weight_decay: 1e-3,
            dropout: 0.1,
            seed: 0,
            pretrain_epochs: 300,
            pretrain_lr: 1e-3,
            pretrain_entity_embeddings: false,
            refining: RefiningMode::Global,
            dim: 64,
            encoder_layers: 2,
            discriminator_hidden: 64,
            leaky_slope: 0.2,
            attention_count_bias: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        if !(self.lambda >= 0.0) {
            return fail("lambda must be >= 0");
        }
        if let Some(b) = self.baseline {
            if !(0.0..=1.0).contains(&b) {
                return fail("baseline must lie in [0, 1]");
            }
        }
        if self.per_iteration == 0 {
            return fail("per_iteration (N) must be >= 1");
        }
        if self.iterations == 0 {
            return fail("iterations (K) must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        for (name, v) in [
            ("generator_lr", self.generator_lr),
            ("discriminator_lr", self.discriminator_lr),
            ("pretrain_lr", self.pretrain_lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be a finite value >= 0")));
            }
        }
        if self.dim == 0 || self.encoder_layers == 0 || self.discriminator_hidden == 0 {
            return fail("dim, encoder_layers and discriminator_hidden must be >= 1");
        }
        Ok(())
    }

    pub fn baseline_for(&self, categories: usize) -> f64 {
        self.baseline.unwrap_or(1.0 / categories as f64)
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            dim: self.dim,
            layers: self.encoder_layers,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            attention_count_bias: self.attention_count_bias,
            ..Default::default()
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            dim: self.dim,
            hidden: self.discriminator_hidden,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            attention_count_bias: self.attention_count_bias,
            ..Default::default()
        }
    }

    /// Identifies runs that may be aggregated together: everything except the
    /// rng seed, plus the dataset fingerprint.
    pub fn config_hash(&self, dataset_fingerprint: &str) -> String {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        let json = serde_json::to_string(&unseeded).expect("config serialises");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update(dataset_fingerprint.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Leave-one-out seed likelihood: for every seed `s` of a category, decode
/// `P_1` from the remaining seeds and maximise `log P_1(s)`. Candidates are
/// every entity except the category's other seeds. Returns the loss per epoch.
pub fn pretrain_generator(
    generator: &mut GeneratorModel,
    dataset: &Dataset,
    config: &TrainingConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let graph = dataset.graph();
    let seeds = dataset.seeds();
    if config.pretrain_epochs == 0 {
        return Ok(Vec::new());
    }
    for (c, set) in seeds.iter().enumerate() {
        if set.len() < 2 {
            log::warn!(
                "category {} has {} seed(s); pre-training targets the seed itself",
                dataset.categories()[c],
                set.len()
            );
        }
    }
    let entity_rows = graph.entity_count();
    let mut opt = OptimizerState::adam(config.pretrain_lr, config.weight_decay, generator.params());
    let mut losses = Vec::with_capacity(config.pretrain_epochs);
    for _ in 0..config.pretrain_epochs {
        let mut tape = Tape::new();
        let emb = generator.encode(&mut tape, graph, Some(&mut *rng))?;
        let (loss, terms) = leave_one_out_loss(generator, &mut tape, emb, graph.entity_count(), seeds)?;
        losses.push(tape.value(loss).item()? / terms as f64);
        tape.backward(loss, generator.params_mut())?;
        if !config.pretrain_entity_embeddings {
            let id = generator.embeddings_id();
            let width = entity_rows * generator.config().dim;
            if let Some(g) = generator.params_mut().grad_mut(id) {
                g.values_mut()[..width].fill(0.0);
            }
        }
        opt.step(generator.params_mut())?;
    }
    Ok(losses)
}

/// Summed `-log P_1(held-out seed)` and the number of terms.
fn leave_one_out_loss(
    generator: &GeneratorModel,
    tape: &mut Tape,
    emb: Var,
    entity_count: usize,
    seeds: &[Vec<EntityId>],
) -> Result<(Var, usize)> {
    let mut total: Option<Var> = None;
    let mut terms = 0;
    for set in seeds {
        for (j, &held) in set.iter().enumerate() {
            let context: Vec<EntityId> = if set.len() < 2 {
                set.clone()
            } else {
                set.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &e)| e).collect()
            };
            let excluded: BTreeSet<EntityId> = context.iter().copied().filter(|&e| e != held).collect();
            let candidates: Vec<EntityId> = (0..entity_count).filter(|e| !excluded.contains(e)).collect();
            let target = candidates.binary_search(&held).expect("held-out seed is a candidate");
            let h0 = generator.initial_hidden(tape);
            let h = generator.decoder_step(tape, h0, &context, emb)?;
            let lp = generator.expansion_log_probs(tape, h, emb, &candidates)?;
            let picked = tape.select(lp, Arc::from(vec![target]))?;
            let nll = tape.scale(picked, -1.0);
            total = Some(match total {
                Some(t) => tape.add(t, nll)?,
                None => nll,
            });
            terms += 1;
        }
    }
    let total = total.ok_or_else(|| Error::argument("pre-training needs at least one seed"))?;
    Ok((total, terms))
}

/// Mean rank (0 = best) of each held-out seed under its leave-one-out `P_1`,
/// without dropout.
pub fn held_out_seed_rank(generator: &GeneratorModel, dataset: &Dataset) -> Result<f64> {
    let graph = dataset.graph();
    let mut tape = Tape::new();
    let emb = generator.encode(&mut tape, graph, None)?;
    let mut ranks = Vec::new();
    for set in dataset.seeds().iter().filter(|s| s.len() >= 2) {
        for (j, &held) in set.iter().enumerate() {
            let context: Vec<EntityId> = set.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &e)| e).collect();
            let candidates: Vec<EntityId> = (0..graph.entity_count()).filter(|e| !context.contains(e)).collect();
            let h0 = generator.initial_hidden(&mut tape);
            let h = generator.decoder_step(&mut tape, h0, &context, emb)?;
            let probs = generator.expansion_probs(&mut tape, h, emb, &candidates)?;
            let target = probs[candidates.binary_search(&held).expect("candidate")];
            ranks.push(probs.iter().filter(|&&p| p > target).count() as f64);
        }
    }
    if ranks.is_empty() {
        return Err(Error::argument("no category has two or more seeds"));
    }
    Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
}

/// Entropy objective on row-wise log-probabilities:
/// `mean_pos[H + lambda * CE] - mean_gen[H]`.
pub fn entropy_objective(
    tape: &mut Tape,
    positive_log_probs: Var,
    positive_labels: &[CategoryId],
    generated_log_probs: Option<Var>,
    lambda: f64,
) -> Result<Var> {
    let (rows, cols) = tape.value(positive_log_probs).dims()?;
    if rows == 0 || rows != positive_labels.len() {
        return Err(Error::argument(format!(
            "{rows} positive rows for {} labels",
            positive_labels.len()
        )));
    }
    if let Some(&bad) = positive_labels.iter().find(|&&c| c >= cols) {
        return Err(Error::argument(format!("label {bad} out of range for {cols} categories")));
    }
    let neg_h_pos = neg_entropy_rows(tape, positive_log_probs)?;
    let neg_h_pos = tape.mean(neg_h_pos);
    let idx: Vec<usize> = positive_labels.iter().enumerate().map(|(i, &c)| i * cols + c).collect();
    let log_p_true = tape.select(positive_log_probs, idx.into())?;
    let mean_log_true = tape.mean(log_p_true);
    // -mean(-H) - lambda * mean(log p)
    let h_term = tape.scale(neg_h_pos, -1.0);
    let ce_term = tape.scale(mean_log_true, -lambda);
    let mut loss = tape.add(h_term, ce_term)?;
    if let Some(gen) = generated_log_probs {
        let neg_h_gen = neg_entropy_rows(tape, gen)?;
        let neg_h_gen = tape.mean(neg_h_gen);
        loss = tape.add(loss, neg_h_gen)?;
    }
    Ok(loss)
}

/// `sum_c p log p` per row, i.e. `-H`.
fn neg_entropy_rows(tape: &mut Tape, log_probs: Var) -> Result<Var> {
    let p = tape.exp(log_probs);
    let plp = tape.mul(p, log_probs)?;
    tape.sum_cols(plp)
}

/// Discriminator loss to minimise. Positives are pooled over categories and
/// labelled by their category; generated entities only enter through their
/// entropy.
pub fn discriminator_loss(
    tape: &mut Tape,
    discriminator: &DiscriminatorModel,
    graph: &BipartiteGraph,
    positives: &[Vec<EntityId>],
    generated: &[Vec<EntityId>],
    lambda: f64,
    mut dropout: Option<&mut (dyn RngCore + '_)>,
) -> Result<Var> {
    let (pos, labels): (Vec<EntityId>, Vec<CategoryId>) = positives
        .iter()
        .enumerate()
        .flat_map(|(c, set)| set.iter().map(move |&e| (e, c)))
        .unzip();
    if pos.is_empty() {
        return Err(Error::argument("discriminator loss needs at least one positive entity"));
    }
    let gen: Vec<EntityId> = generated.iter().flatten().copied().collect();
    let pos_set: BTreeSet<EntityId> = pos.iter().copied().collect();
    if let Some(e) = gen.iter().find(|e| pos_set.contains(e)) {
        return Err(Error::argument(format!("entity {e} is both positive and generated")));
    }
    let pos_lp = discriminator.forward_log_probs(tape, graph, &pos, dropout.as_deref_mut())?;
    let gen_lp = if gen.is_empty() {
        log::warn!("no generated entities; the generated-entropy term is 0");
        None
    } else {
        Some(discriminator.forward_log_probs(tape, graph, &gen, dropout)?)
    };
    entropy_objective(tape, pos_lp, &labels, gen_lp, lambda)
}

/// `R(e) = p - b`.
pub fn reward_from_probability(p: f64, baseline: f64) -> f64 {
    p - baseline
}

/// `R(e) = p_D(c|e) - b` for a single entity.
pub fn generator_reward(
    discriminator: &DiscriminatorModel,
    graph: &BipartiteGraph,
    entity: EntityId,
    category: CategoryId,
    baseline: f64,
) -> Result<f64> {
    let p = discriminator.discriminate(graph, entity)?;
    let pc = *p
        .get(category)
        .ok_or_else(|| Error::argument(format!("category {category} out of range")))?;
    Ok(reward_from_probability(pc, baseline))
}

/// Entities drawn from one `(iteration, category)` expansion distribution.
#[derive(Clone, Debug)]
pub struct SampledExpansion {
    pub iteration: usize,
    pub category: CategoryId,
    /// `1 x m` log-probabilities over `candidates`, on the generator's tape.
    pub log_probs: Var,
    pub candidates: Vec<EntityId>,
    /// Positions into `candidates`.
    pub picks: Vec<usize>,
    pub rewards: Option<Vec<f64>>,
}

impl SampledExpansion {
    pub fn entities(&self) -> Vec<EntityId> {
        self.picks.iter().map(|&i| self.candidates[i]).collect()
    }
}

/// Surrogate whose gradient is minus the REINFORCE estimate:
/// `-sum R(e) log p(e)` over every sampled entity.
pub fn reinforce_surrogate(tape: &mut Tape, samples: &[SampledExpansion]) -> Result<Var> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for s in samples {
        let rewards = s.rewards.as_ref().ok_or_else(|| {
            Error::State(format!(
                "no reward for the iteration {} samples of category {}",
                s.iteration, s.category
            ))
        })?;
        if rewards.len() != s.picks.len() {
            return Err(Error::State(format!(
                "{} rewards for {} samples (iteration {}, category {})",
                rewards.len(),
                s.picks.len(),
                s.iteration,
                s.category
            )));
        }
        if s.picks.is_empty() {
            continue;
        }
        let lp = tape.select(s.log_probs, s.picks.clone().into())?;
        let r = tape.constant(Tensor::column(rewards.clone()));
        let weighted = tape.mul(lp, r)?;
        let sum = tape.sum(weighted);
        let neg = tape.scale(sum, -1.0);
        total = tape.add(total, neg)?;
    }
    Ok(total)
}

/// One optimizer step along the REINFORCE gradient of `samples`.
pub fn policy_gradient_step(
    generator: &mut GeneratorModel,
    tape: &mut Tape,
    samples: &[SampledExpansion],
    optimizer: &mut OptimizerState,
) -> Result<()> {
    let loss = reinforce_surrogate(tape, samples)?;
    tape.backward(loss, generator.params_mut())?;
    optimizer.step(generator.params_mut())
}

/// One record per epoch of an adversarial round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub iteration: usize,
    pub epoch: usize,
    /// Discriminator loss before this epoch's update.
    pub d_loss: f64,
    /// Mean reward over every sample used in the generator step.
    pub mean_reward: f64,
    /// Entities sampled per category at the current iteration.
    pub sample_sizes: Vec<usize>,
    /// `|S^c ∪ G^c_{<k}|` per category.
    pub positive_sizes: Vec<usize>,
    /// Leading sampled entities per category at the current iteration.
    pub preview: Vec<Vec<EntityId>>,
}

const PREVIEW: usize = 5;

/// Everything a round needs besides the models.
pub struct RoundContext<'a> {
    pub graph: &'a BipartiteGraph,
    pub config: &'a TrainingConfig,
    /// Frozen `D_1..D_{k-1}`.
    pub frozen: &'a [DiscriminatorModel],
}

/// Local adversarial learning for iteration `k = state.iterations() + 1`,
/// followed by the top-N commit. `discriminator` is `D_k` and is frozen on
/// return.
pub fn local_adversarial_round(
    generator: &mut GeneratorModel,
    generator_opt: &mut OptimizerState,
    discriminator: &mut DiscriminatorModel,
    state: &mut ExpansionState,
    ctx: &RoundContext<'_>,
    rng: &mut ChaCha8Rng,
    logs: &mut Vec<EpochLog>,
) -> Result<ExpansionOutcome> {
    let RoundContext { graph, config, frozen } = *ctx;
    let k = state.iterations() + 1;
    if frozen.len() != k - 1 {
        return Err(Error::State(format!(
            "iteration {k} needs {} frozen discriminators, got {}",
            k - 1,
            frozen.len()
        )));
    }
    let categories = state.category_count();
    let baseline = config.baseline_for(categories);
    let all: Vec<EntityId> = (0..graph.entity_count()).collect();
    // frozen boundaries never change, so their tables are computed once
    let frozen_tables = match config.refining {
        RefiningMode::Global => frozen
            .iter()
            .map(|d| d.probability_table(graph, &all))
            .collect::<Result<Vec<_>>>()?,
        RefiningMode::None => Vec::new(),
    };
    let first_iter = match config.refining {
        RefiningMode::Global => 1,
        RefiningMode::None => k,
    };
    let pools: Vec<Vec<EntityId>> = (first_iter..=k).map(|i| state.pool_before(i)).collect();
    let positives: Vec<Vec<EntityId>> = (0..categories).map(|c| state.positives_before(c, k)).collect();
    let mut d_opt = OptimizerState::rmsprop(config.discriminator_lr, config.weight_decay, discriminator.params());

    for epoch in 1..=config.epochs_per_iteration {
        let mut tape = Tape::new();
        let emb = generator.encode(&mut tape, graph, Some(&mut *rng))?;
        let mut samples = Vec::new();
        for c in 0..categories {
            let hs = generator.hidden_states(&mut tape, emb, state, c, k)?;
            for (slot, i) in (first_iter..=k).enumerate() {
                let pool = &pools[slot];
                let want = state.positives_before(c, i).len();
                if pool.is_empty() {
                    continue;
                }
                if want > pool.len() {
                    log::warn!("iteration {i}, category {c}: pool of {} is smaller than {want}", pool.len());
                }
                let lp = generator.expansion_log_probs(&mut tape, hs[i - 1], emb, pool)?;
                let probs: Vec<f64> = tape.value(lp).values().iter().map(|v| v.exp()).collect();
                let picks = sample_expansion(&probs, want.min(pool.len()), rng)?;
                samples.push(SampledExpansion {
                    iteration: i,
                    category: c,
                    log_probs: lp,
                    candidates: pool.clone(),
                    picks,
                    rewards: None,
                });
            }
        }
        let current: Vec<Vec<EntityId>> = (0..categories)
            .map(|c| {
                samples
                    .iter()
                    .find(|s| s.iteration == k && s.category == c)
                    .map(SampledExpansion::entities)
                    .unwrap_or_default()
            })
            .collect();

        // discriminator step
        let (d_pos, d_gen): (Vec<Vec<EntityId>>, Vec<Vec<EntityId>>) = match config.refining {
            RefiningMode::Global => (positives.clone(), current.clone()),
            RefiningMode::None => (
                (0..categories).map(|c| state.seeds(c).to_vec()).collect(),
                (0..categories)
                    .map(|c| {
                        let mut g = state.expanded_through(c, k - 1);
                        g.extend(&current[c]);
                        g
                    })
                    .collect(),
            ),
        };
        let mut d_tape = Tape::new();
        let d_loss = discriminator_loss(
            &mut d_tape,
            discriminator,
            graph,
            &d_pos,
            &d_gen,
            config.lambda,
            Some(&mut *rng),
        )?;
        let d_loss_value = d_tape.value(d_loss).item()?;
        d_tape.backward(d_loss, discriminator.params_mut()?)?;
        d_opt.step(discriminator.params_mut()?)?;

        // rewards: frozen tables for earlier iterations, updated D_k for k
        let current_flat: Vec<EntityId> = current.iter().flatten().copied().collect();
        let current_table = if current_flat.is_empty() {
            Vec::new()
        } else {
            discriminator.probability_table(graph, &current_flat)?
        };
        let mut offset = 0;
        let mut reward_sum = 0.0;
        let mut reward_n = 0usize;
        for s in &mut samples {
            let rewards: Vec<f64> = if s.iteration == k {
                let rows = &current_table[offset..offset + s.picks.len()];
                offset += s.picks.len();
                rows.iter().map(|p| reward_from_probability(p[s.category], baseline)).collect()
            } else {
                let table = &frozen_tables[s.iteration - 1];
                s.entities()
                    .iter()
                    .map(|&e| reward_from_probability(table[e][s.category], baseline))
                    .collect()
            };
            reward_sum += rewards.iter().sum::<f64>();
            reward_n += rewards.len();
            s.rewards = Some(rewards);
        }
        policy_gradient_step(generator, &mut tape, &samples, generator_opt)?;

        let entry = EpochLog {
            iteration: k,
            epoch,
            d_loss: d_loss_value,
            mean_reward: if reward_n > 0 { reward_sum / reward_n as f64 } else { 0.0 },
            sample_sizes: current.iter().map(Vec::len).collect(),
            positive_sizes: positives.iter().map(Vec::len).collect(),
            preview: current.iter().map(|l| l.iter().take(PREVIEW).copied().collect()).collect(),
        };
        log::info!(
            "iteration {k} epoch {epoch}: d_loss {:.6} mean_reward {:.6}",
            entry.d_loss,
            entry.mean_reward
        );
        logs.push(entry);
    }

    let outcome = generator.expand_next(graph, state, config.per_iteration)?;
    discriminator.freeze();
    Ok(outcome)
}

/// Output of [`run_bootstrap`].
#[derive(Clone, Debug)]
pub struct RunArtifact {
    pub config: TrainingConfig,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub pretrain_losses: Vec<f64>,
    /// Generator after each iteration's round; entry `k - 1` produced
    /// iteration `k`'s expansion.
    pub generators: Vec<GeneratorModel>,
    /// Frozen `D_1..D_K`.
    pub discriminators: Vec<DiscriminatorModel>,
    pub state: ExpansionState,
    pub logs: Vec<EpochLog>,
    /// After iteration `k`: checksums of `D_1..D_k`.
    pub checksum_history: Vec<Vec<String>>,
}

impl RunArtifact {
    pub fn generator(&self) -> &GeneratorModel {
        self.generators.last().expect("a run has at least one iteration")
    }
}

/// Pre-training followed by `K` adversarial rounds.
pub fn run_bootstrap(dataset: &Dataset, config: &TrainingConfig) -> Result<RunArtifact> {
    config.validate()?;
    let graph = dataset.graph();
    let fingerprint = dataset.fingerprint();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generator = GeneratorModel::new(config.generator_config(), graph, &mut rng)?;
    let pretrain_losses = pretrain_generator(&mut generator, dataset, config, &mut rng)?;
    let mut state = ExpansionState::new(graph.entity_count(), dataset.seeds().to_vec())?;
    let mut generator_opt = OptimizerState::adam(config.generator_lr, config.weight_decay, generator.params());

    let mut discriminators: Vec<DiscriminatorModel> = Vec::with_capacity(config.iterations);
    let mut generators = Vec::with_capacity(config.iterations);
    let mut logs = Vec::new();
    let mut checksum_history: Vec<Vec<String>> = Vec::new();
    for k in 1..=config.iterations {
        let mut d = match discriminators.last() {
            None => DiscriminatorModel::new(config.discriminator_config(), graph, dataset.category_count(), &mut rng)?,
            Some(prev) => DiscriminatorModel::clone_from_predecessor(prev),
        };
        let ctx = RoundContext {
            graph,
            config,
            frozen: &discriminators,
        };
        local_adversarial_round(&mut generator, &mut generator_opt, &mut d, &mut state, &ctx, &mut rng, &mut logs)
            .map_err(|e| e.at_iteration(k))?;
        discriminators.push(d);
        generators.push(generator.clone());
        let sums: Vec<String> = discriminators.iter().map(|d| d.params().checksum()).collect();
        if let Some(prev) = checksum_history.last() {
            if let Some(i) = prev.iter().zip(&sums).position(|(a, b)| a != b) {
                return Err(Error::State(format!("frozen D_{} changed during iteration {k}", i + 1)).at_iteration(k));
            }
        }
        checksum_history.push(sums);
    }
    Ok(RunArtifact {
        config_hash: config.config_hash(&fingerprint),
        config: config.clone(),
        dataset_fingerprint: fingerprint,
        pretrain_losses,
        generators,
        discriminators,
        state,
        logs,
        checksum_history,
    })
}
