//! Synchronous federated training: Bernoulli client selection, local
//! DP-SGD with an optionally adaptive clip norm, and size-weighted model
//! aggregation at a round barrier.
//!
//! Every random decision is drawn from a stream keyed by (master seed,
//! purpose, round, client, batch), so results are independent of thread
//! count and evaluation order.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::accountant::PrivacyLedger;
use crate::clipnorm::{model_loss_slope, ClippingState};
use crate::error::{Error, Result};
use crate::mechanism::{dp_sgd_step, NoiseConfig};
use crate::model::ModelSpec;
use crate::rng::{stream_key, stream_tag, StreamRng};
use crate::tensor::{Example, ParamVector};

/// Clip bound used in non-private mode: wide enough that nothing clips.
pub const NONPRIVATE_CLIP: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// DP-SGD with the clip norm descending its composite objective.
    Adaptive,
    /// DP-SGD at a constant clip norm.
    FixedClip,
    /// Plain SGD: no clipping pressure, no noise, no ledger.
    NonPrivate,
}

/// When the adaptive mode re-optimizes the clip norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipCadence {
    PerBatch,
    PerRound,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { base: f64 },
    /// base / (1 + t) with t the zero-based round index.
    InverseDecay { base: f64 },
}

impl LrSchedule {
    pub fn rate(&self, round: u64) -> f64 {
        match *self {
            LrSchedule::Constant { base } => base,
            LrSchedule::InverseDecay { base } => base / (1.0 + round as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let base = match *self {
            LrSchedule::Constant { base } | LrSchedule::InverseDecay { base } => base,
        };
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::InvalidSpec(format!("learning rate {base} out of range")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FederationConfig {
    pub num_clients: usize,
    /// Per-round probability that each client participates.
    pub selection_prob: f64,
    pub rounds: u64,
    /// Local batches attempted per selected client per round.
    pub local_batches: u32,
    /// Poisson rate source: each example joins a batch with probability
    /// expected_batch / shard size (clamped to 1).
    pub expected_batch: f64,
    pub lr: LrSchedule,
    pub mode: TrainingMode,
    pub cadence: ClipCadence,
    /// Restore every client's clip norm to its starting value each round
    /// instead of letting it persist.
    pub reset_clip_each_round: bool,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidSpec("a federation needs at least one client".into()));
        }
        if !(self.selection_prob > 0.0 && self.selection_prob <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "selection probability {} outside (0, 1]",
                self.selection_prob
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidSpec("at least one round is required".into()));
        }
        if !(self.expected_batch > 0.0) || !self.expected_batch.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "expected batch size {} out of range",
                self.expected_batch
            )));
        }
        self.lr.validate()
    }
}

/// One client's local data and its persistent clip-norm state.
#[derive(Clone, Debug)]
pub struct ClientShard {
    pub client_id: usize,
    pub examples: Vec<Example>,
    pub clipping: ClippingState,
}

impl ClientShard {
    pub fn n(&self) -> usize {
        self.examples.len()
    }
}

/// Materializes shards from a dataset and a partition assignment, seeding
/// every client with the same clip-norm state.
pub fn build_shards(
    dataset: &crate::data::Dataset,
    assignment: &[Vec<usize>],
    template: &ClippingState,
) -> Result<Vec<ClientShard>> {
    template.validate()?;
    assignment
        .iter()
        .enumerate()
        .map(|(client_id, indices)| {
            if indices.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Ok(ClientShard {
                client_id,
                examples: indices.iter().map(|&i| dataset.examples[i].clone()).collect(),
                clipping: template.clone(),
            })
        })
        .collect()
}

/// The ledger's sampling rate: the worst (largest) per-client Poisson rate,
/// a conservative single-account reading of uneven shards.
pub fn worst_sampling_rate(shards: &[ClientShard], expected_batch: f64) -> f64 {
    shards
        .iter()
        .map(|s| (expected_batch / s.n() as f64).min(1.0))
        .fold(0.0, f64::max)
}

/// Everything observable about one completed round.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round_index: u64,
    pub selected_client_ids: Vec<usize>,
    pub global_params_after: ParamVector,
    pub mean_clip_norm: f64,
    pub clip_fraction: f64,
    pub epsilon_so_far: f64,
    pub best_order: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub steps_consumed: u64,
}

pub fn selection_stream(seed: u64, round: u64) -> StreamRng {
    StreamRng::from_parts(&[seed, stream_tag::SELECT, round])
}

pub fn batch_stream(seed: u64, round: u64, client: u64, batch: u64) -> StreamRng {
    StreamRng::from_parts(&[seed, stream_tag::POISSON, round, client, batch])
}

pub fn noise_stream_key(seed: u64, round: u64, client: u64, batch: u64) -> u64 {
    stream_key(&[seed, stream_tag::NOISE, round, client, batch])
}

/// One independent inclusion attempt; may come back empty.
pub fn bernoulli_selection(num_clients: usize, selection_prob: f64, rng: &mut StreamRng) -> Vec<usize> {
    (0..num_clients).filter(|_| rng.bernoulli(selection_prob)).collect()
}

/// Draws the round's participants: each client joins independently with the
/// given probability, redrawing an empty result up to 100 times.
pub fn select_clients(num_clients: usize, selection_prob: f64, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if !(selection_prob > 0.0 && selection_prob <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "selection probability {selection_prob} outside (0, 1]"
        )));
    }
    const REDRAWS: u32 = 100;
    for _ in 0..REDRAWS {
        let picked = bernoulli_selection(num_clients, selection_prob, rng);
        if !picked.is_empty() {
            return Ok(picked);
        }
    }
    Err(Error::EmptySelection(REDRAWS))
}

/// Poisson batch: each index joins independently at the given rate.
pub fn poisson_batch(shard_len: usize, rate: f64, rng: &mut StreamRng) -> Vec<usize> {
    let rate = rate.min(1.0);
    (0..shard_len).filter(|_| rng.bernoulli(rate)).collect()
}

#[derive(Clone, Debug)]
pub struct ClientRoundOutcome {
    pub params: ParamVector,
    pub clipping: ClippingState,
    pub num_clipped: u64,
    pub num_grads: u64,
    /// Noisy batch updates actually executed (empty draws excluded); this is
    /// exactly the number of privacy steps the round ledger must absorb.
    pub batches_executed: u64,
}

/// Local training pass for one selected client: per batch, Poisson-sample,
/// optionally descend the clip norm on its composite objective, then take a
/// DP-SGD step. Empty draws are skipped and consume no privacy step.
pub fn client_training(
    global: &ParamVector,
    shard: &ClientShard,
    spec: &ModelSpec,
    cfg: &FederationConfig,
    sigma: f64,
    master_seed: u64,
    round: u64,
) -> Result<ClientRoundOutcome> {
    if shard.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = global.clone();
    let mut clipping = shard.clipping.clone();
    let lr = cfg.lr.rate(round);
    let rate = cfg.expected_batch / shard.n() as f64;
    let client = shard.client_id as u64;
    let mut num_clipped = 0u64;
    let mut num_grads = 0u64;
    let mut batches_executed = 0u64;
    let mut tuned_this_round = false;

    for batch_idx in 0..cfg.local_batches as u64 {
        let mut draw = batch_stream(master_seed, round, client, batch_idx);
        let picked = poisson_batch(shard.n(), rate, &mut draw);
        if picked.is_empty() {
            continue;
        }
        let batch: Vec<Example> = picked.iter().map(|&i| shard.examples[i].clone()).collect();

        let adapt = cfg.mode == TrainingMode::Adaptive
            && match cfg.cadence {
                ClipCadence::PerBatch => true,
                ClipCadence::PerRound => !tuned_this_round,
            };
        // At the floor the probe interval would leave the valid domain; the
        // norm simply stays put until the floor stops binding.
        if adapt && clipping.probe_fits() {
            let slope = model_loss_slope(spec, &params, &batch, &clipping, lr)?;
            let gradient = clipping.gradient(slope);
            clipping.descend(gradient);
            tuned_this_round = true;
        }

        let (clip_norm, noise) = match cfg.mode {
            TrainingMode::NonPrivate => (NONPRIVATE_CLIP, NoiseConfig::silent()),
            _ => (
                clipping.clip_norm,
                NoiseConfig::new(sigma, noise_stream_key(master_seed, round, client, batch_idx))?,
            ),
        };
        let (next, report) = match dp_sgd_step(&params, spec, &batch, clip_norm, &noise, lr) {
            Ok(step) => step,
            Err(e) => {
                // Divergence shows up here first: non-finite parameters or a
                // saturated loss poison the gradient norms. Report it as the
                // numeric failure it is, with the round, not as a mechanism
                // precondition violation.
                let loss = spec.batch_loss(&params, &batch).unwrap_or(f64::NAN);
                if !params.is_finite() || !loss.is_finite() {
                    return Err(Error::NumericFailure { round: round + 1 });
                }
                return Err(e);
            }
        };
        params = next;
        if !params.is_finite() {
            return Err(Error::NumericFailure { round: round + 1 });
        }
        num_clipped += report.num_clipped as u64;
        num_grads += report.num_total as u64;
        batches_executed += 1;
    }

    Ok(ClientRoundOutcome { params, clipping, num_clipped, num_grads, batches_executed })
}

/// Size-weighted mean of client models, summed in the order given. Bitwise
/// identical inputs return that exact vector, so a lone client or a stalled
/// federation round-trips without float drift.
pub fn aggregate(
    updates: &[(usize, ParamVector)],
    shard_sizes: &HashMap<usize, usize>,
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::NoUpdates);
    }
    let dim = updates[0].1.dim();
    for (id, params) in updates {
        if params.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "client {id} sent {} parameters, expected {dim}",
                params.dim()
            )));
        }
    }
    if updates.iter().all(|(_, p)| p.values() == updates[0].1.values()) {
        return Ok(updates[0].1.clone());
    }
    let mut total = 0.0;
    for (id, _) in updates {
        let n = shard_sizes
            .get(id)
            .ok_or_else(|| Error::InvalidSpec(format!("no shard size for client {id}")))?;
        total += *n as f64;
    }
    let mut acc = vec![0.0; dim];
    for (id, params) in updates {
        let w = shard_sizes[id] as f64 / total;
        for (a, v) in acc.iter_mut().zip(params.values()) {
            *a += w * v;
        }
    }
    // No finiteness gate here: the round loop turns a non-finite aggregate
    // into the numeric-failure abort that names the round.
    Ok(ParamVector::from_raw(acc))
}

/// A full training run's mutable state.
pub struct Simulation {
    pub spec: ModelSpec,
    pub cfg: FederationConfig,
    /// Effective noise multiplier; forced to 0 in non-private mode.
    pub sigma: f64,
    pub seed: u64,
    pub params: ParamVector,
    pub shards: Vec<ClientShard>,
    pub ledger: Option<PrivacyLedger>,
    pub train_eval: Vec<Example>,
    pub test_eval: Vec<Example>,
    initial_clip: f64,
    next_round: u64,
}

impl Simulation {
    pub fn new(
        spec: ModelSpec,
        cfg: FederationConfig,
        shards: Vec<ClientShard>,
        sigma: f64,
        delta: f64,
        seed: u64,
        train_eval: Vec<Example>,
        test_eval: Vec<Example>,
    ) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        if shards.len() != cfg.num_clients {
            return Err(Error::InvalidSpec(format!(
                "{} shards for {} clients",
                shards.len(),
                cfg.num_clients
            )));
        }
        if train_eval.is_empty() || test_eval.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for shard in &shards {
            if shard.examples.is_empty() {
                return Err(Error::EmptyDataset);
            }
            shard.clipping.validate()?;
        }
        let (sigma, ledger) = match cfg.mode {
            TrainingMode::NonPrivate => (0.0, None),
            _ => {
                let q = worst_sampling_rate(&shards, cfg.expected_batch);
                (sigma, Some(PrivacyLedger::new(q, sigma, delta)?))
            }
        };
        let params = spec.init_params(seed);
        let initial_clip = shards[0].clipping.clip_norm;
        Ok(Simulation {
            spec,
            cfg,
            sigma,
            seed,
            params,
            shards,
            ledger,
            train_eval,
            test_eval,
            initial_clip,
            next_round: 0,
        })
    }

    pub fn ledger_steps(&self) -> u64 {
        self.ledger.as_ref().map_or(0, |l| l.steps)
    }

    /// Runs one synchronous round: select, train every selected client
    /// (parallel over clients, deterministic regardless of thread count),
    /// aggregate in client-id order, account, evaluate.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.next_round;
        let mut rng = selection_stream(self.seed, t);
        let selected = select_clients(self.cfg.num_clients, self.cfg.selection_prob, &mut rng)?;

        if self.cfg.reset_clip_each_round {
            for &id in &selected {
                self.shards[id].clipping.clip_norm = self.initial_clip;
            }
        }

        let results: Vec<Result<(usize, ClientRoundOutcome)>> = {
            let params = &self.params;
            let shards = &self.shards;
            let spec = &self.spec;
            let cfg = &self.cfg;
            let sigma = self.sigma;
            let seed = self.seed;
            selected
                .par_iter()
                .map(|&id| {
                    client_training(params, &shards[id], spec, cfg, sigma, seed, t).map(|o| (id, o))
                })
                .collect()
        };

        let mut updates = Vec::with_capacity(selected.len());
        let mut num_clipped = 0u64;
        let mut num_grads = 0u64;
        let mut steps = 0u64;
        for result in results {
            let (id, outcome) = result?;
            self.shards[id].clipping = outcome.clipping;
            num_clipped += outcome.num_clipped;
            num_grads += outcome.num_grads;
            steps += outcome.batches_executed;
            updates.push((id, outcome.params));
        }

        let sizes: HashMap<usize, usize> =
            selected.iter().map(|&id| (id, self.shards[id].n())).collect();
        let new_params = aggregate(&updates, &sizes)?;
        if !new_params.is_finite() {
            return Err(Error::NumericFailure { round: t + 1 });
        }
        self.params = new_params;

        let (epsilon_so_far, best_order) = match self.ledger.as_mut() {
            Some(ledger) => {
                ledger.observe(steps);
                match ledger.epsilon() {
                    Ok(pair) => pair,
                    // Nothing spent yet: every draw this run came back empty.
                    Err(Error::NoSteps) => (0.0, 0.0),
                    Err(e) => return Err(e),
                }
            }
            None => (f64::INFINITY, 0.0),
        };

        let mean_clip_norm = selected
            .iter()
            .map(|&id| self.shards[id].clipping.clip_norm)
            .sum::<f64>()
            / selected.len() as f64;
        let clip_fraction = if num_grads == 0 { 0.0 } else { num_clipped as f64 / num_grads as f64 };
        let train_loss = self.spec.batch_loss(&self.params, &self.train_eval)?;
        let test_accuracy = self.spec.accuracy(&self.params, &self.test_eval)?;
        if !train_loss.is_finite() {
            return Err(Error::NumericFailure { round: t + 1 });
        }

        self.next_round += 1;
        Ok(RoundRecord {
            round_index: t + 1,
            selected_client_ids: selected,
            global_params_after: self.params.clone(),
            mean_clip_norm,
            clip_fraction,
            epsilon_so_far,
            best_order,
            train_loss,
            test_accuracy,
            steps_consumed: steps,
        })
    }

    /// Runs the given number of rounds; zero rounds is a no-op.
    pub fn run(&mut self, rounds: u64) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(rounds as usize);
        for _ in 0..rounds {
            records.push(self.run_round()?);
        }
        Ok(records)
    }
}
