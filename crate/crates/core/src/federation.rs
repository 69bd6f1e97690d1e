//! Federated averaging over simulated clients, each running local DP-SGD.
//!
//! A run fits the reducer on the training split, initializes a global model,
//! deals the training examples into `K` equal shards and then repeats for `R`
//! rounds: sample `J` clients, let each train `T` local epochs from the
//! current global model, and replace the global model by the mean of the
//! returned models.
//!
//! Randomness for a client's `s`-th local step (counted over the whole run)
//! comes from streams keyed by `(client, s)`. A client's step counter is the
//! step count of its privacy ledger, so with `K = J = 1` the federated run
//! consumes exactly the streams of [`train_centralized`].

use rand::seq::index;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::accountant::PrivacyLedger;
use crate::dp_sgd::{dp_sgd_step, sample_lot, DpConfig};
use crate::error::{Error, Result};
use crate::model::{Evaluation, Example, HybridModel, Reducer, ReducerKind, N_TRAINABLE};
use crate::rng::{stream, Purpose};

/// `K` clients, `J` sampled per round, `T` local epochs, `R` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundConfig {
    clients: usize,
    per_round: usize,
    local_epochs: usize,
    rounds: usize,
}

impl RoundConfig {
    /// `rounds = 0` is accepted and yields the initialized model.
    pub fn new(clients: usize, per_round: usize, local_epochs: usize, rounds: usize) -> Result<Self> {
        if clients == 0 {
            return Err(Error::invalid("need at least one client"));
        }
        if per_round == 0 || per_round > clients {
            return Err(Error::invalid(format!(
                "clients per round must be in [1, {clients}], got {per_round}"
            )));
        }
        if local_epochs == 0 {
            return Err(Error::invalid("local epochs must be at least 1"));
        }
        Ok(Self { clients, per_round, local_epochs, rounds })
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn per_round(&self) -> usize {
        self.per_round
    }

    pub fn local_epochs(&self) -> usize {
        self.local_epochs
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}

/// One client's slice of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub data: Vec<Example>,
}

/// Shuffles `examples` and deals them into `k` shards of `floor(M / k)`.
/// Leftover examples are dropped with a warning.
pub fn partition<R: rand::Rng + ?Sized>(
    mut examples: Vec<Example>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<ClientShard>> {
    if k == 0 || k > examples.len() {
        return Err(Error::invalid(format!(
            "cannot split {} examples across {k} clients",
            examples.len()
        )));
    }
    examples.shuffle(rng);
    let n = examples.len() / k;
    let dropped = examples.len() - n * k;
    if dropped > 0 {
        log::warn!("dropping {dropped} examples so that {k} shards hold {n} each");
        examples.truncate(n * k);
    }
    let mut shards = Vec::with_capacity(k);
    let mut rest = examples.into_iter();
    for client_id in 0..k {
        shards.push(ClientShard { client_id, data: rest.by_ref().take(n).collect() });
    }
    Ok(shards)
}

/// `j` distinct client ids drawn uniformly from `0..k`, in ascending order.
pub fn sample_clients<R: rand::Rng + ?Sized>(k: usize, j: usize, rng: &mut R) -> Result<Vec<usize>> {
    if j == 0 || j > k {
        return Err(Error::invalid(format!("cannot sample {j} of {k} clients")));
    }
    let mut ids = index::sample(rng, k, j).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Sampled client ids for every round of a run.
pub fn selection_schedule(seed: u64, rounds: &RoundConfig) -> Result<Vec<Vec<usize>>> {
    (0..rounds.rounds)
        .map(|r| {
            let mut rng = stream(seed, Purpose::ClientSelection, r as u64, 0);
            sample_clients(rounds.clients, rounds.per_round, &mut rng)
        })
        .collect()
}

/// How often each client is selected over the run.
pub fn selection_counts(seed: u64, rounds: &RoundConfig) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; rounds.clients];
    for id in selection_schedule(seed, rounds)?.into_iter().flatten() {
        counts[id] += 1;
    }
    Ok(counts)
}

/// One DP-SGD step for `stream_id` at its `step`-th draw of randomness.
fn local_step(
    model: &HybridModel,
    data: &[Example],
    dp: &DpConfig,
    q: f64,
    seed: u64,
    stream_id: u64,
    step: u64,
) -> Result<HybridModel> {
    let lot_idx = sample_lot(data.len(), q, &mut stream(seed, Purpose::Lot, stream_id, step))?;
    let lot: Vec<&Example> = lot_idx.iter().map(|&i| &data[i]).collect();
    dp_sgd_step(model, &lot, dp, &mut stream(seed, Purpose::Noise, stream_id, step))
}

/// Runs `epochs` local epochs of DP-SGD on `shard` starting from `global`.
///
/// Advances `ledger` by `epochs * ceil(N / L)` steps. The ledger's step count
/// before the call selects the random streams, so it must only ever be
/// advanced by this function.
pub fn client_update(
    shard: &ClientShard,
    global: &HybridModel,
    epochs: usize,
    dp: &DpConfig,
    ledger: &mut PrivacyLedger,
    seed: u64,
) -> Result<HybridModel> {
    let q = dp.sampling_rate(shard.data.len())?;
    let steps = (epochs * dp.steps_per_epoch(shard.data.len())) as u64;
    let start = ledger.steps();
    let mut model = global.clone();
    for s in start..start + steps {
        model = local_step(&model, &shard.data, dp, q, seed, shard.client_id as u64, s)?;
    }
    ledger.accumulate(steps);
    Ok(model)
}

/// Plain DP-SGD over `data` for `steps` steps, using the random streams of
/// client `0`. `on_step` sees the model after every step.
pub fn train_centralized(
    data: &[Example],
    init: &HybridModel,
    dp: &DpConfig,
    steps: u64,
    seed: u64,
    mut on_step: impl FnMut(u64, &HybridModel),
) -> Result<HybridModel> {
    let q = dp.sampling_rate(data.len())?;
    let mut model = init.clone();
    for s in 0..steps {
        model = local_step(&model, data, dp, q, seed, 0, s)?;
        on_step(s, &model);
    }
    Ok(model)
}

/// Mean of the trainable parameters; the reducer of the first model is kept.
pub fn aggregate(locals: &[HybridModel]) -> Result<HybridModel> {
    let first = locals.first().ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    if locals.iter().any(|m| m.reducer() != first.reducer()) {
        return Err(Error::invalid("models to aggregate have different reducers"));
    }
    let mut sum = [0.0; N_TRAINABLE];
    for m in locals {
        for (s, p) in sum.iter_mut().zip(m.trainable()) {
            *s += p;
        }
    }
    let n = locals.len() as f64;
    first.with_trainable(&sum.map(|s| s / n))
}

/// The interface the orchestrator drives. The in-process [`LocalClient`] is
/// the only implementation; a networked client would implement it too.
pub trait Client: Send {
    fn id(&self) -> usize;
    /// Trains from `global` for `epochs` local epochs and returns the result.
    fn train(&mut self, global: &HybridModel, epochs: usize) -> Result<HybridModel>;
    fn ledger(&self) -> &PrivacyLedger;
}

/// A client holding its shard and privacy ledger in memory.
#[derive(Debug, Clone)]
pub struct LocalClient {
    shard: ClientShard,
    dp: DpConfig,
    ledger: PrivacyLedger,
    seed: u64,
}

impl LocalClient {
    pub fn new(shard: ClientShard, dp: DpConfig, ledger: PrivacyLedger, seed: u64) -> Self {
        Self { shard, dp, ledger, seed }
    }

    pub fn shard(&self) -> &ClientShard {
        &self.shard
    }
}

impl Client for LocalClient {
    fn id(&self) -> usize {
        self.shard.client_id
    }

    fn train(&mut self, global: &HybridModel, epochs: usize) -> Result<HybridModel> {
        client_update(&self.shard, global, epochs, &self.dp, &mut self.ledger, self.seed)
    }

    fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }
}

/// Everything [`run_training`] needs besides data and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FederatedConfig {
    pub rounds: RoundConfig,
    pub dp: DpConfig,
    pub delta: f64,
    pub reducer: ReducerKind,
}

/// Metrics of the global model after one round. Round 0 is the initial model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub epsilon: f64,
    pub train: Evaluation,
    pub test: Evaluation,
}

/// Result of a run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: HybridModel,
    pub history: Vec<RoundMetrics>,
    pub epsilon: f64,
}

/// Largest epsilon over all clients' ledgers.
pub fn global_epsilon<C: Client>(clients: &[C]) -> Result<f64> {
    clients
        .iter()
        .map(|c| c.ledger().epsilon().map(|s| s.epsilon))
        .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))
}

/// Fits the reducer, initializes the global model and builds the clients.
pub fn setup(
    cfg: &FederatedConfig,
    train: &[Example],
    seed: u64,
) -> Result<(HybridModel, Vec<LocalClient>)> {
    let reducer = Reducer::fit(train, cfg.reducer, &mut stream(seed, Purpose::Reducer, 0, 0))?;
    let model = HybridModel::init(reducer, &mut stream(seed, Purpose::ModelInit, 0, 0));
    let shards = partition(train.to_vec(), cfg.rounds.clients, &mut stream(seed, Purpose::Partition, 0, 0))?;
    let q = cfg.dp.sampling_rate(shards[0].data.len())?;
    let ledger = PrivacyLedger::new(q, cfg.dp.noise_multiplier(), cfg.delta)?;
    let clients = shards
        .into_iter()
        .map(|s| LocalClient::new(s, cfg.dp, ledger.clone(), seed))
        .collect();
    Ok((model, clients))
}

/// Runs the rounds on prepared clients. `observer` sees the metrics and the
/// global model of round 0 (initial) and of every completed round.
pub fn run_rounds<C: Client>(
    global: HybridModel,
    clients: &mut [C],
    rounds: &RoundConfig,
    seed: u64,
    train: &[Example],
    test: &[Example],
    mut observer: impl FnMut(&RoundMetrics, &HybridModel),
) -> Result<TrainingOutcome> {
    if clients.len() != rounds.clients {
        return Err(Error::invalid(format!(
            "expected {} clients, got {}",
            rounds.clients,
            clients.len()
        )));
    }
    let mut global = global;
    let mut history = Vec::with_capacity(rounds.rounds + 1);
    let mut record = |round: usize, model: &HybridModel, clients: &[C]| -> Result<()> {
        let metrics = RoundMetrics {
            round,
            epsilon: global_epsilon(clients)?,
            train: model.evaluate(train)?,
            test: model.evaluate(test)?,
        };
        observer(&metrics, model);
        history.push(metrics);
        Ok(())
    };
    record(0, &global, clients)?;
    for (r, selected) in selection_schedule(seed, rounds)?.into_iter().enumerate() {
        let mut chosen: Vec<&mut C> = clients
            .iter_mut()
            .filter(|c| selected.binary_search(&c.id()).is_ok())
            .collect();
        let snapshot = &global;
        let locals = chosen
            .par_iter_mut()
            .map(|c| c.train(snapshot, rounds.local_epochs))
            .collect::<Result<Vec<_>>>()?;
        global = aggregate(&locals)?;
        record(r + 1, &global, clients)?;
    }
    let epsilon = global_epsilon(clients)?;
    Ok(TrainingOutcome { model: global, history, epsilon })
}

/// Full run: [`setup`] followed by [`run_rounds`].
pub fn run_training(
    cfg: &FederatedConfig,
    train: &[Example],
    test: &[Example],
    seed: u64,
    observer: impl FnMut(&RoundMetrics, &HybridModel),
) -> Result<TrainingOutcome> {
    let (global, mut clients) = setup(cfg, train, seed)?;
    run_rounds(global, &mut clients, &cfg.rounds, seed, train, test, observer)
}
