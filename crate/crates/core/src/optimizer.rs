//! Perturb-evaluate-update policy-gradient search over a [`SearchSpace`].
//!
//! Every search epoch draws `p` candidates around the center policy. Each
//! dimension is perturbed by -1, 0 or +1 grid steps with the three labels
//! balanced across the batch. After evaluation, rewards are averaged per
//! dimension and label, and the center moves one step toward the label with
//! the strictly best average, or stays when the zero label is at least as
//! good as both alternatives.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    trainer_seed, EvalStatus, EvaluationRequest, EvaluationResult, Evaluator, DEFAULT_TRAIN_EPOCHS,
};
use crate::search_space::{PolicyVector, SearchSpace};

pub const CHECKPOINT_FORMAT: &str = "gridpg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Frozen column order of the history export.
pub const HISTORY_COLUMNS: [&str; 7] = [
    "epoch",
    "candidate",
    "policy_id",
    "role",
    "coords",
    "reward",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Candidates per search epoch.
    pub p: usize,
    pub max_epochs: usize,
    /// Minimum best-reward improvement that resets the patience counter.
    pub stop_tolerance: f64,
    pub stop_patience: usize,
    pub seed: u64,
    /// Also evaluate the center each epoch (recorded, not used for averages).
    pub reevaluate_center: bool,
    /// Reuse rewards for previously evaluated coordinates.
    pub cache_rewards: bool,
    /// Training epochs requested from trainers.
    pub train_epochs: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            p: 42,
            max_epochs: 100,
            stop_tolerance: 1e-3,
            stop_patience: 5,
            seed: 0,
            reevaluate_center: false,
            cache_rewards: false,
            train_epochs: DEFAULT_TRAIN_EPOCHS,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 3 {
            return Err(Error::Config(format!(
                "p = {} but at least 3 required",
                self.p
            )));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.stop_tolerance.is_finite() && self.stop_tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "stop_tolerance {} must be finite and non-negative",
                self.stop_tolerance
            )));
        }
        if self.stop_patience < 1 {
            return Err(Error::Config("stop_patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Label values: -1, 0, +1 grid steps.
pub const NEG: i8 = -1;
pub const ZERO: i8 = 0;
pub const POS: i8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationBatch {
    /// `labels[i][d]` is the step applied to dimension `d` of candidate `i`.
    pub labels: Vec<Vec<i8>>,
    pub candidates: Vec<PolicyVector>,
}

impl PerturbationBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[neg, zero, pos]` label counts for dimension `d`.
    pub fn label_counts(&self, d: usize) -> [usize; 3] {
        let mut counts = [0; 3];
        for row in &self.labels {
            counts[(row[d] + 1) as usize] += 1;
        }
        counts
    }
}

/// Draws `p` candidates around `policy` with balanced labels per dimension.
///
/// Labels infeasible at a bound are dropped and `p` is split evenly over the
/// remaining ones; any remainder goes to distinct labels picked at random.
pub fn generate_perturbations<R: Rng + ?Sized>(
    space: &SearchSpace,
    policy: &PolicyVector,
    p: usize,
    rng: &mut R,
) -> Result<PerturbationBatch> {
    if p < 3 {
        return Err(Error::Config(format!("p = {p} but at least 3 required")));
    }
    space.validate(policy)?;
    let n = space.len();
    let mut labels = vec![vec![ZERO; n]; p];
    let mut column = Vec::with_capacity(p);
    for (d, dim) in space.dimensions().iter().enumerate() {
        let x = policy.coords[d];
        let feasible: Vec<i8> = [NEG, ZERO, POS]
            .into_iter()
            .filter(|&s| dim.contains(x + i64::from(s)))
            .collect();
        let base = p / feasible.len();
        let extra = p % feasible.len();
        let bonus: Vec<i8> = feasible.choose_multiple(rng, extra).copied().collect();
        column.clear();
        for &s in &feasible {
            let quota = base + usize::from(bonus.contains(&s));
            column.extend(std::iter::repeat_n(s, quota));
        }
        column.shuffle(rng);
        for (row, &s) in labels.iter_mut().zip(&column) {
            row[d] = s;
        }
    }
    let candidates = labels
        .iter()
        .map(|row| {
            let raw: Vec<i64> = policy
                .coords
                .iter()
                .zip(row)
                .map(|(&x, &s)| x + i64::from(s))
                .collect();
            space.clamp_policy(&raw)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbationBatch { labels, candidates })
}

/// Mean reward per label for one dimension. Empty labels are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryAverages {
    pub neg: Option<f64>,
    pub zero: Option<f64>,
    pub pos: Option<f64>,
    /// Successful evaluations behind each mean, `[neg, zero, pos]`.
    pub counts: [usize; 3],
}

impl CategoryAverages {
    pub fn new(neg: Option<f64>, zero: Option<f64>, pos: Option<f64>) -> Self {
        CategoryAverages {
            neg,
            zero,
            pos,
            counts: [
                neg.is_some() as usize,
                zero.is_some() as usize,
                pos.is_some() as usize,
            ],
        }
    }
}

/// Per-dimension label means over successful candidates, summed in candidate
/// order. `rewards[i]` is `None` for a failed candidate.
pub fn category_averages(
    batch: &PerturbationBatch,
    rewards: &[Option<f64>],
) -> Result<Vec<CategoryAverages>> {
    if rewards.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} rewards for {} candidates",
            rewards.len(),
            batch.len()
        )));
    }
    if rewards.iter().all(Option::is_none) {
        return Err(Error::EpochFailed {
            epoch: 0,
            candidates: rewards.len(),
            diagnostic: "no successful evaluation".into(),
        });
    }
    let n = batch.labels.first().map_or(0, Vec::len);
    let mut sums = vec![[0.0f64; 3]; n];
    let mut counts = vec![[0usize; 3]; n];
    for (row, reward) in batch.labels.iter().zip(rewards) {
        let Some(r) = *reward else { continue };
        for (d, &s) in row.iter().enumerate() {
            let k = (s + 1) as usize;
            sums[d][k] += r;
            counts[d][k] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| {
            let mean = |k: usize| (c[k] > 0).then(|| s[k] / c[k] as f64);
            CategoryAverages {
                neg: mean(0),
                zero: mean(1),
                pos: mean(2),
                counts: *c,
            }
        })
        .collect())
}

/// Which branch of the update rule fired for a dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateCase {
    /// Negative label strictly best: step down.
    Decrease,
    /// Zero label at least as good as both others: stay.
    Hold,
    /// Positive label strictly best: step up.
    Increase,
    /// Negative and positive tie above zero: stay.
    UncoveredTie,
}

impl UpdateCase {
    pub fn step(self) -> i64 {
        match self {
            UpdateCase::Decrease => -1,
            UpdateCase::Increase => 1,
            UpdateCase::Hold | UpdateCase::UncoveredTie => 0,
        }
    }
}

/// Applies the update rule to one dimension. Missing labels count as -inf.
pub fn update_case(averages: &CategoryAverages) -> UpdateCase {
    let v = |a: Option<f64>| a.unwrap_or(f64::NEG_INFINITY);
    let (neg, zero, pos) = (v(averages.neg), v(averages.zero), v(averages.pos));
    if neg > zero && neg > pos {
        UpdateCase::Decrease
    } else if zero >= neg && zero >= pos {
        UpdateCase::Hold
    } else if pos > zero && pos > neg {
        UpdateCase::Increase
    } else {
        UpdateCase::UncoveredTie
    }
}

pub fn update_policy(
    space: &SearchSpace,
    policy: &PolicyVector,
    averages: &[CategoryAverages],
) -> Result<(PolicyVector, Vec<UpdateCase>)> {
    if averages.len() != space.len() || policy.len() != space.len() {
        return Err(Error::Shape(format!(
            "{} averages and {} coordinates for {} dimensions",
            averages.len(),
            policy.len(),
            space.len()
        )));
    }
    let cases: Vec<UpdateCase> = averages.iter().map(update_case).collect();
    let raw: Vec<i64> = policy
        .coords
        .iter()
        .zip(&cases)
        .map(|(&x, c)| x + c.step())
        .collect();
    Ok((space.clamp_policy(&raw)?, cases))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub policy_id: String,
    pub coords: PolicyVector,
    pub status: EvalStatus,
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub diagnostics: String,
    /// Reward reused from an earlier evaluation of the same coordinates.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cached: bool,
}

impl CandidateRecord {
    pub fn ok_reward(&self) -> Option<f64> {
        match self.status {
            EvalStatus::Ok => self.reward,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub center: PolicyVector,
    pub labels: Vec<Vec<i8>>,
    pub candidates: Vec<CandidateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_evaluation: Option<CandidateRecord>,
    pub averages: Vec<CategoryAverages>,
    pub updates: Vec<UpdateCase>,
    pub new_center: PolicyVector,
    pub best_reward: f64,
}

impl EpochRecord {
    /// Every evaluation of the epoch: candidates first, then the center.
    pub fn evaluations(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.candidates.iter().chain(self.center_evaluation.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSeen {
    pub policy: PolicyVector,
    pub reward: f64,
    pub policy_id: String,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Converged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::Converged => "converged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    /// Completed search epochs.
    pub epoch: usize,
    pub initial_center: PolicyVector,
    pub center: PolicyVector,
    pub best: Option<BestSeen>,
    /// Consecutive epochs whose best-reward improvement was below tolerance.
    pub stalled_epochs: usize,
    pub stop_reason: Option<StopReason>,
    pub history: Vec<EpochRecord>,
    #[serde(with = "rng_state")]
    rng: ChaCha8Rng,
}

impl SearchState {
    /// Fresh state with a uniformly random center drawn from `seed`.
    pub fn new(space: &SearchSpace, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = space.random_policy(&mut rng);
        Self::with_center(center, rng)
    }

    /// Fresh state starting from a given center.
    pub fn starting_at(center: PolicyVector, seed: u64) -> Self {
        Self::with_center(center, ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_center(center: PolicyVector, rng: ChaCha8Rng) -> Self {
        SearchState {
            epoch: 0,
            initial_center: center.clone(),
            center,
            best: None,
            stalled_epochs: 0,
            stop_reason: None,
            history: Vec::new(),
            rng,
        }
    }

    pub fn evaluations(&self) -> impl Iterator<Item = (&EpochRecord, &CandidateRecord)> {
        self.history
            .iter()
            .flat_map(|e| e.evaluations().map(move |c| (e, c)))
    }

    pub fn evaluation_count(&self) -> usize {
        self.history.iter().map(|e| e.evaluations().count()).sum()
    }

    /// Canonical byte encoding of the history, for reproducibility checks.
    pub fn history_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.history).expect("history is plain data")
    }

    /// Writes one CSV row per evaluation, columns as in [`HISTORY_COLUMNS`].
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", HISTORY_COLUMNS.join(","))?;
        for epoch in &self.history {
            for c in epoch.evaluations() {
                let role = if epoch.center_evaluation.as_ref() == Some(c) {
                    "center"
                } else {
                    "candidate"
                };
                let reward = c.ok_reward().map(|r| r.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    epoch.epoch, c.index, c.policy_id, role, c.coords, reward, c.status
                )?;
            }
        }
        Ok(())
    }

    fn reward_cache(&self) -> HashMap<Vec<i64>, f64> {
        let mut cache = HashMap::new();
        for (_, c) in self.evaluations() {
            if let Some(r) = c.ok_reward() {
                cache.entry(c.coords.coords.clone()).or_insert(r);
            }
        }
        cache
    }
}

mod rng_state {
    use rand_chacha::ChaCha8Rng;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        algorithm: String,
        seed: String,
        stream: u64,
        word_pos: String,
    }

    pub fn serialize<S: Serializer>(rng: &ChaCha8Rng, s: S) -> Result<S::Ok, S::Error> {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Raw {
            algorithm: "chacha8".into(),
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ChaCha8Rng, D::Error> {
        use rand::SeedableRng;
        let raw = Raw::deserialize(d)?;
        if raw.algorithm != "chacha8" {
            return Err(D::Error::custom(format!("unknown rng `{}`", raw.algorithm)));
        }
        if raw.seed.len() != 64 {
            return Err(D::Error::custom("rng seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&raw.seed[2 * i..2 * i + 2], 16)
                .map_err(|_| D::Error::custom("rng seed is not hex"))?;
        }
        let word_pos: u128 = raw
            .word_pos
            .parse()
            .map_err(|_| D::Error::custom("rng word_pos is not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(raw.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

/// Runs one generate-evaluate-average-update cycle. On error the state is
/// left exactly as it was before the call.
pub fn run_epoch<E: Evaluator + ?Sized>(
    state: &mut SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
) -> Result<()> {
    config.validate()?;
    let epoch = state.epoch;
    let mut rng = state.rng.clone();
    let batch = generate_perturbations(space, &state.center, config.p, &mut rng)?;

    let mut policies: Vec<&PolicyVector> = batch.candidates.iter().collect();
    if config.reevaluate_center {
        policies.push(&state.center);
    }
    let cache = if config.cache_rewards {
        state.reward_cache()
    } else {
        HashMap::new()
    };

    // Slot i is either a cached reward or an index into the request list.
    let mut requests: Vec<EvaluationRequest> = Vec::new();
    let mut first_request: HashMap<&[i64], usize> = HashMap::new();
    let mut slots = Vec::with_capacity(policies.len());
    for (i, policy) in policies.iter().enumerate() {
        if let Some(&r) = cache.get(&policy.coords) {
            slots.push(Slot::Cached(r));
            continue;
        }
        if config.cache_rewards {
            if let Some(&j) = first_request.get(policy.coords.as_slice()) {
                slots.push(Slot::Shared(j));
                continue;
            }
            first_request.insert(policy.coords.as_slice(), requests.len());
        }
        slots.push(Slot::Request(requests.len()));
        requests.push(EvaluationRequest {
            policy_id: EvaluationRequest::policy_id(epoch, i),
            raw_policy: (*policy).clone(),
            train_epochs: config.train_epochs,
            trainer_seed: trainer_seed(config.seed, epoch, i),
        });
    }

    let results = evaluator.evaluate_batch(&requests);
    if results.len() != requests.len() {
        return Err(Error::Shape(format!(
            "evaluator returned {} results for {} requests",
            results.len(),
            requests.len()
        )));
    }

    let mut records: Vec<CandidateRecord> = slots
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let policy_id = EvaluationRequest::policy_id(epoch, i);
            let coords = policies[i].clone();
            let from_result = |r: &EvaluationResult, cached: bool| CandidateRecord {
                index: i,
                policy_id: policy_id.clone(),
                coords: coords.clone(),
                status: r.status,
                reward: r.ok_reward(),
                diagnostics: r.diagnostics.clone(),
                cached,
            };
            match *slot {
                Slot::Cached(r) => CandidateRecord {
                    index: i,
                    policy_id: policy_id.clone(),
                    coords: coords.clone(),
                    status: EvalStatus::Ok,
                    reward: Some(r),
                    diagnostics: String::new(),
                    cached: true,
                },
                Slot::Request(j) => from_result(&results[j], false),
                Slot::Shared(j) => from_result(&results[j], true),
            }
        })
        .collect();
    let center_evaluation = if config.reevaluate_center {
        records.pop()
    } else {
        None
    };

    let rewards: Vec<Option<f64>> = records.iter().map(CandidateRecord::ok_reward).collect();
    let averages = category_averages(&batch, &rewards).map_err(|e| match e {
        Error::EpochFailed { candidates, .. } => Error::EpochFailed {
            epoch,
            candidates,
            diagnostic: records
                .iter()
                .find(|r| !r.diagnostics.is_empty())
                .map(|r| r.diagnostics.clone())
                .unwrap_or_else(|| "no successful evaluation".into()),
        },
        other => other,
    })?;
    let (new_center, updates) = update_policy(space, &state.center, &averages)?;

    let previous_best = state.best.as_ref().map(|b| b.reward);
    let mut best = state.best.clone();
    for c in records.iter().chain(center_evaluation.iter()) {
        if let Some(r) = c.ok_reward() {
            if best.as_ref().is_none_or(|b| r > b.reward) {
                best = Some(BestSeen {
                    policy: c.coords.clone(),
                    reward: r,
                    policy_id: c.policy_id.clone(),
                    epoch,
                });
            }
        }
    }
    let best_reward = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.reward);
    let improved = match previous_best {
        None => true,
        Some(prev) => best_reward - prev >= config.stop_tolerance,
    };

    log::info!(
        "epoch {epoch}: {} ok / {} evaluated, best {:.6}, moves {}",
        records.iter().filter(|r| r.ok_reward().is_some()).count(),
        records.len(),
        best_reward,
        updates.iter().filter(|u| u.step() != 0).count()
    );

    state.history.push(EpochRecord {
        epoch,
        center: state.center.clone(),
        labels: batch.labels,
        candidates: records,
        center_evaluation,
        averages,
        updates,
        new_center: new_center.clone(),
        best_reward,
    });
    state.center = new_center;
    state.best = best;
    state.stalled_epochs = if improved {
        0
    } else {
        state.stalled_epochs + 1
    };
    state.rng = rng;
    state.epoch += 1;
    Ok(())
}

enum Slot {
    Cached(f64),
    Request(usize),
    Shared(usize),
}

/// Stop condition for the current state, if any.
pub fn stop_reason(state: &SearchState, config: &SearchConfig) -> Option<StopReason> {
    if state.stalled_epochs >= config.stop_patience {
        Some(StopReason::Converged)
    } else if state.epoch >= config.max_epochs {
        Some(StopReason::MaxEpochs)
    } else {
        None
    }
}

/// Runs epochs until a stop condition holds, calling `on_epoch` after each.
/// On error `state` holds the last completed epoch.
pub fn drive<E, F>(
    state: &mut SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
    mut on_epoch: F,
) -> Result<StopReason>
where
    E: Evaluator + ?Sized,
    F: FnMut(&SearchState) -> Result<()>,
{
    config.validate()?;
    space.validate(&state.center)?;
    loop {
        if let Some(reason) = stop_reason(state, config) {
            state.stop_reason = Some(reason);
            return Ok(reason);
        }
        run_epoch(state, space, config, evaluator)?;
        if let Some(reason) = stop_reason(state, config) {
            state.stop_reason = Some(reason);
        }
        on_epoch(state)?;
    }
}

/// Full search from a seeded random center.
pub fn run_search<E: Evaluator + ?Sized>(
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
) -> Result<SearchState> {
    let mut state = SearchState::new(space, config.seed);
    drive(&mut state, space, config, evaluator, |_| Ok(()))?;
    Ok(state)
}

/// Continues a search from a loaded state.
pub fn resume_search<E: Evaluator + ?Sized>(
    mut state: SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
) -> Result<SearchState> {
    drive(&mut state, space, config, evaluator, |_| Ok(()))?;
    Ok(state)
}

/// Self-describing checkpoint: configuration echo plus full search state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: SearchConfig,
    pub space: SearchSpace,
    /// Free-form echo of the front end's run configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    pub state: SearchState,
}

impl Checkpoint {
    pub fn new(state: SearchState, space: SearchSpace, config: SearchConfig) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            space,
            run_config: None,
            state,
        }
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint is plain data");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text.as_bytes())
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        let corrupt = |line, column, message: String| Error::CorruptCheckpoint {
            path: path.to_owned(),
            line,
            column,
            message,
        };
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| corrupt(e.line(), e.column(), e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(corrupt(
                1,
                1,
                format!("unsupported format {} v{}", ck.format, ck.version),
            ));
        }
        let space = SearchSpace::new(ck.space.dimensions().to_vec())
            .map_err(|e| corrupt(0, 0, e.to_string()))?;
        space
            .validate(&ck.state.center)
            .map_err(|e| corrupt(0, 0, format!("center policy: {e}")))?;
        Ok(ck)
    }
}

pub fn save_checkpoint(
    path: &Path,
    state: &SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
) -> Result<()> {
    Checkpoint::new(state.clone(), space.clone(), config.clone()).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<SearchState> {
    Checkpoint::load(path).map(|c| c.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{Broker, EvaluationResult};
    use crate::search_space::{default_space, DimensionSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn avg(neg: f64, zero: f64, pos: f64) -> CategoryAverages {
        CategoryAverages::new(Some(neg), Some(zero), Some(pos))
    }

    #[test]
    fn update_examples() {
        let space = SearchSpace::new(vec![DimensionSpec::num_filters("nf")]).unwrap();
        let at3 = space.policy(vec![3]).unwrap();
        let run = |a| update_policy(&space, &at3, &[a]).unwrap().0.coords[0];
        assert_eq!(run(avg(0.70, 0.60, 0.50)), 2);
        assert_eq!(run(avg(0.50, 0.60, 0.60)), 3);
        assert_eq!(run(avg(0.70, 0.60, 0.70)), 3);
        assert_eq!(
            update_case(&avg(0.70, 0.60, 0.70)),
            UpdateCase::UncoveredTie
        );
        assert_eq!(run(avg(0.5, 0.6, 0.7)), 4);
    }

    #[test]
    fn absent_categories_never_win() {
        let c = CategoryAverages::new(None, Some(0.1), Some(0.05));
        assert_eq!(update_case(&c), UpdateCase::Hold);
        let c = CategoryAverages::new(None, None, None);
        assert_eq!(update_case(&c), UpdateCase::Hold);
        let c = CategoryAverages::new(Some(0.2), None, None);
        assert_eq!(update_case(&c), UpdateCase::Decrease);
    }

    #[test]
    fn averages_examples() {
        let batch = PerturbationBatch {
            labels: vec![vec![NEG], vec![ZERO], vec![POS]],
            candidates: vec![PolicyVector { coords: vec![0] }; 3],
        };
        let a = category_averages(&batch, &[Some(0.2), Some(0.4), Some(0.6)]).unwrap();
        assert_eq!(
            (a[0].neg, a[0].zero, a[0].pos),
            (Some(0.2), Some(0.4), Some(0.6))
        );

        let batch = PerturbationBatch {
            labels: vec![vec![POS], vec![POS], vec![ZERO]],
            candidates: vec![PolicyVector { coords: vec![0] }; 3],
        };
        let a = category_averages(&batch, &[Some(0.2), Some(0.4), Some(0.6)]).unwrap();
        assert!((a[0].pos.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(a[0].zero, Some(0.6));
        assert_eq!(a[0].neg, None);
        assert_eq!(a[0].counts, [0, 1, 2]);

        assert!(matches!(
            category_averages(&batch, &[None, None, None]),
            Err(Error::EpochFailed { .. })
        ));
        assert!(matches!(
            category_averages(&batch, &[None]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn balanced_labels_at_p42() {
        let space = default_space();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut center = space.random_policy(&mut rng);
        center.coords[0] = 1; // NF at x_min
        center.coords[1] = 5; // FH at x_max
        center.coords[2] = 2;
        let batch = generate_perturbations(&space, &center, 42, &mut rng).unwrap();
        assert_eq!(batch.label_counts(0), [0, 21, 21]);
        assert_eq!(batch.label_counts(1), [21, 21, 0]);
        assert_eq!(batch.label_counts(2), [14, 14, 14]);
    }

    #[test]
    fn p3_uses_each_label_once() {
        let space = default_space();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut center = space.min_policy();
        for (x, d) in center.coords.iter_mut().zip(space.dimensions()) {
            if d.range() >= 2 {
                *x += 1;
            }
        }
        let batch = generate_perturbations(&space, &center, 3, &mut rng).unwrap();
        for d in 0..space.len() {
            if space.dimension(d).range() >= 2 {
                assert_eq!(batch.label_counts(d), [1, 1, 1]);
            }
        }
        assert!(generate_perturbations(&space, &center, 2, &mut rng).is_err());
    }

    #[test]
    fn fixed_dimension_only_gets_zero_labels() {
        let space = SearchSpace::new(vec![DimensionSpec::new(
            "fixed",
            crate::search_space::DimensionKind::Custom,
            1,
            0,
            4,
            4,
        )])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = generate_perturbations(&space, &space.min_policy(), 7, &mut rng).unwrap();
        assert_eq!(batch.label_counts(0), [0, 7, 0]);
    }

    #[test]
    fn constant_reward_keeps_center() {
        let space = default_space();
        let config = SearchConfig {
            p: 9,
            seed: 4,
            ..SearchConfig::default()
        };
        let flat = Broker::new(
            |r: &EvaluationRequest| EvaluationResult::ok(r.policy_id.clone(), 0.5),
            1,
        );
        let mut state = SearchState::new(&space, config.seed);
        let before = state.center.clone();
        run_epoch(&mut state, &space, &config, &flat).unwrap();
        assert_eq!(state.center, before);
        assert_eq!(state.evaluation_count(), 9);
        assert!(state.history[0]
            .updates
            .iter()
            .all(|u| *u == UpdateCase::Hold));
    }

    #[test]
    fn failed_epoch_leaves_state_untouched() {
        let space = default_space();
        let config = SearchConfig {
            p: 6,
            ..SearchConfig::default()
        };
        let broken = Broker::new(
            |r: &EvaluationRequest| EvaluationResult::failed(r.policy_id.clone(), "boom"),
            1,
        );
        let mut state = SearchState::new(&space, 1);
        let before = state.clone();
        let err = run_epoch(&mut state, &space, &config, &broken).unwrap_err();
        assert!(
            matches!(err, Error::EpochFailed { epoch: 0, candidates: 6, ref diagnostic } if diagnostic == "boom")
        );
        assert_eq!(state, before);
    }

    #[test]
    fn rng_state_round_trips() {
        let space = default_space();
        let mut state = SearchState::new(&space, 77);
        let _ = state.rng.random::<u64>();
        let text = serde_json::to_string(&state).unwrap();
        let back: SearchState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, state);
        let mut a = state.rng.clone();
        let mut b = back.rng.clone();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    proptest! {
        #[test]
        fn labels_are_balanced(p in 3usize..100, seed in any::<u64>(), n in 1usize..12) {
            let dims = (0..n).map(|i| DimensionSpec::num_filters(format!("d{i}"))).collect();
            let space = SearchSpace::new(dims).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let center = space.random_policy(&mut rng);
            let batch = generate_perturbations(&space, &center, p, &mut rng).unwrap();
            for d in 0..n {
                let counts = batch.label_counts(d);
                let x = center.coords[d];
                let dim = space.dimension(d);
                let feasible: Vec<usize> = (0..3)
                    .filter(|&k| dim.contains(x + k as i64 - 1))
                    .collect();
                let present: Vec<usize> = feasible.iter().map(|&k| counts[k]).collect();
                let max = *present.iter().max().unwrap();
                let min = *present.iter().min().unwrap();
                prop_assert!(max - min <= 1);
                prop_assert_eq!(counts.iter().sum::<usize>(), p);
                for (k, &n) in counts.iter().enumerate() {
                    if !feasible.contains(&k) {
                        prop_assert_eq!(n, 0);
                    }
                }
            }
            for (row, cand) in batch.labels.iter().zip(&batch.candidates) {
                let raw: Vec<i64> = center.coords.iter().zip(row).map(|(&x, &s)| x + i64::from(s)).collect();
                prop_assert_eq!(&space.clamp_policy(&raw).unwrap(), cand);
                prop_assert!(space.validate(cand).is_ok());
            }
        }
    }
}
