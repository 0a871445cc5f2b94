//! Candidate evaluation: synthetic reward oracles, the external trainer
//! protocol, and a bounded worker pool that fans a batch out and joins it.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::{architecture_value, decode_architecture};
use crate::error::{Error, Result};
use crate::search_space::{PolicyVector, SearchSpace};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TRAIN_EPOCHS: u32 = 50;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);
pub const DEFAULT_RETRIES: u32 = 1;

/// Grace period for a trainer to exit on its own after it has answered.
const EXIT_GRACE: Duration = Duration::from_secs(5);
const STDERR_TAIL: usize = 2048;
const ORACLE_STREAM: u64 = 0x6f72_6163;
const STDERR_WAIT: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub policy_id: String,
    pub raw_policy: PolicyVector,
    pub train_epochs: u32,
    pub trainer_seed: u64,
}

impl EvaluationRequest {
    pub fn policy_id(epoch: usize, index: usize) -> String {
        format!("e{epoch}-p{index}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    Failed,
    Timeout,
}

impl fmt::Display for EvalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalStatus::Ok => "ok",
            EvalStatus::Failed => "failed",
            EvalStatus::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub policy_id: String,
    pub status: EvalStatus,
    pub reward: Option<f64>,
    pub diagnostics: String,
}

impl EvaluationResult {
    pub fn ok(policy_id: impl Into<String>, reward: f64) -> Self {
        EvaluationResult {
            policy_id: policy_id.into(),
            status: EvalStatus::Ok,
            reward: Some(reward),
            diagnostics: String::new(),
        }
    }

    pub fn failed(policy_id: impl Into<String>, diagnostics: impl Into<String>) -> Self {
        EvaluationResult {
            policy_id: policy_id.into(),
            status: EvalStatus::Failed,
            reward: None,
            diagnostics: diagnostics.into(),
        }
    }

    pub fn timeout(policy_id: impl Into<String>, diagnostics: impl Into<String>) -> Self {
        EvaluationResult {
            policy_id: policy_id.into(),
            status: EvalStatus::Timeout,
            reward: None,
            diagnostics: diagnostics.into(),
        }
    }

    /// Reward of a successful evaluation.
    pub fn ok_reward(&self) -> Option<f64> {
        match self.status {
            EvalStatus::Ok => self.reward,
            _ => None,
        }
    }

    /// Downgrades results that break the reward contract to `failed`.
    fn sanitized(self) -> Self {
        match (self.status, self.reward) {
            (EvalStatus::Ok, Some(r)) if r.is_finite() && (0.0..=1.0).contains(&r) => self,
            (EvalStatus::Ok, r) => {
                EvaluationResult::failed(self.policy_id, format!("reward {r:?} outside [0, 1]"))
            }
            (_, _) => EvaluationResult {
                reward: None,
                ..self
            },
        }
    }
}

/// Evaluates a single candidate. Implementations must be safe to call from
/// several worker threads at once.
pub trait Evaluate: Sync {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult;
}

impl<F> Evaluate for F
where
    F: Fn(&EvaluationRequest) -> EvaluationResult + Sync,
{
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        self(request)
    }
}

/// Evaluates a whole batch; results come back in request order.
pub trait Evaluator {
    fn evaluate_batch(&self, requests: &[EvaluationRequest]) -> Vec<EvaluationResult>;
}

/// Runs at most `workers` evaluations at a time and returns once every
/// request has a terminal result.
pub fn evaluate_batch<E: Evaluate + ?Sized>(
    requests: &[EvaluationRequest],
    evaluator: &E,
    workers: usize,
) -> Vec<EvaluationResult> {
    Broker::new(ByRef(evaluator), workers).evaluate_batch(requests)
}

struct ByRef<'a, E: ?Sized>(&'a E);

impl<E: Evaluate + ?Sized> Evaluate for ByRef<'_, E> {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        self.0.evaluate(request)
    }
}

/// Bounded worker pool around an [`Evaluate`] implementation.
pub struct Broker<E> {
    inner: E,
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl<E: Evaluate> Broker<E> {
    pub fn new(inner: E, workers: usize) -> Self {
        let workers = workers.max(1);
        Broker {
            #[cfg(feature = "parallel")]
            pool: (workers > 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("gridpg-eval-{i}"))
                    .build()
                    .expect("failed to start evaluation workers")
            }),
            inner,
            workers,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn run_one(&self, request: &EvaluationRequest) -> EvaluationResult {
        let mut result = self.inner.evaluate(request).sanitized();
        if result.policy_id != request.policy_id {
            result = EvaluationResult::failed(
                request.policy_id.clone(),
                format!("evaluator answered for `{}`", result.policy_id),
            );
        }
        result
    }
}

impl<E: Evaluate> Evaluator for Broker<E> {
    fn evaluate_batch(&self, requests: &[EvaluationRequest]) -> Vec<EvaluationResult> {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| {
                requests
                    .par_iter()
                    .with_max_len(1)
                    .map(|r| self.run_one(r))
                    .collect()
            });
        }
        requests.iter().map(|r| self.run_one(r)).collect()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate_batch(&self, requests: &[EvaluationRequest]) -> Vec<EvaluationResult> {
        (**self).evaluate_batch(requests)
    }
}

/// Per-candidate trainer seed derived from the run seed and candidate position.
/// Kept below 2^32 so trainers can hand it to any framework's seeding call.
pub fn trainer_seed(run_seed: u64, epoch: usize, index: usize) -> u64 {
    let mut h = splitmix(run_seed ^ 0x6a09_e667_f3bc_c908);
    h = splitmix(h ^ epoch as u64);
    h = splitmix(h ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h >> 32
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// `1 - weighted L1 distance / weighted total range`.
    SeparableConcave,
    /// Like `SeparableConcave`, but flat within one grid step of the target.
    Plateau,
    /// `SeparableConcave` with Gaussian noise (sigma 0.02 unless given).
    Noisy,
}

pub const DEFAULT_NOISY_SIGMA: f64 = 0.02;

/// Synthetic reward landscape with a known optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub kind: OracleKind,
    pub target: PolicyVector,
    pub weights: Vec<f64>,
    pub noise_sigma: f64,
    ranges: Vec<i64>,
}

impl OracleSpec {
    pub fn new(
        space: &SearchSpace,
        kind: OracleKind,
        target: PolicyVector,
        weights: Vec<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        space.validate(&target)?;
        if weights.len() != space.len() {
            return Err(Error::Shape(format!(
                "{} oracle weights for {} dimensions",
                weights.len(),
                space.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("oracle weights must be positive".into()));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma {noise_sigma} invalid")));
        }
        let ranges = space.dimensions().iter().map(|d| d.range()).collect();
        Ok(OracleSpec {
            kind,
            target,
            weights,
            noise_sigma,
            ranges,
        })
    }

    /// Equal weights with a target drawn uniformly from the grid by `seed`.
    /// Draws come from a separate stream, so a search seeded with the same
    /// value does not start on the target.
    pub fn seeded(
        space: &SearchSpace,
        kind: OracleKind,
        seed: u64,
        noise_sigma: f64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ORACLE_STREAM);
        let target = space.random_policy(&mut rng);
        Self::new(space, kind, target, vec![1.0; space.len()], noise_sigma)
    }

    /// Noise-free value of the landscape at `policy`.
    pub fn clean_reward(&self, policy: &PolicyVector) -> f64 {
        let plateau = matches!(self.kind, OracleKind::Plateau);
        let mut deviation = 0.0;
        let mut total = 0.0;
        for (d, (&x, &t)) in policy.coords.iter().zip(&self.target.coords).enumerate() {
            let mut off = (x - t).abs();
            if plateau {
                off = (off - 1).max(0);
            }
            deviation += self.weights[d] * off as f64;
            total += self.weights[d] * self.ranges[d] as f64;
        }
        if total == 0.0 {
            return 1.0;
        }
        (1.0 - deviation / total).clamp(0.0, 1.0)
    }
}

/// Oracle reward: clean value plus optional Gaussian noise, clipped to [0, 1].
pub fn oracle_reward<R: Rng + ?Sized>(
    spec: &OracleSpec,
    policy: &PolicyVector,
    rng: &mut R,
) -> f64 {
    let clean = spec.clean_reward(policy);
    if spec.noise_sigma == 0.0 {
        return clean;
    }
    let noise = Normal::new(0.0, spec.noise_sigma)
        .expect("sigma validated at construction")
        .sample(rng);
    (clean + noise).clamp(0.0, 1.0)
}

/// Evaluates candidates against an [`OracleSpec`]. Noise is drawn from a
/// generator seeded by the request's trainer seed.
#[derive(Debug, Clone)]
pub struct OracleEvaluator {
    pub spec: OracleSpec,
}

impl Evaluate for OracleEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        if request.raw_policy.len() != self.spec.target.len() {
            return EvaluationResult::failed(request.policy_id.clone(), "policy length mismatch");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(request.trainer_seed);
        EvaluationResult::ok(
            request.policy_id.clone(),
            oracle_reward(&self.spec, &request.raw_policy, &mut rng),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainerCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl TrainerCommand {
    pub fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty trainer command".into()))?;
        Ok(TrainerCommand {
            program,
            args: parts.collect(),
        })
    }
}

impl fmt::Display for TrainerCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.program)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

/// Parsed evaluator URI: `oracle:<kind>?seed=..&sigma=..` or `cmd:<path> <args..>`.
#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorUri {
    Oracle {
        kind: OracleKind,
        seed: u64,
        sigma: f64,
    },
    Command(TrainerCommand),
}

impl EvaluatorUri {
    pub fn parse(uri: &str) -> Result<Self> {
        if let Some(rest) = uri.strip_prefix("cmd:") {
            return Ok(EvaluatorUri::Command(TrainerCommand::parse(rest)?));
        }
        let Some(rest) = uri.strip_prefix("oracle:") else {
            return Err(Error::Config(format!(
                "evaluator `{uri}` must start with `oracle:` or `cmd:`"
            )));
        };
        let (name, query) = rest.split_once('?').unwrap_or((rest, ""));
        let kind = match name {
            "separable" | "separable_concave" => OracleKind::SeparableConcave,
            "plateau" => OracleKind::Plateau,
            "noisy" => OracleKind::Noisy,
            other => return Err(Error::Config(format!("unknown oracle `{other}`"))),
        };
        let mut seed = 0u64;
        let mut sigma = None;
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("oracle parameter `{pair}` lacks a value")))?;
            match key {
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad oracle seed `{value}`")))?
                }
                "sigma" => {
                    sigma = Some(
                        value
                            .parse()
                            .map_err(|_| Error::Config(format!("bad oracle sigma `{value}`")))?,
                    )
                }
                other => return Err(Error::Config(format!("unknown oracle parameter `{other}`"))),
            }
        }
        let sigma = sigma.unwrap_or(match kind {
            OracleKind::Noisy => DEFAULT_NOISY_SIGMA,
            _ => 0.0,
        });
        Ok(EvaluatorUri::Oracle { kind, seed, sigma })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    protocol_version: u32,
    policy_id: &'a str,
    train_epochs: u32,
    trainer_seed: u64,
    raw_policy: &'a [i64],
    architecture: Option<&'a serde_json::Value>,
}

/// One request line (without the trailing newline).
pub fn encode_request(
    request: &EvaluationRequest,
    architecture: Option<&serde_json::Value>,
) -> String {
    serde_json::to_string(&WireRequest {
        kind: "evaluate",
        protocol_version: PROTOCOL_VERSION,
        policy_id: &request.policy_id,
        train_epochs: request.train_epochs,
        trainer_seed: request.trainer_seed,
        raw_policy: &request.raw_policy.coords,
        architecture,
    })
    .expect("request is plain data")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainerResponse {
    Result { policy_id: String, reward: f64 },
    Error { policy_id: String, message: String },
}

pub fn decode_response(line: &str) -> Result<TrainerResponse> {
    serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("bad trainer response: {e}")))
}

enum Attempt {
    Done(EvaluationResult),
    Retry(EvaluationResult),
}

/// Spawns one trainer process per evaluation and speaks the line protocol.
#[derive(Debug, Clone)]
pub struct TrainerEvaluator {
    pub command: TrainerCommand,
    pub timeout: Duration,
    pub retries: u32,
    /// Space and class count used to attach the decoded architecture.
    pub architecture: Option<(SearchSpace, u32)>,
}

impl TrainerEvaluator {
    pub fn new(command: TrainerCommand) -> Self {
        TrainerEvaluator {
            command,
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            architecture: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_architecture(mut self, space: SearchSpace, class_count: u32) -> Self {
        self.architecture = Some((space, class_count));
        self
    }

    fn request_line(&self, request: &EvaluationRequest) -> String {
        let arch = self.architecture.as_ref().and_then(|(space, classes)| {
            decode_architecture(space, &request.raw_policy, *classes)
                .ok()
                .map(|a| architecture_value(&a))
        });
        encode_request(request, arch.as_ref())
    }

    fn attempt(&self, request: &EvaluationRequest, line: &str) -> Attempt {
        let id = request.policy_id.as_str();
        let mut child = match Command::new(&self.command.program)
            .args(&self.command.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(child) => child,
            Err(e) => {
                return Attempt::Done(EvaluationResult::failed(
                    id,
                    format!("spawn `{}` failed: {e}", self.command),
                ))
            }
        };
        let (err_tx, err_rx) = mpsc::channel();
        if let Some(mut err) = child.stderr.take() {
            thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = err.read_to_end(&mut buf);
                let start = buf.len().saturating_sub(STDERR_TAIL);
                let _ = err_tx.send(String::from_utf8_lossy(&buf[start..]).into_owned());
            });
        }
        if let Some(mut stdin) = child.stdin.take() {
            // A trainer that dies before reading shows up below as EOF.
            let _ = stdin.write_all(line.as_bytes());
            let _ = stdin.write_all(b"\n");
        }
        let (tx, rx) = mpsc::channel();
        let stdout = child.stdout.take().expect("stdout is piped");
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut line = String::new();
            let read = reader.read_line(&mut line).map(|n| (n, line));
            let _ = tx.send(read);
            // Drain the rest so the child never blocks on a full pipe.
            let _ = std::io::copy(&mut reader, &mut std::io::sink());
        });

        let outcome = rx.recv_timeout(self.timeout);
        let timed_out = matches!(outcome, Err(mpsc::RecvTimeoutError::Timeout));
        let exit = finish(
            &mut child,
            if timed_out {
                Duration::ZERO
            } else {
                EXIT_GRACE
            },
        );
        // Grandchildren may keep stderr open after the trainer is gone.
        let tail = err_rx
            .recv_timeout(STDERR_WAIT)
            .ok()
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
            .map(|s| format!("; stderr: {s}"))
            .unwrap_or_default();

        match outcome {
            Err(mpsc::RecvTimeoutError::Timeout) => Attempt::Retry(EvaluationResult::timeout(
                id,
                format!("no response within {:?}{tail}", self.timeout),
            )),
            Err(mpsc::RecvTimeoutError::Disconnected) | Ok(Ok((0, _))) => {
                Attempt::Retry(EvaluationResult::failed(
                    id,
                    format!("trainer exited without a response ({exit}){tail}"),
                ))
            }
            Ok(Err(e)) => Attempt::Retry(EvaluationResult::failed(
                id,
                format!("reading trainer output: {e}{tail}"),
            )),
            Ok(Ok((_, text))) => match decode_response(&text) {
                Err(e) => Attempt::Retry(EvaluationResult::failed(id, format!("{e}{tail}"))),
                Ok(TrainerResponse::Result { policy_id, .. })
                | Ok(TrainerResponse::Error { policy_id, .. })
                    if policy_id != id =>
                {
                    Attempt::Retry(EvaluationResult::failed(
                        id,
                        format!("response for `{policy_id}`, expected `{id}`"),
                    ))
                }
                Ok(TrainerResponse::Error { message, .. }) => Attempt::Done(
                    EvaluationResult::failed(id, format!("trainer error: {message}")),
                ),
                Ok(TrainerResponse::Result { reward, .. }) => {
                    if reward.is_finite() && (0.0..=1.0).contains(&reward) {
                        Attempt::Done(EvaluationResult::ok(id, reward))
                    } else {
                        Attempt::Done(EvaluationResult::failed(
                            id,
                            format!("reward {reward} outside [0, 1]"),
                        ))
                    }
                }
            },
        }
    }
}

/// Waits up to `grace` for the child to exit, then kills it.
fn finish(child: &mut Child, grace: Duration) -> String {
    let deadline = Instant::now() + grace;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return status.to_string(),
            Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
            _ => {
                let _ = child.kill();
                return match child.wait() {
                    Ok(status) => format!("killed, {status}"),
                    Err(e) => format!("killed, wait failed: {e}"),
                };
            }
        }
    }
}

impl Evaluate for TrainerEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        let line = self.request_line(request);
        let mut last = None;
        for attempt in 0..=self.retries {
            match self.attempt(request, &line) {
                Attempt::Done(result) => return result,
                Attempt::Retry(result) => {
                    log::warn!(
                        "{}: attempt {} of {} failed: {}",
                        request.policy_id,
                        attempt + 1,
                        self.retries + 1,
                        result.diagnostics
                    );
                    last = Some(result);
                }
            }
        }
        let mut result = last.expect("at least one attempt");
        result.diagnostics = format!(
            "{} attempt(s) exhausted; last: {}",
            self.retries + 1,
            result.diagnostics
        );
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{default_space, DimensionSpec};

    #[test]
    fn oracle_examples() {
        let space = default_space();
        let spec = OracleSpec::seeded(&space, OracleKind::SeparableConcave, 3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(oracle_reward(&spec, &spec.target.clone(), &mut rng), 1.0);

        let one = SearchSpace::new(vec![DimensionSpec::num_filters("nf")]).unwrap();
        let spec = OracleSpec::new(
            &one,
            OracleKind::SeparableConcave,
            one.policy(vec![1]).unwrap(),
            vec![1.0],
            0.0,
        )
        .unwrap();
        assert_eq!(
            oracle_reward(&spec, &one.policy(vec![12]).unwrap(), &mut rng),
            0.0
        );
    }

    #[test]
    fn plateau_is_flat_near_target() {
        let one = SearchSpace::new(vec![DimensionSpec::num_filters("nf")]).unwrap();
        let spec = OracleSpec::new(
            &one,
            OracleKind::Plateau,
            one.policy(vec![5]).unwrap(),
            vec![1.0],
            0.0,
        )
        .unwrap();
        let r = |x| spec.clean_reward(&one.policy(vec![x]).unwrap());
        assert_eq!(r(4), 1.0);
        assert_eq!(r(6), 1.0);
        assert!(r(7) < 1.0);
    }

    #[test]
    fn noisy_reward_stays_in_unit_interval() {
        let space = default_space();
        let spec = OracleSpec::seeded(&space, OracleKind::Noisy, 1, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = space.random_policy(&mut rng);
            let r = oracle_reward(&spec, &p, &mut rng);
            assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn uri_parsing() {
        assert_eq!(
            EvaluatorUri::parse("oracle:separable?seed=7").unwrap(),
            EvaluatorUri::Oracle {
                kind: OracleKind::SeparableConcave,
                seed: 7,
                sigma: 0.0
            }
        );
        assert_eq!(
            EvaluatorUri::parse("oracle:noisy").unwrap(),
            EvaluatorUri::Oracle {
                kind: OracleKind::Noisy,
                seed: 0,
                sigma: DEFAULT_NOISY_SIGMA
            }
        );
        assert_eq!(
            EvaluatorUri::parse("cmd:python3 trainer.py --fast").unwrap(),
            EvaluatorUri::Command(TrainerCommand {
                program: "python3".into(),
                args: vec!["trainer.py".into(), "--fast".into()]
            })
        );
        assert!(EvaluatorUri::parse("http://x").is_err());
        assert!(EvaluatorUri::parse("oracle:separable?seed=x").is_err());
        assert!(EvaluatorUri::parse("oracle:separable?bogus=1").is_err());
        assert!(EvaluatorUri::parse("cmd:").is_err());
    }

    #[test]
    fn request_wire_format() {
        let req = EvaluationRequest {
            policy_id: "e3-p17".into(),
            raw_policy: PolicyVector {
                coords: vec![1, 0, 5],
            },
            train_epochs: 50,
            trainer_seed: 884213,
        };
        assert_eq!(
            encode_request(&req, None),
            r#"{"type":"evaluate","protocol_version":1,"policy_id":"e3-p17","train_epochs":50,"trainer_seed":884213,"raw_policy":[1,0,5],"architecture":null}"#
        );
    }

    #[test]
    fn response_wire_format() {
        assert_eq!(
            decode_response(
                r#"{"type":"result","policy_id":"e3-p17","reward":0.8412,"extra":[1]}"#
            )
            .unwrap(),
            TrainerResponse::Result {
                policy_id: "e3-p17".into(),
                reward: 0.8412
            }
        );
        assert_eq!(
            decode_response(r#"{"type":"error","policy_id":"e3-p17","message":"oom"}"#).unwrap(),
            TrainerResponse::Error {
                policy_id: "e3-p17".into(),
                message: "oom".into()
            }
        );
        assert!(decode_response("not json").is_err());
        assert!(decode_response(r#"{"type":"result","policy_id":"x"}"#).is_err());
    }

    #[test]
    fn trainer_seeds_are_stable_and_distinct() {
        assert_eq!(trainer_seed(1, 2, 3), trainer_seed(1, 2, 3));
        assert_ne!(trainer_seed(1, 2, 3), trainer_seed(1, 3, 2));
        assert_ne!(trainer_seed(1, 2, 3), trainer_seed(2, 2, 3));
        assert!(trainer_seed(u64::MAX, 99, 41) < 1 << 32);
    }

    #[test]
    fn broker_sanitizes_bad_rewards() {
        let bad = |r: &EvaluationRequest| EvaluationResult::ok(r.policy_id.clone(), f64::NAN);
        let reqs = vec![EvaluationRequest {
            policy_id: "e0-p0".into(),
            raw_policy: PolicyVector { coords: vec![0] },
            train_epochs: 1,
            trainer_seed: 0,
        }];
        let out = evaluate_batch(&reqs, &bad, 1);
        assert_eq!(out[0].status, EvalStatus::Failed);
        assert_eq!(out[0].reward, None);
        assert!(evaluate_batch(&[], &bad, 4).is_empty());
    }
}
