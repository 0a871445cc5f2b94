//! Subcommand implementations. Data goes to stdout, diagnostics to stderr.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use gridpg_core::arch::{
    check_layout, count_parameters, decode_architecture, describe_table, propagate_shapes,
    render_architecture, ArchDescriptor,
};
use gridpg_core::evaluation::{
    Broker, Evaluator, EvaluatorUri, OracleEvaluator, OracleSpec, TrainerEvaluator,
};
use gridpg_core::metrics::{dice, hausdorff, LabelMask};
use gridpg_core::optimizer::{drive, Checkpoint, SearchState};
use gridpg_core::search_space::{PolicyVector, SearchSpace};
use gridpg_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{check_trainer, RunConfig};
use crate::exit::{io_error, Failure, ResultExt, CONFIG, INPUT};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_POLICY_FILE: &str = "best_policy.json";
pub const BEST_ARCH_FILE: &str = "best_architecture.json";

pub const POLICY_FORMAT: &str = "gridpg-policy";
pub const POLICY_VERSION: u32 = 1;

/// Best-policy file: the space travels with the coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub format: String,
    pub version: u32,
    pub space: SearchSpace,
    pub coords: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
}

impl PolicyFile {
    pub fn load(path: &Path) -> Result<(SearchSpace, PolicyVector), Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| io_error(format_args!("reading policy {}", path.display()), e))?;
        let file: PolicyFile = serde_json::from_str(&text)
            .map_err(|e| Failure::new(INPUT, format!("policy {}: {e}", path.display())))?;
        if file.format != POLICY_FORMAT || file.version != POLICY_VERSION {
            return Err(Failure::new(
                INPUT,
                format!(
                    "policy {}: expected {POLICY_FORMAT} version {POLICY_VERSION}",
                    path.display()
                ),
            ));
        }
        let policy = file.space.policy(file.coords.clone()).code(INPUT)?;
        Ok((file.space, policy))
    }
}

/// Flag overrides applied on top of the configuration file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub evaluator: Option<String>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Overrides {
    fn touches_search(&self) -> bool {
        self.seed.is_some() || self.max_epochs.is_some()
    }

    fn apply(&self, config: &mut RunConfig) -> Result<(), Failure> {
        if let Some(uri) = &self.evaluator {
            config.evaluator.uri = uri.clone();
        }
        if let Some(workers) = self.workers {
            config.evaluator.workers = workers;
        }
        if let Some(seed) = self.seed {
            config.search.seed = seed;
        }
        if let Some(max_epochs) = self.max_epochs {
            config.search.max_epochs = max_epochs;
        }
        if let Some(dir) = &self.output {
            config.output.dir = dir.clone();
        }
        config.validate()
    }
}

fn build_evaluator(config: &RunConfig, space: &SearchSpace) -> Result<Box<dyn Evaluator>, Failure> {
    let workers = config.evaluator.workers;
    match EvaluatorUri::parse(&config.evaluator.uri).code(CONFIG)? {
        EvaluatorUri::Oracle { kind, seed, sigma } => {
            let spec = OracleSpec::seeded(space, kind, seed, sigma).code(CONFIG)?;
            Ok(Box::new(Broker::new(OracleEvaluator { spec }, workers)))
        }
        EvaluatorUri::Command(command) => {
            let mut trainer = TrainerEvaluator::new(command)
                .with_timeout(config.timeout())
                .with_retries(config.evaluator.retries);
            match check_layout(space) {
                Ok(()) => {
                    trainer = trainer.with_architecture(space.clone(), config.output.class_count)
                }
                Err(e) => log::warn!("requests carry no architecture: {e}"),
            }
            check_trainer(&trainer)?;
            Ok(Box::new(Broker::new(trainer, workers)))
        }
    }
}

/// Runs or resumes a search and writes all artifacts into the output directory.
pub fn search(
    config_path: Option<&Path>,
    resume: Option<&Path>,
    overrides: &Overrides,
) -> Result<(), Failure> {
    let (config, space, mut state) = match resume {
        None => {
            let path = config_path.ok_or_else(|| Failure::new(CONFIG, "--config is required"))?;
            let mut config = RunConfig::load(path)?;
            overrides.apply(&mut config)?;
            let space = config.space()?;
            let state = SearchState::new(&space, config.search.seed);
            (config, space, state)
        }
        Some(path) => {
            let checkpoint = Checkpoint::load(path)?;
            if overrides.touches_search() {
                return Err(Failure::new(
                    CONFIG,
                    "--seed and --max-epochs cannot change a resumed run",
                ));
            }
            let mut config = match config_path {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::from_value(checkpoint.run_config.clone().ok_or_else(|| {
                    Failure::new(CONFIG, "checkpoint has no run configuration; pass --config")
                })?)?,
            };
            overrides.apply(&mut config)?;
            if config.search != checkpoint.config || config.space()? != checkpoint.space {
                return Err(Failure::new(
                    CONFIG,
                    "search or space settings differ from the checkpoint",
                ));
            }
            log::info!("resuming after epoch {}", checkpoint.state.epoch);
            (config, checkpoint.space, checkpoint.state)
        }
    };

    let evaluator = build_evaluator(&config, &space)?;
    let out = &config.output.dir;
    fs::create_dir_all(out).map_err(|e| io_error(format_args!("creating {}", out.display()), e))?;
    let run_config = config.to_value();
    let write_all = |state: &SearchState| -> Result<(), Error> {
        let mut checkpoint = Checkpoint::new(state.clone(), space.clone(), config.search.clone());
        checkpoint.run_config = Some(run_config.clone());
        checkpoint.save(&out.join(CHECKPOINT_FILE))?;
        write_artifacts(out, state, &space, config.output.class_count)
    };
    let reason = drive(
        &mut state,
        &space,
        &config.search,
        evaluator.as_ref(),
        |s| {
            if let Some(epoch) = s.history.last() {
                log::info!(
                    "epoch {}: best {:.6}, center {}",
                    epoch.epoch,
                    epoch.best_reward,
                    epoch.new_center
                );
            }
            write_all(s)
        },
    )?;
    write_all(&state)?;

    let best = state.best.as_ref();
    let summary = json!({
        "stop_reason": reason.to_string(),
        "epochs": state.history.len(),
        "evaluations": state.evaluation_count(),
        "best_reward": best.map(|b| b.reward),
        "best_policy_id": best.map(|b| b.policy_id.clone()),
        "best_coords": best.map(|b| b.policy.coords.clone()),
        "output_dir": out,
    });
    print_json(&summary)
}

fn write_artifacts(
    out: &Path,
    state: &SearchState,
    space: &SearchSpace,
    class_count: u32,
) -> Result<(), Error> {
    let io = |what: &str, e| Error::Io {
        context: format!("writing {what}"),
        source: e,
    };
    let mut csv = Vec::new();
    state
        .write_history_csv(&mut csv)
        .map_err(|e| io(HISTORY_FILE, e))?;
    atomic_write(&out.join(HISTORY_FILE), &csv).map_err(|e| io(HISTORY_FILE, e))?;
    let Some(best) = &state.best else {
        return Ok(());
    };
    let file = PolicyFile {
        format: POLICY_FORMAT.into(),
        version: POLICY_VERSION,
        space: space.clone(),
        coords: best.policy.coords.clone(),
        reward: Some(best.reward),
        policy_id: Some(best.policy_id.clone()),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("policy is plain data");
    text.push('\n');
    atomic_write(&out.join(BEST_POLICY_FILE), text.as_bytes())
        .map_err(|e| io(BEST_POLICY_FILE, e))?;
    if check_layout(space).is_ok() {
        let arch = decode_architecture(space, &best.policy, class_count)?;
        atomic_write(
            &out.join(BEST_ARCH_FILE),
            render_architecture(&arch).as_bytes(),
        )
        .map_err(|e| io(BEST_ARCH_FILE, e))?;
    }
    Ok(())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("plain data");
    writeln!(std::io::stdout(), "{text}").map_err(|e| io_error("writing stdout", e))
}

/// Per-class Dice and Hausdorff between a prediction and a ground truth mask.
pub fn score(
    pred: &Path,
    truth: &Path,
    classes: Option<&[u8]>,
    spacing: Option<(f64, f64)>,
) -> Result<(), Failure> {
    let mut a = LabelMask::read(pred)?;
    let mut b = LabelMask::read(truth)?;
    if let Some((sx, sy)) = spacing {
        a = a.with_spacing(sx, sy)?;
        b = b.with_spacing(sx, sy)?;
    }
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Failure::new(
            INPUT,
            format!(
                "mask sizes differ: {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            ),
        ));
    }
    let classes: Vec<u8> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let count = a.class_count().max(b.class_count()).min(256);
            (1..count).map(|c| c as u8).collect()
        }
    };
    if classes.is_empty() {
        return Err(Failure::new(INPUT, "no classes to score"));
    }
    let mut rows = Vec::new();
    let mut total = 0.0;
    for &class in &classes {
        let di = dice(&a, &b, class)?;
        total += di;
        let hd = match hausdorff(&a, &b, class) {
            Ok(d) => json!(d),
            Err(Error::UndefinedDistance(_)) => json!("undefined"),
            Err(e) => return Err(e.into()),
        };
        rows.push(json!({ "class": class, "dice": di, "hausdorff": hd }));
    }
    print_json(&json!({
        "classes": rows,
        "mean_dice": total / classes.len() as f64,
    }))
}

/// Where `describe` takes its architecture from.
pub enum ArchSource<'a> {
    Policy(&'a Path),
    Expert,
}

pub struct DescribeOptions {
    pub input: (u32, u32),
    pub input_channels: u32,
    pub class_count: u32,
    pub write_arch: Option<PathBuf>,
}

pub fn describe(source: ArchSource<'_>, options: &DescribeOptions) -> Result<(), Failure> {
    let arch = match source {
        ArchSource::Expert => ArchDescriptor::expert_dense_cnn(options.class_count),
        ArchSource::Policy(path) => {
            let (space, policy) = PolicyFile::load(path)?;
            check_layout(&space).code(INPUT)?;
            decode_architecture(&space, &policy, options.class_count).code(INPUT)?
        }
    };
    let (h, w) = options.input;
    let table = propagate_shapes(&arch, h, w, options.input_channels).code(INPUT)?;
    let mut out = describe_table(&arch);
    let _ = writeln!(
        out,
        "\nshapes for input {h}x{w}x{}:",
        options.input_channels
    );
    for row in &table.rows {
        let _ = writeln!(
            out,
            "  {:<18} {:>14} -> {}",
            row.name,
            row.input.to_string(),
            row.output
        );
    }
    let _ = writeln!(
        out,
        "\nparameters: {}",
        count_parameters(&arch, options.input_channels)
    );
    if let Some(path) = &options.write_arch {
        fs::write(path, render_architecture(&arch))
            .map_err(|e| io_error(format_args!("writing {}", path.display()), e))?;
    }
    write!(std::io::stdout(), "{out}").map_err(|e| io_error("writing stdout", e))
}
