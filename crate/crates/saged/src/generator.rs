//! Run every benchmark prompt through a grid of generation functions
//! (model x system prompt), with bounded concurrency, retries, a resumable
//! checkpoint, and a run log.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::endpoints::{ChatClient, ChatRequest, RetryPolicy, SamplingParams};
use crate::error::{Result, SagedError};
use crate::table::{Table, TableKind, Value};

pub const ASSISTANT_PROMPT: &str = "You are a helpful assistant";

/// System-prompt role attached to a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    NoRole,
    Assistant,
    Persona(String),
}

impl Role {
    pub fn label(&self) -> String {
        match self {
            Role::NoRole => "no_role".to_string(),
            Role::Assistant => "assistant".to_string(),
            Role::Persona(name) => sanitize_label(name),
        }
    }

    pub fn system_prompt(&self) -> String {
        match self {
            Role::NoRole => String::new(),
            Role::Assistant => ASSISTANT_PROMPT.to_string(),
            Role::Persona(name) => format!("Role-play <{name}>"),
        }
    }
}

fn sanitize_label(name: &str) -> String {
    let mut out = String::new();
    let mut last_underscore = false;
    for c in name.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
            last_underscore = false;
        } else if !last_underscore && !out.is_empty() {
            out.push('_');
            last_underscore = true;
        }
    }
    out.trim_end_matches('_').to_string()
}

/// One generation configuration: endpoint model plus system prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFunction {
    /// Unique `{model}_{role}` name; becomes the response column.
    pub name: String,
    pub model_id: String,
    pub system_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl GenerationFunction {
    pub fn params(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(SagedError::Invalid(format!(
                "generation function `{}`: temperature must be in [0,2]",
                self.name
            )));
        }
        Ok(())
    }
}

/// Cross the model list with the role list into `|models| x |roles|`
/// generation functions; duplicate names are an error.
pub fn build_role_grid(
    models: &[(String, String)],
    roles: &[Role],
    params: &SamplingParams,
) -> Result<Vec<GenerationFunction>> {
    if models.is_empty() || roles.is_empty() {
        return Err(SagedError::Invalid("models and roles must be non-empty".into()));
    }
    let mut functions = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (label, model_id) in models {
        for role in roles {
            let name = format!("{label}_{}", role.label());
            if !seen.insert(name.clone()) {
                return Err(SagedError::Invalid(format!(
                    "duplicate generation function name `{name}`"
                )));
            }
            functions.push(GenerationFunction {
                name,
                model_id: model_id.clone(),
                system_prompt: role.system_prompt(),
                temperature: params.temperature,
                max_tokens: params.max_tokens,
                seed: params.seed,
            });
        }
    }
    Ok(functions)
}

/// Repeat functions for multiple rounds; round 1 keeps the base name, later
/// rounds get `_r2`, `_r3`, ... suffixes.
pub fn expand_rounds(functions: &[GenerationFunction], rounds: usize) -> Vec<GenerationFunction> {
    let mut out = Vec::new();
    for round in 1..=rounds.max(1) {
        for f in functions {
            let mut f = f.clone();
            if round > 1 {
                f.name = format!("{}_r{round}", f.name);
            }
            out.push(f);
        }
    }
    out
}

/// A generation function bound to its chat endpoint.
pub struct BoundFunction {
    pub function: GenerationFunction,
    pub client: Arc<dyn ChatClient>,
    /// Endpoint identity for per-endpoint concurrency bounds.
    pub endpoint_id: String,
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub per_endpoint_concurrency: usize,
    pub global_concurrency: usize,
    pub retry: RetryPolicy,
    /// Fraction of rows a function may permanently fail before the run aborts.
    pub failure_budget: f64,
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_flush_every: usize,
    pub run_log_path: Option<PathBuf>,
    /// Stop picking new cells after this many completions (simulates a kill;
    /// completed cells are already in the checkpoint).
    pub cancel_after_cells: Option<usize>,
    /// Skip the 1-prompt endpoint probe (used by offline tests).
    pub skip_health_check: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            per_endpoint_concurrency: 8,
            global_concurrency: 32,
            retry: RetryPolicy::default(),
            failure_budget: 0.10,
            checkpoint_path: None,
            checkpoint_flush_every: 100,
            run_log_path: None,
            cancel_after_cells: None,
            skip_health_check: false,
        }
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    FailureBudget(String),
    Cancelled,
}

/// One permanently failed cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureEntry {
    pub row: usize,
    pub function: String,
    pub reason: String,
    pub retries: u32,
}

#[derive(Debug)]
pub struct GenerateOutcome {
    /// Benchmark columns plus one response column per function. The existing
    /// `baseline` column doubles as the baseline pseudo-generation, so
    /// extraction can treat it uniformly.
    pub table: Table,
    pub failures: Vec<FailureEntry>,
    pub aborted: Option<Abort>,
    /// Retries that eventually succeeded, per (row, function).
    pub retry_counts: BTreeMap<(usize, String), u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum CheckpointCell {
    Ok { row: usize, function: String, text: String, retries: u32 },
    Failed { row: usize, function: String, reason: String, retries: u32 },
}

#[derive(Debug, Clone)]
enum CellState {
    Pending,
    Ok { text: String, retries: u32 },
    Failed { reason: String, retries: u32 },
}

/// Counting semaphore for the concurrency bounds.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().expect("poisoned");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("poisoned");
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().expect("poisoned") += 1;
        self.cv.notify_one();
    }
}

fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointCell>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|e| SagedError::io(path, e))?;
    let mut cells = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| SagedError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cell: CheckpointCell =
            serde_json::from_str(&line).map_err(|e| SagedError::parse(path, e.to_string()))?;
        cells.push(cell);
    }
    Ok(cells)
}

struct CheckpointWriter {
    file: Mutex<(std::io::BufWriter<std::fs::File>, usize)>,
    flush_every: usize,
}

impl CheckpointWriter {
    fn open(path: &Path, flush_every: usize) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| SagedError::io(parent, e))?;
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| SagedError::io(path, e))?;
        Ok(CheckpointWriter {
            file: Mutex::new((std::io::BufWriter::new(file), 0)),
            flush_every: flush_every.max(1),
        })
    }

    fn record(&self, cell: &CheckpointCell) {
        let mut guard = self.file.lock().expect("poisoned");
        let line = serde_json::to_string(cell).expect("serializable");
        let _ = writeln!(guard.0, "{line}");
        guard.1 += 1;
        if guard.1 % self.flush_every == 0 {
            let _ = guard.0.flush();
        }
    }

    fn flush(&self) {
        let _ = self.file.lock().expect("poisoned").0.flush();
    }
}

struct RunLog {
    file: Mutex<std::io::BufWriter<std::fs::File>>,
}

impl RunLog {
    fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| SagedError::io(parent, e))?;
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| SagedError::io(path, e))?;
        Ok(RunLog {
            file: Mutex::new(std::io::BufWriter::new(file)),
        })
    }

    fn line(&self, function: &str, row: usize, latency_ms: u128, retries: u32, status: &str) {
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let entry = serde_json::json!({
            "ts": ts,
            "function": function,
            "row": row,
            "latency_ms": latency_ms,
            "retries": retries,
            "status": status,
        });
        let mut guard = self.file.lock().expect("poisoned");
        let _ = writeln!(guard, "{entry}");
        let _ = guard.flush();
    }
}

/// Generate one response per (benchmark row, function).
///
/// Failed calls retry per the policy; permanent failures are flagged cells.
/// Completed cells stream to the checkpoint, and a rerun with the same
/// checkpoint fills only missing cells, byte-identically. When any function's
/// permanent failures exceed the budget the run aborts with partial results.
pub fn generate_all(
    benchmark: &Table,
    functions: &[BoundFunction],
    opts: &GenerateOptions,
) -> Result<GenerateOutcome> {
    for bound in functions {
        bound.function.validate()?;
    }
    {
        let mut names = std::collections::BTreeSet::new();
        for bound in functions {
            if !names.insert(&bound.function.name) {
                return Err(SagedError::Invalid(format!(
                    "duplicate generation function name `{}`",
                    bound.function.name
                )));
            }
        }
    }

    if !opts.skip_health_check {
        let mut probed = std::collections::BTreeSet::new();
        for bound in functions {
            if probed.insert(bound.endpoint_id.clone()) {
                bound.client.health_check().map_err(|e| {
                    SagedError::Endpoint(format!(
                        "health check failed for endpoint `{}`: {e}",
                        bound.endpoint_id
                    ))
                })?;
            }
        }
    }

    let n_rows = benchmark.len();
    let n_funcs = functions.len();
    let prompt_col = benchmark
        .col("prompt")
        .ok_or_else(|| SagedError::Invalid("benchmark has no prompt column".into()))?;
    let prompts: Vec<String> = benchmark
        .rows()
        .map(|r| r[prompt_col].as_str().unwrap_or_default().to_string())
        .collect();

    // grid prefilled from the checkpoint
    let mut grid: Vec<Vec<CellState>> = vec![vec![CellState::Pending; n_funcs]; n_rows];
    let func_index: HashMap<&str, usize> = functions
        .iter()
        .enumerate()
        .map(|(i, b)| (b.function.name.as_str(), i))
        .collect();
    if let Some(path) = &opts.checkpoint_path {
        for cell in load_checkpoint(path)? {
            let (row, function, state) = match cell {
                CheckpointCell::Ok { row, function, text, retries } => {
                    (row, function, CellState::Ok { text, retries })
                }
                CheckpointCell::Failed { row, function, reason, retries } => {
                    (row, function, CellState::Failed { reason, retries })
                }
            };
            if let (true, Some(&f)) = (row < n_rows, func_index.get(function.as_str())) {
                grid[row][f] = state;
            }
        }
    }

    let work: Vec<(usize, usize)> = (0..n_rows)
        .flat_map(|r| (0..n_funcs).map(move |f| (r, f)))
        .filter(|&(r, f)| matches!(grid[r][f], CellState::Pending))
        .collect();

    let checkpoint = match &opts.checkpoint_path {
        Some(path) => Some(CheckpointWriter::open(path, opts.checkpoint_flush_every)?),
        None => None,
    };
    let run_log = match &opts.run_log_path {
        Some(path) => Some(RunLog::open(path)?),
        None => None,
    };

    let global = Semaphore::new(opts.global_concurrency);
    let per_endpoint: HashMap<String, Semaphore> = functions
        .iter()
        .map(|b| (b.endpoint_id.clone(), Semaphore::new(opts.per_endpoint_concurrency)))
        .collect();

    let grid = Mutex::new(grid);
    let failure_counts: Mutex<Vec<usize>> = Mutex::new(vec![0; n_funcs]);
    let queue = Mutex::new(work.into_iter());
    let completed = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let abort: Mutex<Option<Abort>> = Mutex::new(None);
    let failure_limit = (opts.failure_budget * n_rows as f64).floor() as usize;

    let workers = opts
        .global_concurrency
        .max(1)
        .min((n_rows * n_funcs).max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Some(limit) = opts.cancel_after_cells {
                    if completed.load(Ordering::SeqCst) >= limit {
                        stop.store(true, Ordering::SeqCst);
                        *abort.lock().expect("poisoned") = Some(Abort::Cancelled);
                        break;
                    }
                }
                let next = queue.lock().expect("poisoned").next();
                let (row, f) = match next {
                    Some(pair) => pair,
                    None => break,
                };
                let bound = &functions[f];
                let params = bound.function.params();
                let request = ChatRequest {
                    system: &bound.function.system_prompt,
                    user: &prompts[row],
                    params: &params,
                };
                global.acquire();
                per_endpoint[&bound.endpoint_id].acquire();
                let started = Instant::now();
                let result = opts.retry.run(|| bound.client.chat(&request));
                per_endpoint[&bound.endpoint_id].release();
                global.release();
                let latency = started.elapsed().as_millis();

                let (state, cell, status) = match result {
                    Ok((text, retries)) => (
                        CellState::Ok { text: text.clone(), retries },
                        CheckpointCell::Ok {
                            row,
                            function: bound.function.name.clone(),
                            text,
                            retries,
                        },
                        "ok",
                    ),
                    Err(e) => {
                        let reason = e.to_string();
                        let retries = opts.retry.attempts.max(1) - 1;
                        let count = {
                            let mut counts = failure_counts.lock().expect("poisoned");
                            counts[f] += 1;
                            counts[f]
                        };
                        if count > failure_limit {
                            stop.store(true, Ordering::SeqCst);
                            let mut guard = abort.lock().expect("poisoned");
                            if guard.is_none() {
                                *guard = Some(Abort::FailureBudget(format!(
                                    "function `{}` exceeded the permanent-failure budget \
                                     ({count} of {n_rows} rows)",
                                    bound.function.name
                                )));
                            }
                        }
                        (
                            CellState::Failed { reason: reason.clone(), retries },
                            CheckpointCell::Failed {
                                row,
                                function: bound.function.name.clone(),
                                reason,
                                retries,
                            },
                            "failed",
                        )
                    }
                };
                let retries_for_log = match &state {
                    CellState::Ok { retries, .. } | CellState::Failed { retries, .. } => *retries,
                    CellState::Pending => 0,
                };
                grid.lock().expect("poisoned")[row][f] = state;
                if let Some(cp) = &checkpoint {
                    cp.record(&cell);
                }
                if let Some(log) = &run_log {
                    log.line(&bound.function.name, row, latency, retries_for_log, status);
                }
                completed.fetch_add(1, Ordering::SeqCst);
            });
        }
    });
    if let Some(cp) = &checkpoint {
        cp.flush();
    }

    let grid = grid.into_inner().expect("poisoned");
    let aborted = abort.into_inner().expect("poisoned");

    let mut table = benchmark.rekinded(TableKind::Generations);
    let mut failures = Vec::new();
    let mut retry_counts = BTreeMap::new();
    for (f, bound) in functions.iter().enumerate() {
        let mut cells = Vec::with_capacity(n_rows);
        for (row, states) in grid.iter().enumerate() {
            match &states[f] {
                CellState::Ok { text, retries } => {
                    if *retries > 0 {
                        retry_counts.insert((row, bound.function.name.clone()), *retries);
                    }
                    cells.push(Value::text(text));
                }
                CellState::Failed { reason, retries } => {
                    failures.push(FailureEntry {
                        row,
                        function: bound.function.name.clone(),
                        reason: reason.clone(),
                        retries: *retries,
                    });
                    cells.push(Value::Missing);
                }
                CellState::Pending => cells.push(Value::Missing),
            }
        }
        table = table.with_column(&bound.function.name, cells)?;
    }

    Ok(GenerateOutcome {
        table,
        failures,
        aborted,
        retry_counts,
    })
}
