//! Prompt mutation / evaluation / selection loop with adequacy gates.
//!
//! One round: a proposer suggests a mutated template, features are extracted
//! over the optimization window, the signal-metric suite is computed at the
//! working horizon, and the four adequacy gates are judged. After the round
//! budget the best gate-passing candidate is frozen; if nothing passes, the
//! best-composite candidate is returned rejected with a NoPass flag.
//! Out-of-sample validation recomputes metrics on a later disjoint window
//! and never re-selects.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backfill::{BackfillError, EventStore};
use crate::extract::{ExtractEngine, ExtractError, MacroFeatures, PromptTemplate};
use crate::metrics::{
    forward_returns, signal_metrics, CompositeWeights, MetricsError, SignalMetrics,
    DEFAULT_HORIZON, DEFAULT_MIN_NAMES,
};
use crate::synthmarket::MarketData;
use crate::time::{DayRange, TradingCalendar};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid loop config: {0}")]
    Config(String),
    #[error("scripted proposer has no mutations left")]
    ProposerExhausted,
    #[error("proposer network error: {0}")]
    Network(String),
    #[error("candidate is not frozen")]
    NotFrozen,
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Backfill(#[from] BackfillError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Adequacy gate thresholds. Coverage, IC-IR and hit rate are inclusive
/// (>=); the spread gate is strict (>).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub signal_coverage_min: f64,
    pub ic_ir_min: f64,
    pub quintile_spread_min: f64,
    pub hit_rate_min: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            signal_coverage_min: 0.25,
            ic_ir_min: 0.05,
            quintile_spread_min: 0.0,
            hit_rate_min: 0.52,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    pub name: String,
    pub threshold: f64,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub gates: Vec<GateCheck>,
    pub overall_pass: bool,
}

/// Judge the four adequacy gates.
pub fn evaluate_gates(metrics: &SignalMetrics, thresholds: &GateThresholds) -> GateResult {
    let gates = vec![
        GateCheck {
            name: "signal_coverage".to_string(),
            threshold: thresholds.signal_coverage_min,
            value: metrics.signal_coverage,
            pass: metrics.signal_coverage >= thresholds.signal_coverage_min,
        },
        GateCheck {
            name: "ic_ir_5d".to_string(),
            threshold: thresholds.ic_ir_min,
            value: metrics.ic_report.ic_ir,
            pass: metrics.ic_report.ic_ir >= thresholds.ic_ir_min,
        },
        GateCheck {
            name: "quintile_spread".to_string(),
            threshold: thresholds.quintile_spread_min,
            value: metrics.quintile_spread,
            pass: metrics.quintile_spread > thresholds.quintile_spread_min,
        },
        GateCheck {
            name: "hit_rate".to_string(),
            threshold: thresholds.hit_rate_min,
            value: metrics.hit_rate,
            pass: metrics.hit_rate >= thresholds.hit_rate_min,
        },
    ];
    GateResult {
        overall_pass: gates.iter().all(|g| g.pass),
        gates,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Proposed,
    Evaluated,
    Frozen,
    Rejected,
}

/// One row of the mutation ledger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub template: PromptTemplate,
    pub hypothesis: String,
    pub metrics: Option<SignalMetrics>,
    pub gate_result: Option<GateResult>,
    pub round: u32,
    pub status: CandidateStatus,
    /// Rejection reason or duplicate flag, when applicable.
    pub note: Option<String>,
}

impl PromptCandidate {
    pub fn proposed(template: PromptTemplate, hypothesis: impl Into<String>, round: u32) -> Self {
        Self {
            template,
            hypothesis: hypothesis.into(),
            metrics: None,
            gate_result: None,
            round,
            status: CandidateStatus::Proposed,
            note: None,
        }
    }
}

/// How the winner is picked among gate-passing candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    MaxComposite,
    MaxIcIr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    pub optimization_window: DayRange,
    pub oos_window: DayRange,
    pub universe: Vec<String>,
    pub max_rounds: u32,
    pub thresholds: GateThresholds,
    pub weights: CompositeWeights,
    pub horizon_days: usize,
    pub min_names: usize,
    pub selection: SelectionRule,
}

impl LoopConfig {
    pub fn new(
        optimization_window: DayRange,
        oos_window: DayRange,
        universe: Vec<String>,
    ) -> Result<Self, LoopError> {
        if optimization_window.overlaps(&oos_window) {
            return Err(LoopError::Config(format!(
                "windows overlap: optimization {optimization_window:?}, oos {oos_window:?}"
            )));
        }
        if oos_window.start <= optimization_window.end {
            return Err(LoopError::Config(
                "oos window must start strictly after the optimization window".to_string(),
            ));
        }
        if universe.is_empty() {
            return Err(LoopError::Config("universe is empty".to_string()));
        }
        Ok(Self {
            optimization_window,
            oos_window,
            universe,
            max_rounds: 5,
            thresholds: GateThresholds::default(),
            weights: CompositeWeights::default(),
            horizon_days: DEFAULT_HORIZON,
            min_names: DEFAULT_MIN_NAMES,
            selection: SelectionRule::MaxComposite,
        })
    }
}

/// Everything evaluation needs: the store for bundles, the extraction
/// engine, and the market for forward returns and macro rows.
pub struct LoopContext<'a> {
    pub store: &'a EventStore,
    pub calendar: &'a TradingCalendar,
    pub engine: &'a ExtractEngine,
    pub market: &'a MarketData,
}

impl LoopContext<'_> {
    fn macro_at(&self, date: chrono::NaiveDate) -> MacroFeatures {
        self.market
            .calendar
            .index_of(date)
            .ok()
            .and_then(|i| self.market.macro_series.get(i).copied())
            .unwrap_or_default()
    }
}

/// Extract over `window` and compute the signal suite at the configured
/// horizon.
fn window_metrics(
    config: &LoopConfig,
    ctx: &LoopContext<'_>,
    template: &PromptTemplate,
    window: &DayRange,
) -> Result<SignalMetrics, LoopError> {
    let bundles = ctx
        .store
        .query_bundles(&config.universe, window, ctx.calendar)?;
    let panel = ctx
        .engine
        .extract_panel(template, &bundles, &|d| ctx.macro_at(d))?;
    let rets = forward_returns(ctx.market, config.horizon_days)?;
    Ok(signal_metrics(&panel, &rets, config.weights, config.min_names)?)
}

/// Evaluate a proposed candidate on the optimization window. Extraction
/// failures above the engine ceiling reject the candidate instead of
/// aborting the loop; the extraction cache makes re-evaluation free.
pub fn evaluate_candidate(
    mut candidate: PromptCandidate,
    config: &LoopConfig,
    ctx: &LoopContext<'_>,
) -> Result<PromptCandidate, LoopError> {
    match window_metrics(config, ctx, &candidate.template, &config.optimization_window) {
        Ok(metrics) => {
            candidate.gate_result = Some(evaluate_gates(&metrics, &config.thresholds));
            candidate.metrics = Some(metrics);
            candidate.status = CandidateStatus::Evaluated;
        }
        Err(LoopError::Extract(e @ ExtractError::Panel { .. })) => {
            candidate.status = CandidateStatus::Rejected;
            candidate.note = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(candidate)
}

/// Metric feedback handed to the proposer after each round.
#[derive(Debug, Clone, Serialize)]
pub struct Feedback<'a> {
    pub metrics: &'a SignalMetrics,
    pub gates: &'a GateResult,
}

impl Feedback<'_> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("feedback serializes")
    }
}

/// A proposed structural mutation of the current template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposedMutation {
    pub id: String,
    pub body: String,
    pub hypothesis: String,
}

pub trait Proposer {
    fn propose(
        &mut self,
        current: &PromptCandidate,
        feedback: &Feedback<'_>,
    ) -> Result<ProposedMutation, LoopError>;
}

/// Plays a fixed, ordered list of mutations.
pub struct ScriptedProposer {
    mutations: Vec<ProposedMutation>,
    cursor: usize,
}

impl ScriptedProposer {
    pub fn new(mutations: Vec<ProposedMutation>) -> Self {
        Self {
            mutations,
            cursor: 0,
        }
    }

    /// Ordered directory of template files; hypothesis = template id.
    pub fn from_dir(dir: &Path) -> Result<Self, LoopError> {
        let templates = PromptTemplate::load_dir(dir)?;
        Ok(Self::new(
            templates
                .into_iter()
                .map(|t| ProposedMutation {
                    hypothesis: t.id.clone(),
                    id: t.id,
                    body: t.body,
                })
                .collect(),
        ))
    }
}

impl Proposer for ScriptedProposer {
    fn propose(
        &mut self,
        _current: &PromptCandidate,
        _feedback: &Feedback<'_>,
    ) -> Result<ProposedMutation, LoopError> {
        let next = self
            .mutations
            .get(self.cursor)
            .cloned()
            .ok_or(LoopError::ProposerExhausted)?;
        self.cursor += 1;
        Ok(next)
    }
}

/// Remote meta-optimizer: POSTs the current prompt plus full metric
/// feedback, reads back mutated prompt text.
pub struct HttpProposer {
    pub endpoint: String,
    pub api_key_env: Option<String>,
}

impl Proposer for HttpProposer {
    fn propose(
        &mut self,
        current: &PromptCandidate,
        feedback: &Feedback<'_>,
    ) -> Result<ProposedMutation, LoopError> {
        let mut req = ureq::post(&self.endpoint);
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| LoopError::Network(format!("env var {var} not set")))?;
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({
            "prompt": current.template.body,
            "round": current.round,
            "feedback": feedback,
        });
        let reply: serde_json::Value = req
            .send_json(body)
            .map_err(|e| LoopError::Network(e.to_string()))?
            .into_json()
            .map_err(|e| LoopError::Network(e.to_string()))?;
        let text = reply
            .get("body")
            .or_else(|| reply.get("prompt"))
            .or_else(|| reply.pointer("/choices/0/message/content"))
            .and_then(|v| v.as_str())
            .ok_or_else(|| LoopError::Network("reply has no prompt text".to_string()))?;
        let hypothesis = reply
            .get("hypothesis")
            .and_then(|v| v.as_str())
            .unwrap_or("remote mutation")
            .to_string();
        Ok(ProposedMutation {
            id: format!("{}-r{}", current.template.id, current.round + 1),
            body: text.to_string(),
            hypothesis,
        })
    }
}

/// Ask the proposer for the next candidate. Returns `None` when the
/// proposal is a content-hash duplicate of something already in the ledger.
pub fn propose(
    proposer: &mut dyn Proposer,
    current: &PromptCandidate,
    seen_hashes: &HashSet<u64>,
    round: u32,
) -> Result<Option<PromptCandidate>, LoopError> {
    let metrics = current
        .metrics
        .as_ref()
        .ok_or_else(|| LoopError::Config("feedback requires an evaluated candidate".to_string()))?;
    let gates = current
        .gate_result
        .as_ref()
        .ok_or_else(|| LoopError::Config("feedback requires gate results".to_string()))?;
    let feedback = Feedback { metrics, gates };
    let mutation = proposer.propose(current, &feedback)?;
    let template = PromptTemplate::new(
        mutation.id,
        mutation.body,
        Some(current.template.id.clone()),
    )?;
    if seen_hashes.contains(&template.hash) {
        return Ok(None);
    }
    Ok(Some(PromptCandidate::proposed(
        template,
        mutation.hypothesis,
        round,
    )))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    /// Frozen winner, or the best-composite candidate (rejected) on NoPass.
    pub winner: PromptCandidate,
    pub ledger: Vec<PromptCandidate>,
    pub no_pass: bool,
}

/// Run the loop: evaluate the baseline, then propose/evaluate up to
/// `max_rounds` mutations. Among gate passers the winner has max score per
/// the selection rule (ties: earliest round, then template hash).
pub fn optimize(
    config: &LoopConfig,
    ctx: &LoopContext<'_>,
    baseline: PromptTemplate,
    proposer: &mut dyn Proposer,
) -> Result<OptimizeOutcome, LoopError> {
    let mut ledger: Vec<PromptCandidate> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();

    seen.insert(baseline.hash);
    let candidate = PromptCandidate::proposed(baseline, "baseline", 0);
    let evaluated = evaluate_candidate(candidate, config, ctx)?;
    ledger.push(evaluated);

    for round in 1..=config.max_rounds {
        let current = match ledger.iter().rev().find(|c| c.metrics.is_some()) {
            Some(c) => c.clone(),
            None => break,
        };
        match propose(proposer, &current, &seen, round) {
            Ok(Some(candidate)) => {
                seen.insert(candidate.template.hash);
                let evaluated = evaluate_candidate(candidate, config, ctx)?;
                ledger.push(evaluated);
            }
            Ok(None) => {
                let mut duplicate = current.clone();
                duplicate.round = round;
                duplicate.status = CandidateStatus::Rejected;
                duplicate.metrics = None;
                duplicate.gate_result = None;
                duplicate.note = Some("duplicate proposal skipped".to_string());
                ledger.push(duplicate);
            }
            Err(LoopError::ProposerExhausted) => break,
            Err(e) => return Err(e),
        }
    }

    let score = |c: &PromptCandidate| -> f64 {
        let m = c.metrics.as_ref().expect("scored candidates have metrics");
        match config.selection {
            SelectionRule::MaxComposite => m.composite,
            SelectionRule::MaxIcIr => m.ic_report.ic_ir,
        }
    };
    let better = |a: &PromptCandidate, b: &PromptCandidate| -> bool {
        // Higher score wins; ties to earliest round, then smallest hash.
        match score(a).partial_cmp(&score(b)).expect("finite scores") {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => (a.round, a.template.hash) < (b.round, b.template.hash),
        }
    };

    let pick = |pool: Vec<usize>, ledger: &[PromptCandidate]| -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in pool {
            best = match best {
                None => Some(i),
                Some(j) if better(&ledger[i], &ledger[j]) => Some(i),
                keep => keep,
            };
        }
        best
    };

    let passing: Vec<usize> = ledger
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            c.metrics.is_some() && c.gate_result.as_ref().is_some_and(|g| g.overall_pass)
        })
        .map(|(i, _)| i)
        .collect();

    let (winner_idx, no_pass) = if let Some(i) = pick(passing, &ledger) {
        ledger[i].status = CandidateStatus::Frozen;
        (i, false)
    } else {
        let evaluated: Vec<usize> = ledger
            .iter()
            .enumerate()
            .filter(|(_, c)| c.metrics.is_some())
            .map(|(i, _)| i)
            .collect();
        let i = pick(evaluated, &ledger)
            .ok_or_else(|| LoopError::Config("no candidate could be evaluated".to_string()))?;
        ledger[i].status = CandidateStatus::Rejected;
        (i, true)
    };

    Ok(OptimizeOutcome {
        winner: ledger[winner_idx].clone(),
        ledger,
        no_pass,
    })
}

/// Out-of-sample report: metrics on the OOS window plus which gates that
/// passed in-sample regressed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OosReport {
    pub metrics: SignalMetrics,
    pub gates: GateResult,
    pub regressed_gates: Vec<String>,
}

/// Recompute metrics for a frozen candidate on the OOS window. Never
/// mutates candidate status; reporting only.
pub fn validate_oos(
    candidate: &PromptCandidate,
    config: &LoopConfig,
    ctx: &LoopContext<'_>,
) -> Result<OosReport, LoopError> {
    if candidate.status != CandidateStatus::Frozen {
        return Err(LoopError::NotFrozen);
    }
    let metrics = window_metrics(config, ctx, &candidate.template, &config.oos_window)?;
    let gates = evaluate_gates(&metrics, &config.thresholds);
    let regressed_gates = candidate
        .gate_result
        .as_ref()
        .map(|in_sample| {
            in_sample
                .gates
                .iter()
                .zip(&gates.gates)
                .filter(|(a, b)| a.pass && !b.pass)
                .map(|(a, _)| a.name.clone())
                .collect()
        })
        .unwrap_or_default();
    Ok(OosReport {
        metrics,
        gates,
        regressed_gates,
    })
}

/// One candidate per line.
pub fn save_ledger(ledger: &[PromptCandidate], path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    for c in ledger {
        out.push_str(&serde_json::to_string(c).expect("candidate serializes"));
        out.push('\n');
    }
    crate::fsio::write_atomic_str(path, &out)
}

pub fn load_ledger(path: &Path) -> std::io::Result<Vec<PromptCandidate>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
