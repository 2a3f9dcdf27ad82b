//! Deterministic synthetic extractor with known ground truth.
//!
//! The oracle plays the role of the remote LLM for verification runs: it
//! reads the planted headlines out of the rendered prompt, recovers the
//! hidden event, and emits features whose relationship to the event is exact
//! and documented. Noise is derived from the prompt content hash, so the
//! oracle is stateless: identical prompts always produce identical replies.

use crate::hash::fnv1a64;
use crate::rng::{normal, stream, Stream};
use crate::synthmarket::HiddenEvent;

use super::{ExtractError, Extractor, StockFeatures};

/// Feature rules, given a planted event (or none):
///
/// - no event: the all-zero vector
/// - sentiment  = clamp(direction * strength + N(0, sigma), -1, 1)
/// - impact     = clamp(strength + N(0, sigma), 0, 1)
/// - conflicting_signals = clamp(0.3 * (1 - strength) + 0.5 * N(0, sigma), 0, 1)
/// - news_novelty        = clamp(0.4 + 0.6 * strength + 0.5 * N(0, sigma), 0, 1)
///
/// Draw order is fixed (sentiment, impact, conflicting, novelty) so a seeded
/// stream reproduces exactly.
pub fn oracle_extract(
    event: Option<&HiddenEvent>,
    noise_sigma: f64,
    rng: &mut Stream,
) -> StockFeatures {
    let event = match event {
        Some(e) => e,
        None => return StockFeatures::zero(),
    };
    let dir = event.true_alpha_direction as f64;
    let s = event.strength;
    let mut noise = || {
        if noise_sigma > 0.0 {
            noise_sigma * normal(rng)
        } else {
            0.0
        }
    };
    let sentiment = (dir * s + noise()).clamp(-1.0, 1.0);
    let impact = (s + noise()).clamp(0.0, 1.0);
    let conflicting_signals = (0.3 * (1.0 - s) + 0.5 * noise()).clamp(0.0, 1.0);
    let news_novelty = (0.4 + 0.6 * s + 0.5 * noise()).clamp(0.0, 1.0);
    StockFeatures {
        sentiment,
        impact,
        conflicting_signals,
        news_novelty,
        reasoning: format!("oracle: direction {dir:+.0} strength {s:.6}"),
    }
}

/// Extractor client backed by [`oracle_extract`].
///
/// A prompt line `NOISE_SIGMA=<x>` overrides the configured noise for that
/// call. Templates carrying the marker emulate prompts of different
/// extraction quality, which is what the optimization loop selects over.
pub struct OracleExtractor {
    pub noise_sigma: f64,
    pub seed: u64,
}

impl OracleExtractor {
    pub fn new(noise_sigma: f64, seed: u64) -> Self {
        Self { noise_sigma, seed }
    }
}

impl Extractor for OracleExtractor {
    fn complete(&self, prompt: &str) -> Result<String, ExtractError> {
        let event = parse_planted_event(prompt);
        let sigma = prompt
            .lines()
            .find_map(|l| l.trim().strip_prefix("NOISE_SIGMA="))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| *s >= 0.0)
            .unwrap_or(self.noise_sigma);
        let mut rng = stream(self.seed, "oracle", fnv1a64(prompt.as_bytes()));
        let features = oracle_extract(event.as_ref(), sigma, &mut rng);
        Ok(serde_json::json!({
            "sentiment": features.sentiment,
            "impact": features.impact,
            "conflicting_signals": features.conflicting_signals,
            "news_novelty": features.news_novelty,
            "reasoning": features.reasoning,
        })
        .to_string())
    }
}

/// Recover the planted event from a rendered prompt. The first line shaped
/// like `... BULLISH surprise of magnitude 0.123456 for TICKER` wins; prompts
/// without one (real news, empty bundles) yield `None`.
fn parse_planted_event(prompt: &str) -> Option<HiddenEvent> {
    for line in prompt.lines() {
        let Some(mag_pos) = line.find(" surprise of magnitude ") else {
            continue;
        };
        let direction: i8 = if line[..mag_pos].ends_with("BULLISH") {
            1
        } else if line[..mag_pos].ends_with("BEARISH") {
            -1
        } else {
            continue;
        };
        let rest = &line[mag_pos + " surprise of magnitude ".len()..];
        let (strength_str, ticker) = rest.split_once(" for ")?;
        let strength: f64 = strength_str.trim().parse().ok()?;
        // Timestamp prefix "- <rfc3339> ..." carries the event date.
        let date = line
            .trim_start()
            .strip_prefix("- ")
            .and_then(|s| s.split_whitespace().next())
            .and_then(|ts| chrono::DateTime::parse_from_rfc3339(ts).ok())
            .map(|ts| ts.date_naive())?;
        let horizon_days = prompt
            .lines()
            .find_map(|l| l.trim().strip_prefix("horizon_days="))
            .and_then(|v| v.parse().ok())
            .unwrap_or(5);
        return Some(HiddenEvent {
            ticker: ticker.trim().to_string(),
            date,
            true_alpha_direction: direction,
            strength,
            horizon_days,
            alpha_per_day: 0.0,
        });
    }
    None
}
