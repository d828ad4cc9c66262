//! Generated record sets with a known energy model, for exercising the
//! analysis without live hardware.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InferenceRecord, PromptFormat};
use crate::energy::per_token;
use crate::llm::DurationSource;

const WORDS: &[&str] = &[
    "explain", "the", "difference", "between", "a", "list", "and", "tuple", "in", "python", "write", "short",
    "poem", "about", "autumn", "leaves", "summarize", "following", "article", "quickly", "translate", "this",
    "sentence", "into", "french", "what", "is", "capital", "of", "australia", "describe", "beautiful", "sunset",
    "generate", "function", "that", "sorts", "numbers", "carefully", "international", "cooperation", "matters",
    "why", "do", "cats", "purr", "give", "three", "examples", "renewable", "energy", "sources",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    /// kWh per response token.
    pub kwh_per_token: f64,
    /// Relative noise half-width: energy is scaled by `1 + U(-noise, noise)`.
    pub noise: f64,
    pub min_tokens: u64,
    pub max_tokens: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { n: 2000, seed: 0, kwh_per_token: 1e-7, noise: 0.05, min_tokens: 10, max_tokens: 800 }
    }
}

/// Records whose energy is proportional to response length and independent
/// of the prompt.
pub fn linear_energy_records(spec: &SynthSpec) -> Vec<InferenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n)
        .map(|i| {
            let n_words = rng.gen_range(3..60);
            let mut prompt = String::new();
            for w in 0..n_words {
                if w > 0 {
                    prompt.push(' ');
                }
                prompt.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
                if rng.gen_bool(0.08) {
                    prompt.push('.');
                }
            }
            prompt.push('?');
            let tokens = rng.gen_range(spec.min_tokens..=spec.max_tokens);
            let eps = if spec.noise > 0.0 { rng.gen_range(-spec.noise..spec.noise) } else { 0.0 };
            let energy = spec.kwh_per_token * tokens as f64 * (1.0 + eps);
            // decode speed varies independently of the energy noise
            let response_duration_s = tokens as f64 * 0.02 * (1.0 + rng.gen_range(-0.2..0.2));
            let total_duration_s = response_duration_s + 0.1 + n_words as f64 * 0.001;
            InferenceRecord {
                record_id: i as u64,
                prompt_id: i,
                source_dataset: PromptFormat::Alpaca,
                model_name: "synthetic".into(),
                hardware_label: "none".into(),
                prompt_text: prompt,
                response_text: String::new(),
                prompt_token_length: n_words as u64,
                response_token_length: tokens,
                t_request_wall: 0,
                response_duration_s,
                total_duration_s,
                duration_source: DurationSource::Service,
                window_start_s: 0.0,
                window_end_s: total_duration_s,
                energy_llm_kwh: energy,
                energy_per_token_kwh: per_token(energy, tokens),
                energy_gpu_kwh: None,
                energy_monitor_kwh: None,
                coverage_fraction: 1.0,
                trace_refs: Vec::new(),
            }
        })
        .collect()
}
