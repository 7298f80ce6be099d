//! Shared inputs for the benchmarks.

use mqm_core::synth::{self, SynthConfig};
use mqm_core::Corpus;

/// Ten systems over `n_docs` documents of 5 to 15 segments, three raters each.
pub fn corpus(n_docs: usize) -> Corpus {
    synth::corpus(&SynthConfig {
        systems: (0..10).map(|i| (format!("sys{i}"), 0.2 + 0.15 * i as f64)).collect(),
        n_docs,
        min_segments: 5,
        max_segments: 15,
        ..SynthConfig::default()
    })
}
