//! Synthetic opcode corpora with planted structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Opcodes the grammars draw from. All are fixed-width, non-branching
/// into payloads, and covered by [`crate::dex::width`].
pub const GRAMMAR_OPCODES: [u8; 24] = [
    0x01, 0x07, 0x0a, 0x0c, 0x0e, 0x12, 0x13, 0x1a, 0x1f, 0x22, 0x28, 0x33, 0x38, 0x39, 0x44, 0x52, 0x54, 0x59,
    0x62, 0x6e, 0x70, 0x71, 0x90, 0xd8,
];

/// First-order Markov chain over opcodes.
#[derive(Debug, Clone)]
pub struct Grammar {
    opcodes: Vec<u8>,
    /// Cumulative transition weights, one row per state.
    cumulative: Vec<Vec<f64>>,
}

impl Grammar {
    /// Random transition matrix whose rows concentrate on a few successors.
    pub fn random(opcodes: &[u8], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cumulative = opcodes
            .iter()
            .map(|_| {
                let mut acc = 0.0;
                opcodes
                    .iter()
                    .map(|_| {
                        acc += rng.gen::<f64>().powi(4);
                        acc
                    })
                    .collect()
            })
            .collect();
        Grammar {
            opcodes: opcodes.to_vec(),
            cumulative,
        }
    }

    pub fn opcodes(&self) -> &[u8] {
        &self.opcodes
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<u8> {
        let mut state = rng.gen_range(0..self.opcodes.len());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.opcodes[state]);
            let row = &self.cumulative[state];
            let x = rng.gen::<f64>() * row[row.len() - 1];
            state = row.partition_point(|&c| c <= x).min(row.len() - 1);
        }
        out
    }
}

pub fn benign_grammar() -> Grammar {
    Grammar::random(&GRAMMAR_OPCODES, 0xb0b)
}

pub fn malicious_grammar() -> Grammar {
    Grammar::random(&GRAMMAR_OPCODES, 0xbad)
}

/// `n_per_class` programs from each grammar, interleaved benign (0) then
/// malicious (1), lengths uniform in `lengths`.
pub fn labelled_programs(n_per_class: usize, lengths: std::ops::Range<usize>, seed: u64) -> Vec<(Vec<u8>, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grammars = [benign_grammar(), malicious_grammar()];
    let mut out = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for (label, g) in grammars.iter().enumerate() {
            let len = rng.gen_range(lengths.clone());
            out.push((g.sample(len, &mut rng), label as u8));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ClusteringCorpus {
    pub tokens: Vec<u8>,
    pub groups: [Vec<u8>; 2],
}

/// Runs of 5..=30 tokens, each run drawn uniformly from one of two disjoint
/// ten-opcode groups, so tokens only share contexts with their own group
/// except at run boundaries.
pub fn clustering_corpus(n_tokens: usize, seed: u64) -> ClusteringCorpus {
    let groups = [
        vec![0x01, 0x07, 0x0a, 0x0c, 0x12, 0x13, 0x1a, 0x1f, 0x22, 0x28],
        vec![0x44, 0x52, 0x54, 0x59, 0x62, 0x6e, 0x70, 0x71, 0x90, 0xd8],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::with_capacity(n_tokens);
    while tokens.len() < n_tokens {
        let g = &groups[rng.gen_range(0..2)];
        let run = rng.gen_range(5..=30).min(n_tokens - tokens.len());
        tokens.extend((0..run).map(|_| g[rng.gen_range(0..g.len())]));
    }
    ClusteringCorpus { tokens, groups }
}
