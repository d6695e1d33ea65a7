//! Synthetic search logs.
//!
//! Each unique original query interleaves distinct content terms with at
//! least one distinct noise term; its gold reduction is the content terms in
//! order. A unique query is observed in one or more sessions. With
//! probability `label_noise_rate` a session's stored reduction is corrupted:
//! one random content term is deleted and the noise terms are kept.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{Query, QueryPair};
use crate::{Error, Result};

/// Where noise terms are inserted among the content terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePlacement {
    /// Uniformly random insertion points, ends included.
    Anywhere,
    /// Appended after the content terms.
    Trailing,
    /// Never in last position: every noise term precedes the final content term.
    Interior,
}

impl std::str::FromStr for NoisePlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anywhere" => Ok(Self::Anywhere),
            "trailing" => Ok(Self::Trailing),
            "interior" => Ok(Self::Interior),
            other => Err(Error::Config(format!("unknown noise placement `{other}`"))),
        }
    }
}

impl std::fmt::Display for NoisePlacement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Anywhere => "anywhere",
            Self::Trailing => "trailing",
            Self::Interior => "interior",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub content_vocab_size: usize,
    pub noise_vocab_size: usize,
    pub min_content: usize,
    pub max_content: usize,
    /// Raised to 1 when 0: a pair needs at least one deletable term.
    pub min_noise: usize,
    pub max_noise: usize,
    pub n_sessions: usize,
    /// Each unique query is observed in `1..=max_sessions_per_query` sessions.
    pub max_sessions_per_query: usize,
    pub label_noise_rate: f64,
    pub placement: NoisePlacement,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            content_vocab_size: 400,
            noise_vocab_size: 40,
            min_content: 1,
            max_content: 4,
            min_noise: 1,
            max_noise: 2,
            n_sessions: 5000,
            max_sessions_per_query: 4,
            label_noise_rate: 0.0,
            placement: NoisePlacement::Anywhere,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.min_content == 0 {
            return fail("content range allows queries with zero content terms".into());
        }
        if self.max_content < self.min_content {
            return fail(format!(
                "max_content {} < min_content {}",
                self.max_content, self.min_content
            ));
        }
        if self.max_noise < self.min_noise.max(1) {
            return fail(format!(
                "max_noise {} must be at least max(min_noise, 1) = {}",
                self.max_noise,
                self.min_noise.max(1)
            ));
        }
        if self.content_vocab_size < self.max_content {
            return fail("content vocabulary smaller than max_content".into());
        }
        if self.noise_vocab_size < self.max_noise {
            return fail("noise vocabulary smaller than max_noise".into());
        }
        if self.max_sessions_per_query == 0 {
            return fail("max_sessions_per_query must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.label_noise_rate) {
            return fail(format!("label_noise_rate {} outside [0, 1)", self.label_noise_rate));
        }
        Ok(())
    }
}

/// Generated pairs, with a flag per pair marking corrupted labels.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub pairs: Vec<QueryPair>,
    pub corrupted: Vec<bool>,
}

impl SynthCorpus {
    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ba", "de", "fo", "gu", "ha", "ji", "pe", "zo",
];

/// Deterministic pronounceable surface form for a term index.
fn word(prefix: &str, mut i: usize) -> String {
    let mut s = String::from(prefix);
    loop {
        s.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
        if i == 0 {
            break s;
        }
    }
}

fn content_term(i: usize) -> String {
    word("", i)
}

fn noise_term(i: usize) -> String {
    word("x", i)
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let min_noise = cfg.min_noise.max(1);
    let mut pairs = Vec::with_capacity(cfg.n_sessions);
    let mut corrupted = Vec::with_capacity(cfg.n_sessions);
    let mut query_no = 0usize;

    while pairs.len() < cfg.n_sessions {
        let n_content = rng.random_range(cfg.min_content..=cfg.max_content);
        let n_noise = rng.random_range(min_noise..=cfg.max_noise);
        let content: Vec<String> = index::sample(&mut rng, cfg.content_vocab_size, n_content)
            .into_iter()
            .map(content_term)
            .collect();
        // `true` marks a content slot.
        let mut slots: Vec<(bool, String)> = content.iter().map(|t| (true, t.clone())).collect();
        for i in index::sample(&mut rng, cfg.noise_vocab_size, n_noise) {
            let at = match cfg.placement {
                NoisePlacement::Anywhere => rng.random_range(0..=slots.len()),
                NoisePlacement::Trailing => slots.len(),
                NoisePlacement::Interior => rng.random_range(0..slots.len()),
            };
            slots.insert(at, (false, noise_term(i)));
        }
        let original = Query::new(slots.iter().map(|(_, t)| t.clone()))?;
        let clean = Query::new(content)?;

        let sessions = rng
            .random_range(1..=cfg.max_sessions_per_query)
            .min(cfg.n_sessions - pairs.len());
        for s in 0..sessions {
            let session_id = format!("q{query_no:06}s{s}");
            let corrupt = rng.random_bool(cfg.label_noise_rate);
            let reduced = if corrupt {
                let victim = rng.random_range(0..n_content);
                let mut seen = 0;
                Query::new(slots.iter().filter_map(|(is_content, t)| {
                    if *is_content {
                        seen += 1;
                        (seen - 1 != victim).then(|| t.clone())
                    } else {
                        Some(t.clone())
                    }
                }))?
            } else {
                clean.clone()
            };
            pairs.push(QueryPair::new(session_id, original.clone(), reduced)?);
            corrupted.push(corrupt);
        }
        query_no += 1;
    }
    Ok(SynthCorpus { pairs, corrupted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querylog::gold_mask;

    #[test]
    fn terms_are_disjoint_between_vocabularies() {
        for i in 0..500 {
            assert!(!content_term(i).starts_with('x'));
            assert!(noise_term(i).starts_with('x'));
        }
        assert_ne!(content_term(16), content_term(1));
    }

    #[test]
    fn zero_noise_is_raised_to_one() {
        let cfg = SynthConfig {
            min_noise: 0,
            max_noise: 1,
            n_sessions: 200,
            ..Default::default()
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        assert!(corpus.pairs.iter().all(|p| p.original().len() > p.reduced().len()));
    }

    #[test]
    fn clean_labels_remove_exactly_the_noise() {
        let corpus = generate_synthetic(&SynthConfig {
            n_sessions: 500,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(corpus.pairs.len(), 500);
        assert_eq!(corpus.corrupted_count(), 0);
        for p in &corpus.pairs {
            let mask = gold_mask(p);
            for (t, &keep) in p.original().terms().iter().zip(mask.bits()) {
                assert_eq!(keep, !t.starts_with('x'), "{p:?}");
            }
        }
    }

    #[test]
    fn placement_rules() {
        for placement in [NoisePlacement::Trailing, NoisePlacement::Interior] {
            let corpus = generate_synthetic(&SynthConfig {
                n_sessions: 300,
                placement,
                ..Default::default()
            })
            .unwrap();
            for p in &corpus.pairs {
                let last_is_noise = p.original().terms().last().unwrap().starts_with('x');
                assert_eq!(last_is_noise, placement == NoisePlacement::Trailing);
            }
        }
    }

    #[test]
    fn corruption_deletes_one_content_term_and_keeps_noise() {
        let corpus = generate_synthetic(&SynthConfig {
            n_sessions: 1000,
            label_noise_rate: 0.2,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let n = corpus.corrupted_count();
        // Binomial(1000, 0.2): mean 200, sd ~12.6.
        assert!((150..=250).contains(&n), "{n}");
        for (p, &c) in corpus.pairs.iter().zip(&corpus.corrupted) {
            let noise = p.original().terms().iter().filter(|t| t.starts_with('x')).count();
            let kept_noise = p.reduced().terms().iter().filter(|t| t.starts_with('x')).count();
            if c {
                assert_eq!(kept_noise, noise);
                assert_eq!(p.reduced().len(), p.original().len() - 1);
            } else {
                assert_eq!(kept_noise, 0);
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig {
            n_sessions: 1000,
            seed: 42,
            label_noise_rate: 0.1,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.corrupted, b.corrupted);
        let c = generate_synthetic(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn invalid_configs() {
        let bad = |cfg: SynthConfig| generate_synthetic(&cfg).is_err();
        assert!(bad(SynthConfig { min_content: 0, ..Default::default() }));
        assert!(bad(SynthConfig { max_content: 0, ..Default::default() }));
        assert!(bad(SynthConfig { label_noise_rate: 1.0, ..Default::default() }));
        assert!(bad(SynthConfig { min_noise: 0, max_noise: 0, ..Default::default() }));
        assert!(bad(SynthConfig { content_vocab_size: 2, ..Default::default() }));
    }
}
