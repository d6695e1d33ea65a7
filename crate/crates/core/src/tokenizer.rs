//! Term-level vocabulary and the two input layouts fed to the encoder.
//!
//! ```text
//! single: [CLS] t1 .. tn [SEP]                      segments 0 .. 0
//! pair:   [CLS] t1 .. tn [SEP] s1 .. sm [SEP]       segments 0 .. 0 1 .. 1
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::{Error, KeepMask, Query, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

pub const DEFAULT_SINGLE_MAX_LEN: usize = 60;
pub const DEFAULT_PAIR_MAX_LEN: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, u32>,
    terms: Vec<String>,
}

impl Vocab {
    /// Terms occurring at least `min_freq` times get ids from 4 upward,
    /// ordered by descending frequency then ascending term.
    pub fn build(corpus: &[Query], min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for q in corpus {
            for t in q.terms() {
                *freq.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> =
            freq.into_iter().filter(|&(_, n)| n >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Ok(Self::from_terms(ranked.into_iter().map(|(t, _)| t.to_owned())))
    }

    fn from_terms(terms: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(terms);
        let ids = all
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { ids, terms: all }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, term: &str) -> u32 {
        self.ids.get(term).copied().unwrap_or(UNK)
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    /// Header line with the vocabulary size, then `term \t id` for every
    /// non-reserved entry.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.len())?;
        for (i, t) in self.terms.iter().enumerate().skip(RESERVED.len()) {
            writeln!(w, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Format {
            what: "vocabulary",
            line,
            msg,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| err(1, "missing header".into()))??;
        let size: usize = header
            .trim()
            .parse()
            .map_err(|_| err(1, format!("bad size `{header}`")))?;
        let mut terms = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let (term, id) = line
                .split_once('\t')
                .ok_or_else(|| err(lineno, "expected `term\\tid`".into()))?;
            let id: usize = id.parse().map_err(|_| err(lineno, format!("bad id `{id}`")))?;
            if id != RESERVED.len() + terms.len() {
                return Err(err(lineno, format!("id {id} out of sequence")));
            }
            terms.push(term.to_owned());
        }
        let vocab = Self::from_terms(terms);
        if vocab.len() != size {
            return Err(err(1, format!("header says {size} entries, found {}", vocab.len())));
        }
        Ok(vocab)
    }
}

/// Encoder input: token ids, segment ids, and where each surviving
/// original-query term sits in `ids`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    /// `term_spans[i]` is the position of original term `i`. Shorter than the
    /// query when truncation dropped terms.
    pub term_spans: Vec<usize>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Surface forms of the first-segment terms (unknown ids as `[UNK]`).
    pub fn decode(&self, vocab: &Vocab) -> Vec<String> {
        self.term_spans
            .iter()
            .map(|&p| vocab.term(self.ids[p]).unwrap_or("[UNK]").to_owned())
            .collect()
    }
}

pub fn encode_single(q: &Query, vocab: &Vocab, max_len: usize) -> TokenSeq {
    assert!(max_len >= 3, "max_len must leave room for a term");
    let keep = q.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(CLS);
    ids.extend(q.terms()[..keep].iter().map(|t| vocab.id(t)));
    ids.push(SEP);
    TokenSeq {
        segments: vec![0; ids.len()],
        term_spans: (1..=keep).collect(),
        ids,
    }
}

/// Pair layout. When too long, the tail of the sub-query is dropped first,
/// then the tail of the original.
pub fn encode_pair(q: &Query, sub: &KeepMask, vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    assert!(max_len >= 4, "max_len must leave room for a term");
    if sub.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            actual: sub.len(),
        });
    }
    let sub_terms: Vec<u32> = q
        .terms()
        .iter()
        .zip(sub.bits())
        .filter(|(_, &k)| k)
        .map(|(t, _)| vocab.id(t))
        .collect();
    let budget = max_len - 3;
    let keep_sub = sub_terms.len().min(budget.saturating_sub(q.len()));
    let keep_q = q.len().min(budget - keep_sub);

    let mut ids = Vec::with_capacity(keep_q + keep_sub + 3);
    ids.push(CLS);
    ids.extend(q.terms()[..keep_q].iter().map(|t| vocab.id(t)));
    ids.push(SEP);
    let first = ids.len();
    ids.extend(&sub_terms[..keep_sub]);
    ids.push(SEP);
    let mut segments = vec![0u8; ids.len()];
    segments[first..].fill(1);
    Ok(TokenSeq {
        ids,
        segments,
        term_spans: (1..=keep_q).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> Query {
        Query::parse(s).unwrap()
    }

    #[test]
    fn build_orders_by_frequency_then_term() {
        let v = Vocab::build(&[q("a b"), q("a")], 1).unwrap();
        assert_eq!((v.id("a"), v.id("b"), v.len()), (4, 5, 6));
        let v = Vocab::build(&[q("z y"), q("y z"), q("m")], 1).unwrap();
        assert_eq!((v.id("y"), v.id("z"), v.id("m")), (4, 5, 6));
        assert_eq!(Vocab::build(&[q("a b"), q("a")], 3).unwrap().len(), 4);
        assert!(Vocab::build(&[], 1).is_err());
    }

    #[test]
    fn reserved_names_in_corpus_do_not_collide() {
        let v = Vocab::build(&[q("[CLS] a")], 1).unwrap();
        assert!(v.id("[CLS]") >= 4);
    }

    #[test]
    fn single_layout() {
        let v = Vocab::build(&[q("a b")], 1).unwrap();
        let s = encode_single(&q("a b"), &v, 60);
        assert_eq!(s.ids, vec![CLS, 4, 5, SEP]);
        assert_eq!(s.segments, vec![0; 4]);
        assert_eq!(s.term_spans, vec![1, 2]);
        assert_eq!(encode_single(&q("a zz"), &v, 60).ids[2], UNK);

        let long = Query::new((0..70).map(|i| format!("t{i}"))).unwrap();
        let s = encode_single(&long, &v, 60);
        assert_eq!(s.len(), 60);
        assert_eq!(s.term_spans.len(), 58);
    }

    #[test]
    fn pair_layout() {
        let v = Vocab::build(&[q("a b c")], 1).unwrap();
        let (a, b, c) = (v.id("a"), v.id("b"), v.id("c"));
        let m = KeepMask::new(vec![true, false, true]).unwrap();
        let s = encode_pair(&q("a b c"), &m, &v, 120).unwrap();
        assert_eq!(s.ids, vec![CLS, a, b, c, SEP, a, c, SEP]);
        assert_eq!(s.segments, vec![0, 0, 0, 0, 0, 1, 1, 1]);

        let s = encode_pair(&q("a b c"), &KeepMask::all(3), &v, 120).unwrap();
        assert_eq!(&s.ids[5..8], &[a, b, c]);
    }

    #[test]
    fn pair_truncation_drops_sub_tail_first() {
        let v = Vocab::build(&[q("a b c")], 1).unwrap();
        let big = Query::new((0..70).map(|i| format!("t{i}"))).unwrap();
        let m = KeepMask::all(70);
        let s = encode_pair(&big, &m, &v, 120).unwrap();
        assert_eq!(s.len(), 120);
        assert_eq!(s.term_spans.len(), 70);
        assert_eq!(s.segments.iter().filter(|&&g| g == 1).count(), 47 + 1);

        let huge = Query::new((0..130).map(|i| format!("t{i}"))).unwrap();
        let s = encode_pair(&huge, &KeepMask::all(130), &v, 120).unwrap();
        assert_eq!(s.len(), 120);
        assert_eq!(s.term_spans.len(), 117);
        assert_eq!(&s.ids[118..], &[SEP, SEP]);
    }

    #[test]
    fn vocab_file_round_trip_and_errors() {
        let v = Vocab::build(&[q("a b c a")], 1).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "7\na\t4\nb\t5\nc\t6\n");
        assert_eq!(Vocab::read(buf.as_slice()).unwrap(), v);
        assert!(Vocab::read("8\na\t4\n".as_bytes()).is_err());
        assert!(Vocab::read("5\na\t7\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn decode_recovers_in_vocab_terms(terms in prop::collection::vec(0u8..12, 1..30), max_len in 3usize..40) {
            let corpus = Query::new(terms.iter().filter(|&&t| t < 8).map(|t| format!("w{t}")).chain(["w0".to_owned()])).unwrap();
            let v = Vocab::build(&[corpus], 1).unwrap();
            let query = Query::new(terms.iter().map(|t| format!("w{t}"))).unwrap();
            let s = encode_single(&query, &v, max_len);
            let expect: Vec<String> = query.terms().iter().take(max_len - 2)
                .map(|t| if v.id(t) == UNK { "[UNK]".to_owned() } else { t.clone() })
                .collect();
            prop_assert_eq!(s.decode(&v), expect);
            prop_assert!(s.ids.iter().filter(|&&i| i != CLS && i != SEP).all(|&i| i == UNK || i >= 4));
        }

        #[test]
        fn pair_length_without_truncation(bits in prop::collection::vec(any::<bool>(), 1..20)) {
            let n = bits.len();
            let mut bits = bits;
            bits[0] = true;
            let query = Query::new((0..n).map(|i| format!("t{i}"))).unwrap();
            let v = Vocab::build(std::slice::from_ref(&query), 1).unwrap();
            let m = KeepMask::new(bits).unwrap();
            let s = encode_pair(&query, &m, &v, 120).unwrap();
            prop_assert_eq!(s.len(), n + m.kept() + 3);
            prop_assert_eq!(s.segments.len(), s.ids.len());
        }
    }
}
