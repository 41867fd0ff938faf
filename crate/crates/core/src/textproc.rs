//! Byte-pair-encoding vocabulary shared by the encoder and the decoder.
//!
//! Words are split on whitespace. The first symbol of every word carries the
//! [`WORD_MARKER`] prefix, so decoding can restore word boundaries exactly.
//! Because encoder and decoder read the same [`Vocab`], any context token can
//! be produced by the copy distribution.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

/// Token id type used throughout the crate.
pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[BOS]", "[EOS]"];

/// Prefix carried by word-initial subwords.
pub const WORD_MARKER: char = '\u{2581}';

const MERGES_SENTINEL: &str = "#MERGES";
const OPTIONS_NO_LOWERCASE: &str = "#OPTIONS lowercase=false";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("target vocabulary size {target} is below the minimum {minimum} (alphabet + specials)")]
    InvalidSize { target: usize, minimum: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidTokenId { id: TokenId, size: usize },
    #[error("malformed vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TextError>;

/// Normalization options fixed at training time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabOptions {
    pub lowercase: bool,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

/// A trained subword vocabulary and its merge table.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    merges: Vec<(TokenId, TokenId)>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    options: VocabOptions,
}

/// One normalized character plus the byte range it came from.
#[derive(Debug, Clone)]
struct Symbol {
    text: String,
    span: Range<usize>,
}

/// Splits `text` into words of normalized symbols. The first symbol of each
/// word is prefixed with [`WORD_MARKER`].
fn words_with_offsets(text: &str, lowercase: bool) -> Vec<Vec<Symbol>> {
    let mut words = Vec::new();
    let mut current: Vec<Symbol> = Vec::new();
    for (start, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        let span = start..start + ch.len_utf8();
        let mut push = |c: char| {
            let mut s = String::new();
            if current.is_empty() {
                s.push(WORD_MARKER);
            }
            s.push(c);
            current.push(Symbol {
                text: s,
                span: span.clone(),
            });
        };
        if lowercase {
            for lc in ch.to_lowercase() {
                push(lc);
            }
        } else {
            push(ch);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Whitespace-collapsed (and optionally lowercased) form of `text`; the
/// fixed point of `decode(encode(text))` for UNK-free input.
pub fn normalize(text: &str, options: VocabOptions) -> String {
    let joined = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if options.lowercase {
        joined.to_lowercase()
    } else {
        joined
    }
}

/// Trains a vocabulary with default options (lowercasing on).
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocab> {
    train_vocab_with(corpus, target_size, VocabOptions::default())
}

/// Greedy BPE training: repeatedly merges the most frequent adjacent pair,
/// breaking count ties by the lexicographic order of the merged string, until
/// the vocabulary reaches `target_size` or no pair remains.
pub fn train_vocab_with<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
    options: VocabOptions,
) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(TextError::InvalidCorpus("corpus has no lines".into()));
    }

    let mut word_counts: HashMap<Vec<String>, u64> = HashMap::new();
    for line in corpus {
        for word in words_with_offsets(line.as_ref(), options.lowercase) {
            let symbols: Vec<String> = word.into_iter().map(|s| s.text).collect();
            *word_counts.entry(symbols).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TextError::InvalidCorpus("corpus contains no words".into()));
    }

    let alphabet: BTreeSet<&str> = word_counts
        .keys()
        .flat_map(|w| w.iter().map(String::as_str))
        .collect();
    let minimum = alphabet.len() + NUM_SPECIALS;
    if target_size < minimum {
        return Err(TextError::InvalidSize {
            target: target_size,
            minimum,
        });
    }

    let mut vocab = Vocab::with_specials(options);
    for symbol in &alphabet {
        vocab.push_token(symbol.to_string());
    }

    // Words in a fixed order so training is independent of hash iteration.
    let mut words: Vec<(Vec<TokenId>, u64)> = word_counts
        .iter()
        .map(|(w, &c)| (w.iter().map(|s| vocab.id_of[s]).collect(), c))
        .collect();
    words.sort();

    let mut pair_counts: HashMap<(TokenId, TokenId), i64> = HashMap::new();
    let mut pair_words: HashMap<(TokenId, TokenId), BTreeSet<usize>> = HashMap::new();
    for (wi, (syms, count)) in words.iter().enumerate() {
        for pair in syms.windows(2) {
            let key = (pair[0], pair[1]);
            *pair_counts.entry(key).or_insert(0) += *count as i64;
            pair_words.entry(key).or_default().insert(wi);
        }
    }

    let mut forbidden: HashSet<(TokenId, TokenId)> = HashSet::new();
    while vocab.len() < target_size {
        let mut best: Option<((TokenId, TokenId), i64, String)> = None;
        for (&pair, &count) in &pair_counts {
            if count <= 0 || forbidden.contains(&pair) {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bp, bc, bs)) => {
                    if count != *bc {
                        count > *bc
                    } else {
                        let merged = vocab.concat(pair);
                        match merged.cmp(bs) {
                            std::cmp::Ordering::Less => true,
                            std::cmp::Ordering::Greater => false,
                            std::cmp::Ordering::Equal => {
                                vocab.tokens[pair.0 as usize] < vocab.tokens[bp.0 as usize]
                            }
                        }
                    }
                }
            };
            if better {
                let merged = vocab.concat(pair);
                best = Some((pair, count, merged));
            }
        }
        let Some((pair, _, merged)) = best else { break };
        if SPECIAL_TOKENS.contains(&merged.as_str()) || merged == MERGES_SENTINEL {
            forbidden.insert(pair);
            continue;
        }

        let new_id = match vocab.id_of.get(&merged) {
            Some(&id) => id,
            None => vocab.push_token(merged),
        };
        vocab.push_merge(pair, new_id);

        let affected: Vec<usize> = pair_words
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for wi in affected {
            let (syms, count) = &mut words[wi];
            let count = *count as i64;
            if !syms.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in syms.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).expect("counted pair") -= count;
            }
            *syms = merge_pair(syms, pair, new_id);
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_insert(0) += count;
                pair_words.entry(key).or_default().insert(wi);
            }
        }
        pair_counts.retain(|_, c| *c > 0);
    }

    Ok(vocab)
}

fn merge_pair(syms: &[TokenId], pair: (TokenId, TokenId), merged: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
            out.push(merged);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

impl Vocab {
    fn with_specials(options: VocabOptions) -> Self {
        let mut vocab = Self {
            tokens: Vec::new(),
            id_of: HashMap::new(),
            merges: Vec::new(),
            merge_rank: HashMap::new(),
            options,
        };
        for special in SPECIAL_TOKENS {
            vocab.push_token(special.to_string());
        }
        vocab
    }

    fn push_token(&mut self, token: String) -> TokenId {
        let id = self.tokens.len() as TokenId;
        self.id_of.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    fn push_merge(&mut self, pair: (TokenId, TokenId), result: TokenId) {
        let rank = self.merges.len();
        self.merges.push(pair);
        self.merge_rank.entry(pair).or_insert((rank, result));
    }

    fn concat(&self, pair: (TokenId, TokenId)) -> String {
        let mut s = self.tokens[pair.0 as usize].clone();
        s.push_str(&self.tokens[pair.1 as usize]);
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn options(&self) -> VocabOptions {
        self.options
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Merge table in training order, as token strings.
    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.merges
            .iter()
            .map(|&(a, b)| (self.tokens[a as usize].as_str(), self.tokens[b as usize].as_str()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id of a non-special token string.
    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.id_of
            .get(token)
            .copied()
            .filter(|&id| id as usize >= NUM_SPECIALS)
    }

    /// Encodes text into token ids; unknown characters become [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_with_offsets(text)
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }

    /// Encodes text, returning each token with the byte range of `text` it covers.
    pub fn encode_with_offsets(&self, text: &str) -> Vec<(TokenId, Range<usize>)> {
        let mut out = Vec::new();
        for word in words_with_offsets(text, self.options.lowercase) {
            let mut pieces: Vec<(Option<TokenId>, Range<usize>)> = word
                .into_iter()
                .map(|s| (self.id_of(&s.text), s.span))
                .collect();
            loop {
                let mut best: Option<(usize, usize, TokenId)> = None;
                for i in 0..pieces.len().saturating_sub(1) {
                    if let (Some(a), Some(b)) = (pieces[i].0, pieces[i + 1].0) {
                        if let Some(&(rank, merged)) = self.merge_rank.get(&(a, b)) {
                            if best.is_none_or(|(r, _, _)| rank < r) {
                                best = Some((rank, i, merged));
                            }
                        }
                    }
                }
                let Some((_, i, merged)) = best else { break };
                let right = pieces.remove(i + 1);
                pieces[i] = (Some(merged), pieces[i].1.start..right.1.end);
            }
            out.extend(pieces.into_iter().map(|(id, span)| (id.unwrap_or(UNK), span)));
        }
        out
    }

    /// Inverse of [`Vocab::encode`] on UNK-free text. Special tokens render empty.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self.token(id).ok_or(TextError::InvalidTokenId {
                id,
                size: self.len(),
            })?;
            if (id as usize) < NUM_SPECIALS {
                continue;
            }
            match token.strip_prefix(WORD_MARKER) {
                Some(rest) => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(rest);
                }
                None => out.push_str(token),
            }
        }
        Ok(out)
    }

    /// Writes the vocabulary file: one token per line (line number = id),
    /// then a `#MERGES` line followed by one `left right` merge per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for token in &self.tokens {
            writeln!(w, "{token}")?;
        }
        writeln!(w, "{MERGES_SENTINEL}")?;
        for (a, b) in self.merges() {
            writeln!(w, "{a} {b}")?;
        }
        if !self.options.lowercase {
            writeln!(w, "{OPTIONS_NO_LOWERCASE}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let lines: Vec<String> = BufReader::new(r).lines().collect::<io::Result<_>>()?;
        let sentinel = lines
            .iter()
            .position(|l| l == MERGES_SENTINEL)
            .ok_or_else(|| TextError::Format(format!("missing {MERGES_SENTINEL} line")))?;
        let (token_lines, rest) = lines.split_at(sentinel);
        let mut merge_lines = &rest[1..];
        let mut options = VocabOptions::default();
        if merge_lines.last().map(String::as_str) == Some(OPTIONS_NO_LOWERCASE) {
            options.lowercase = false;
            merge_lines = &merge_lines[..merge_lines.len() - 1];
        }
        if token_lines.len() < NUM_SPECIALS
            || token_lines[..NUM_SPECIALS]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(TextError::Format("special tokens must occupy ids 0-3".into()));
        }

        let mut vocab = Self::with_specials(options);
        for token in &token_lines[NUM_SPECIALS..] {
            if token.is_empty() || vocab.id_of.contains_key(token) {
                return Err(TextError::Format(format!("empty or duplicate token {token:?}")));
            }
            vocab.push_token(token.clone());
        }
        for line in merge_lines {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| TextError::Format(format!("bad merge line {line:?}")))?;
            let lookup = |t: &str| {
                vocab
                    .id_of(t)
                    .ok_or_else(|| TextError::Format(format!("merge uses unknown token {t:?}")))
            };
            let pair = (lookup(a)?, lookup(b)?);
            let merged = lookup(&format!("{a}{b}"))?;
            vocab.push_merge(pair, merged);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn marked(s: &str) -> String {
        format!("{WORD_MARKER}{s}")
    }

    #[test]
    fn zero_merges_when_size_equals_alphabet() {
        let vocab = train_vocab(&["aa aa ab"], 3 + NUM_SPECIALS).unwrap();
        assert_eq!(vocab.merges().count(), 0);
        let mut expected: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        expected.extend(["a".to_string(), "b".to_string(), marked("a")]);
        assert_eq!(vocab.tokens(), expected.as_slice());
    }

    #[test]
    fn single_merge_picks_aa() {
        // Pairs per word "aaab": (^a,a) (a,a) (a,b), each seen twice. The tie
        // goes to the lexicographically smallest merged string, "aa".
        let vocab = train_vocab(&["aaab", "aaab"], 3 + NUM_SPECIALS + 1).unwrap();
        let merges: Vec<_> = vocab.merges().collect();
        assert_eq!(merges, vec![("a", "a")]);
        assert_eq!(vocab.len(), 8);
        assert!(vocab.id_of("aa").is_some());
    }

    #[test]
    fn single_symbol_corpus() {
        let vocab = train_vocab(&["z"], 5).unwrap();
        assert_eq!(vocab.len(), 5);
        assert_eq!(vocab.token(4), Some(marked("z").as_str()));
        assert_eq!(vocab.encode("z"), vec![4]);
    }

    #[test]
    fn errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(train_vocab(&empty, 10), Err(TextError::InvalidCorpus(_))));
        assert!(matches!(train_vocab(&["   "], 10), Err(TextError::InvalidCorpus(_))));
        assert!(matches!(
            train_vocab(&["abc"], 5),
            Err(TextError::InvalidSize { target: 5, minimum: 7 })
        ));
        let vocab = train_vocab(&["abc"], 7).unwrap();
        assert!(matches!(
            vocab.decode(&[99]),
            Err(TextError::InvalidTokenId { id: 99, size: 7 })
        ));
    }

    #[test]
    fn encode_edge_cases() {
        let vocab = train_vocab(&["a b"], 10).unwrap();
        assert!(vocab.encode("").is_empty());
        assert_eq!(vocab.encode("z"), vec![UNK]);
        assert_eq!(vocab.decode(&[]).unwrap(), "");
        assert_eq!(vocab.decode(&[BOS, EOS]).unwrap(), "");
    }

    #[test]
    fn offsets_point_into_original_text() {
        let vocab = train_vocab(&["hello world", "hello there"], 40).unwrap();
        let text = "  Hello   World ";
        for (id, span) in vocab.encode_with_offsets(text) {
            let piece = vocab.token(id).unwrap().trim_start_matches(WORD_MARKER);
            assert_eq!(text[span].to_lowercase(), piece);
        }
    }

    #[test]
    fn file_round_trip() {
        let vocab = train_vocab(&["the cat sat on the mat", "the hat"], 30).unwrap();
        let mut buf = Vec::new();
        vocab.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().nth(vocab.len()), Some(MERGES_SENTINEL));
        let back = Vocab::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, vocab);

        let cased = train_vocab_with(&["Ab ab"], 12, VocabOptions { lowercase: false }).unwrap();
        let mut buf = Vec::new();
        cased.write_to(&mut buf).unwrap();
        assert_eq!(Vocab::read_from(buf.as_slice()).unwrap(), cased);
    }

    #[test]
    fn specials_never_produced_by_encode() {
        let vocab = train_vocab(&["[pad] [unk] x[PAD]"], 60).unwrap();
        let ids = vocab.encode("[PAD] [bos] [eos] x[pad]");
        assert!(ids.iter().all(|&id| id != PAD && id != BOS && id != EOS));
    }

    const CORPUS: [&str; 4] = [
        "the quick brown fox jumps over the lazy dog",
        "who is the current president of the general assembly",
        "what is the use of jdk in java",
        "a driver with a learner's permit must be accompanied",
    ];

    #[test]
    fn training_is_deterministic() {
        let a = train_vocab(&CORPUS, 120).unwrap();
        let b = train_vocab(&CORPUS, 120).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 120);
    }

    proptest! {
        #[test]
        fn round_trip_over_trained_alphabet(words in proptest::collection::vec("[a-z']{1,8}", 0..12),
                                            gaps in proptest::collection::vec(" {1,3}", 12)) {
            // Every character in the generated words must appear both word-initially
            // and word-internally in the training corpus.
            let alphabet = "abcdefghijklmnopqrstuvwxyz'";
            let mut corpus: Vec<String> = CORPUS.iter().map(|s| s.to_string()).collect();
            corpus.push(alphabet.chars().map(|c| format!("{c}{c}")).collect::<Vec<_>>().join(" "));
            let vocab = train_vocab(&corpus, 150).unwrap();
            let text: String = words.iter().zip(&gaps).map(|(w, g)| format!("{w}{g}")).collect();
            let ids = vocab.encode(&text);
            prop_assert!(ids.iter().all(|&id| (id as usize) < vocab.len() && id != UNK));
            prop_assert_eq!(vocab.decode(&ids).unwrap(), normalize(&text, vocab.options()));
        }
    }
}
