//! Subword vocabularies: frequency-driven merge training and greedy
//! longest-match segmentation with a word-initial `▁` marker.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MARKER: char = '▁';
pub const BOS: usize = 0;
pub const UNK: usize = 1;
pub const BOS_STR: &str = "<bos>";
pub const UNK_STR: &str = "<unk>";

/// Bijective id ↔ token-string table. Ids 0 and 1 are `<bos>` and `<unk>`.
/// The transducer blank is not a member; it lives at index `len()` of the
/// transducer output space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[BOS] != BOS_STR || tokens[UNK] != UNK_STR {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <bos>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::InvalidArgument(format!("invalid token {t:?} at {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// First position where two vocabularies disagree, if any.
    pub fn first_mismatch(&self, other: &Vocabulary) -> Option<String> {
        if self.len() != other.len() {
            return Some(format!("size {} vs {}", self.len(), other.len()));
        }
        self.tokens
            .iter()
            .zip(&other.tokens)
            .enumerate()
            .find(|(_, (a, b))| a != b)
            .map(|(i, (a, b))| format!("id {i}: {a:?} vs {b:?}"))
    }

    /// Extends with placeholder tokens that never match text, up to `size`.
    pub fn pad_to(&mut self, size: usize) {
        let mut i = 0;
        while self.tokens.len() < size {
            let t = format!("<extra_{i}>");
            i += 1;
            if !self.index.contains_key(&t) {
                self.index.insert(t.clone(), self.tokens.len());
                self.tokens.push(t);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(s.lines().map(str::to_string).collect())
    }
}

/// Vocabulary plus its segmentation lexicon.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizerModel {
    vocab: Vocabulary,
    max_chars: usize,
}

impl TokenizerModel {
    pub fn new(vocab: Vocabulary) -> Self {
        let max_chars = vocab.tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        TokenizerModel { vocab, max_chars }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn into_vocab(self) -> Vocabulary {
        self.vocab
    }

    /// Greedy longest match per whitespace-delimited word; characters with
    /// no matching token become `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let chars: Vec<char> = std::iter::once(MARKER).chain(word.chars()).collect();
            self.encode_symbols(&chars, &mut ids);
        }
        ids
    }

    /// Segments a raw token string (marker included) with this lexicon.
    pub fn encode_piece(&self, piece: &str) -> Vec<usize> {
        let chars: Vec<char> = piece.chars().collect();
        let mut ids = Vec::new();
        self.encode_symbols(&chars, &mut ids);
        ids
    }

    fn encode_symbols(&self, chars: &[char], ids: &mut Vec<usize>) {
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let longest = self.max_chars.min(chars.len() - i);
            let mut matched = None;
            for len in (1..=longest).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if let Some(id) = self.vocab.id(&buf) {
                    if id != BOS && id != UNK {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    i += len;
                }
                None => {
                    ids.push(UNK);
                    i += 1;
                }
            }
        }
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            let t = self.vocab.token(id).ok_or(Error::TokenOutOfRange {
                id,
                size: self.vocab.len(),
            })?;
            for c in t.chars() {
                s.push(if c == MARKER { ' ' } else { c });
            }
        }
        Ok(match s.strip_prefix(' ') {
            Some(rest) => rest.to_string(),
            None => s,
        })
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                format!("{MARKER}{c}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Trains a vocabulary of at most `target_size` tokens.
///
/// The character level holds both the marked and unmarked form of every
/// character seen, so any text over the training alphabet round-trips.
/// Above it, the most frequent adjacent pair is merged repeatedly (ties to
/// the lexicographically smaller merged string) until the target size is
/// reached or no pair is left.
pub fn train_subword<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<TokenizerModel> {
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Empty("tokenizer training corpus"));
    }
    let mut chars: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    chars.sort_unstable();
    chars.dedup();
    let minimum = 2 + 2 * chars.len();
    if target_size < minimum {
        return Err(Error::VocabularyTooSmall {
            requested: target_size,
            minimum,
        });
    }

    let mut base: Vec<String> = chars
        .iter()
        .flat_map(|&c| [format!("{MARKER}{c}"), c.to_string()])
        .collect();
    base.sort();
    let mut tokens = vec![BOS_STR.to_string(), UNK_STR.to_string()];
    tokens.extend(base);
    let mut known: HashMap<String, usize> =
        tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .iter()
        .map(|(w, &n)| (initial_symbols(w), n))
        .collect();

    while tokens.len() < target_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, n) in &words {
            for p in syms.windows(2) {
                *pairs.entry((p[0].as_str(), p[1].as_str())).or_default() += n;
            }
        }
        let best = pairs
            .into_iter()
            .map(|((a, b), n)| (n, format!("{a}{b}"), a.len()))
            .max_by(|x, y| {
                x.0.cmp(&y.0)
                    .then_with(|| y.1.cmp(&x.1))
                    .then_with(|| y.2.cmp(&x.2))
            });
        let Some((_, merged, split)) = best else { break };
        let (left, right) = (merged[..split].to_string(), merged[split..].to_string());
        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = out;
        }
        if !known.contains_key(&merged) {
            known.insert(merged.clone(), tokens.len());
            tokens.push(merged);
        }
    }
    Ok(TokenizerModel::new(Vocabulary::from_tokens(tokens)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(extra: &[&str]) -> TokenizerModel {
        let mut t = vec![BOS_STR.to_string(), UNK_STR.to_string()];
        t.extend(extra.iter().map(|s| s.to_string()));
        TokenizerModel::new(Vocabulary::from_tokens(t).unwrap())
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(matches!(
            train_subword::<&str>(&[], 10),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn too_small_reports_minimum() {
        match train_subword(&["ab"], 3) {
            Err(Error::VocabularyTooSmall { minimum, .. }) => assert_eq!(minimum, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn character_level_round_trip() {
        // one distinct character, one slot above the character level
        let tok = train_subword(&["aa aa"], 1 + 2 + 1).unwrap();
        let ids = tok.encode("aa");
        assert!(!ids.contains(&UNK));
        assert_eq!(tok.decode(&ids).unwrap(), "aa");
    }

    #[test]
    fn most_frequent_pair_wins() {
        // pair counts: (▁a,b)=3, (▁a,c)=1
        let tok = train_subword(&["ab ab ab", "ac"], 2 + 2 * 3 + 1).unwrap();
        assert_eq!(tok.vocab().len(), 9);
        assert_eq!(tok.vocab().token(8), Some("▁ab"));
        assert!(!tok.vocab().contains("▁ac"));
    }

    #[test]
    fn ties_break_lexicographically() {
        let tok = train_subword(&["ab cd"], 2 + 8 + 1).unwrap();
        assert_eq!(tok.vocab().token(10), Some("▁ab"));
    }

    #[test]
    fn longest_match_preferred() {
        let tok = vocab(&["▁a", "▁ab", "b"]);
        let ab = tok.vocab().id("▁ab").unwrap();
        assert_eq!(tok.encode("ab"), vec![ab]);
        let b = tok.vocab().id("b").unwrap();
        assert_eq!(tok.decode(&[ab, b]).unwrap(), "abb");
    }

    #[test]
    fn encode_decode_edges() {
        let tok = vocab(&["▁a"]);
        assert!(tok.encode("").is_empty());
        assert_eq!(tok.decode(&[]).unwrap(), "");
        assert_eq!(tok.encode("z"), vec![UNK, UNK]);
        assert!(matches!(
            tok.decode(&[7]),
            Err(Error::TokenOutOfRange { id: 7, .. })
        ));
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let tok = train_subword(&["hello world", "help"], 40).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vocab");
        tok.vocab().save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<bos>\n<unk>\n"));
        assert_eq!(&Vocabulary::load(&p).unwrap(), tok.vocab());
    }

    #[test]
    fn mismatch_reporting() {
        let a = vocab(&["x", "y"]);
        let b = vocab(&["y", "x"]);
        assert!(a.vocab().first_mismatch(b.vocab()).unwrap().contains("id 2"));
        assert!(a.vocab().first_mismatch(a.vocab()).is_none());
    }

    proptest! {
        #[test]
        fn round_trip_over_training_alphabet(
            corpus in proptest::collection::vec("[a-e]{1,6}( [a-e]{1,6}){0,4}", 1..6),
            text in "[a-e]{1,6}( [a-e]{1,6}){0,5}",
            extra in 0usize..30,
        ) {
            let mut with_all = corpus.clone();
            with_all.push("abcde".into());
            let tok = train_subword(&with_all, 12 + extra).unwrap();
            let ids = tok.encode(&text);
            prop_assert!(!ids.contains(&UNK));
            prop_assert_eq!(tok.decode(&ids).unwrap(), text);
            // determinism
            prop_assert_eq!(train_subword(&with_all, 12 + extra).unwrap(), tok);
        }
    }
}
