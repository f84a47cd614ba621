//! Deterministic synthetic speech world.
//!
//! Sentences come from an order-3 word source: the next word depends on the
//! previous word and the latent class of the word before it. Some lexicon
//! entries come in homophone pairs that differ only in letters sharing a
//! phonetic class (c/k, s/z, i/y, f/v). Features are synthesised per letter
//! from phonetic-class prototypes, so such pairs sound identical and only
//! linguistic context can tell them apart.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::SUBSAMPLE;
use crate::error::{Error, Result};
use crate::numerics::archive::{self, AnyTensor};
use crate::numerics::tensor::fnv1a;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const ALPHABET: &str = "abcdefgiklmnoprstuvyz";
const SOUND_ALIKE: [(char, char); 4] = [('c', 'k'), ('s', 'z'), ('i', 'y'), ('f', 'v')];

/// Phonetic class of a letter; sound-alike letters share one.
pub fn phonetic_class(c: char) -> Option<usize> {
    let canon = SOUND_ALIKE
        .iter()
        .find(|(_, b)| *b == c)
        .map(|(a, _)| *a)
        .unwrap_or(c);
    let mut classes = ALPHABET
        .chars()
        .filter(|ch| !SOUND_ALIKE.iter().any(|(_, b)| b == ch));
    classes.position(|ch| ch == canon)
}

/// Number of letter classes plus one word-boundary class.
pub fn num_sound_classes() -> usize {
    ALPHABET.chars().count() - SOUND_ALIKE.len() + 1
}

fn pause_class() -> usize {
    num_sound_classes() - 1
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a(&bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    #[serde(default = "d_lexicon")]
    pub lexicon_size: usize,
    /// Fraction of the lexicon belonging to a sound-alike pair.
    #[serde(default = "d_homophones")]
    pub homophone_fraction: f64,
    /// Latent classes of the word two back.
    #[serde(default = "d_classes")]
    pub classes: usize,
    /// Successor set size per context.
    #[serde(default = "d_support")]
    pub support: usize,
    #[serde(default = "d_mean_words")]
    pub mean_sentence_words: f64,
    #[serde(default = "d_max_words")]
    pub max_sentence_words: usize,
}

fn d_lexicon() -> usize {
    200
}
fn d_homophones() -> f64 {
    0.3
}
fn d_classes() -> usize {
    6
}
fn d_support() -> usize {
    4
}
fn d_mean_words() -> f64 {
    8.0
}
fn d_max_words() -> usize {
    24
}

impl Default for LanguageConfig {
    fn default() -> Self {
        LanguageConfig {
            lexicon_size: d_lexicon(),
            homophone_fraction: d_homophones(),
            classes: d_classes(),
            support: d_support(),
            mean_sentence_words: d_mean_words(),
            max_sentence_words: d_max_words(),
        }
    }
}

impl LanguageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lexicon_size < 4 || self.classes == 0 || self.support == 0 {
            return Err(Error::Config("toy language needs ≥ 4 words, classes and support ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.homophone_fraction) {
            return Err(Error::Config("homophone_fraction must lie in [0, 1]".into()));
        }
        if !(self.mean_sentence_words >= 1.0) || self.max_sentence_words == 0 {
            return Err(Error::Config("sentence length settings must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// The order-3 word source.
#[derive(Clone, Debug)]
pub struct ToyLanguage {
    cfg: LanguageConfig,
    seed: u64,
    words: Vec<String>,
    class: Vec<usize>,
}

impl ToyLanguage {
    pub fn new(cfg: LanguageConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 1]));
        let letters: Vec<char> = ALPHABET.chars().collect();
        let mut words: Vec<String> = Vec::with_capacity(cfg.lexicon_size);
        let mut seen = HashSet::new();
        let pairs_wanted = (cfg.homophone_fraction * cfg.lexicon_size as f64 / 2.0).round() as usize;
        let mut pairs = 0;
        let mut attempts = 0;
        while words.len() < cfg.lexicon_size {
            attempts += 1;
            if attempts > 1_000_000 {
                return Err(Error::Config("could not generate a lexicon of the requested size".into()));
            }
            let len = rng.random_range(2..=6);
            let w: String = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
            // a held sound cannot be told apart from a repeated one
            let key = sound_key(&w);
            if seen.contains(&w) || key.windows(2).any(|p| p[0] == p[1]) {
                continue;
            }
            let want_pair = pairs < pairs_wanted && words.len() + 2 <= cfg.lexicon_size;
            if want_pair {
                let Some(twin) = twin_of(&w, &mut rng) else { continue };
                if seen.contains(&twin) {
                    continue;
                }
                seen.insert(w.clone());
                seen.insert(twin.clone());
                words.push(w);
                words.push(twin);
                pairs += 1;
            } else {
                // a stray sound-alike would create an unplanned pair
                if words.iter().any(|o| sound_key(o) == key) {
                    continue;
                }
                seen.insert(w.clone());
                words.push(w);
            }
        }
        let class = (0..words.len())
            .map(|i| (mix(&[seed, 2, i as u64]) % cfg.classes as u64) as usize)
            .collect();
        Ok(ToyLanguage {
            cfg,
            seed,
            words,
            class,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn config(&self) -> &LanguageConfig {
        &self.cfg
    }

    /// Pairs of lexicon entries that sound identical.
    pub fn homophone_pairs(&self) -> Vec<(String, String)> {
        let mut by_sound: BTreeMap<Vec<usize>, Vec<&String>> = BTreeMap::new();
        for w in &self.words {
            by_sound.entry(sound_key(w)).or_default().push(w);
        }
        by_sound
            .into_values()
            .filter(|v| v.len() == 2)
            .map(|v| (v[0].clone(), v[1].clone()))
            .collect()
    }

    /// Successors and weights of context `(class of w₋₂, w₋₁)`; `None`
    /// stands for the sentence start.
    fn successors(&self, two_back: Option<usize>, prev: Option<usize>) -> Vec<(usize, f64)> {
        let n = self.words.len();
        let Some(prev) = prev else {
            return (0..n).map(|w| (w, 1.0)).collect();
        };
        let c = two_back.map(|w| self.class[w] as u64).unwrap_or(self.cfg.classes as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.seed, 3, c, prev as u64]));
        let mut picked: Vec<usize> = Vec::with_capacity(self.cfg.support);
        while picked.len() < self.cfg.support.min(n) {
            let w = rng.random_range(0..n);
            if !picked.contains(&w) {
                picked.push(w);
            }
        }
        picked
            .into_iter()
            .enumerate()
            .map(|(r, w)| (w, 1.0 / (r as f64 + 1.0)))
            .collect()
    }

    /// Sentence `index`: a pure function of (seed, index).
    pub fn sentence(&self, index: u64) -> Vec<&str> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.seed, 4, index]));
        let p_stop = 1.0 / self.cfg.mean_sentence_words;
        let mut out: Vec<usize> = Vec::new();
        loop {
            let n = out.len();
            let succ = self.successors(
                n.checked_sub(2).map(|i| out[i]),
                n.checked_sub(1).map(|i| out[i]),
            );
            let total: f64 = succ.iter().map(|s| s.1).sum();
            let mut x = rng.random_range(0.0..total);
            let mut choice = succ[succ.len() - 1].0;
            for (w, p) in &succ {
                if x < *p {
                    choice = *w;
                    break;
                }
                x -= p;
            }
            out.push(choice);
            if out.len() >= self.cfg.max_sentence_words || rng.random_bool(p_stop) {
                break;
            }
        }
        out.into_iter().map(|w| self.words[w].as_str()).collect()
    }

    pub fn sentence_text(&self, index: u64) -> String {
        self.sentence(index).join(" ")
    }
}

fn sound_key(w: &str) -> Vec<usize> {
    w.chars().filter_map(phonetic_class).collect()
}

fn twin_of(w: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let chars: Vec<char> = w.chars().collect();
    let spots: Vec<usize> = (0..chars.len())
        .filter(|&i| SOUND_ALIKE.iter().any(|(a, b)| *a == chars[i] || *b == chars[i]))
        .collect();
    if spots.is_empty() {
        return None;
    }
    let i = spots[rng.random_range(0..spots.len())];
    let mut out = chars.clone();
    for (a, b) in SOUND_ALIKE {
        if chars[i] == a {
            out[i] = b;
        } else if chars[i] == b {
            out[i] = a;
        }
    }
    Some(out.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    #[serde(default = "d_feat")]
    pub d_feat: usize,
    #[serde(default = "d_noise")]
    pub noise: f64,
    /// Letter duration bounds, in subsampled frames.
    #[serde(default = "d_min_dur")]
    pub min_duration: usize,
    #[serde(default = "d_max_dur")]
    pub max_duration: usize,
    #[serde(default = "d_jitter")]
    pub jitter_prob: f64,
}

fn d_feat() -> usize {
    80
}
fn d_noise() -> f64 {
    0.3
}
fn d_min_dur() -> usize {
    1
}
fn d_max_dur() -> usize {
    2
}
fn d_jitter() -> f64 {
    0.2
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            d_feat: d_feat(),
            noise: d_noise(),
            min_duration: d_min_dur(),
            max_duration: d_max_dur(),
            jitter_prob: d_jitter(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_feat == 0 || self.min_duration == 0 || self.max_duration < self.min_duration {
            return Err(Error::Config("need d_feat ≥ 1 and 1 ≤ min_duration ≤ max_duration".into()));
        }
        if !(self.noise >= 0.0) || !(0.0..=1.0).contains(&self.jitter_prob) {
            return Err(Error::Config("noise must be ≥ 0 and jitter_prob in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-sound prototypes plus the synthesis settings.
#[derive(Clone, Debug)]
pub struct SynthesisProfile {
    cfg: SynthesisConfig,
    prototypes: Vec<Vec<f64>>,
}

impl SynthesisProfile {
    pub fn new(cfg: SynthesisConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 5]));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let prototypes = (0..num_sound_classes())
            .map(|_| (0..cfg.d_feat).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        Ok(SynthesisProfile { cfg, prototypes })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.cfg
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    /// Raw frames for `transcript`: a boundary sound around every word,
    /// each letter held for a jittered duration (×4 raw frames), plus noise.
    pub fn synthesize<S: Scalar>(&self, transcript: &str, utt_seed: u64) -> Result<Tensor<S>> {
        let words: Vec<&str> = transcript.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Empty("transcript"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[utt_seed, 6]));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(&[utt_seed, 8]));
        let mut sounds = vec![pause_class()];
        for w in &words {
            for c in w.chars() {
                sounds.push(phonetic_class(c).ok_or_else(|| {
                    Error::InvalidArgument(format!("letter {c:?} outside the synthesis alphabet"))
                })?);
            }
            sounds.push(pause_class());
        }
        let d = self.cfg.d_feat;
        let noise = (self.cfg.noise > 0.0).then(|| Normal::new(0.0, self.cfg.noise).expect("noise"));
        let mut data = Vec::new();
        for s in sounds {
            let mut dur = rng.random_range(self.cfg.min_duration..=self.cfg.max_duration);
            if self.cfg.jitter_prob > 0.0 && rng.random_bool(self.cfg.jitter_prob) {
                dur = if rng.random_bool(0.5) { dur + 1 } else { dur.saturating_sub(1).max(1) };
            }
            for _ in 0..dur * SUBSAMPLE {
                for &m in &self.prototypes[s] {
                    let x = m + noise.as_ref().map_or(0.0, |n| n.sample(&mut noise_rng));
                    data.push(S::of(x));
                }
            }
        }
        let rows = data.len() / d;
        Tensor::new(vec![rows, d], data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default)]
    pub language: LanguageConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default = "d_train")]
    pub asr_train: usize,
    #[serde(default = "d_eval")]
    pub asr_dev: usize,
    #[serde(default = "d_eval")]
    pub asr_test: usize,
    #[serde(default = "d_lm")]
    pub lm_sentences: usize,
}

fn d_train() -> usize {
    2000
}
fn d_eval() -> usize {
    200
}
fn d_lm() -> usize {
    100_000
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            language: LanguageConfig::default(),
            synthesis: SynthesisConfig::default(),
            asr_train: d_train(),
            asr_dev: d_eval(),
            asr_test: d_eval(),
            lm_sentences: d_lm(),
        }
    }
}

pub const SPLITS: [&str; 3] = ["asr_train", "asr_dev", "asr_test"];

/// Sentence-index ranges of each split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitPlan {
    pub ranges: Vec<(String, u64, u64)>,
}

impl SplitPlan {
    pub fn contiguous(cfg: &CorpusConfig) -> Self {
        let mut start = 0u64;
        let mut ranges = Vec::new();
        for (name, n) in [
            ("asr_train", cfg.asr_train),
            ("asr_dev", cfg.asr_dev),
            ("asr_test", cfg.asr_test),
            ("lm_text", cfg.lm_sentences),
        ] {
            ranges.push((name.to_string(), start, start + n as u64));
            start += n as u64;
        }
        SplitPlan { ranges }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.ranges.iter().enumerate() {
            if a.1 >= a.2 {
                return Err(Error::Config(format!("split {} is empty", a.0)));
            }
            for b in &self.ranges[i + 1..] {
                if a.1 < b.2 && b.1 < a.2 {
                    return Err(Error::Config(format!("splits {} and {} overlap", a.0, b.0)));
                }
            }
        }
        Ok(())
    }

    pub fn range(&self, name: &str) -> Option<(u64, u64)> {
        self.ranges.iter().find(|r| r.0 == name).map(|r| (r.1, r.2))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub feature_path: String,
    pub transcript: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub lexicon_size: usize,
    pub homophone_pairs: usize,
    pub counts: BTreeMap<String, usize>,
    pub raw_frames: BTreeMap<String, usize>,
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `<split>.tsv` manifests, one feature archive per paired split,
/// `lm_text.txt` and `lexicon.txt` under `dir`.
pub fn build_corpus(cfg: &CorpusConfig, plan: &SplitPlan, seed: u64, dir: &Path) -> Result<CorpusSummary> {
    plan.validate()?;
    let lang = ToyLanguage::new(cfg.language.clone(), seed)?;
    let profile = SynthesisProfile::new(cfg.synthesis.clone(), seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = CorpusSummary {
        lexicon_size: lang.words().len(),
        homophone_pairs: lang.homophone_pairs().len(),
        ..Default::default()
    };
    for split in SPLITS {
        let (lo, hi) = plan
            .range(split)
            .ok_or_else(|| Error::Config(format!("split plan lacks {split}")))?;
        let archive_name = format!("{split}.fsta");
        let mut tsv = String::new();
        let mut entries = Vec::new();
        let mut frames = 0;
        for idx in lo..hi {
            let id = format!("{split}-{idx:06}");
            let text = lang.sentence_text(idx);
            let f: Tensor<f32> = profile.synthesize(&text, mix(&[seed, 7, idx]))?;
            frames += f.rows();
            entries.push((id.clone(), AnyTensor::F32(f)));
            writeln!(tsv, "{id}\t{archive_name}\t{text}").expect("string write");
        }
        archive::write(&dir.join(&archive_name), &entries)?;
        write_atomic(&dir.join(format!("{split}.tsv")), &tsv)?;
        summary.counts.insert(split.to_string(), (hi - lo) as usize);
        summary.raw_frames.insert(split.to_string(), frames);
    }
    let (lo, hi) = plan
        .range("lm_text")
        .ok_or_else(|| Error::Config("split plan lacks lm_text".into()))?;
    let mut text = String::new();
    for idx in lo..hi {
        text.push_str(&lang.sentence_text(idx));
        text.push('\n');
    }
    write_atomic(&dir.join("lm_text.txt"), &text)?;
    summary.counts.insert("lm_text".into(), (hi - lo) as usize);
    write_atomic(&dir.join("lexicon.txt"), &(lang.words().join("\n") + "\n"))?;
    Ok(summary)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = HashSet::new();
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let mut cols = line.splitn(3, '\t');
            let (Some(id), Some(fp), Some(tr)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Archive(format!("{}: malformed manifest line {line:?}", path.display())));
            };
            if !ids.insert(id.to_string()) {
                return Err(Error::Archive(format!("{}: duplicate id {id}", path.display())));
            }
            Ok(ManifestEntry {
                id: id.into(),
                feature_path: fp.into(),
                transcript: tr.into(),
            })
        })
        .collect()
}

/// A manifest with its features loaded.
pub fn load_split<S: Scalar>(dir: &Path, split: &str) -> Result<Vec<(ManifestEntry, Tensor<S>)>> {
    let entries = read_manifest(&dir.join(format!("{split}.tsv")))?;
    let mut archives: BTreeMap<String, BTreeMap<String, Tensor<S>>> = BTreeMap::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if !archives.contains_key(&e.feature_path) {
            let p: PathBuf = dir.join(&e.feature_path);
            if !p.exists() {
                return Err(Error::MissingArtifact(p));
            }
            archives.insert(e.feature_path.clone(), archive::read_map(&p)?);
        }
        let f = archives[&e.feature_path]
            .get(&e.id)
            .cloned()
            .ok_or_else(|| Error::Archive(format!("no features for {}", e.id)))?;
        out.push((e, f));
    }
    Ok(out)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WerStats {
    pub wer: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

/// Counts of one minimum-cost alignment: (sub, ins, del).
pub fn align_counts<T: PartialEq>(hyp: &[T], reference: &[T]) -> (usize, usize, usize) {
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut ins, mut del) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]) {
            s += usize::from(hyp[i - 1] != reference[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ins += 1;
            i -= 1;
        } else {
            del += 1;
            j -= 1;
        }
    }
    (s, ins, del)
}

/// Pooled word error rate over a set of utterances.
pub fn compute_wer<T: AsRef<str>>(hyps: &[T], refs: &[T]) -> Result<WerStats> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut st = WerStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        let hw: Vec<&str> = h.as_ref().split_whitespace().collect();
        let rw: Vec<&str> = r.as_ref().split_whitespace().collect();
        let (s, i, d) = align_counts(&hw, &rw);
        st.substitutions += s;
        st.insertions += i;
        st.deletions += d;
        st.ref_words += rw.len();
    }
    let errors = st.substitutions + st.insertions + st.deletions;
    st.wer = if st.ref_words == 0 {
        if errors == 0 { 0.0 } else { f64::INFINITY }
    } else {
        errors as f64 / st.ref_words as f64
    };
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CorpusConfig {
        CorpusConfig {
            language: LanguageConfig {
                lexicon_size: 40,
                ..Default::default()
            },
            synthesis: SynthesisConfig {
                d_feat: 6,
                ..Default::default()
            },
            asr_train: 5,
            asr_dev: 3,
            asr_test: 3,
            lm_sentences: 50,
        }
    }

    #[test]
    fn lexicon_has_planned_homophones() {
        let lang = ToyLanguage::new(LanguageConfig::default(), 3).unwrap();
        assert_eq!(lang.words().len(), 200);
        let pairs = lang.homophone_pairs();
        assert_eq!(pairs.len(), 30);
        for w in lang.words() {
            assert!(sound_key(w).windows(2).all(|p| p[0] != p[1]), "{w}");
        }
        for (a, b) in pairs {
            assert_ne!(a, b);
            assert_eq!(sound_key(&a), sound_key(&b));
        }
    }

    #[test]
    fn every_word_is_reachable_and_generation_is_pure() {
        let lang = ToyLanguage::new(LanguageConfig::default(), 4).unwrap();
        let mut seen = HashSet::new();
        for i in 0..3000 {
            for w in lang.sentence(i) {
                seen.insert(w.to_string());
            }
        }
        assert_eq!(seen.len(), lang.words().len());
        assert_eq!(lang.sentence(17), lang.sentence(17));
        let again = ToyLanguage::new(LanguageConfig::default(), 4).unwrap();
        assert_eq!(again.sentence_text(99), lang.sentence_text(99));
    }

    #[test]
    fn noiseless_synthesis_is_prototype_concatenation() {
        let cfg = SynthesisConfig {
            d_feat: 4,
            noise: 0.0,
            jitter_prob: 0.0,
            min_duration: 1,
            max_duration: 1,
        };
        let p = SynthesisProfile::new(cfg, 1).unwrap();
        let f: Tensor<f64> = p.synthesize("ab", 2).unwrap();
        assert_eq!(f.rows(), 4 * SUBSAMPLE);
        let classes = [pause_class(), phonetic_class('a').unwrap(), phonetic_class('b').unwrap(), pause_class()];
        for (i, &c) in classes.iter().enumerate() {
            for r in 0..SUBSAMPLE {
                assert_eq!(f.row(i * SUBSAMPLE + r), p.prototype(c));
            }
        }
        let g: Tensor<f64> = p.synthesize("ab", 2).unwrap();
        assert_eq!(f, g);
        assert!(p.synthesize::<f64>("  ", 2).is_err());
        // sound-alike letters are indistinguishable
        assert_eq!(p.synthesize::<f64>("cis", 5).unwrap(), p.synthesize::<f64>("kyz", 5).unwrap());
    }

    #[test]
    fn noisy_frames_stay_classifiable() {
        let p = SynthesisProfile::new(SynthesisConfig::default(), 7).unwrap();
        let lang = ToyLanguage::new(LanguageConfig::default(), 7).unwrap();
        let (mut hit, mut total) = (0, 0);
        for i in 0..20 {
            let text = lang.sentence_text(i);
            let clean = SynthesisProfile::new(
                SynthesisConfig {
                    noise: 0.0,
                    ..SynthesisConfig::default()
                },
                7,
            )
            .unwrap();
            let f: Tensor<f64> = p.synthesize(&text, i).unwrap();
            let c: Tensor<f64> = clean.synthesize(&text, i).unwrap();
            for r in 0..f.rows() {
                let nearest = |row: &[f64]| {
                    (0..num_sound_classes())
                        .min_by(|&a, &b| {
                            let da: f64 = row.iter().zip(p.prototype(a)).map(|(x, y)| (x - y).powi(2)).sum();
                            let db: f64 = row.iter().zip(p.prototype(b)).map(|(x, y)| (x - y).powi(2)).sum();
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap()
                };
                hit += usize::from(nearest(f.row(r)) == nearest(c.row(r)));
                total += 1;
            }
        }
        assert!(hit as f64 >= 0.95 * total as f64);
    }

    #[test]
    fn corpus_is_reproducible() {
        let cfg = small_cfg();
        let plan = SplitPlan::contiguous(&cfg);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        build_corpus(&cfg, &plan, 11, a.path()).unwrap();
        let s = build_corpus(&cfg, &plan, 11, b.path()).unwrap();
        assert_eq!(s.counts["asr_train"], 5);
        for f in ["asr_train.tsv", "asr_dev.fsta", "lm_text.txt", "lexicon.txt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let loaded = load_split::<f32>(a.path(), "asr_dev").unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[0].1.cols(), 6);
        let mut bad = plan.clone();
        bad.ranges[1].1 = 2;
        assert!(build_corpus(&cfg, &bad, 11, a.path()).is_err());
    }

    #[test]
    fn wer_examples() {
        let r = "a b c d e f g h i j";
        assert_eq!(compute_wer(&[r], &[r]).unwrap().wer, 0.0);
        let st = compute_wer(&["a x c d e f g h i"], &[r]).unwrap();
        assert!((st.wer - 0.2).abs() < 1e-12);
        assert_eq!((st.substitutions, st.deletions, st.insertions), (1, 1, 0));
        assert_eq!(compute_wer(&[""], &[r]).unwrap().wer, 1.0);
        assert!(compute_wer(&["a"], &[]).is_err());
    }
}
