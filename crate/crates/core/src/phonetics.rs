//! Pronunciation lexicon, character-to-syllable conversion and the
//! syllable-level edit distance used throughout retrieval and rejection.
//!
//! Distances are computed over whole syllable tokens. Two sequences have
//! similarity 1 exactly when they are token-for-token identical, which is
//! what homophone mining relies on.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use crate::error::{NecError, Result};

/// Whether tone digits are kept on syllable tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ToneMode {
    #[default]
    WithTone,
    Toneless,
}

/// Map from a single character to its ordered pronunciations. The first
/// listed syllable is the default one used by [`phoneticize`].
#[derive(Debug, Clone, Default)]
pub struct PronunciationLexicon {
    entries: HashMap<char, Vec<String>>,
    tone_mode: ToneMode,
}

impl PronunciationLexicon {
    pub fn new(tone_mode: ToneMode) -> Self {
        Self {
            entries: HashMap::new(),
            tone_mode,
        }
    }

    /// Appends pronunciations for `ch`. Earlier entries keep priority.
    pub fn insert<I, S>(&mut self, ch: char, syllables: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let syllables: Vec<String> = syllables.into_iter().map(Into::into).collect();
        if syllables.is_empty() {
            return Err(NecError::Invalid(format!("no pronunciation for {ch:?}")));
        }
        for syl in &syllables {
            if syl.is_empty() || syl.chars().any(char::is_whitespace) {
                return Err(NecError::Invalid(format!(
                    "bad syllable token {syl:?} for {ch:?}"
                )));
            }
        }
        self.entries.entry(ch).or_default().extend(syllables);
        Ok(())
    }

    pub fn with_tone_mode(mut self, tone_mode: ToneMode) -> Self {
        self.tone_mode = tone_mode;
        self
    }

    pub fn tone_mode(&self) -> ToneMode {
        self.tone_mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All listed pronunciations of `ch`, default first, tone digits as stored.
    pub fn pronunciations(&self, ch: char) -> Option<&[String]> {
        self.entries.get(&ch).map(Vec::as_slice)
    }

    /// Default syllable for `ch` under the lexicon's tone mode, or the
    /// reserved `<unk:CHAR>` token when `ch` is not covered.
    pub fn syllable(&self, ch: char) -> String {
        match self.entries.get(&ch).and_then(|v| v.first()) {
            Some(syl) => match self.tone_mode {
                ToneMode::WithTone => syl.clone(),
                ToneMode::Toneless => strip_tone(syl).to_string(),
            },
            None => unknown_token(ch),
        }
    }
}

fn strip_tone(syl: &str) -> &str {
    let trimmed = syl.trim_end_matches(|c: char| c.is_ascii_digit());
    if trimmed.is_empty() {
        syl
    } else {
        trimmed
    }
}

fn unknown_token(ch: char) -> String {
    format!("<unk:{ch}>")
}

/// Reads `char<TAB>syl1 syl2 ...` lines. Lines starting with `#` and blank
/// lines are skipped. A character listed on several lines accumulates its
/// alternates in file order.
pub fn load_lexicon<R: BufRead>(source: R, tone_mode: ToneMode) -> Result<PronunciationLexicon> {
    let mut lex = PronunciationLexicon::new(tone_mode);
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: &str| NecError::Parse {
            line: line_no,
            message: message.to_string(),
        };
        let (key, pron) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `char<TAB>syllables`"))?;
        let mut chars = key.chars();
        let ch = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => return Err(parse_err("key must be exactly one character")),
        };
        let syllables: Vec<&str> = pron.split_whitespace().collect();
        if syllables.is_empty() {
            return Err(parse_err("empty pronunciation"));
        }
        lex.insert(ch, syllables)
            .map_err(|e| parse_err(&e.to_string()))?;
    }
    Ok(lex)
}

/// Ordered syllable tokens for a piece of text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PhoneticSequence(Vec<String>);

impl PhoneticSequence {
    pub fn new(syllables: Vec<String>) -> Self {
        Self(syllables)
    }

    pub fn syllables(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for PhoneticSequence {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

impl fmt::Display for PhoneticSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// One syllable per character, in order.
pub fn phoneticize(text: &str, lex: &PronunciationLexicon) -> PhoneticSequence {
    PhoneticSequence(text.chars().map(|c| lex.syllable(c)).collect())
}

/// Unit-cost Levenshtein distance between two token slices.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

pub fn edit_distance(a: &PhoneticSequence, b: &PhoneticSequence) -> usize {
    levenshtein(&a.0, &b.0)
}

/// Edit distance divided by the longer length; two empty sequences are at
/// distance 0.
pub fn normalized_distance(a: &PhoneticSequence, b: &PhoneticSequence) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / denom as f64
}

pub fn similarity(a: &PhoneticSequence, b: &PhoneticSequence) -> f64 {
    1.0 - normalized_distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> PronunciationLexicon {
        load_lexicon(
            "而\ter2\n在\tzai4\n桓\thuan2".as_bytes(),
            ToneMode::WithTone,
        )
        .unwrap()
    }

    fn seq(tokens: &[&str]) -> PhoneticSequence {
        tokens.iter().copied().collect()
    }

    #[test]
    fn loads_toy_lexicon() {
        assert_eq!(toy().len(), 3);
    }

    #[test]
    fn alternates_keep_order() {
        let lex = load_lexicon("的\tde5 di4".as_bytes(), ToneMode::WithTone).unwrap();
        assert_eq!(lex.pronunciations('的').unwrap(), ["de5", "di4"]);
        assert_eq!(lex.syllable('的'), "de5");
    }

    #[test]
    fn duplicate_lines_merge() {
        let lex = load_lexicon(
            "的\tde5\n# comment\n\n的\tdi4".as_bytes(),
            ToneMode::WithTone,
        )
        .unwrap();
        assert_eq!(lex.pronunciations('的').unwrap(), ["de5", "di4"]);
    }

    #[test]
    fn empty_pronunciation_is_error() {
        match load_lexicon("x\t".as_bytes(), ToneMode::WithTone) {
            Err(NecError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_tab_reports_line() {
        match load_lexicon("a\tb1\nxyz".as_bytes(), ToneMode::WithTone) {
            Err(NecError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_lexicon() {
        assert!(load_lexicon("".as_bytes(), ToneMode::WithTone)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn phoneticize_lookup_and_modes() {
        let lex = toy();
        assert_eq!(phoneticize("而在桓", &lex), seq(&["er2", "zai4", "huan2"]));
        let toneless = lex.with_tone_mode(ToneMode::Toneless);
        assert_eq!(
            phoneticize("而在桓", &toneless),
            seq(&["er", "zai", "huan"])
        );
    }

    #[test]
    fn oov_characters_get_unique_tokens() {
        let lex = toy();
        assert_eq!(
            phoneticize("而Q桓", &lex),
            seq(&["er2", "<unk:Q>", "huan2"])
        );
        assert_ne!(phoneticize("Q", &lex), phoneticize("R", &lex));
        assert!(phoneticize("", &lex).is_empty());
    }

    #[test]
    fn distance_examples() {
        let a = seq(&["er2", "zai4", "huan2"]);
        let b = seq(&["er2", "zai4", "huan4"]);
        assert_eq!(edit_distance(&a, &a), 0);
        assert_eq!(edit_distance(&a, &b), 1);
        assert_eq!(edit_distance(&seq(&[]), &seq(&["er2", "zai4"])), 2);
        assert_eq!(normalized_distance(&a, &a), 0.0);
        assert!((normalized_distance(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(normalized_distance(&seq(&[]), &seq(&["a", "b"])), 1.0);
        assert_eq!(normalized_distance(&seq(&[]), &seq(&[])), 0.0);
        assert!((similarity(&a, &b) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(similarity(&a, &a), 1.0);
    }

    fn token_seq() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..4, 0..10)
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in token_seq(), b in token_seq(), c in token_seq()) {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        }

        #[test]
        fn ned_and_sim_are_complementary(a in token_seq(), b in token_seq()) {
            let sa: PhoneticSequence = a.iter().map(|t| t.to_string()).collect();
            let sb: PhoneticSequence = b.iter().map(|t| t.to_string()).collect();
            let ned = normalized_distance(&sa, &sb);
            prop_assert!((0.0..=1.0).contains(&ned));
            prop_assert_eq!(similarity(&sa, &sb) + ned, 1.0);
            prop_assert_eq!(similarity(&sa, &sb) == 1.0, sa == sb);
        }

        #[test]
        fn phoneticize_preserves_length(text in "[而在桓a-c ]{0,12}") {
            let lex = toy();
            let out = phoneticize(&text, &lex);
            prop_assert_eq!(out.len(), text.chars().count());
            prop_assert_eq!(out, phoneticize(&text, &lex));
        }
    }
}
