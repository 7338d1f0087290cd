//! Wordpiece tokenization with a word/subword index map.
//!
//! Vocabulary learning starts from every character (plain and `##`
//! continuation forms) and repeatedly merges the most frequent adjacent
//! piece pair. Tokenization is greedy longest-match from the left.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::label::{normalize_word, PunctuationLabel};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CONTINUATION: &str = "##";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordpieceVocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl WordpieceVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return Err(Error::Data(format!("vocabulary must start with {PAD} and {UNK}")));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {t:?} at id {i}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn continuation(c: char) -> String {
    format!("{CONTINUATION}{c}")
}

fn merge_pieces(left: &str, right: &str) -> String {
    format!("{left}{}", right.strip_prefix(CONTINUATION).unwrap_or(right))
}

/// Learns a vocabulary of at most `target_size` tokens from word occurrences.
pub fn build_vocab<S: AsRef<str>>(words: &[S], target_size: usize) -> Result<WordpieceVocab> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for w in words {
        let w = normalize_word(w.as_ref());
        if !w.is_empty() {
            *freq.entry(w).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut alphabet: Vec<char> = freq.keys().flat_map(|w| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let minimum = 2 + 2 * alphabet.len();
    if target_size < minimum {
        return Err(Error::Config(format!(
            "vocabulary size {target_size} is below the {minimum} reserved and single-character tokens"
        )));
    }
    let mut tokens = vec![PAD.to_string(), UNK.to_string()];
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    tokens.extend(alphabet.iter().map(|&c| continuation(c)));
    let mut known: std::collections::HashSet<String> = tokens.iter().cloned().collect();

    let mut segmented: Vec<(Vec<String>, usize)> = freq
        .iter()
        .map(|(w, &n)| {
            let pieces =
                w.chars().enumerate().map(|(i, c)| if i == 0 { c.to_string() } else { continuation(c) }).collect();
            (pieces, n)
        })
        .collect();

    while tokens.len() < target_size {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (pieces, n) in &segmented {
            for w in pieces.windows(2) {
                *pairs.entry((&w[0], &w[1])).or_default() += n;
            }
        }
        // Highest count wins; BTreeMap order makes ties resolve to the
        // lexicographically smallest pair.
        let Some(((l, r), _)) = pairs.iter().fold(None, |best: Option<(&(&str, &str), usize)>, (k, &n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((k, n)),
        }) else {
            break;
        };
        let (l, r) = (l.to_string(), r.to_string());
        let merged = merge_pieces(&l, &r);
        for (pieces, _) in &mut segmented {
            let mut out = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && pieces[i] == l && pieces[i + 1] == r {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut pieces[i]));
                    i += 1;
                }
            }
            *pieces = out;
        }
        if known.insert(merged.clone()) {
            tokens.push(merged);
        }
    }
    WordpieceVocab::from_tokens(tokens)
}

/// Subword ids of one utterance with their source-word bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedUtterance {
    pub subword_ids: Vec<usize>,
    pub word_index: Vec<usize>,
    pub is_word_final: Vec<bool>,
    pub num_words: usize,
}

impl TokenizedUtterance {
    pub fn len(&self) -> usize {
        self.subword_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subword_ids.is_empty()
    }

    /// Index of the final subword of each word.
    pub fn word_final_positions(&self) -> Vec<usize> {
        self.is_word_final.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }

    /// Number of subwords per word.
    pub fn pieces_per_word(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_words];
        for &w in &self.word_index {
            counts[w] += 1;
        }
        counts
    }

    /// Keeps the subwords of the first `words` words.
    pub fn prefix(&self, words: usize) -> TokenizedUtterance {
        let n = self.word_index.iter().take_while(|&&w| w < words).count();
        TokenizedUtterance {
            subword_ids: self.subword_ids[..n].to_vec(),
            word_index: self.word_index[..n].to_vec(),
            is_word_final: self.is_word_final[..n].to_vec(),
            num_words: words.min(self.num_words),
        }
    }
}

fn tokenize_word(word: &str, vocab: &WordpieceVocab) -> Vec<usize> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return vec![UNK_ID];
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let sub: String = chars[start..end].iter().collect();
            let piece = if start == 0 { sub } else { format!("{CONTINUATION}{sub}") };
            if let Some(id) = vocab.id(&piece) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => out.push(id),
            None => return vec![UNK_ID],
        }
        start = end;
    }
    out
}

pub fn tokenize<S: AsRef<str>>(words: &[S], vocab: &WordpieceVocab) -> Result<TokenizedUtterance> {
    if words.is_empty() {
        return Err(Error::Data("cannot tokenize an empty word list".into()));
    }
    let mut tok = TokenizedUtterance {
        subword_ids: Vec::new(),
        word_index: Vec::new(),
        is_word_final: Vec::new(),
        num_words: words.len(),
    };
    for (w, word) in words.iter().enumerate() {
        let ids = tokenize_word(&normalize_word(word.as_ref()), vocab);
        let last = ids.len() - 1;
        for (k, id) in ids.into_iter().enumerate() {
            tok.subword_ids.push(id);
            tok.word_index.push(w);
            tok.is_word_final.push(k == last);
        }
    }
    Ok(tok)
}

/// Joins the pieces of each word back into text, dropping `##` markers.
pub fn detokenize(tok: &TokenizedUtterance, vocab: &WordpieceVocab) -> Vec<String> {
    let mut words = vec![String::new(); tok.num_words];
    for (&id, &w) in tok.subword_ids.iter().zip(&tok.word_index) {
        let piece = vocab.token(id).unwrap_or(UNK);
        words[w].push_str(piece.strip_prefix(CONTINUATION).unwrap_or(piece));
    }
    words
}

/// Places each word's label on its final subword; other subwords get no
/// punctuation.
pub fn project_labels_to_subwords(
    labels: &[PunctuationLabel],
    tok: &TokenizedUtterance,
) -> Result<Vec<PunctuationLabel>> {
    if labels.len() != tok.num_words {
        return Err(Error::Data(format!("{} labels for {} words", labels.len(), tok.num_words)));
    }
    Ok(tok
        .word_index
        .iter()
        .zip(&tok.is_word_final)
        .map(|(&w, &fin)| if fin { labels[w] } else { PunctuationLabel::NoPunct })
        .collect())
}

/// Word-level values read off each word's final subword.
pub fn collapse_predictions<T: Clone>(subword: &[T], tok: &TokenizedUtterance) -> Result<Vec<T>> {
    if subword.len() != tok.len() {
        return Err(Error::Data(format!("{} predictions for {} subwords", subword.len(), tok.len())));
    }
    Ok(tok.word_final_positions().into_iter().map(|i| subword[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use PunctuationLabel::*;

    fn vocab(extra: &[&str]) -> WordpieceVocab {
        let mut t = vec![PAD.to_string(), UNK.to_string()];
        t.extend(extra.iter().map(|s| s.to_string()));
        WordpieceVocab::from_tokens(t).unwrap()
    }

    #[test]
    fn frequency_merge_on_repeated_word() {
        let corpus = vec!["aa"; 10];
        let v = build_vocab(&corpus, 5).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "a", "##a", "aa"]);
        assert!(matches!(build_vocab(&corpus, 3), Err(Error::Config(_))));
        assert!(matches!(build_vocab::<&str>(&[], 10), Err(Error::Data(_))));
    }

    #[test]
    fn vocab_is_deterministic() {
        let corpus: Vec<&str> = "the cat sat on the mat with the hat".split(' ').collect();
        assert_eq!(build_vocab(&corpus, 40).unwrap().to_text(), build_vocab(&corpus, 40).unwrap().to_text());
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab(&["hello", "wor", "##ld"]);
        let t = tokenize(&["hello", "world"], &v).unwrap();
        let pieces: Vec<&str> = t.subword_ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(pieces, ["hello", "wor", "##ld"]);
        assert_eq!(t.word_index, [0, 1, 1]);
        assert_eq!(t.is_word_final, [true, false, true]);

        let t = tokenize(&["hello"], &v).unwrap();
        assert_eq!(t.is_word_final, [true]);

        let t = tokenize(&["xyz"], &v).unwrap();
        assert_eq!(t.subword_ids, [UNK_ID]);
        assert_eq!(t.word_index, [0]);
        assert!(tokenize::<&str>(&[], &v).is_err());
    }

    #[test]
    fn projection_and_collapse() {
        let v = vocab(&["hello", "wor", "##ld"]);
        let t = tokenize(&["hello", "world"], &v).unwrap();
        let sub = project_labels_to_subwords(&[NoPunct, FullStop], &t).unwrap();
        assert_eq!(sub, [NoPunct, NoPunct, FullStop]);
        assert_eq!(collapse_predictions(&sub, &t).unwrap(), [NoPunct, FullStop]);
        assert!(project_labels_to_subwords(&[NoPunct], &t).is_err());
        assert!(collapse_predictions(&[NoPunct], &t).is_err());

        let t = tokenize(&["hello", "hello"], &v).unwrap();
        assert_eq!(project_labels_to_subwords(&[Comma, Question], &t).unwrap(), [Comma, Question]);
    }

    #[test]
    fn normalizes_before_tokenizing() {
        let v = vocab(&["hello"]);
        let t = tokenize(&["Hello,"], &v).unwrap();
        assert_eq!(v.token(t.subword_ids[0]), Some("hello"));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&["abc", "abd", "abc"], 12).unwrap();
        assert_eq!(WordpieceVocab::from_text(&v.to_text()).unwrap(), v);
        assert!(WordpieceVocab::from_text("a\nb\n").is_err());
        assert!(WordpieceVocab::from_text("[PAD]\n[UNK]\nx\nx\n").is_err());
    }
}
