use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Punctuation following a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PunctuationLabel {
    #[serde(rename = "NP")]
    NoPunct = 0,
    #[serde(rename = "COMMA")]
    Comma = 1,
    #[serde(rename = "FULLSTOP")]
    FullStop = 2,
    #[serde(rename = "QUESTION")]
    Question = 3,
}

pub const NUM_CLASSES: usize = 4;

impl PunctuationLabel {
    pub const ALL: [PunctuationLabel; NUM_CLASSES] = [Self::NoPunct, Self::Comma, Self::FullStop, Self::Question];
    /// Classes that count toward macro averages.
    pub const PUNCT: [PunctuationLabel; 3] = [Self::Comma, Self::FullStop, Self::Question];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoPunct => "NP",
            Self::Comma => "COMMA",
            Self::FullStop => "FULLSTOP",
            Self::Question => "QUESTION",
        }
    }

    /// The mark written after a word, empty for no punctuation.
    pub fn mark(self) -> &'static str {
        match self {
            Self::NoPunct => "",
            Self::Comma => ",",
            Self::FullStop => ".",
            Self::Question => "?",
        }
    }

    pub fn from_mark(c: char) -> Option<Self> {
        match c {
            ',' => Some(Self::Comma),
            '.' => Some(Self::FullStop),
            '?' => Some(Self::Question),
            _ => None,
        }
    }

    pub fn is_punct(self) -> bool {
        self != Self::NoPunct
    }
}

impl fmt::Display for PunctuationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PunctuationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "NP" => Ok(Self::NoPunct),
            "COMMA" => Ok(Self::Comma),
            "FULLSTOP" => Ok(Self::FullStop),
            "QUESTION" => Ok(Self::Question),
            other => Err(Error::Label(format!("unknown label {other:?}"))),
        }
    }
}

/// Writes words with their punctuation marks attached: `well, i see.`
pub fn render_punctuated(words: &[String], labels: &[PunctuationLabel]) -> String {
    words
        .iter()
        .zip(labels)
        .map(|(w, l)| format!("{w}{}", l.mark()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Inverse of [`render_punctuated`]: trailing `, . ?` become labels; other
/// punctuation is stripped from the word. Tokens that are pure punctuation
/// attach their mark to the previous word.
pub fn parse_punctuated(text: &str) -> (Vec<String>, Vec<PunctuationLabel>) {
    let mut words = Vec::new();
    let mut labels: Vec<PunctuationLabel> = Vec::new();
    for token in text.split_whitespace() {
        let stem = token.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
        let label = token[stem..]
            .chars()
            .rev()
            .find_map(PunctuationLabel::from_mark)
            .unwrap_or(PunctuationLabel::NoPunct);
        let word = normalize_word(token);
        if word.is_empty() {
            if let (true, Some(last)) = (label.is_punct(), labels.last_mut()) {
                *last = label;
            }
            continue;
        }
        words.push(word);
        labels.push(label);
    }
    (words, labels)
}

/// Lowercases and strips everything except letters, digits, and apostrophes.
pub fn normalize_word(word: &str) -> String {
    word.chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        for (i, l) in PunctuationLabel::ALL.iter().enumerate() {
            assert_eq!(l.id(), i);
            assert_eq!(l.as_str().parse::<PunctuationLabel>().unwrap(), *l);
        }
        assert!("PERIOD".parse::<PunctuationLabel>().is_err());
        assert_eq!(serde_json::to_string(&PunctuationLabel::FullStop).unwrap(), "\"FULLSTOP\"");
    }

    #[test]
    fn render_parse_round_trip() {
        let words: Vec<String> = ["well", "i", "see", "you", "do"].iter().map(|s| s.to_string()).collect();
        use PunctuationLabel::*;
        let labels = vec![Comma, NoPunct, FullStop, NoPunct, Question];
        let text = render_punctuated(&words, &labels);
        assert_eq!(text, "well, i see. you do?");
        assert_eq!(parse_punctuated(&text), (words, labels));
    }

    #[test]
    fn parse_handles_detached_marks_and_case() {
        let (w, l) = parse_punctuated("Hello , World !?");
        assert_eq!(w, vec!["hello", "world"]);
        assert_eq!(l, vec![PunctuationLabel::Comma, PunctuationLabel::Question]);
    }
}
