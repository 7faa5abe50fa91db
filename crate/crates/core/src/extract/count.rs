//! Decoding of displayed counts such as `1,234,567 subscribers` or `1.2M`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCount {
    pub value: u64,
    /// False when the display used an abbreviation suffix or unit word.
    pub exact: bool,
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CountError {
    #[error("no digits in {raw:?}")]
    NoDigits { raw: String },
    #[error("count {raw:?} does not fit in 64 bits")]
    Overflow { raw: String },
}

impl CountError {
    pub fn raw(&self) -> &str {
        match self {
            CountError::NoDigits { raw } | CountError::Overflow { raw } => raw,
        }
    }
}

/// Abbreviation suffixes and words meaning zero.
#[derive(Clone, Debug)]
pub struct SuffixTable {
    multipliers: Vec<(String, u64)>,
    zero_words: Vec<String>,
}

impl Default for SuffixTable {
    fn default() -> Self {
        SuffixTable::english()
    }
}

impl SuffixTable {
    pub fn english() -> Self {
        let multipliers = [
            ("k", 1_000),
            ("thousand", 1_000),
            ("m", 1_000_000),
            ("million", 1_000_000),
            ("b", 1_000_000_000),
            ("billion", 1_000_000_000),
        ];
        SuffixTable {
            multipliers: multipliers.iter().map(|(s, m)| (s.to_string(), *m)).collect(),
            zero_words: vec!["no".into()],
        }
    }

    /// Parses a tab-separated table: `suffix<TAB>multiplier` per line, or
    /// `suffix<TAB>0` for a word meaning "none". `#` starts a comment.
    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut table = SuffixTable {
            multipliers: Vec::new(),
            zero_words: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, mult) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected suffix<TAB>multiplier", i + 1))?;
            let mult: u64 = mult.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            let word = word.trim().to_lowercase();
            if mult == 0 {
                table.zero_words.push(word);
            } else {
                table.multipliers.push((word, mult));
            }
        }
        Ok(table)
    }

    /// Adds the entries of `other`, later entries shadowing nothing.
    pub fn extend(&mut self, other: SuffixTable) {
        self.multipliers.extend(other.multipliers);
        self.zero_words.extend(other.zero_words);
    }

    fn multiplier(&self, word: &str) -> Option<u64> {
        let word = word.to_lowercase();
        self.multipliers.iter().find(|(s, _)| *s == word).map(|(_, m)| *m)
    }

    fn is_zero_phrase(&self, raw: &str) -> bool {
        let first = raw.split_whitespace().next().unwrap_or("").to_lowercase();
        self.zero_words.contains(&first)
    }
}

fn is_separator(c: char) -> bool {
    matches!(c, ',' | '.' | ' ' | '\'' | '\u{a0}' | '\u{2009}' | '\u{202f}')
}

pub fn parse_count(raw: &str) -> Result<ParsedCount, CountError> {
    parse_count_with(raw, &SuffixTable::default())
}

pub fn parse_count_with(raw: &str, table: &SuffixTable) -> Result<ParsedCount, CountError> {
    let text = raw.trim();
    let Some(start) = text.find(|c: char| c.is_ascii_digit()) else {
        if table.is_zero_phrase(text) {
            return Ok(ParsedCount {
                value: 0,
                exact: true,
                raw: raw.to_string(),
            });
        }
        return Err(CountError::NoDigits { raw: raw.to_string() });
    };

    // Digits plus separators that sit between digits.
    let chars: Vec<char> = text[start..].chars().collect();
    let mut end = 0;
    while end < chars.len() {
        let c = chars[end];
        if c.is_ascii_digit() || (is_separator(c) && chars.get(end + 1).is_some_and(|n| n.is_ascii_digit())) {
            end += 1;
        } else {
            break;
        }
    }
    let number: Vec<char> = chars[..end].to_vec();
    let rest: String = chars[end..].iter().collect();
    let word: String = rest.trim_start().chars().take_while(|c| c.is_alphabetic()).collect();
    let overflow = || CountError::Overflow { raw: raw.to_string() };

    match table.multiplier(&word) {
        Some(mult) => {
            // A trailing '.' or ',' followed by one or two digits is a decimal mark.
            let mut frac_digits: &[char] = &[];
            let mut int_part: &[char] = &number;
            if let Some(pos) = number.iter().rposition(|c| is_separator(*c)) {
                let tail = &number[pos + 1..];
                if matches!(number[pos], '.' | ',') && (1..=2).contains(&tail.len()) {
                    frac_digits = tail;
                    int_part = &number[..pos];
                }
            }
            let digits = |cs: &[char]| -> Result<u128, CountError> {
                cs.iter()
                    .filter(|c| c.is_ascii_digit())
                    .try_fold(0u128, |acc, c| {
                        acc.checked_mul(10)
                            .and_then(|a| a.checked_add(c.to_digit(10).unwrap() as u128))
                    })
                    .ok_or_else(overflow)
            };
            let int = digits(int_part)?;
            let frac = digits(frac_digits)?;
            let scale = 10u128.pow(frac_digits.len() as u32);
            // round half up of (int + frac/scale) * mult
            let numer = (int * scale + frac) * mult as u128;
            let value = (numer * 2 + scale) / (2 * scale);
            Ok(ParsedCount {
                value: u64::try_from(value).map_err(|_| overflow())?,
                exact: false,
                raw: raw.to_string(),
            })
        }
        None => {
            let value = number
                .iter()
                .filter(|c| c.is_ascii_digit())
                .try_fold(0u64, |acc, c| {
                    acc.checked_mul(10)
                        .and_then(|a| a.checked_add(c.to_digit(10).unwrap() as u64))
                })
                .ok_or_else(overflow)?;
            Ok(ParsedCount {
                value,
                exact: true,
                raw: raw.to_string(),
            })
        }
    }
}
