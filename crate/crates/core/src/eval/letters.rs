use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Probability of each letter a-z being the first letter of a word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterDistribution {
    probabilities: [f64; 26],
    /// Words that were counted.
    pub word_count: usize,
    /// Words skipped because they do not start with a letter a-z.
    pub skipped: usize,
}

impl LetterDistribution {
    /// Probability of `letter`, either case; 0 for anything outside a-z.
    pub fn probability(&self, letter: char) -> f64 {
        let l = letter.to_ascii_lowercase();
        if l.is_ascii_lowercase() {
            self.probabilities[(l as u8 - b'a') as usize]
        } else {
            0.0
        }
    }

    pub fn probabilities(&self) -> &[f64; 26] {
        &self.probabilities
    }

    pub fn as_map(&self) -> BTreeMap<char, f64> {
        (b'a'..=b'z').map(|c| (c as char, self.probabilities[(c - b'a') as usize])).collect()
    }

    /// A distribution from explicit per-letter weights.
    pub fn from_weights(weights: &[(char, f64)]) -> Result<Self, EvalError> {
        let mut p = [0.0; 26];
        for &(c, w) in weights {
            let l = c.to_ascii_lowercase();
            if l.is_ascii_lowercase() && w.is_finite() && w > 0.0 {
                p[(l as u8 - b'a') as usize] += w;
            }
        }
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return Err(EvalError::EmptyWordList { skipped: 0 });
        }
        p.iter_mut().for_each(|x| *x /= total);
        Ok(Self {
            probabilities: p,
            word_count: 0,
            skipped: 0,
        })
    }
}

/// Counts first letters, case-folded. Blank entries and words that start
/// with anything but a-z are skipped and counted in `skipped`.
pub fn build_letter_distribution<S: AsRef<str>>(words: &[S]) -> Result<LetterDistribution, EvalError> {
    let mut counts = [0usize; 26];
    let mut skipped = 0;
    for w in words {
        match w.as_ref().trim().chars().next().map(|c| c.to_ascii_lowercase()) {
            Some(c) if c.is_ascii_lowercase() => counts[(c as u8 - b'a') as usize] += 1,
            _ => skipped += 1,
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(EvalError::EmptyWordList { skipped });
    }
    let mut probabilities = [0.0; 26];
    for (p, c) in probabilities.iter_mut().zip(counts) {
        *p = c as f64 / total as f64;
    }
    Ok(LetterDistribution {
        probabilities,
        word_count: total,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbbrevLength {
    Fixed(usize),
    /// Each abbreviation's length drawn uniformly from 2, 3 and 4.
    Uniform,
}

/// Seeded abbreviations whose letters are drawn independently from `dist`.
pub fn generate_abbreviations(
    dist: &LetterDistribution,
    length: AbbrevLength,
    count: usize,
    seed: u64,
) -> Result<Vec<String>, EvalError> {
    if count == 0 {
        return Err(EvalError::ZeroCount);
    }
    if let AbbrevLength::Fixed(n) = length {
        if !(2..=4).contains(&n) {
            return Err(EvalError::InvalidLength(n));
        }
    }
    let letters = WeightedIndex::new(dist.probabilities.iter().copied())
        .map_err(|_| EvalError::EmptyWordList { skipped: dist.skipped })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let n = match length {
                AbbrevLength::Fixed(n) => n,
                AbbrevLength::Uniform => rng.random_range(2..=4),
            };
            (0..n)
                .map(|_| (b'A' + letters.sample(&mut rng) as u8) as char)
                .collect()
        })
        .collect())
}
