//! Lexical diversity baselines for token corpora: distinct-n and
//! Self-BLEU.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::TokenDataset;
use crate::error::{Error, Result};
use crate::nets::PAD_ID;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NGramProfile {
    pub n: usize,
    pub total: usize,
    pub distinct: usize,
    #[serde(skip)]
    pub counts: BTreeMap<Vec<u32>, usize>,
}

fn strip_pad(corpus: &TokenDataset) -> Vec<Vec<u32>> {
    corpus
        .sequences()
        .iter()
        .map(|s| s.iter().copied().filter(|&id| id != PAD_ID).collect())
        .collect()
}

pub fn ngram_profile(corpus: &TokenDataset, n: usize) -> Result<NGramProfile> {
    if n == 0 {
        return Err(Error::Usage("n-gram order must be >= 1".into()));
    }
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for s in strip_pad(corpus) {
        for g in s.windows(n) {
            *counts.entry(g.to_vec()).or_insert(0) += 1;
            total += 1;
        }
    }
    Ok(NGramProfile {
        n,
        total,
        distinct: counts.len(),
        counts,
    })
}

/// Distinct n-grams over total n-grams, pooled over the corpus.
pub fn distinct_n(corpus: &TokenDataset, n: usize) -> Result<f64> {
    let p = ngram_profile(corpus, n)?;
    if p.total == 0 {
        return Err(Error::Data(format!("no sequence has at least {n} tokens")));
    }
    Ok(p.distinct as f64 / p.total as f64)
}

fn counts(s: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut m = HashMap::new();
    for g in s.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Per n-gram: the largest count in any sequence, that sequence, and the
/// runner-up count. The clip against "all sequences but i" is then the
/// runner-up when i holds the maximum.
struct ClipTable<'a> {
    top: HashMap<&'a [u32], (usize, usize, usize)>,
}

impl<'a> ClipTable<'a> {
    fn new(seqs: &'a [Vec<u32>], n: usize) -> Self {
        let mut top: HashMap<&[u32], (usize, usize, usize)> = HashMap::new();
        for (i, s) in seqs.iter().enumerate() {
            for (g, c) in counts(s, n) {
                let e = top.entry(g).or_insert((0, usize::MAX, 0));
                if c > e.0 {
                    *e = (c, i, e.0);
                } else if c > e.2 {
                    e.2 = c;
                }
            }
        }
        Self { top }
    }

    fn clip_excluding(&self, g: &[u32], i: usize) -> usize {
        self.top
            .get(g)
            .map_or(0, |&(best, who, second)| if who == i { second } else { best })
    }
}

fn closest_ref_len(lens: &[usize], i: usize) -> usize {
    let c = lens[i] as i64;
    lens.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &l)| l)
        .min_by_key(|&l| ((l as i64 - c).abs(), l))
        .expect("at least one reference")
}

/// Mean BLEU of every sequence against all others as references.
/// Any zero n-gram precision gives that sequence a BLEU of 0.
pub fn self_bleu(corpus: &TokenDataset, max_n: usize) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::Usage("max_n must be >= 1".into()));
    }
    let seqs = strip_pad(corpus);
    if seqs.len() < 2 {
        return Err(Error::Usage("self-BLEU needs at least 2 sequences".into()));
    }
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let tables: Vec<ClipTable> = (1..=max_n.min(longest)).map(|n| ClipTable::new(&seqs, n)).collect();
    let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();

    let scores: Vec<f64> = (0..seqs.len())
        .into_par_iter()
        .map(|i| {
            let cand = &seqs[i];
            let order = max_n.min(cand.len());
            if order == 0 {
                return 0.0;
            }
            let mut log_sum = 0.0;
            for n in 1..=order {
                let grams = counts(cand, n);
                let total: usize = grams.values().sum();
                let clipped: usize = grams
                    .iter()
                    .map(|(g, &c)| c.min(tables[n - 1].clip_excluding(g, i)))
                    .sum();
                if clipped == 0 {
                    return 0.0;
                }
                log_sum += (clipped as f64 / total as f64).ln();
            }
            let c = cand.len() as f64;
            let r = closest_ref_len(&lens, i) as f64;
            let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
            bp * (log_sum / order as f64).exp()
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
