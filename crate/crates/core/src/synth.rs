//! Synthetic datasets whose diversity is controlled by a single knob.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::data::{build_vocab_from_counts, TensorDataset, TokenDataset, Vocab, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::nets::UNK_ID;

/// Largest tolerated expected number of rejections per latent coordinate.
pub const MAX_EXPECTED_REJECTIONS: f64 = 1e6;

/// Images of truncated latents under a frozen random generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncGenSpec {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Standard deviation of the generator biases.
    pub bias_scale: f64,
    pub output_shape: Vec<usize>,
    pub truncation: f64,
    /// Fixes the generator weights; shared across truncation levels.
    pub generator_seed: u64,
    /// Fixes the latent draws.
    pub sample_seed: u64,
    pub n: usize,
}

impl TruncGenSpec {
    pub fn new(output_shape: Vec<usize>, truncation: f64, n: usize) -> Self {
        Self {
            latent_dim: 16,
            hidden: 64,
            bias_scale: 0.3,
            output_shape,
            truncation,
            generator_seed: 0,
            sample_seed: 1,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be >= 1"));
        }
        if self.output_shape.is_empty() || self.output_shape.contains(&0) {
            return Err(Error::config("output_shape", "extents must be positive"));
        }
        if self.n < 2 {
            return Err(Error::config("n", "need at least 2 samples"));
        }
        check_truncation(self.truncation)
    }
}

/// Smallest truncation whose expected rejections stay within
/// [`MAX_EXPECTED_REJECTIONS`].
pub fn min_truncation() -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(1.0 / (MAX_EXPECTED_REJECTIONS + 1.0))
}

fn check_truncation(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::config("truncation", format!("must be positive, got {t}")));
    }
    let accept = erf(t / std::f64::consts::SQRT_2);
    if accept <= 0.0 || (1.0 - accept) / accept > MAX_EXPECTED_REJECTIONS {
        return Err(Error::config(
            "truncation",
            format!("{t} needs more than 1e6 rejections per coordinate; use at least {:.3e}", min_truncation()),
        ));
    }
    Ok(())
}

/// `count` standard-normal draws, each resampled until `|z| <= t`.
pub fn sample_truncated_normal(count: usize, t: f64, seed: u64) -> Result<Vec<f64>> {
    check_truncation(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= t {
                break z;
            }
        })
        .collect())
}

struct Generator {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Generator {
    fn new(latent: usize, hidden: usize, out: usize, bias: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, sd: f64| -> Vec<f64> {
            (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        Self {
            w1: normal(hidden * latent, (1.0 / latent as f64).sqrt()),
            b1: normal(hidden, bias),
            w2: normal(out * hidden, (2.0 / hidden as f64).sqrt()),
            b2: normal(out, bias),
        }
    }

    fn apply(&self, z: &[f64], out: &mut Vec<f32>) {
        let h: Vec<f64> = self
            .b1
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let row = &self.w1[j * z.len()..(j + 1) * z.len()];
                (b + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()).max(0.0)
            })
            .collect();
        for (o, b) in self.b2.iter().enumerate() {
            let row = &self.w2[o * h.len()..(o + 1) * h.len()];
            out.push((b + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>()) as f32);
        }
    }
}

pub fn gen_truncated(spec: &TruncGenSpec) -> Result<TensorDataset> {
    spec.validate()?;
    let out: usize = spec.output_shape.iter().product();
    let g = Generator::new(spec.latent_dim, spec.hidden, out, spec.bias_scale, spec.generator_seed);
    let z = sample_truncated_normal(spec.n * spec.latent_dim, spec.truncation, spec.sample_seed)?;
    let mut values = Vec::with_capacity(spec.n * out);
    for latent in z.chunks(spec.latent_dim) {
        g.apply(latent, &mut values);
    }
    TensorDataset::new(spec.output_shape.clone(), values)
}

/// Isotropic Gaussian clusters around centers drawn uniformly from a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub modes: usize,
    pub shape: Vec<usize>,
    pub sigma: f64,
    pub center_scale: f64,
    pub seed: u64,
    pub n: usize,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::config("modes", "must be >= 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("sigma", "must be positive"));
        }
        if !(self.center_scale.is_finite() && self.center_scale >= 0.0) {
            return Err(Error::config("center_scale", "must be non-negative"));
        }
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(Error::config("shape", "extents must be positive"));
        }
        if self.n < 2 {
            return Err(Error::config("n", "need at least 2 samples"));
        }
        Ok(())
    }
}

pub fn gen_mixture(spec: &MixtureSpec) -> Result<TensorDataset> {
    spec.validate()?;
    let d: usize = spec.shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centers = Vec::with_capacity(spec.modes * d);
    for _ in 0..spec.modes {
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let radius = spec.center_scale * rng.random::<f64>().powf(1.0 / d as f64);
        centers.extend(dir.iter().map(|v| v / norm * radius));
    }
    let mut values = Vec::with_capacity(spec.n * d);
    for _ in 0..spec.n {
        let m = rng.random_range(0..spec.modes);
        for c in &centers[m * d..(m + 1) * d] {
            let e: f64 = rng.sample(StandardNormal);
            values.push((c + spec.sigma * e) as f32);
        }
    }
    TensorDataset::new(spec.shape.clone(), values)
}

/// I.i.d. uniform `[0, 1)` entries.
pub fn gen_noise(shape: &[usize], n: usize, seed: u64) -> Result<TensorDataset> {
    if n < 2 {
        return Err(Error::config("n", "need at least 2 samples"));
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::config("shape", "extents must be positive"));
    }
    let d: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * d).map(|_| rng.random::<f32>()).collect();
    TensorDataset::new(shape.to_vec(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfCorpusSpec {
    pub vocab_size: usize,
    pub exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sequences: usize,
    pub seed: u64,
}

impl ZipfCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", "must be >= 2"));
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(Error::config("exponent", "must be positive"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config("min_len", "need 1 <= min_len <= max_len"));
        }
        if self.sequences == 0 {
            return Err(Error::config("sequences", "must be >= 1"));
        }
        Ok(())
    }
}

/// Token `w{r}` has frequency rank `r` and id `r + 1`.
pub fn gen_zipf_corpus(spec: &ZipfCorpusSpec) -> Result<TokenDataset> {
    spec.validate()?;
    let vocab = Vocab::from_tokens((1..=spec.vocab_size).map(|r| format!("w{r}")))?;
    let zipf = Zipf::new(spec.vocab_size as f64, spec.exponent)
        .map_err(|e| Error::config("exponent", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let seqs = (0..spec.sequences)
        .map(|_| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            (0..len).map(|_| zipf.sample(&mut rng) as u32 + 1).collect()
        })
        .collect();
    TokenDataset::new(seqs, vocab, spec.max_len)
}

/// Keeps the `k` most frequent tokens of `corpus` (ties to the earliest
/// occurrence) and maps every other token to `<unk>`.
pub fn vocab_truncate(corpus: &TokenDataset, k: usize) -> Result<TokenDataset> {
    let old = corpus.vocab();
    let words = corpus
        .sequences()
        .iter()
        .flatten()
        .map(|&id| old.token(id).unwrap_or(UNK_TOKEN));
    let vocab = build_vocab_from_counts(words, k)?.vocab;
    let seqs = corpus
        .sequences()
        .iter()
        .map(|s| {
            s.iter()
                .map(|&id| old.token(id).map_or(UNK_ID, |t| vocab.id(t)))
                .collect()
        })
        .collect();
    TokenDataset::new(seqs, vocab, corpus.max_seq_len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_corpus;

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn truncation_is_deterministic() {
        let spec = TruncGenSpec::new(vec![3, 4, 4], 0.5, 20);
        assert_eq!(gen_truncated(&spec).unwrap(), gen_truncated(&spec).unwrap());
    }

    #[test]
    fn wide_truncation_keeps_unit_variance() {
        let z = sample_truncated_normal(200_000, 8.0, 3).unwrap();
        assert!((variance(&z) - 1.0).abs() < 0.05);
    }

    #[test]
    fn narrow_truncation_variance() {
        // N(0,1) restricted to [-t, t]: 1 - 2t·φ(t) / (2Φ(t) - 1)
        let t: f64 = 0.1;
        let phi = (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let exact = 1.0 - 2.0 * t * phi / erf(t / std::f64::consts::SQRT_2);
        assert!((exact - t * t / 3.0).abs() / exact < 0.01);
        let z = sample_truncated_normal(100_000, t, 4).unwrap();
        assert!(z.iter().all(|v| v.abs() <= t));
        assert!((variance(&z) - exact).abs() / exact < 0.1);
    }

    #[test]
    fn tiny_truncation_is_rejected() {
        let err = sample_truncated_normal(1, 1e-9, 0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(check_truncation(min_truncation() * 1.01).is_ok());
    }

    #[test]
    fn generator_is_shared_across_truncations() {
        let mut lo = TruncGenSpec::new(vec![5], 0.1, 2);
        let a = Generator::new(4, 8, 5, lo.bias_scale, 11);
        let b = Generator::new(4, 8, 5, lo.bias_scale, 11);
        assert_eq!(a.w1, b.w1);
        assert_eq!(a.b2, b.b2);
        lo.latent_dim = 4;
        lo.hidden = 8;
        lo.generator_seed = 11;
        let mut hi = lo.clone();
        hi.truncation = 2.0;
        // The zero latent is shared by every truncation level.
        let mut at_zero = Vec::new();
        a.apply(&[0.0; 4], &mut at_zero);
        let near = gen_truncated(&TruncGenSpec { truncation: 1e-5, ..lo.clone() }).unwrap();
        for (x, y) in near.example(0).iter().zip(&at_zero) {
            assert!((x - y).abs() < 1e-3);
        }
        assert_ne!(gen_truncated(&lo).unwrap(), gen_truncated(&hi).unwrap());
    }

    fn mixture(modes: usize, sigma: f64) -> MixtureSpec {
        MixtureSpec {
            modes,
            shape: vec![8],
            sigma,
            center_scale: 10.0,
            seed: 5,
            n: 400,
        }
    }

    #[test]
    fn degenerate_mixture() {
        let d = gen_mixture(&mixture(1, 1e-6)).unwrap();
        let first = d.example(0).to_vec();
        for i in 1..d.len() {
            let dist: f32 = d.example(i).iter().zip(&first).map(|(a, b)| (a - b).powi(2)).sum::<f32>().sqrt();
            assert!(dist < 1e-4 * 10.0);
        }
    }

    fn kmeans_purity(d: &TensorDataset, spec: &MixtureSpec) -> f64 {
        // Recover the true labels by replaying the generator's draws.
        let dim = d.example_len();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for _ in 0..spec.modes {
            for _ in 0..dim {
                let _: f64 = rng.sample(StandardNormal);
            }
            let _: f64 = rng.random();
        }
        let mut labels = Vec::new();
        for _ in 0..spec.n {
            labels.push(rng.random_range(0..spec.modes));
            for _ in 0..dim {
                let _: f64 = rng.sample(StandardNormal);
            }
        }
        // Farthest-point seeding, then Lloyd iterations.
        let k = spec.modes;
        let pt = |i: usize| d.example(i);
        let dist = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f32>();
        let mut cent: Vec<Vec<f32>> = vec![pt(0).to_vec()];
        while cent.len() < k {
            let far = (0..d.len())
                .max_by(|&a, &b| {
                    let da = cent.iter().map(|c| dist(pt(a), c)).fold(f32::MAX, f32::min);
                    let db = cent.iter().map(|c| dist(pt(b), c)).fold(f32::MAX, f32::min);
                    da.total_cmp(&db)
                })
                .unwrap();
            cent.push(pt(far).to_vec());
        }
        let mut assign = vec![0; d.len()];
        for _ in 0..20 {
            for (i, a) in assign.iter_mut().enumerate() {
                *a = (0..k).min_by(|&x, &y| dist(pt(i), &cent[x]).total_cmp(&dist(pt(i), &cent[y]))).unwrap();
            }
            for (c, centroid) in cent.iter_mut().enumerate() {
                let members: Vec<usize> = (0..d.len()).filter(|&i| assign[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                for (j, v) in centroid.iter_mut().enumerate() {
                    *v = members.iter().map(|&i| pt(i)[j]).sum::<f32>() / members.len() as f32;
                }
            }
        }
        let mut correct = 0;
        for c in 0..k {
            let mut votes = vec![0usize; k];
            for i in (0..d.len()).filter(|&i| assign[i] == c) {
                votes[labels[i]] += 1;
            }
            correct += votes.into_iter().max().unwrap();
        }
        correct as f64 / d.len() as f64
    }

    #[test]
    fn separated_modes_are_recoverable() {
        let spec = MixtureSpec {
            sigma: 0.3,
            ..mixture(4, 0.3)
        };
        let d = gen_mixture(&spec).unwrap();
        assert!(kmeans_purity(&d, &spec) >= 0.95);
    }

    #[test]
    fn variance_grows_with_modes() {
        let total_var = |m| {
            let d = gen_mixture(&mixture(m, 0.5)).unwrap();
            let v: Vec<f64> = d.values().iter().map(|&x| x as f64).collect();
            (0..8)
                .map(|j| variance(&v.iter().skip(j).step_by(8).copied().collect::<Vec<_>>()))
                .sum::<f64>()
        };
        let (a, b, c) = (total_var(1), total_var(4), total_var(16));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn noise_moments() {
        let d = gen_noise(&[3, 8, 8], 600, 9).unwrap();
        let v: Vec<f64> = d.values().iter().map(|&x| x as f64).collect();
        assert!(v.len() >= 100_000);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert!((variance(&v) - 1.0 / 12.0).abs() / (1.0 / 12.0) < 0.05);
        assert_eq!(d, gen_noise(&[3, 8, 8], 600, 9).unwrap());
        assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    fn zipf(vocab_size: usize, exponent: f64, sequences: usize) -> ZipfCorpusSpec {
        ZipfCorpusSpec {
            vocab_size,
            exponent,
            min_len: 8,
            max_len: 24,
            sequences,
            seed: 2,
        }
    }

    #[test]
    fn steep_zipf_collapses_to_top_token() {
        let c = gen_zipf_corpus(&zipf(50, 20.0, 100)).unwrap();
        let all: Vec<u32> = c.sequences().iter().flatten().copied().collect();
        let top = all.iter().filter(|&&id| id == 2).count();
        assert!(top as f64 / all.len() as f64 > 0.99);
    }

    #[test]
    fn zipf_rank_frequency_slope() {
        let spec = ZipfCorpusSpec {
            min_len: 1000,
            max_len: 1000,
            ..zipf(1000, 1.1, 1000)
        };
        let c = gen_zipf_corpus(&spec).unwrap();
        let mut counts = vec![0f64; 1002];
        for &id in c.sequences().iter().flatten() {
            counts[id as usize] += 1.0;
        }
        // Least squares on the well-populated head of the distribution.
        let pts: Vec<(f64, f64)> = (1..=100).map(|r| ((r as f64).ln(), counts[r + 1].ln())).collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.1).abs() / 1.1 < 0.15, "slope {slope}");
    }

    #[test]
    fn distinct_tokens_grow_with_vocab() {
        let distinct = |v| {
            let c = gen_zipf_corpus(&zipf(v, 1.1, 300)).unwrap();
            let mut seen: Vec<u32> = c.sequences().iter().flatten().copied().collect();
            seen.sort_unstable();
            seen.dedup();
            seen.len()
        };
        assert!(distinct(20) < distinct(100));
        assert!(distinct(100) < distinct(500));
    }

    #[test]
    fn truncate_examples() {
        let v = Vocab::from_tokens(["a", "b", "c"]).unwrap();
        let c = parse_corpus("a a b c\n", &v, None).unwrap();
        let one = vocab_truncate(&c, 1).unwrap();
        assert_eq!(one.to_text(), "a a <unk> <unk>\n");
        assert_eq!(one.vocab().len(), 3);
        let all = vocab_truncate(&c, 10).unwrap();
        assert_eq!(all.to_text(), c.to_text());
    }
}
