use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{load_tsv_corpus, synthetic_corpus, CorpusLine, SyntheticCorpus};
use super::{keyed_rng, splitmix64, ShardMode};
use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Path to a `source<TAB>text` file.
    Tsv(String),
    Synthetic(SyntheticCorpus),
}

fn default_context() -> usize {
    80
}
fn default_embed() -> usize {
    8
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_batch() -> usize {
    16
}
fn default_init_scale() -> f64 {
    1.0
}

/// Next-character prediction with an embedding, tanh hidden layers and a softmax head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharLmSpec {
    pub corpus: CorpusSource,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_embed")]
    pub embed: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub shard: ShardMode,
    /// Multiplier on the Glorot-uniform initialisation range.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl CharLmSpec {
    pub fn tiny(corpus: SyntheticCorpus) -> Self {
        CharLmSpec {
            corpus: CorpusSource::Synthetic(corpus),
            context: 4,
            embed: 4,
            hidden: vec![16, 16],
            batch_size: 8,
            shard: ShardMode::Iid,
            init_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context == 0 || self.embed == 0 {
            return Err(Error::config("workload.context", "context and embed must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("workload.hidden", "layer widths must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("workload.batch_size", "must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("workload.init_scale", "must be non-negative"));
        }
        if let CorpusSource::Synthetic(s) = &self.corpus {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug)]
pub struct CharLmTask {
    vocab: Vec<char>,
    lines: Vec<Vec<u16>>,
    line_source: Vec<usize>,
    /// `(line, position)` of every predicted character.
    samples: Vec<(u32, u32)>,
    shards: Vec<Vec<u32>>,
    context: usize,
    embed: usize,
    layers: Vec<Layer>,
    dim: usize,
    batch_size: usize,
    init_scale: f64,
    seed: u64,
}

const EVAL_CHUNK: usize = 256;

impl CharLmTask {
    pub fn build(spec: &CharLmSpec, num_workers: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let corpus = match &spec.corpus {
            CorpusSource::Tsv(path) => load_tsv_corpus(path)?,
            CorpusSource::Synthetic(shape) => synthetic_corpus(shape, seed)?,
        };
        Self::from_corpus(spec, &corpus, num_workers, seed)
    }

    pub fn from_corpus(spec: &CharLmSpec, corpus: &[CorpusLine], num_workers: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let vocab: Vec<char> = corpus
            .iter()
            .flat_map(|l| l.text.chars())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if vocab.len() < 2 || vocab.len() >= u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "unsupported vocabulary size {}",
                vocab.len()
            )));
        }
        let mut sources: Vec<&str> = Vec::new();
        let mut lines = Vec::with_capacity(corpus.len());
        let mut line_source = Vec::with_capacity(corpus.len());
        let mut samples = Vec::new();
        for (li, line) in corpus.iter().enumerate() {
            let src = match sources.iter().position(|s| *s == line.source) {
                Some(i) => i,
                None => {
                    sources.push(&line.source);
                    sources.len() - 1
                }
            };
            let toks: Vec<u16> = line
                .text
                .chars()
                .map(|c| vocab.binary_search(&c).expect("char in vocab") as u16)
                .collect();
            for p in 0..toks.len() {
                samples.push((li as u32, p as u32));
            }
            lines.push(toks);
            line_source.push(src);
        }

        let shards = match spec.shard {
            ShardMode::Iid => {
                let mut order: Vec<u32> = (0..samples.len() as u32).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5348_4152)));
                let mut shards = vec![Vec::new(); num_workers];
                for (k, s) in order.into_iter().enumerate() {
                    shards[k % num_workers].push(s);
                }
                shards
            }
            ShardMode::NonIid => {
                // With fewer sources than workers, source `s` is dealt round-robin over the
                // contiguous worker block `[s·N/S, (s+1)·N/S)`.
                let (n, s_count) = (num_workers, sources.len());
                let mut shards = vec![Vec::new(); n];
                let mut dealt = vec![0usize; s_count];
                for (k, &(line, _)) in samples.iter().enumerate() {
                    let src = line_source[line as usize];
                    let w = if s_count >= n {
                        src % n
                    } else {
                        let (lo, hi) = (src * n / s_count, (src + 1) * n / s_count);
                        dealt[src] += 1;
                        lo + (dealt[src] - 1) % (hi - lo)
                    };
                    shards[w].push(k as u32);
                }
                shards
            }
        };
        if let Some(w) = shards.iter().position(|s| s.is_empty()) {
            return Err(Error::InvalidArgument(format!("worker {w} received an empty shard")));
        }

        let v = vocab.len();
        let mut dim = (v + 1) * spec.embed;
        let mut layers = Vec::new();
        let mut fan_in = spec.context * spec.embed;
        for &fan_out in spec.hidden.iter().chain(std::iter::once(&v)) {
            let w = dim;
            let b = w + fan_in * fan_out;
            dim = b + fan_out;
            layers.push(Layer { w, b, fan_in, fan_out });
            fan_in = fan_out;
        }

        Ok(CharLmTask {
            vocab,
            lines,
            line_source,
            samples,
            shards,
            context: spec.context,
            embed: spec.embed,
            layers,
            dim,
            batch_size: spec.batch_size,
            init_scale: spec.init_scale,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &[char] {
        &self.vocab
    }

    pub fn num_workers(&self) -> usize {
        self.shards.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    /// Empirical next-character distribution of each shard.
    pub fn shard_label_distributions(&self) -> Vec<Vec<f64>> {
        self.shards
            .iter()
            .map(|shard| {
                let mut hist = vec![0.0; self.vocab.len()];
                for &s in shard {
                    hist[self.target(s as usize) as usize] += 1.0;
                }
                let n = shard.len() as f64;
                hist.into_iter().map(|h| h / n).collect()
            })
            .collect()
    }

    /// Source partition index of every sample in worker `w`'s shard.
    pub fn shard_sources(&self, w: usize) -> BTreeSet<usize> {
        self.shards[w]
            .iter()
            .map(|&s| self.line_source[self.samples[s as usize].0 as usize])
            .collect()
    }

    pub fn initial_params(&self) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ 0x494E_4954));
        let mut p = vec![0.0; self.dim];
        let v = self.vocab.len();
        for x in &mut p[..(v + 1) * self.embed] {
            *x = self.init_scale * rng.random_range(-1.0..1.0);
        }
        for layer in &self.layers {
            let limit = self.init_scale * (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for x in &mut p[layer.w..layer.b] {
                *x = rng.random_range(-limit..=limit);
            }
        }
        ParamVector::new(p).expect("finite init")
    }

    fn target(&self, sample: usize) -> u16 {
        let (line, pos) = self.samples[sample];
        self.lines[line as usize][pos as usize]
    }

    /// Context tokens; index `vocab.len()` pads positions before the line start.
    fn context_tokens(&self, sample: usize, out: &mut [usize]) {
        let (line, pos) = self.samples[sample];
        let toks = &self.lines[line as usize];
        let pad = self.vocab.len();
        for (k, slot) in out.iter_mut().enumerate() {
            let back = self.context - k;
            *slot = if (pos as usize) >= back {
                toks[pos as usize - back] as usize
            } else {
                pad
            };
        }
    }

    fn scratch(&self) -> Scratch {
        let mut acts = vec![vec![0.0; self.context * self.embed]];
        for layer in &self.layers {
            acts.push(vec![0.0; layer.fan_out]);
        }
        Scratch {
            ctx: vec![0; self.context],
            grads: acts.clone(),
            acts,
        }
    }

    /// Forward pass for one sample; leaves activations (logits last) in `s.acts`.
    fn forward(&self, theta: &[f64], sample: usize, s: &mut Scratch) -> f64 {
        self.context_tokens(sample, &mut s.ctx);
        let e = self.embed;
        for (k, &tok) in s.ctx.iter().enumerate() {
            s.acts[0][k * e..(k + 1) * e].copy_from_slice(&theta[tok * e..(tok + 1) * e]);
        }
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, next) = s.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            out.copy_from_slice(&theta[layer.b..layer.b + layer.fan_out]);
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &theta[layer.w + i * layer.fan_out..layer.w + (i + 1) * layer.fan_out];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += a * w;
                }
            }
            if l != last {
                for o in out.iter_mut() {
                    *o = o.tanh();
                }
            }
        }
        let logits = &mut s.acts[last + 1];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
        let lse = max + z.ln();
        lse - logits[self.target(sample) as usize]
    }

    /// Accumulates `scale · ∂loss/∂θ` for the sample last passed to `forward`.
    fn backward(&self, theta: &[f64], sample: usize, scale: f64, s: &mut Scratch, out: &mut [f64]) {
        let last = self.layers.len() - 1;
        {
            let logits = &s.acts[last + 1];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
            let g = &mut s.grads[last + 1];
            for (gi, x) in g.iter_mut().zip(logits) {
                *gi = scale * (x - max).exp() / z;
            }
            g[self.target(sample) as usize] -= scale;
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                for (g, a) in s.grads[l + 1].iter_mut().zip(&s.acts[l + 1]) {
                    *g *= 1.0 - a * a;
                }
            }
            let (gprev, gnext) = s.grads.split_at_mut(l + 1);
            let dz = &gnext[0];
            let dinput = &mut gprev[l];
            let input = &s.acts[l];
            for (o, d) in out[layer.b..layer.b + layer.fan_out].iter_mut().zip(dz) {
                *o += d;
            }
            for (i, &a) in input.iter().enumerate() {
                let base = layer.w + i * layer.fan_out;
                let row = &theta[base..base + layer.fan_out];
                let mut acc = 0.0;
                for ((o, w), d) in out[base..base + layer.fan_out].iter_mut().zip(row).zip(dz) {
                    *o += a * d;
                    acc += w * d;
                }
                dinput[i] = acc;
            }
        }
        let e = self.embed;
        for (k, &tok) in s.ctx.iter().enumerate() {
            for (o, d) in out[tok * e..(tok + 1) * e]
                .iter_mut()
                .zip(&s.grads[0][k * e..(k + 1) * e])
            {
                *o += d;
            }
        }
    }

    pub(super) fn grad_into(&self, theta: &[f64], worker: usize, step: u64, out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|g| *g = 0.0);
        let shard = &self.shards[worker];
        let mut rng = keyed_rng(self.seed, worker, step);
        let mut s = self.scratch();
        let scale = 1.0 / self.batch_size as f64;
        let mut loss = 0.0;
        for _ in 0..self.batch_size {
            let sample = shard[rng.random_range(0..shard.len())] as usize;
            loss += self.forward(theta, sample, &mut s) * scale;
            self.backward(theta, sample, scale, &mut s, out);
        }
        loss
    }

    /// Mean loss of one sample, for gradient checks.
    pub fn sample_loss(&self, theta: &[f64], sample: usize) -> f64 {
        self.forward(theta, sample, &mut self.scratch())
    }

    /// Gradient of `sample_loss`.
    pub fn sample_grad(&self, theta: &[f64], sample: usize) -> Vec<f64> {
        let mut s = self.scratch();
        let mut out = vec![0.0; self.dim];
        self.forward(theta, sample, &mut s);
        self.backward(theta, sample, 1.0, &mut s, &mut out);
        out
    }

    pub fn full_loss(&self, theta: &[f64]) -> f64 {
        let partial: Vec<f64> = (0..self.samples.len().div_ceil(EVAL_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut s = self.scratch();
                let end = ((c + 1) * EVAL_CHUNK).min(self.samples.len());
                (c * EVAL_CHUNK..end)
                    .map(|k| self.forward(theta, k, &mut s))
                    .sum::<f64>()
            })
            .collect();
        partial.iter().sum::<f64>() / self.samples.len() as f64
    }
}

struct Scratch {
    ctx: Vec<usize>,
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> SyntheticCorpus {
        SyntheticCorpus {
            sources: 6,
            lines_per_source: 4,
            line_len: 20,
            alphabet: 8,
            sharpness: 2.0,
        }
    }

    fn task(shard: ShardMode, workers: usize) -> CharLmTask {
        let mut spec = CharLmSpec::tiny(corpus());
        spec.shard = shard;
        CharLmTask::build(&spec, workers, 5).unwrap()
    }

    fn tv(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    fn mean_pairwise_tv(d: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        let mut n = 0.0;
        for i in 0..d.len() {
            for j in (i + 1)..d.len() {
                total += tv(&d[i], &d[j]);
                n += 1.0;
            }
        }
        total / n
    }

    #[test]
    fn single_worker_shard_is_everything() {
        let t = task(ShardMode::Iid, 1);
        assert_eq!(t.shard_sizes(), vec![t.num_samples()]);
        let t = task(ShardMode::NonIid, 1);
        assert_eq!(t.shard_sizes(), vec![t.num_samples()]);
    }

    #[test]
    fn iid_shards_are_balanced() {
        let t = task(ShardMode::Iid, 5);
        let sizes = t.shard_sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "{sizes:?}");
    }

    #[test]
    fn non_iid_shards_partition_by_source() {
        let t = task(ShardMode::NonIid, 3);
        for w in 0..3 {
            let sources = t.shard_sources(w);
            assert!(sources.iter().all(|s| s % 3 == w));
        }
    }

    #[test]
    fn non_iid_fewer_sources_than_workers_uses_blocks() {
        let t = task(ShardMode::NonIid, 7);
        let n_sources = (0..7).flat_map(|w| t.shard_sources(w)).collect::<BTreeSet<_>>().len();
        assert!(n_sources < 7);
        for w in 0..7 {
            let sources = t.shard_sources(w);
            assert_eq!(sources.len(), 1, "worker {w}: {sources:?}");
            let s = *sources.iter().next().unwrap();
            assert!(s * 7 / n_sources <= w && w < (s + 1) * 7 / n_sources);
        }
    }

    #[test]
    fn non_iid_label_skew_exceeds_iid() {
        let iid = mean_pairwise_tv(&task(ShardMode::Iid, 6).shard_label_distributions());
        let non = mean_pairwise_tv(&task(ShardMode::NonIid, 6).shard_label_distributions());
        assert!(non > iid, "non-iid {non} vs iid {iid}");
    }

    #[test]
    fn near_zero_weights_give_uniform_loss() {
        let mut spec = CharLmSpec::tiny(corpus());
        spec.init_scale = 1e-4;
        let t = CharLmTask::build(&spec, 1, 5).unwrap();
        let loss = t.full_loss(t.initial_params().as_slice());
        let uniform = (t.vocab().len() as f64).ln();
        assert!((loss - uniform).abs() < 1e-3, "{loss} vs {uniform}");
    }

    #[test]
    fn full_loss_invariant_to_shard_mode() {
        let a = task(ShardMode::Iid, 3);
        let b = task(ShardMode::NonIid, 3);
        let theta = a.initial_params();
        assert_eq!(a.full_loss(theta.as_slice()), b.full_loss(theta.as_slice()));
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let t = task(ShardMode::Iid, 2);
        let theta = t.initial_params();
        let mut out = vec![0.0; t.dim()];
        let loss = t.grad_into(theta.as_slice(), 1, 3, &mut out);
        assert!(loss.is_finite() && loss > 0.0);
        assert!(out.iter().any(|g| *g != 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn finite_difference_gradient(sample in 0usize..120, start in 0usize..1000, seed in 0u64..4) {
            let spec = CharLmSpec::tiny(corpus());
            let t = CharLmTask::build(&spec, 1, seed).unwrap();
            let theta = t.initial_params().into_vec();
            let g = t.sample_grad(&theta, sample % t.num_samples());
            let eps = 1e-5;
            let offset = start % (t.dim() - 10);
            for j in offset..offset + 10 {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += eps;
                minus[j] -= eps;
                let fd = (t.sample_loss(&plus, sample % t.num_samples())
                    - t.sample_loss(&minus, sample % t.num_samples())) / (2.0 * eps);
                prop_assert!((fd - g[j]).abs() <= 1e-6, "param {}: fd {} vs {}", j, fd, g[j]);
            }
        }
    }
}
