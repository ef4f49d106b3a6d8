//! The encoder / decoder / evaluator network and its loss.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{AttnLayout, Params, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};
use crate::vocab::{FeatureTokenVocab, Token, TokenSequence};

/// Model and optimizer settings. [`Default`] gives the published
/// configuration; [`Hyperparams::desk`] a smaller one that trains in
/// minutes on a single CPU core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub token_embed_dim: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub latent_dim: usize,
    /// Width of both hidden layers of the utility evaluator.
    pub evaluator_hidden: usize,
    /// Weight of the utility-regression loss.
    pub alpha: f64,
    /// Weight of the reconstruction loss.
    pub beta: f64,
    /// Weight of the KL term.
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_shuffles: usize,
    /// Dropout on attention and feed-forward sublayer outputs during training.
    pub dropout: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            token_embed_dim: 64,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 8,
            ffn_dim: 256,
            latent_dim: 64,
            evaluator_hidden: 200,
            alpha: 0.8,
            beta: 0.2,
            gamma: 0.001,
            batch_size: 1024,
            epochs: 100,
            learning_rate: 1e-4,
            n_shuffles: 25,
            dropout: 0.1,
        }
    }
}

impl Hyperparams {
    /// Scaled-down profile: narrower layers, smaller batches and a larger
    /// step size so that far fewer samples reach the same loss.
    pub fn desk() -> Self {
        Hyperparams {
            token_embed_dim: 32,
            n_layers_enc: 1,
            n_layers_dec: 1,
            n_heads: 4,
            ffn_dim: 64,
            latent_dim: 32,
            evaluator_hidden: 200,
            batch_size: 64,
            epochs: 12,
            learning_rate: 2e-3,
            dropout: 0.0,
            ..Hyperparams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.token_embed_dim,
            self.n_layers_enc,
            self.n_layers_dec,
            self.n_heads,
            self.ffn_dim,
            self.latent_dim,
            self.evaluator_hidden,
            self.batch_size,
            self.epochs,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("model sizes, batch size and epochs must be positive".into()));
        }
        if self.token_embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads={} does not divide token_embed_dim={}",
                self.n_heads, self.token_embed_dim
            )));
        }
        let weights_ok = [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0);
        if !weights_ok {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Encoder output: mean `m` and log-scale `sigma` (the latent scale is
/// `exp(sigma)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentDistribution {
    /// The distribution mean as a point (`epsilon = 0`).
    pub fn mean(&self) -> LatentPoint {
        LatentPoint {
            e_star: self.m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub e_star: Vec<f64>,
}

/// `e* = m + epsilon * exp(sigma)`, elementwise.
pub fn reparameterize(dist: &LatentDistribution, epsilon: &[f64]) -> Result<LatentPoint> {
    if dist.m.len() != dist.sigma.len() {
        return Err(Error::LengthMismatch(dist.m.len(), dist.sigma.len()));
    }
    if epsilon.len() != dist.m.len() {
        return Err(Error::LengthMismatch(epsilon.len(), dist.m.len()));
    }
    let e_star = dist
        .m
        .iter()
        .zip(&dist.sigma)
        .zip(epsilon)
        .map(|((m, s), e)| m + e * s.exp())
        .collect();
    Ok(LatentPoint { e_star })
}

/// Mean over latent dimensions of `exp(sigma) - (1 + sigma) + m^2`.
pub fn kl_term(dist: &LatentDistribution) -> f64 {
    let n = dist.m.len() as f64;
    dist.m
        .iter()
        .zip(&dist.sigma)
        .map(|(m, s)| s.exp() - (1.0 + s) + m * m)
        .sum::<f64>()
        / n
}

/// The three loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub rec: f64,
    pub evt: f64,
    pub kl: f64,
}

/// One training example: a wire-form sequence and its utility label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub seq: TokenSequence,
    pub utility: f64,
}

/// Network parameters plus the settings needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetVae {
    pub(crate) hp: Hyperparams,
    pub(crate) vocab: FeatureTokenVocab,
    pub(crate) params: Params,
}

/// Row-stacked batch of sequences padded to a common length.
struct Padded {
    tokens: Vec<Token>,
    len: usize,
    lengths: Vec<usize>,
}

impl Padded {
    fn new(seqs: &[&[Token]], pad: Token) -> Padded {
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(len * seqs.len());
        for s in seqs {
            tokens.extend_from_slice(s);
            tokens.extend(std::iter::repeat_n(pad, len - s.len()));
        }
        Padded {
            tokens,
            len,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        }
    }

    fn batch(&self) -> usize {
        self.lengths.len()
    }
}

/// Dropout source for a training pass; `None` means evaluation mode.
type Noise<'r> = Option<&'r mut Rng>;

fn sinusoid(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn xavier(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-b..b))
}

impl SubsetVae {
    /// Freshly initialized model for `n_features` feature tokens.
    pub fn new(n_features: usize, hp: &Hyperparams, seed: u64) -> Result<SubsetVae> {
        hp.validate()?;
        if n_features == 0 {
            return Err(Error::Config("vocabulary needs at least one feature".into()));
        }
        let vocab = FeatureTokenVocab::new(n_features);
        let mut rng = seeded(seed);
        let mut p = Params::new();
        let (d, z, v, f, h) = (hp.token_embed_dim, hp.latent_dim, vocab.size(), hp.ffn_dim, hp.evaluator_hidden);

        let linear = |p: &mut Params, rng: &mut Rng, name: &str, i: usize, o: usize| {
            p.insert(format!("{name}.w"), xavier(rng, i, o));
            p.insert(format!("{name}.b"), Array2::zeros((1, o)));
        };
        let norm = |p: &mut Params, name: &str| {
            p.insert(format!("{name}.g"), Array2::ones((1, d)));
            p.insert(format!("{name}.b"), Array2::zeros((1, d)));
        };
        let attn = |p: &mut Params, rng: &mut Rng, name: &str| {
            for part in ["q", "k", "v", "o"] {
                linear(p, rng, &format!("{name}.{part}"), d, d);
            }
        };

        p.insert("enc.embed", Array2::from_shape_fn((v, d), |_| rng.sample::<f64, _>(StandardNormal) * 0.1));
        for l in 0..hp.n_layers_enc {
            let pre = format!("enc.layer{l}");
            attn(&mut p, &mut rng, &format!("{pre}.attn"));
            norm(&mut p, &format!("{pre}.norm1"));
            linear(&mut p, &mut rng, &format!("{pre}.ff1"), d, f);
            linear(&mut p, &mut rng, &format!("{pre}.ff2"), f, d);
            norm(&mut p, &format!("{pre}.norm2"));
        }
        linear(&mut p, &mut rng, "enc.mean", d, z);
        linear(&mut p, &mut rng, "enc.log_scale", d, z);

        p.insert("dec.embed", Array2::from_shape_fn((v, d), |_| rng.sample::<f64, _>(StandardNormal) * 0.1));
        linear(&mut p, &mut rng, "dec.memory", z, d);
        for l in 0..hp.n_layers_dec {
            let pre = format!("dec.layer{l}");
            attn(&mut p, &mut rng, &format!("{pre}.self"));
            norm(&mut p, &format!("{pre}.norm1"));
            attn(&mut p, &mut rng, &format!("{pre}.cross"));
            norm(&mut p, &format!("{pre}.norm2"));
            linear(&mut p, &mut rng, &format!("{pre}.ff1"), d, f);
            linear(&mut p, &mut rng, &format!("{pre}.ff2"), f, d);
            norm(&mut p, &format!("{pre}.norm3"));
        }
        linear(&mut p, &mut rng, "dec.out", d, v);

        linear(&mut p, &mut rng, "evt.hidden1", z, h);
        linear(&mut p, &mut rng, "evt.hidden2", h, h);
        linear(&mut p, &mut rng, "evt.out", h, 1);

        Ok(SubsetVae {
            hp: hp.clone(),
            vocab,
            params: p,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn vocab(&self) -> &FeatureTokenVocab {
        &self.vocab
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.hp.latent_dim
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.len() > self.vocab.max_len() {
            return Err(Error::InvalidSequence(format!(
                "length {} exceeds maximum {}",
                tokens.len(),
                self.vocab.max_len()
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= self.vocab.size()) {
            return Err(Error::InvalidSequence(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    fn check_latent(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.hp.latent_dim {
            return Err(Error::LengthMismatch(e.len(), self.hp.latent_dim));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent point".into()));
        }
        Ok(())
    }

    // ---- graph builders ------------------------------------------------

    fn dropout(&self, tape: &mut Tape, x: Var, noise: &mut Noise) -> Var {
        let p = self.hp.dropout;
        match noise {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = tape.value(x).mapv(|_| if rng.random::<f64>() < p { 0.0 } else { keep });
                tape.dropout(x, mask)
            }
            _ => x,
        }
    }

    fn linear(&self, tape: &mut Tape, x: Var, name: &str) -> Var {
        let w = tape.named(&format!("{name}.w"));
        let b = tape.named(&format!("{name}.b"));
        tape.affine(x, w, b)
    }

    fn norm(&self, tape: &mut Tape, x: Var, name: &str) -> Var {
        let g = tape.named(&format!("{name}.g"));
        let b = tape.named(&format!("{name}.b"));
        tape.layer_norm(x, g, b)
    }

    fn embed(&self, tape: &mut Tape, table: &str, batch: &Padded) -> Var {
        let d = self.hp.token_embed_dim;
        let t = tape.named(table);
        let x = tape.gather(t, batch.tokens.clone());
        let x = tape.scale(x, (d as f64).sqrt());
        let pe = sinusoid(batch.len, d);
        let mut pos = Array2::zeros((batch.tokens.len(), d));
        for b in 0..batch.batch() {
            pos.slice_mut(ndarray::s![b * batch.len..(b + 1) * batch.len, ..]).assign(&pe);
        }
        let pos = tape.leaf(pos);
        tape.add(x, pos)
    }

    fn multi_head(&self, tape: &mut Tape, xq: Var, xkv: Var, name: &str, layout: AttnLayout) -> Var {
        let q = self.linear(tape, xq, &format!("{name}.q"));
        let k = self.linear(tape, xkv, &format!("{name}.k"));
        let v = self.linear(tape, xkv, &format!("{name}.v"));
        let o = tape.attention(q, k, v, layout);
        self.linear(tape, o, &format!("{name}.o"))
    }

    fn feed_forward(&self, tape: &mut Tape, x: Var, name: &str, noise: &mut Noise) -> Var {
        let h = self.linear(tape, x, &format!("{name}.ff1"));
        let h = tape.relu(h);
        let h = self.linear(tape, h, &format!("{name}.ff2"));
        self.dropout(tape, h, noise)
    }

    /// Residual add followed by layer norm (post-norm block).
    fn residual(&self, tape: &mut Tape, x: Var, sub: Var, norm: &str) -> Var {
        let s = tape.add(x, sub);
        self.norm(tape, s, norm)
    }

    /// Returns `(m, sigma)`, each `batch x latent_dim`.
    fn encode_graph(&self, tape: &mut Tape, batch: &Padded, noise: &mut Noise) -> (Var, Var) {
        let mut x = self.embed(tape, "enc.embed", batch);
        for l in 0..self.hp.n_layers_enc {
            let pre = format!("enc.layer{l}");
            let layout = AttnLayout {
                batch: batch.batch(),
                lq: batch.len,
                lk: batch.len,
                heads: self.hp.n_heads,
                key_len: batch.lengths.clone(),
                causal: false,
            };
            let a = self.multi_head(tape, x, x, &format!("{pre}.attn"), layout);
            let a = self.dropout(tape, a, noise);
            x = self.residual(tape, x, a, &format!("{pre}.norm1"));
            let f = self.feed_forward(tape, x, &pre, noise);
            x = self.residual(tape, x, f, &format!("{pre}.norm2"));
        }
        let pooled = tape.mean_pool(x, batch.len, batch.lengths.clone());
        let m = self.linear(tape, pooled, "enc.mean");
        let s = self.linear(tape, pooled, "enc.log_scale");
        (m, s)
    }

    /// Next-token logits for every prefix position, `(batch*len) x vocab`.
    fn decode_graph(&self, tape: &mut Tape, latent: Var, inputs: &Padded, noise: &mut Noise) -> Var {
        let memory = self.linear(tape, latent, "dec.memory");
        let mut x = self.embed(tape, "dec.embed", inputs);
        let b = inputs.batch();
        for l in 0..self.hp.n_layers_dec {
            let pre = format!("dec.layer{l}");
            let causal = AttnLayout {
                batch: b,
                lq: inputs.len,
                lk: inputs.len,
                heads: self.hp.n_heads,
                key_len: inputs.lengths.clone(),
                causal: true,
            };
            let a = self.multi_head(tape, x, x, &format!("{pre}.self"), causal);
            let a = self.dropout(tape, a, noise);
            x = self.residual(tape, x, a, &format!("{pre}.norm1"));
            let cross = AttnLayout {
                batch: b,
                lq: inputs.len,
                lk: 1,
                heads: self.hp.n_heads,
                key_len: vec![1; b],
                causal: false,
            };
            let c = self.multi_head(tape, x, memory, &format!("{pre}.cross"), cross);
            let c = self.dropout(tape, c, noise);
            x = self.residual(tape, x, c, &format!("{pre}.norm2"));
            let f = self.feed_forward(tape, x, &pre, noise);
            x = self.residual(tape, x, f, &format!("{pre}.norm3"));
        }
        self.linear(tape, x, "dec.out")
    }

    fn evaluator_graph(&self, tape: &mut Tape, latent: Var) -> Var {
        let h = self.linear(tape, latent, "evt.hidden1");
        let h = tape.tanh(h);
        let h = self.linear(tape, h, "evt.hidden2");
        let h = tape.tanh(h);
        self.linear(tape, h, "evt.out")
    }

    /// Builds the joint objective for a batch and returns the node ids of
    /// `(total, rec, evt, kl)`.
    fn loss_graph(
        &self,
        tape: &mut Tape,
        batch: &[Example],
        epsilon: &Array2<f64>,
        noise: &mut Noise,
    ) -> Result<[Var; 4]> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if epsilon.dim() != (batch.len(), self.hp.latent_dim) {
            return Err(Error::LengthMismatch(epsilon.len(), batch.len() * self.hp.latent_dim));
        }
        for ex in batch {
            if !(0.0..=1.0).contains(&ex.utility) {
                return Err(Error::Corpus(format!("utility {} outside [0, 1]", ex.utility)));
            }
            self.check_tokens(ex.seq.tokens())?;
        }
        let pad = self.vocab.pad();
        let full: Vec<&[Token]> = batch.iter().map(|e| e.seq.tokens()).collect();
        let enc_in = Padded::new(&full, pad);
        let (m, s) = self.encode_graph(tape, &enc_in, noise);
        let scale = tape.exp(s);
        let eps = tape.leaf(epsilon.clone());
        let spread = tape.mul(eps, scale);
        let e = tape.add(m, spread);

        // Teacher forcing: read SOS..t_L, predict t_1..EOS.
        let dec_src: Vec<&[Token]> = full.iter().map(|t| &t[..t.len() - 1]).collect();
        let dec_in = Padded::new(&dec_src, pad);
        let logits = self.decode_graph(tape, e, &dec_in, noise);
        let mut targets = Vec::with_capacity(dec_in.tokens.len());
        for t in &full {
            let tgt = &t[1..];
            targets.extend(tgt.iter().map(|&x| Some(x)));
            targets.extend(std::iter::repeat_n(None, dec_in.len - tgt.len()));
        }
        let nll = tape.cross_entropy(logits, targets);
        let rec = tape.scale(nll, 1.0 / batch.len() as f64);

        let pred = self.evaluator_graph(tape, e);
        let evt = tape.mse(pred, batch.iter().map(|e| e.utility).collect());
        let kl = tape.kl(m, s);
        let total = tape.combine(vec![(evt, self.hp.alpha), (rec, self.hp.beta), (kl, self.hp.gamma)]);
        Ok([total, rec, evt, kl])
    }

    fn parts(tape: &Tape, ids: [Var; 4]) -> LossParts {
        LossParts {
            total: tape.scalar(ids[0]),
            rec: tape.scalar(ids[1]),
            evt: tape.scalar(ids[2]),
            kl: tape.scalar(ids[3]),
        }
    }

    /// Loss and parameter gradients (aligned with [`Params`] ids); dropout
    /// is applied only when `noise` is given.
    pub(crate) fn loss_and_grads_with(
        &self,
        batch: &[Example],
        epsilon: &Array2<f64>,
        mut noise: Noise,
    ) -> Result<(LossParts, Vec<Option<Array2<f64>>>)> {
        let mut tape = Tape::new(&self.params);
        let ids = self.loss_graph(&mut tape, batch, epsilon, &mut noise)?;
        let parts = Self::parts(&tape, ids);
        Ok((parts, tape.backward(ids[0]).into_params()))
    }

    // ---- public inference API -----------------------------------------

    /// Joint objective `alpha*L_evt + beta*L_rec + gamma*L_kl` on a batch
    /// with explicit noise rows (`batch x latent_dim`); dropout is off.
    pub fn joint_loss(&self, batch: &[Example], epsilon: &Array2<f64>) -> Result<LossParts> {
        let mut tape = Tape::new(&self.params);
        let ids = self.loss_graph(&mut tape, batch, epsilon, &mut None)?;
        Ok(Self::parts(&tape, ids))
    }

    /// [`SubsetVae::joint_loss`] plus the gradient of the total for every
    /// parameter, in [`Params`] order (zero where the loss does not depend
    /// on a parameter).
    pub fn loss_gradients(&self, batch: &[Example], epsilon: &Array2<f64>) -> Result<(LossParts, Vec<Array2<f64>>)> {
        let (parts, grads) = self.loss_and_grads_with(batch, epsilon, None)?;
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Array2::zeros(self.params.get(i).dim())))
            .collect();
        Ok((parts, grads))
    }

    /// Encodes one sequence. Trailing `PAD` tokens are ignored.
    pub fn encode(&self, seq: &TokenSequence) -> Result<LatentDistribution> {
        self.encode_tokens(seq.tokens())
    }

    /// Like [`SubsetVae::encode`] on raw tokens, which may carry trailing
    /// padding.
    pub fn encode_tokens(&self, tokens: &[Token]) -> Result<LatentDistribution> {
        let pad = self.vocab.pad();
        let n = tokens.iter().position(|&t| t == pad).unwrap_or(tokens.len());
        if tokens[n..].iter().any(|&t| t != pad) {
            return Err(Error::InvalidSequence("padding must be trailing".into()));
        }
        if n == 0 {
            return Err(Error::InvalidSequence("nothing to encode".into()));
        }
        self.check_tokens(&tokens[..n])?;
        let mut tape = Tape::new(&self.params);
        let batch = Padded {
            tokens: tokens.to_vec(),
            len: tokens.len(),
            lengths: vec![n],
        };
        let (m, s) = self.encode_graph(&mut tape, &batch, &mut None);
        Ok(LatentDistribution {
            m: tape.value(m).iter().copied().collect(),
            sigma: tape.value(s).iter().copied().collect(),
        })
    }

    /// Encodes many sequences in one pass; returns the means.
    pub fn encode_means(&self, seqs: &[&TokenSequence]) -> Result<Vec<Vec<f64>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let toks: Vec<&[Token]> = seqs.iter().map(|s| s.tokens()).collect();
        for t in &toks {
            self.check_tokens(t)?;
        }
        let mut tape = Tape::new(&self.params);
        let batch = Padded::new(&toks, self.vocab.pad());
        let (m, _) = self.encode_graph(&mut tape, &batch, &mut None);
        Ok(tape.value(m).rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Next-token distributions after every position of `prefix`
    /// (`prefix.len() x vocab`).
    pub fn decode_all(&self, latent: &LatentPoint, prefix: &[Token]) -> Result<Array2<f64>> {
        self.check_latent(&latent.e_star)?;
        if prefix.is_empty() {
            return Err(Error::InvalidSequence("decoder prefix must start with SOS".into()));
        }
        self.check_tokens(prefix)?;
        let mut tape = Tape::new(&self.params);
        let e = tape.leaf(Array2::from_shape_vec((1, latent.e_star.len()), latent.e_star.clone()).expect("row"));
        let inputs = Padded {
            tokens: prefix.to_vec(),
            len: prefix.len(),
            lengths: vec![prefix.len()],
        };
        let logits = self.decode_graph(&mut tape, e, &inputs, &mut None);
        Ok(softmax_rows(tape.value(logits)))
    }

    /// Distribution of the token following `prefix`.
    pub fn decode_step(&self, latent: &LatentPoint, prefix: &[Token]) -> Result<Vec<f64>> {
        let all = self.decode_all(latent, prefix)?;
        Ok(all.row(all.nrows() - 1).to_vec())
    }

    /// Teacher-forced `-sum log P(t_j | e*, t_<j)` over the interior tokens
    /// and the closing EOS.
    pub fn sequence_nll(&self, latent: &LatentPoint, seq: &TokenSequence) -> Result<f64> {
        let t = seq.tokens();
        let probs = self.decode_all(latent, &t[..t.len() - 1])?;
        Ok(t[1..].iter().enumerate().map(|(j, &tok)| -probs[[j, tok]].ln()).sum())
    }

    pub fn evaluate_utility(&self, latent: &LatentPoint) -> Result<f64> {
        self.utility_and_gradient(&latent.e_star).map(|(v, _)| v)
    }

    /// Predicted utility at `e` and its gradient with respect to `e`.
    pub fn utility_and_gradient(&self, e: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_latent(e)?;
        let mut tape = Tape::new(&self.params);
        let x = tape.leaf(Array2::from_shape_vec((1, e.len()), e.to_vec()).expect("row"));
        let out = self.evaluator_graph(&mut tape, x);
        let value = tape.value(out)[[0, 0]];
        let grads = tape.backward(out);
        let g = grads.wrt(x).map(|g| g.iter().copied().collect()).unwrap_or_else(|| vec![0.0; e.len()]);
        Ok((value, g))
    }

    /// Standard-normal noise rows for a batch.
    pub fn sample_epsilon(&self, rows: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, self.hp.latent_dim), |_| StandardNormal.sample(rng))
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
    out
}
