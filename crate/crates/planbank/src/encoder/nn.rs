//! The encoder network, in plain `f64` with hand-written backward passes.
//!
//! Agent tracks run through a recurrent cell (last hidden state per agent),
//! map polylines through a per-waypoint perceptron with two max-pool stages,
//! and the ego state through a small projection. The resulting token set
//! (ego + agents + pooled map) passes one self-attention block with residuals
//! and a feed-forward, is mean-pooled over valid tokens, projected, and
//! L2-normalized into the embedding. A linear head on the embedding produces
//! class logits (used only while training).
//!
//! Gradients are exact: every forward stage caches what its backward needs,
//! and masked rows are skipped outright, never multiplied by zero — which is
//! what lets [`Pad::Poison`](super::features::Pad) prove mask invariance.

use super::features::{tensorize, Pad, SceneTensor, AGENT_FEATS, EGO_FEATS, MAP_FEATS};
use super::{EncoderError, SceneEmbedding, EMBED_DIM};
use crate::scenario::{Scenario, MAX_AGENTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODEL_DIM: usize = 64;
pub const HEADS: usize = 4;
pub const HEAD_DIM: usize = MODEL_DIM / HEADS;
pub const FFN_DIM: usize = 128;
pub const NUM_CLASSES: usize = 14;
/// Ego token + agent slots + pooled map token.
pub const TOKENS: usize = MAX_AGENTS + 2;

fn assert_finite(xs: &[f64], layer: &'static str) -> Result<(), EncoderError> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EncoderError::Activation(layer))
    }
}

/// Dense affine layer; weights are row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    fn new(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = 1.0 / (n_in as f64).sqrt();
        Linear {
            n_in,
            n_out,
            w: (0..n_in * n_out).map(|_| rng.gen_range(-s..s)).collect(),
            b: vec![0.0; n_out],
        }
    }

    fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        let mut y = self.b.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            *yo += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
        y
    }

    /// Accumulates weight gradients into `g` and, when `dx` is given, the
    /// input gradient into it.
    fn back(&self, g: &mut Linear, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        for (o, &d) in dy.iter().enumerate() {
            g.b[o] += d;
            let row = &mut g.w[o * self.n_in..(o + 1) * self.n_in];
            for (gw, &xi) in row.iter_mut().zip(x) {
                *gw += d * xi;
            }
        }
        if let Some(dx) = dx {
            for (o, &d) in dy.iter().enumerate() {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                for (dxi, &w) in dx.iter_mut().zip(row) {
                    *dxi += d * w;
                }
            }
        }
    }
}

/// Recurrent cell with input/forget/cell/output gates, in that block order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub n_in: usize,
    pub n_h: usize,
    /// `(4·n_h) × n_in`.
    pub wx: Vec<f64>,
    /// `(4·n_h) × n_h`.
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

struct LstmStep {
    t: usize,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
}

pub struct LstmTrace {
    steps: Vec<LstmStep>,
    pub h_last: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmCell {
    fn new(n_in: usize, n_h: usize, rng: &mut ChaCha8Rng) -> Self {
        let sx = 1.0 / (n_in as f64).sqrt();
        let sh = 1.0 / (n_h as f64).sqrt();
        let mut b = vec![0.0; 4 * n_h];
        // Forget gate opens at init so early steps are remembered.
        b[n_h..2 * n_h].fill(1.0);
        LstmCell {
            n_in,
            n_h,
            wx: (0..4 * n_h * n_in).map(|_| rng.gen_range(-sx..sx)).collect(),
            wh: (0..4 * n_h * n_h).map(|_| rng.gen_range(-sh..sh)).collect(),
            b,
        }
    }

    fn zeros(n_in: usize, n_h: usize) -> Self {
        LstmCell {
            n_in,
            n_h,
            wx: vec![0.0; 4 * n_h * n_in],
            wh: vec![0.0; 4 * n_h * n_h],
            b: vec![0.0; 4 * n_h],
        }
    }

    /// Runs the valid steps of one track in time order; invalid steps are
    /// skipped, not zero-fed.
    fn forward_seq(&self, xs: &[[f64; AGENT_FEATS]], valid: &[bool]) -> LstmTrace {
        let h = self.n_h;
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut steps = Vec::new();
        for (t, x) in xs.iter().enumerate() {
            if !valid[t] {
                continue;
            }
            let mut pre = self.b.clone();
            for (r, p) in pre.iter_mut().enumerate() {
                let rx = &self.wx[r * self.n_in..(r + 1) * self.n_in];
                *p += rx.iter().zip(x.iter()).map(|(w, x)| w * x).sum::<f64>();
                let rh = &self.wh[r * h..(r + 1) * h];
                *p += rh.iter().zip(&hs).map(|(w, h)| w * h).sum::<f64>();
            }
            let i: Vec<f64> = pre[0..h].iter().map(|&p| sigmoid(p)).collect();
            let f: Vec<f64> = pre[h..2 * h].iter().map(|&p| sigmoid(p)).collect();
            let g: Vec<f64> = pre[2 * h..3 * h].iter().map(|&p| p.tanh()).collect();
            let o: Vec<f64> = pre[3 * h..4 * h].iter().map(|&p| sigmoid(p)).collect();
            let c_prev = cs.clone();
            let h_prev = hs.clone();
            for j in 0..h {
                cs[j] = f[j] * c_prev[j] + i[j] * g[j];
            }
            let tc: Vec<f64> = cs.iter().map(|&c| c.tanh()).collect();
            for j in 0..h {
                hs[j] = o[j] * tc[j];
            }
            steps.push(LstmStep {
                t,
                i,
                f,
                g,
                o,
                tc,
                h_prev,
                c_prev,
            });
        }
        LstmTrace { steps, h_last: hs }
    }

    fn backward_seq(
        &self,
        g: &mut LstmCell,
        xs: &[[f64; AGENT_FEATS]],
        trace: &LstmTrace,
        dh_last: &[f64],
    ) {
        let h = self.n_h;
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; h];
        for step in trace.steps.iter().rev() {
            let x = &xs[step.t];
            let mut dpre = vec![0.0; 4 * h];
            for j in 0..h {
                let do_ = dh[j] * step.tc[j];
                let dcj = dc[j] + dh[j] * step.o[j] * (1.0 - step.tc[j] * step.tc[j]);
                let di = dcj * step.g[j];
                let df = dcj * step.c_prev[j];
                let dg = dcj * step.i[j];
                dpre[j] = di * step.i[j] * (1.0 - step.i[j]);
                dpre[h + j] = df * step.f[j] * (1.0 - step.f[j]);
                dpre[2 * h + j] = dg * (1.0 - step.g[j] * step.g[j]);
                dpre[3 * h + j] = do_ * step.o[j] * (1.0 - step.o[j]);
                dc[j] = dcj * step.f[j];
            }
            for (r, &d) in dpre.iter().enumerate() {
                g.b[r] += d;
                let gx = &mut g.wx[r * self.n_in..(r + 1) * self.n_in];
                for (gw, &xi) in gx.iter_mut().zip(x.iter()) {
                    *gw += d * xi;
                }
                let gh = &mut g.wh[r * h..(r + 1) * h];
                for (gw, &hp) in gh.iter_mut().zip(&step.h_prev) {
                    *gw += d * hp;
                }
            }
            dh = vec![0.0; h];
            for (r, &d) in dpre.iter().enumerate() {
                let rh = &self.wh[r * h..(r + 1) * h];
                for (dhj, &w) in dh.iter_mut().zip(rh) {
                    *dhj += d * w;
                }
            }
        }
    }
}

/// One multi-head self-attention block over the compact (valid) token list.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

pub struct AttnTrace {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// `HEADS × n × n` softmax rows.
    alpha: Vec<Vec<Vec<f64>>>,
    ctx: Vec<Vec<f64>>,
}

impl Attention {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Attention {
            wq: Linear::new(MODEL_DIM, MODEL_DIM, rng),
            wk: Linear::new(MODEL_DIM, MODEL_DIM, rng),
            wv: Linear::new(MODEL_DIM, MODEL_DIM, rng),
            wo: Linear::new(MODEL_DIM, MODEL_DIM, rng),
        }
    }

    fn zeros() -> Self {
        Attention {
            wq: Linear::zeros(MODEL_DIM, MODEL_DIM),
            wk: Linear::zeros(MODEL_DIM, MODEL_DIM),
            wv: Linear::zeros(MODEL_DIM, MODEL_DIM),
            wo: Linear::zeros(MODEL_DIM, MODEL_DIM),
        }
    }

    /// Returns the attention contribution per token (residual not added).
    fn forward(&self, tokens: &[Vec<f64>]) -> (Vec<Vec<f64>>, AttnTrace) {
        let n = tokens.len();
        let scale = 1.0 / (HEAD_DIM as f64).sqrt();
        let q: Vec<Vec<f64>> = tokens.iter().map(|t| self.wq.apply(t)).collect();
        let k: Vec<Vec<f64>> = tokens.iter().map(|t| self.wk.apply(t)).collect();
        let v: Vec<Vec<f64>> = tokens.iter().map(|t| self.wv.apply(t)).collect();
        let mut alpha = vec![vec![vec![0.0; n]; n]; HEADS];
        let mut ctx = vec![vec![0.0; MODEL_DIM]; n];
        for head in 0..HEADS {
            let lo = head * HEAD_DIM;
            let hi = lo + HEAD_DIM;
            for i in 0..n {
                let mut scores = vec![0.0; n];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = q[i][lo..hi]
                        .iter()
                        .zip(&k[j][lo..hi])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        * scale;
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - m).exp();
                    denom += *s;
                }
                for (j, s) in scores.iter().enumerate() {
                    let a = s / denom;
                    alpha[head][i][j] = a;
                    for d in lo..hi {
                        ctx[i][d] += a * v[j][d];
                    }
                }
            }
        }
        let out: Vec<Vec<f64>> = ctx.iter().map(|c| self.wo.apply(c)).collect();
        (
            out,
            AttnTrace {
                q,
                k,
                v,
                alpha,
                ctx,
            },
        )
    }

    /// `dout` is the gradient at the attention contribution; returns the
    /// gradient at the input tokens (residual path not included).
    fn backward(
        &self,
        g: &mut Attention,
        tokens: &[Vec<f64>],
        tr: &AttnTrace,
        dout: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let n = tokens.len();
        let scale = 1.0 / (HEAD_DIM as f64).sqrt();
        let mut dctx = vec![vec![0.0; MODEL_DIM]; n];
        for i in 0..n {
            self.wo
                .back(&mut g.wo, &tr.ctx[i], &dout[i], Some(&mut dctx[i]));
        }
        let mut dq = vec![vec![0.0; MODEL_DIM]; n];
        let mut dk = vec![vec![0.0; MODEL_DIM]; n];
        let mut dv = vec![vec![0.0; MODEL_DIM]; n];
        for head in 0..HEADS {
            let lo = head * HEAD_DIM;
            let hi = lo + HEAD_DIM;
            for i in 0..n {
                let mut dalpha = vec![0.0; n];
                for (j, da) in dalpha.iter_mut().enumerate() {
                    *da = dctx[i][lo..hi]
                        .iter()
                        .zip(&tr.v[j][lo..hi])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                    let a = tr.alpha[head][i][j];
                    for d in lo..hi {
                        dv[j][d] += a * dctx[i][d];
                    }
                }
                let dot: f64 = tr.alpha[head][i]
                    .iter()
                    .zip(&dalpha)
                    .map(|(a, da)| a * da)
                    .sum();
                for j in 0..n {
                    let ds = tr.alpha[head][i][j] * (dalpha[j] - dot) * scale;
                    for d in lo..hi {
                        dq[i][d] += ds * tr.k[j][d];
                        dk[j][d] += ds * tr.q[i][d];
                    }
                }
            }
        }
        let mut dtok = vec![vec![0.0; MODEL_DIM]; n];
        for i in 0..n {
            self.wq.back(&mut g.wq, &tokens[i], &dq[i], Some(&mut dtok[i]));
            self.wk.back(&mut g.wk, &tokens[i], &dk[i], Some(&mut dtok[i]));
            self.wv.back(&mut g.wv, &tokens[i], &dv[i], Some(&mut dtok[i]));
        }
        dtok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub agent_rnn: LstmCell,
    pub ego_in: Linear,
    pub map_in: Linear,
    pub map_hidden: Linear,
    pub attn: Attention,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub proj: Linear,
    pub classifier: Linear,
}

impl EncoderModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderModel {
            agent_rnn: LstmCell::new(AGENT_FEATS, MODEL_DIM, &mut rng),
            ego_in: Linear::new(EGO_FEATS, MODEL_DIM, &mut rng),
            map_in: Linear::new(MAP_FEATS, MODEL_DIM, &mut rng),
            map_hidden: Linear::new(MODEL_DIM, MODEL_DIM, &mut rng),
            attn: Attention::new(&mut rng),
            ffn_in: Linear::new(MODEL_DIM, FFN_DIM, &mut rng),
            ffn_out: Linear::new(FFN_DIM, MODEL_DIM, &mut rng),
            proj: Linear::new(MODEL_DIM, EMBED_DIM, &mut rng),
            classifier: Linear::new(EMBED_DIM, NUM_CLASSES, &mut rng),
        }
    }

    /// Same shapes, all zeros; the container gradients accumulate into.
    pub fn zeros_like(&self) -> Self {
        EncoderModel {
            agent_rnn: LstmCell::zeros(self.agent_rnn.n_in, self.agent_rnn.n_h),
            ego_in: Linear::zeros(self.ego_in.n_in, self.ego_in.n_out),
            map_in: Linear::zeros(self.map_in.n_in, self.map_in.n_out),
            map_hidden: Linear::zeros(self.map_hidden.n_in, self.map_hidden.n_out),
            attn: Attention::zeros(),
            ffn_in: Linear::zeros(self.ffn_in.n_in, self.ffn_in.n_out),
            ffn_out: Linear::zeros(self.ffn_out.n_in, self.ffn_out.n_out),
            proj: Linear::zeros(self.proj.n_in, self.proj.n_out),
            classifier: Linear::zeros(self.classifier.n_in, self.classifier.n_out),
        }
    }

    /// Tensor registry in fixed order: checkpoint layout, gradient reduction,
    /// and optimizer state all follow it.
    pub fn params(&self) -> Vec<(&'static str, usize, usize, &Vec<f64>)> {
        vec![
            ("agent_rnn.wx", 4 * MODEL_DIM, AGENT_FEATS, &self.agent_rnn.wx),
            ("agent_rnn.wh", 4 * MODEL_DIM, MODEL_DIM, &self.agent_rnn.wh),
            ("agent_rnn.b", 4 * MODEL_DIM, 1, &self.agent_rnn.b),
            ("ego_in.w", MODEL_DIM, EGO_FEATS, &self.ego_in.w),
            ("ego_in.b", MODEL_DIM, 1, &self.ego_in.b),
            ("map_in.w", MODEL_DIM, MAP_FEATS, &self.map_in.w),
            ("map_in.b", MODEL_DIM, 1, &self.map_in.b),
            ("map_hidden.w", MODEL_DIM, MODEL_DIM, &self.map_hidden.w),
            ("map_hidden.b", MODEL_DIM, 1, &self.map_hidden.b),
            ("attn.wq.w", MODEL_DIM, MODEL_DIM, &self.attn.wq.w),
            ("attn.wq.b", MODEL_DIM, 1, &self.attn.wq.b),
            ("attn.wk.w", MODEL_DIM, MODEL_DIM, &self.attn.wk.w),
            ("attn.wk.b", MODEL_DIM, 1, &self.attn.wk.b),
            ("attn.wv.w", MODEL_DIM, MODEL_DIM, &self.attn.wv.w),
            ("attn.wv.b", MODEL_DIM, 1, &self.attn.wv.b),
            ("attn.wo.w", MODEL_DIM, MODEL_DIM, &self.attn.wo.w),
            ("attn.wo.b", MODEL_DIM, 1, &self.attn.wo.b),
            ("ffn_in.w", FFN_DIM, MODEL_DIM, &self.ffn_in.w),
            ("ffn_in.b", FFN_DIM, 1, &self.ffn_in.b),
            ("ffn_out.w", MODEL_DIM, FFN_DIM, &self.ffn_out.w),
            ("ffn_out.b", MODEL_DIM, 1, &self.ffn_out.b),
            ("proj.w", EMBED_DIM, MODEL_DIM, &self.proj.w),
            ("proj.b", EMBED_DIM, 1, &self.proj.b),
            ("classifier.w", NUM_CLASSES, EMBED_DIM, &self.classifier.w),
            ("classifier.b", NUM_CLASSES, 1, &self.classifier.b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("agent_rnn.wx", &mut self.agent_rnn.wx),
            ("agent_rnn.wh", &mut self.agent_rnn.wh),
            ("agent_rnn.b", &mut self.agent_rnn.b),
            ("ego_in.w", &mut self.ego_in.w),
            ("ego_in.b", &mut self.ego_in.b),
            ("map_in.w", &mut self.map_in.w),
            ("map_in.b", &mut self.map_in.b),
            ("map_hidden.w", &mut self.map_hidden.w),
            ("map_hidden.b", &mut self.map_hidden.b),
            ("attn.wq.w", &mut self.attn.wq.w),
            ("attn.wq.b", &mut self.attn.wq.b),
            ("attn.wk.w", &mut self.attn.wk.w),
            ("attn.wk.b", &mut self.attn.wk.b),
            ("attn.wv.w", &mut self.attn.wv.w),
            ("attn.wv.b", &mut self.attn.wv.b),
            ("attn.wo.w", &mut self.attn.wo.w),
            ("attn.wo.b", &mut self.attn.wo.b),
            ("ffn_in.w", &mut self.ffn_in.w),
            ("ffn_in.b", &mut self.ffn_in.b),
            ("ffn_out.w", &mut self.ffn_out.w),
            ("ffn_out.b", &mut self.ffn_out.b),
            ("proj.w", &mut self.proj.w),
            ("proj.b", &mut self.proj.b),
            ("classifier.w", &mut self.classifier.w),
            ("classifier.b", &mut self.classifier.b),
        ]
    }

    /// Embeds one scenario (zero-padded tensors, label carried through).
    pub fn encode(&self, sc: &Scenario) -> Result<SceneEmbedding, EncoderError> {
        let t = tensorize(sc, Pad::Zero);
        let f = forward(self, &t)?;
        SceneEmbedding::new(f.z, Some(sc.label))
    }
}

struct PolyTrace {
    poly: usize,
    /// Valid waypoint indices within the slot.
    points: Vec<usize>,
    /// Per valid point, the tanh'd first-layer activation.
    h1: Vec<Vec<f64>>,
    /// Per output dim, which entry of `points` won the max-pool.
    winners: Vec<usize>,
    vec64: Vec<f64>,
}

struct MapTrace {
    polys: Vec<PolyTrace>,
    /// Per output dim, which entry of `polys` won the max-pool.
    winners: Vec<usize>,
}

pub struct Forward {
    /// Which of the `TOKENS` slots are live, in slot order.
    token_ids: Vec<usize>,
    tokens: Vec<Vec<f64>>,
    lstm: Vec<Option<LstmTrace>>,
    map: Option<MapTrace>,
    attn: AttnTrace,
    y: Vec<Vec<f64>>,
    ffn_hid: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    norm: f64,
    pub z: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn forward(model: &EncoderModel, t: &SceneTensor) -> Result<Forward, EncoderError> {
    let mut token_ids = Vec::new();
    let mut tokens: Vec<Vec<f64>> = Vec::new();

    let ego = model.ego_in.apply(&t.ego);
    assert_finite(&ego, "ego projection")?;
    token_ids.push(0);
    tokens.push(ego);

    let mut lstm = Vec::with_capacity(MAX_AGENTS);
    for a in 0..MAX_AGENTS {
        if !t.agent_valid[a] {
            lstm.push(None);
            continue;
        }
        let trace = model.agent_rnn.forward_seq(&t.agents[a], &t.agent_steps[a]);
        assert_finite(&trace.h_last, "agent recurrent branch")?;
        token_ids.push(1 + a);
        tokens.push(trace.h_last.clone());
        lstm.push(Some(trace));
    }

    let map = {
        let mut polys = Vec::new();
        for (p, feats) in t.polylines.iter().enumerate() {
            if !t.poly_valid[p] {
                continue;
            }
            let mut points = Vec::new();
            let mut h1s = Vec::new();
            let mut pooled = vec![f64::NEG_INFINITY; MODEL_DIM];
            let mut winners = vec![0usize; MODEL_DIM];
            for (j, f) in feats.iter().enumerate() {
                if !t.point_valid[p][j] {
                    continue;
                }
                let h1: Vec<f64> = model.map_in.apply(f).iter().map(|v| v.tanh()).collect();
                let h2 = model.map_hidden.apply(&h1);
                let slot = points.len();
                for d in 0..MODEL_DIM {
                    if h2[d] > pooled[d] {
                        pooled[d] = h2[d];
                        winners[d] = slot;
                    }
                }
                points.push(j);
                h1s.push(h1);
            }
            assert_finite(&pooled, "map perceptron")?;
            polys.push(PolyTrace {
                poly: p,
                points,
                h1: h1s,
                winners,
                vec64: pooled,
            });
        }
        if polys.is_empty() {
            None
        } else {
            let mut token = vec![f64::NEG_INFINITY; MODEL_DIM];
            let mut winners = vec![0usize; MODEL_DIM];
            for (slot, poly) in polys.iter().enumerate() {
                for d in 0..MODEL_DIM {
                    if poly.vec64[d] > token[d] {
                        token[d] = poly.vec64[d];
                        winners[d] = slot;
                    }
                }
            }
            token_ids.push(1 + MAX_AGENTS);
            tokens.push(token);
            Some(MapTrace { polys, winners })
        }
    };

    let (contrib, attn) = model.attn.forward(&tokens);
    let n = tokens.len();
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let yi: Vec<f64> = tokens[i]
            .iter()
            .zip(&contrib[i])
            .map(|(t, c)| t + c)
            .collect();
        assert_finite(&yi, "attention block")?;
        y.push(yi);
    }

    let mut ffn_hid = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for yi in &y {
        let hid: Vec<f64> = model.ffn_in.apply(yi).iter().map(|v| v.tanh()).collect();
        let f = model.ffn_out.apply(&hid);
        let ui: Vec<f64> = yi.iter().zip(&f).map(|(y, f)| y + f).collect();
        assert_finite(&ui, "feed-forward")?;
        ffn_hid.push(hid);
        u.push(ui);
    }

    let mut pooled = vec![0.0; MODEL_DIM];
    for ui in &u {
        for (p, v) in pooled.iter_mut().zip(ui) {
            *p += v;
        }
    }
    for p in pooled.iter_mut() {
        *p /= n as f64;
    }

    let r = model.proj.apply(&pooled);
    assert_finite(&r, "projection")?;
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(EncoderError::Activation("projection"));
    }
    let z: Vec<f64> = r.iter().map(|v| v / norm).collect();
    let logits = model.classifier.apply(&z);
    assert_finite(&logits, "classifier")?;

    Ok(Forward {
        token_ids,
        tokens,
        lstm,
        map,
        attn,
        y,
        ffn_hid,
        pooled,
        norm,
        z,
        logits,
    })
}

/// Accumulates into `g` the gradient of a scalar loss whose direct gradients
/// at the embedding and the logits are `dz` and `dlogits`.
pub fn backward(
    model: &EncoderModel,
    t: &SceneTensor,
    f: &Forward,
    dz: &[f64],
    dlogits: &[f64],
    g: &mut EncoderModel,
) {
    let n = f.tokens.len();

    let mut dz_total = dz.to_vec();
    model
        .classifier
        .back(&mut g.classifier, &f.z, dlogits, Some(&mut dz_total));

    // z = r / ‖r‖.
    let zdot: f64 = dz_total.iter().zip(&f.z).map(|(d, z)| d * z).sum();
    let dr: Vec<f64> = dz_total
        .iter()
        .zip(&f.z)
        .map(|(d, z)| (d - zdot * z) / f.norm)
        .collect();

    let mut dpooled = vec![0.0; MODEL_DIM];
    model.proj.back(&mut g.proj, &f.pooled, &dr, Some(&mut dpooled));

    let du: Vec<f64> = dpooled.iter().map(|d| d / n as f64).collect();

    // Feed-forward with residual, per token.
    let mut dy = vec![du.clone(); n];
    for i in 0..n {
        let hid = &f.ffn_hid[i];
        let mut dhid = vec![0.0; FFN_DIM];
        model.ffn_out.back(&mut g.ffn_out, hid, &du, Some(&mut dhid));
        let dpre: Vec<f64> = dhid
            .iter()
            .zip(hid)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        model.ffn_in.back(&mut g.ffn_in, &f.y[i], &dpre, Some(&mut dy[i]));
    }

    // Attention with residual.
    let dattn = model.attn.backward(&mut g.attn, &f.tokens, &f.attn, &dy);
    let dtok: Vec<Vec<f64>> = dy
        .iter()
        .zip(&dattn)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();

    // Scatter token gradients into the three branches.
    for (slot, dt) in f.token_ids.iter().zip(&dtok) {
        match *slot {
            0 => model.ego_in.back(&mut g.ego_in, &t.ego, dt, None),
            s if s == 1 + MAX_AGENTS => {
                let map = f.map.as_ref().expect("map token implies map trace");
                let mut dvecs = vec![vec![0.0; MODEL_DIM]; map.polys.len()];
                for (d, &win) in map.winners.iter().enumerate() {
                    dvecs[win][d] += dt[d];
                }
                for (poly, dvec) in map.polys.iter().zip(&dvecs) {
                    if dvec.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let mut dh2 = vec![vec![0.0; MODEL_DIM]; poly.points.len()];
                    for (d, &win) in poly.winners.iter().enumerate() {
                        dh2[win][d] += dvec[d];
                    }
                    for (pt, dh2p) in dh2.iter().enumerate() {
                        if dh2p.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let h1 = &poly.h1[pt];
                        let mut dh1 = vec![0.0; MODEL_DIM];
                        model
                            .map_hidden
                            .back(&mut g.map_hidden, h1, dh2p, Some(&mut dh1));
                        let dpre: Vec<f64> = dh1
                            .iter()
                            .zip(h1)
                            .map(|(d, h)| d * (1.0 - h * h))
                            .collect();
                        let feat = &t.polylines[poly.poly][poly.points[pt]];
                        model.map_in.back(&mut g.map_in, feat, &dpre, None);
                    }
                }
            }
            s => {
                let a = s - 1;
                let trace = f.lstm[a].as_ref().expect("agent token implies trace");
                model
                    .agent_rnn
                    .backward_seq(&mut g.agent_rnn, &t.agents[a], trace, dt);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, AgentState, AgentTrack, GenKnobs, ScenarioClass};

    fn sample(class: ScenarioClass, seed: u64) -> crate::scenario::Scenario {
        generate_scenario(class, seed, &GenKnobs::default()).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let model = EncoderModel::new(7);
        for class in [ScenarioClass::FollowingLaneWithLead, ScenarioClass::ChangingLane] {
            let sc = sample(class, 5);
            let a = model.encode(&sc).unwrap();
            let b = model.encode(&sc).unwrap();
            assert_eq!(a, b);
            let n: f64 = a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
            assert_eq!(a.dim(), EMBED_DIM);
            assert_eq!(a.label, Some(class));
        }
    }

    #[test]
    fn poisoned_padding_never_reaches_the_output() {
        let model = EncoderModel::new(3);
        let sc = sample(ScenarioClass::WaitingForPedestrianToCross, 11);
        let clean = forward(&model, &tensorize(&sc, Pad::Zero)).unwrap();
        let poisoned = forward(&model, &tensorize(&sc, Pad::Poison)).unwrap();
        assert_eq!(clean.z, poisoned.z);
        assert_eq!(clean.logits, poisoned.logits);
    }

    #[test]
    fn fully_masked_extra_agent_changes_nothing() {
        let model = EncoderModel::new(9);
        let sc = sample(ScenarioClass::StoppingWithLead, 2);
        let mut padded = sc.clone();
        let hist = crate::scenario::HIST_STEPS;
        padded.agents.push(AgentTrack {
            id: 900,
            kind: crate::scenario::AgentKind::Vehicle,
            history: vec![AgentState::ZERO; hist],
            valid: vec![false; hist],
        });
        padded.futures.push(crate::scenario::AgentFuture {
            id: 900,
            poses: vec![],
        });
        padded.check().unwrap();
        let a = model.encode(&sc).unwrap();
        let b = model.encode(&padded).unwrap();
        let d: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-9, "masked agent leaked {d}");
    }

    #[test]
    fn different_scenes_embed_differently() {
        let model = EncoderModel::new(7);
        let a = model.encode(&sample(ScenarioClass::HighMagnitudeSpeed, 1)).unwrap();
        let b = model.encode(&sample(ScenarioClass::StationaryInTraffic, 1)).unwrap();
        let d = crate::encoder::cosine_distance(a.as_slice(), b.as_slice()).unwrap();
        assert!(d > 1e-6, "distinct scenes collapsed to one embedding");
    }

    #[test]
    fn registry_names_and_shapes_line_up() {
        let mut model = EncoderModel::new(1);
        let shapes: Vec<(&'static str, usize)> = model
            .params()
            .iter()
            .map(|(n, r, c, w)| {
                assert_eq!(r * c, w.len(), "{n} shape");
                (*n, w.len())
            })
            .collect();
        let zeros = model.zeros_like();
        for ((n, len), (zn, _, _, zw)) in shapes.iter().zip(zeros.params()) {
            assert_eq!(*n, zn);
            assert_eq!(*len, zw.len());
            assert!(zw.iter().all(|&v| v == 0.0));
        }
        let names: Vec<&'static str> = model.params_mut().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, shapes.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    }
}
