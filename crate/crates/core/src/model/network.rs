use rand::Rng;
use redim_tensor::{AttentionParams, Graph, Real, Tensor, Var};

use crate::config::{ModelConfig, StageSpec, FFN_EXPANSION};
use crate::error::{Error, Result};
use crate::plan::{to1d_var, to2d_var, ShapePlan};

use super::params::{ParamStore, Session};

pub const ASP_EPS: f64 = 1e-7;
pub const LN_EPS: f64 = 1e-5;

fn he<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<f32> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

fn lecun<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<f32> {
    Tensor::randn(shape, (1.0 / fan_in as f64).sqrt(), rng)
}

fn insert_bn(store: &mut ParamStore<f32>, prefix: &str, c: usize) {
    store.insert(format!("{prefix}.weight"), Tensor::ones(vec![c]));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c]));
    store.insert(format!("{prefix}.running_mean"), Tensor::zeros(vec![c]));
    store.insert(format!("{prefix}.running_var"), Tensor::ones(vec![c]));
}

fn insert_ln(store: &mut ParamStore<f32>, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.weight"), Tensor::ones(vec![d]));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d]));
}

fn insert_conv3x3<R: Rng + ?Sized>(store: &mut ParamStore<f32>, name: &str, cout: usize, cin: usize, rng: &mut R) {
    store.insert(name, he(vec![cout, cin, 3, 3], cin * 9, rng));
}

/// Fresh parameters for `cfg`, drawn from `rng` in a fixed order.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    let plan = ShapePlan::new(cfg, cfg.time_divisor())?;
    let d = cfg.width();
    let hidden = FFN_EXPANSION * d;
    let mut s = ParamStore::new();
    insert_conv3x3(&mut s, "stem.conv.weight", cfg.c0, 1, rng);
    insert_bn(&mut s, "stem.bn", cfg.c0);
    for st in &plan.stages {
        let i = st.index;
        let c = st.input.c;
        for j in 0..st.spec.blocks_2d {
            let p = format!("stage{i}.block2d.{j}");
            insert_conv3x3(&mut s, &format!("{p}.conv1.weight"), c, c, rng);
            insert_bn(&mut s, &format!("{p}.bn1"), c);
            insert_conv3x3(&mut s, &format!("{p}.conv2.weight"), c, c, rng);
            insert_bn(&mut s, &format!("{p}.bn2"), c);
        }
        insert_conv3x3(&mut s, &format!("stage{i}.down.conv.weight"), st.output.c, c, rng);
        insert_bn(&mut s, &format!("stage{i}.down.bn"), st.output.c);
        for j in 0..st.spec.blocks_1d {
            let p = format!("stage{i}.block1d.{j}");
            s.insert(format!("{p}.dw.weight"), lecun(vec![d, 1, cfg.kernel_1d], cfg.kernel_1d, rng));
            s.insert(format!("{p}.dw.bias"), Tensor::zeros(vec![d]));
            insert_ln(&mut s, &format!("{p}.ln"), d);
            s.insert(format!("{p}.pw1.weight"), he(vec![hidden, d], d, rng));
            s.insert(format!("{p}.pw1.bias"), Tensor::zeros(vec![hidden]));
            // Residual branches start at zero, so every block1d is the
            // identity at initialization.
            s.insert(format!("{p}.pw2.weight"), Tensor::zeros(vec![d, hidden]));
            s.insert(format!("{p}.pw2.bias"), Tensor::zeros(vec![d]));
            insert_ln(&mut s, &format!("{p}.attn_ln"), d);
            for proj in ["q", "k", "v", "o"] {
                let w = if proj == "o" {
                    Tensor::zeros(vec![d, d])
                } else {
                    lecun(vec![d, d], d, rng)
                };
                s.insert(format!("{p}.attn.{proj}.weight"), w);
                // A key bias adds the same amount to every score of a query
                // and cancels in the softmax, so there is none.
                if proj != "k" {
                    s.insert(format!("{p}.attn.{proj}.bias"), Tensor::zeros(vec![d]));
                }
            }
        }
    }
    s.insert("agg.weights", Tensor::zeros(vec![cfg.stages.len().max(1)]));
    s.insert("asp.w.weight", lecun(vec![cfg.asp_hidden, d], d, rng));
    s.insert("asp.w.bias", Tensor::zeros(vec![cfg.asp_hidden]));
    s.insert("asp.v.weight", lecun(vec![1, cfg.asp_hidden], cfg.asp_hidden, rng));
    insert_bn(&mut s, "asp.bn", 2 * d);
    s.insert("head.weight", lecun(vec![cfg.embed_dim, 2 * d], 2 * d, rng));
    s.insert("head.bias", Tensor::zeros(vec![cfg.embed_dim]));
    Ok(s)
}

/// Residual 2D block: conv-BN-ReLU-conv-BN plus identity, then ReLU.
pub fn block2d<T: Real>(s: &mut Session<T>, x: Var, prefix: &str) -> Result<Var> {
    let w1 = s.p(&format!("{prefix}.conv1.weight"))?;
    let h = s.g.conv2d(x, w1, None, (1, 1))?;
    let h = s.bn(h, &format!("{prefix}.bn1"))?;
    let h = s.g.relu(h)?;
    let w2 = s.p(&format!("{prefix}.conv2.weight"))?;
    let h = s.g.conv2d(h, w2, None, (1, 1))?;
    let h = s.bn(h, &format!("{prefix}.bn2"))?;
    let y = s.g.add(h, x)?;
    Ok(s.g.relu(y)?)
}

/// Strided 3x3 conv that halves F (doubling C) or halves T.
pub fn downsample<T: Real>(s: &mut Session<T>, x: Var, spec: &StageSpec, prefix: &str) -> Result<Var> {
    let w = s.p(&format!("{prefix}.conv.weight"))?;
    let y = s.g.conv2d(x, w, None, (spec.freq_stride, spec.time_stride))?;
    let y = s.bn(y, &format!("{prefix}.bn"))?;
    Ok(s.g.relu(y)?)
}

/// 1D block over `[B, D, T]`: a depthwise-conv/feed-forward sublayer and a
/// self-attention sublayer, each residual.
pub fn block1d<T: Real>(s: &mut Session<T>, x: Var, prefix: &str, heads: usize) -> Result<Var> {
    let p = |n: &str| format!("{prefix}.{n}");
    let eps = T::lit(LN_EPS);
    let xt = s.g.transpose_last2(x)?;

    let dw_w = s.p(&p("dw.weight"))?;
    let dw_b = s.p(&p("dw.bias"))?;
    let h = s.g.conv1d_depthwise(x, dw_w, Some(dw_b))?;
    let h = s.g.transpose_last2(h)?;
    let (lw, lb) = (s.p(&p("ln.weight"))?, s.p(&p("ln.bias"))?);
    let h = s.g.layer_norm(h, lw, lb, eps)?;
    let (w1, b1) = (s.p(&p("pw1.weight"))?, s.p(&p("pw1.bias"))?);
    let h = s.g.linear(h, w1, Some(b1))?;
    let h = s.g.gelu(h)?;
    let (w2, b2) = (s.p(&p("pw2.weight"))?, s.p(&p("pw2.bias"))?);
    let h = s.g.linear(h, w2, Some(b2))?;
    let y = s.g.add(xt, h)?;

    let (aw, ab) = (s.p(&p("attn_ln.weight"))?, s.p(&p("attn_ln.bias"))?);
    let a = s.g.layer_norm(y, aw, ab, eps)?;
    let params = AttentionParams {
        wq: s.p(&p("attn.q.weight"))?,
        bq: Some(s.p(&p("attn.q.bias"))?),
        wk: s.p(&p("attn.k.weight"))?,
        bk: None,
        wv: s.p(&p("attn.v.weight"))?,
        bv: Some(s.p(&p("attn.v.bias"))?),
        wo: s.p(&p("attn.o.weight"))?,
        bo: Some(s.p(&p("attn.o.bias"))?),
    };
    let a = s.g.multi_head_attention(a, heads, &params)?;
    let z = s.g.add(y, a)?;
    Ok(s.g.transpose_last2(z)?)
}

/// A stage's 1D output and how much coarser its time axis is than the
/// input's.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageOutput {
    pub features: Var,
    pub time_factor: usize,
}

/// Upsamples every stage output to `t_star` frames by nearest-neighbour
/// repetition and sums them with `weights` `[S]` (already normalized).
pub fn aggregate_stages<T: Real>(
    g: &mut Graph<T>,
    outputs: &[StageOutput],
    weights: Var,
    t_star: usize,
) -> Result<Var> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Config("no stage outputs to aggregate".into()))?;
    let width = g.shape(first.features)[1];
    if g.shape(weights) != [outputs.len()] {
        return Err(Error::Config(format!(
            "{} stage weights for {} stages",
            g.shape(weights).iter().product::<usize>(),
            outputs.len()
        )));
    }
    let mut acc = None;
    for (i, out) in outputs.iter().enumerate() {
        let shape = g.shape(out.features).to_vec();
        if shape.len() != 3 || shape[1] != width {
            return Err(Error::Plan {
                stage: i + 1,
                msg: format!("output {shape:?} does not have width {width}"),
            });
        }
        if shape[2] * out.time_factor != t_star {
            return Err(Error::Plan {
                stage: i + 1,
                msg: format!(
                    "{} frames x factor {} does not reach {t_star}",
                    shape[2], out.time_factor
                ),
            });
        }
        let up = if out.time_factor == 1 {
            out.features
        } else {
            g.nearest_upsample_time(out.features, out.time_factor)?
        };
        let w = g.narrow(weights, 0, i, 1)?;
        let term = g.mul(up, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("at least one stage"))
}

/// Attentive statistics pooling of `x` `[B, D, T]` into `[B, 2D]`
/// (weighted mean then weighted std). Also returns the `[B, T, 1]`
/// attention weights.
pub fn asp_pool<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    v: Var,
) -> Result<(Var, Var)> {
    let xt = g.transpose_last2(x)?;
    let h = g.linear(xt, w, b)?;
    let h = g.tanh(h)?;
    let e = g.linear(h, v, None)?;
    let alpha = g.softmax(e, 1)?;
    let wx = g.mul(xt, alpha)?;
    let mu = g.sum_axis(wx, 1, false)?;
    let x2 = g.square(xt)?;
    let wx2 = g.mul(x2, alpha)?;
    let m2 = g.sum_axis(wx2, 1, false)?;
    let mu2 = g.square(mu)?;
    let var = g.sub(m2, mu2)?;
    let var = g.clamp_min(var, T::zero())?;
    let var = g.add_scalar(var, T::lit(ASP_EPS))?;
    let sigma = g.sqrt(var)?;
    Ok((g.concat(&[mu, sigma], 1)?, alpha))
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub embedding: Var,
    pub stages: Vec<StageOutput>,
    pub aggregated: Var,
}

/// Embeds features `[B, F0, T]`; `T` must be a multiple of
/// `cfg.time_divisor()`.
pub fn forward<T: Real>(s: &mut Session<T>, cfg: &ModelConfig, features: Var) -> Result<Forward> {
    let shape = s.g.shape(features).to_vec();
    let [b, f, t] = shape[..] else {
        return Err(Error::Config(format!("features must be [B, F, T], got {shape:?}")));
    };
    if f != cfg.f0 {
        return Err(Error::Config(format!("features have {f} bins, model expects {}", cfg.f0)));
    }
    let plan = ShapePlan::new(cfg, t)?;
    let x = s.g.reshape(features, &[b, 1, f, t])?;
    let w = s.p("stem.conv.weight")?;
    let x = s.g.conv2d(x, w, None, (1, 1))?;
    let x = s.bn(x, "stem.bn")?;
    let mut h = to1d_var(s.g, x)?;

    let mut stages = Vec::with_capacity(plan.stages.len());
    for st in &plan.stages {
        let i = st.index;
        let mut x = to2d_var(s.g, h, st.input.c, st.input.f)?;
        for j in 0..st.spec.blocks_2d {
            x = block2d(s, x, &format!("stage{i}.block2d.{j}"))?;
        }
        x = downsample(s, x, &st.spec, &format!("stage{i}.down"))?;
        h = to1d_var(s.g, x)?;
        for j in 0..st.spec.blocks_1d {
            h = block1d(s, h, &format!("stage{i}.block1d.{j}"), cfg.heads)?;
        }
        stages.push(StageOutput {
            features: h,
            time_factor: st.time_factor,
        });
    }

    let aggregated = if stages.is_empty() {
        h
    } else {
        let raw = s.p("agg.weights")?;
        let weights = s.g.softmax(raw, 0)?;
        aggregate_stages(s.g, &stages, weights, t)?
    };
    let (aw, ab, av) = (s.p("asp.w.weight")?, s.p("asp.w.bias")?, s.p("asp.v.weight")?);
    let (pooled, _) = asp_pool(s.g, aggregated, aw, Some(ab), av)?;
    let pooled = s.bn(pooled, "asp.bn")?;
    let (hw, hb) = (s.p("head.weight")?, s.p("head.bias")?);
    let embedding = s.g.linear(pooled, hw, Some(hb))?;
    Ok(Forward {
        embedding,
        stages,
        aggregated,
    })
}

/// Eval-mode embedding of one feature map `[F0, T]`, padded in time.
pub fn embed(store: &mut ParamStore<f32>, cfg: &ModelConfig, features: &Tensor<f32>) -> Result<Vec<f32>> {
    let padded = crate::plan::pad_time(features, cfg.time_divisor())?;
    let (f, t) = (padded.dim(0), padded.dim(1));
    let mut g = Graph::new();
    let x = g.input(padded.reshape(vec![1, f, t])?)?;
    let mut s = Session::new(&mut g, store, false);
    let out = forward(&mut s, cfg, x)?;
    Ok(g.value(out.embedding).data().to_vec())
}
