use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;

/// Projection parameters of a multi-head self-attention layer. Weights are
/// `[D, D]` in `[out, in]` layout, biases `[D]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Option<Var>,
    pub wk: Var,
    pub bk: Option<Var>,
    pub wv: Var,
    pub bv: Option<Var>,
    pub wo: Var,
    pub bo: Option<Var>,
}

impl<T: Real> Graph<T> {
    /// Scaled dot-product self-attention over `x` `[B, T, D]` with `heads`
    /// heads. Returns the `[B, T, D]` output and the `[B*heads, T, T]`
    /// attention weights.
    pub fn multi_head_attention_with_probs(
        &mut self,
        x: Var,
        heads: usize,
        p: &AttentionParams,
    ) -> Result<(Var, Var)> {
        let shape = self.shape(x).to_vec();
        let [batch, t, d] = shape[..] else {
            return Err(contract("multi_head_attention", format!("expected [B, T, D], got {shape:?}")));
        };
        if heads == 0 || d % heads != 0 {
            return Err(contract(
                "multi_head_attention",
                format!("width {d} not divisible by {heads} heads"),
            ));
        }
        let dh = d / heads;
        let split = |g: &mut Self, w: Var, b: Option<Var>| -> Result<Var> {
            let y = g.linear(x, w, b)?;
            let y = g.reshape(y, &[batch, t, heads, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            g.reshape(y, &[batch * heads, t, dh])
        };
        let q = split(self, p.wq, p.bq)?;
        let k = split(self, p.wk, p.bk)?;
        let v = split(self, p.wv, p.bv)?;
        let scores = self.matmul(q, k, false, true)?;
        let scores = self.scale(scores, T::one() / T::lit(dh as f64).sqrt())?;
        let probs = self.softmax(scores, 2)?;
        let ctx = self.matmul(probs, v, false, false)?;
        let ctx = self.reshape(ctx, &[batch, heads, t, dh])?;
        let ctx = self.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.reshape(ctx, &[batch, t, d])?;
        let out = self.linear(ctx, p.wo, p.bo)?;
        Ok((out, probs))
    }

    pub fn multi_head_attention(&mut self, x: Var, heads: usize, p: &AttentionParams) -> Result<Var> {
        Ok(self.multi_head_attention_with_probs(x, heads, p)?.0)
    }
}
