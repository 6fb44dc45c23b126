//! BiLRP: second-order attribution of a dot-product similarity
//! `y(x, x') = <phi(x), phi(x')>` onto pairs of input features, computed as
//! a product of two branches of LRP, one per embedding component.

use crate::attribution::explanation::RuleMap;
use crate::attribution::lrp::lrp_from_output;
use crate::error::{Error, Result};
use crate::runtime::{Network, Tensor};

/// Pairwise relevance `R_{ii'}` with its flat-order sum cached.
#[derive(Debug, Clone)]
pub struct PairRelevance {
    /// `[d, d']` matrix: rows index features of `x`, columns features of `x'`.
    pub matrix: Tensor,
    pub sum: f64,
}

/// `R_{ii'} = sum_m R^m_i(x) * R^m_{i'}(x')`, where `R^m` is the LRP
/// explanation of embedding component `m`. For bias-free networks under the
/// basic rule, the matrix total equals the embedding dot product.
pub fn bilrp(
    net_embed: &Network,
    x: &Tensor,
    x_prime: &Tensor,
    rules: &RuleMap,
) -> Result<PairRelevance> {
    if net_embed.output_shape().len() != 1 {
        return Err(Error::Config(format!(
            "embedding network must produce a rank-1 embedding, got {:?}",
            net_embed.output_shape()
        )));
    }
    let m = net_embed.output_len();
    let (phi_x, _) = net_embed.forward(x)?;
    let (phi_xp, _) = net_embed.forward(x_prime)?;

    let d = x.len();
    let dp = x_prime.len();
    let mut matrix = vec![0.0; d * dp];
    for comp in 0..m {
        let mut seed_x = vec![0.0; m];
        seed_x[comp] = phi_x.data()[comp];
        let r_x = lrp_from_output(net_embed, x, rules, Tensor::new(vec![m], seed_x)?)?;
        let mut seed_xp = vec![0.0; m];
        seed_xp[comp] = phi_xp.data()[comp];
        let r_xp = lrp_from_output(net_embed, x_prime, rules, Tensor::new(vec![m], seed_xp)?)?;
        for (i, &ri) in r_x.data().iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            let row = &mut matrix[i * dp..(i + 1) * dp];
            for (cell, &rj) in row.iter_mut().zip(r_xp.data()) {
                *cell += ri * rj;
            }
        }
    }
    let matrix = Tensor::new(vec![d, dp], matrix)?;
    let sum = matrix.sum();
    Ok(PairRelevance { matrix, sum })
}
