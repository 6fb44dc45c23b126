//! Exact Shapley values and the pairwise Shapley interaction index by full
//! subset enumeration.

use crate::error::{Error, Result};
use crate::runtime::{Network, Tensor};

pub const MAX_PLAYERS: usize = 20;
pub const MAX_PLAYERS_INTERACTION: usize = 16;

/// A cooperative game over `d` players with value function `v(S)`, subsets
/// encoded as bitmasks. For model explanation the players are input features
/// and `v(S) = f(x_S)` with features outside `S` set to zero.
pub struct CoalitionGame<'a> {
    d: usize,
    value: Box<dyn Fn(u32) -> Result<f64> + Sync + 'a>,
}

impl<'a> CoalitionGame<'a> {
    pub fn new(d: usize, value: impl Fn(u32) -> Result<f64> + Sync + 'a) -> Result<Self> {
        if d == 0 || d > MAX_PLAYERS {
            return Err(Error::Size(format!(
                "player count {d} outside 1..={MAX_PLAYERS}"
            )));
        }
        Ok(CoalitionGame {
            d,
            value: Box::new(value),
        })
    }

    /// Game whose players are the features of `x` under the zeroing value
    /// function `v(S) = f(x_S)`.
    pub fn from_network(net: &'a Network, x: &'a Tensor, target: usize) -> Result<Self> {
        let d = x.len();
        CoalitionGame::new(d, move |mask: u32| {
            let data: Vec<f64> = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| if mask & (1 << i) != 0 { v } else { 0.0 })
                .collect();
            net.eval(&Tensor::new(x.shape().to_vec(), data)?, target)
        })
    }

    pub fn players(&self) -> usize {
        self.d
    }

    pub fn value(&self, mask: u32) -> Result<f64> {
        (self.value)(mask)
    }

    /// Evaluate the value function on every subset.
    fn value_table(&self) -> Result<Vec<f64>> {
        (0..(1u32 << self.d)).map(|m| self.value(m)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ShapleyResult {
    pub phi: Vec<f64>,
    /// `|sum_i phi_i - (v(P) - v(empty))|`.
    pub efficiency_defect: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Sum in ascending value order, making the result invariant to the
/// enumeration order of the terms (exact symmetry under player relabeling).
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    terms.iter().sum()
}

/// Exact Shapley values:
/// `phi_i = sum_{S subseteq P\{i}} alpha_S (v(S u {i}) - v(S))` with
/// `alpha_S = |S|! (|P|-1-|S|)! / |P|! = 1 / (|P| * C(|P|-1, |S|))`.
pub fn shapley_exact(game: &CoalitionGame) -> Result<ShapleyResult> {
    let d = game.players();
    let table = game.value_table()?;
    let alpha: Vec<f64> = (0..d)
        .map(|s| 1.0 / (d as f64 * binomial(d - 1, s)))
        .collect();
    let mut phi = Vec::with_capacity(d);
    for i in 0..d {
        let bit = 1u32 << i;
        let mut terms = Vec::with_capacity(1 << (d - 1));
        for mask in 0..(1u32 << d) {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            terms.push(alpha[s] * (table[(mask | bit) as usize] - table[mask as usize]));
        }
        phi.push(sorted_sum(terms));
    }
    let total: f64 = sorted_sum(phi.clone());
    let grand = table[(1usize << d) - 1] - table[0];
    Ok(ShapleyResult {
        phi,
        efficiency_defect: (total - grand).abs(),
    })
}

/// Pairwise Shapley interaction index:
/// `phi_ij = sum_{S subseteq P\{i,j}} alpha_S
///           (v(S u {i,j}) - v(S u {i}) - v(S u {j}) + v(S))`
/// with `alpha_S = |S|! (|P|-2-|S|)! / (2 (|P|-1)!)`. Symmetric in `(i, j)`
/// bit-exactly (the pair is canonicalized before enumeration).
pub fn shapley_interaction(game: &CoalitionGame, i: usize, j: usize) -> Result<f64> {
    let d = game.players();
    if d > MAX_PLAYERS_INTERACTION {
        return Err(Error::Size(format!(
            "interaction index limited to {MAX_PLAYERS_INTERACTION} players, got {d}"
        )));
    }
    if i == j {
        return Err(Error::Config(
            "interaction index needs two distinct features; main effects are reported separately"
                .into(),
        ));
    }
    if i >= d || j >= d {
        return Err(Error::Config(format!(
            "feature index out of range: ({i}, {j}) for {d} players"
        )));
    }
    let (i, j) = (i.min(j), i.max(j));
    let (bi, bj) = (1u32 << i, 1u32 << j);
    let table = game.value_table()?;
    let alpha: Vec<f64> = (0..d.max(2) - 1)
        .map(|s| 1.0 / (2.0 * (d - 1) as f64 * binomial(d - 2, s)))
        .collect();
    let mut terms = Vec::with_capacity(1 << (d.max(2) - 2));
    for mask in 0..(1u32 << d) {
        if mask & (bi | bj) != 0 {
            continue;
        }
        let s = mask.count_ones() as usize;
        let delta = table[(mask | bi | bj) as usize] - table[(mask | bi) as usize]
            - table[(mask | bj) as usize]
            + table[mask as usize];
        terms.push(alpha[s] * delta);
    }
    Ok(sorted_sum(terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Layer;

    fn linear_net(w: Vec<f64>) -> Network {
        let n = w.len();
        Network::new(
            vec![n],
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, n], w).unwrap(),
                bias: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn linear_model_shapley_is_w_times_x() {
        let net = linear_net(vec![2.0, -1.0]);
        let x = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let game = CoalitionGame::from_network(&net, &x, 0).unwrap();
        let res = shapley_exact(&game).unwrap();
        assert!((res.phi[0] - 6.0).abs() < 1e-12);
        assert!((res.phi[1] + 4.0).abs() < 1e-12);
        assert!(res.efficiency_defect < 1e-12);
    }

    #[test]
    fn dummy_player_gets_exactly_zero() {
        // v depends only on players 0 and 2.
        let game = CoalitionGame::new(3, |m| {
            Ok((m & 1) as f64 * 2.0 + ((m >> 2) & 1) as f64 * 5.0)
        })
        .unwrap();
        let res = shapley_exact(&game).unwrap();
        assert_eq!(res.phi[1], 0.0);
    }

    #[test]
    fn product_game_splits_evenly() {
        // f = x1 * x2 at (1, 1): marginal contributions enumerate to 1/2 each.
        let game = CoalitionGame::new(2, |m| Ok(if m == 0b11 { 1.0 } else { 0.0 })).unwrap();
        let res = shapley_exact(&game).unwrap();
        assert!((res.phi[0] - 0.5).abs() < 1e-15);
        assert!((res.phi[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn interaction_of_product_game_is_half() {
        let game = CoalitionGame::new(2, |m| Ok(if m == 0b11 { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(shapley_interaction(&game, 0, 1).unwrap(), 0.5);
    }

    #[test]
    fn interaction_is_zero_on_additive_games() {
        let game = CoalitionGame::new(4, |m| {
            let mut v = 0.0;
            for i in 0..4 {
                if m & (1 << i) != 0 {
                    v += ((i + 1) as f64).sqrt();
                }
            }
            Ok(v)
        })
        .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(shapley_interaction(&game, i, j).unwrap().abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn interaction_symmetry_is_bit_exact() {
        let game = CoalitionGame::new(5, |m| {
            Ok((m as f64).sin() + (m & 0b11) as f64 * 0.3)
        })
        .unwrap();
        let a = shapley_interaction(&game, 1, 3).unwrap();
        let b = shapley_interaction(&game, 3, 1).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn caps_are_enforced() {
        let too_big = CoalitionGame::new(21, |_| Ok(0.0));
        assert!(matches!(too_big.err().unwrap(), Error::Size(_)));
        let game = CoalitionGame::new(2, |_| Ok(0.0)).unwrap();
        assert!(matches!(
            shapley_interaction(&game, 1, 1).unwrap_err(),
            Error::Config(_)
        ));
    }
}
