//! Loss combination: hard weights and learned homoskedastic-uncertainty
//! weights.
//!
//! Uncertainty weighting parametrizes each task's noise as a log-variance
//! s_i = log(sigma_i^2), giving the objective
//!
//! ```text
//! sum_i exp(-s_i)/2 * L_i  +  sum_i s_i/2
//! ```
//!
//! which is sum_i 1/(2 sigma_i^2) L_i + sum_i log sigma_i. The s_i are
//! trainable; their gradients flow through the combined loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Result, SxlError};

/// Loss-combination policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskWeighting {
    /// Fixed auxiliary weight lambda > 0.
    Hard(f64),
    /// Learned log-variance weights, one per weighted task.
    Uncertainty,
}

impl TaskWeighting {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskWeighting::Hard(l) if *l <= 0.0 || !l.is_finite() => {
                Err(SxlError::invalid(format!("lambda must be positive, got {l}")))
            }
            _ => Ok(()),
        }
    }
}

/// Trainable log-variance parameters, initialized at 0 (sigma = 1).
#[derive(Debug, Clone)]
pub struct UncertaintyWeights {
    pub s: Vec<Tensor>,
}

impl UncertaintyWeights {
    pub fn new(n_tasks: usize) -> Self {
        UncertaintyWeights {
            s: (0..n_tasks).map(|_| Tensor::scalar(0.0)).collect(),
        }
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.s.iter().map(|t| (t.data[0] / 2.0).exp()).collect()
    }

    /// Binds the s parameters as graph leaves; pair with
    /// [`combine_uncertainty`].
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.s.iter().map(|t| g.leaf(t)).collect()
    }
}

/// main + lambda * sum(aux).
pub fn combine_hard(
    g: &mut Graph,
    main_loss: NodeId,
    aux_losses: &[NodeId],
    lambda: f64,
) -> Result<NodeId> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(SxlError::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let mut total = main_loss;
    if !aux_losses.is_empty() {
        let mut aux_sum = aux_losses[0];
        for &l in &aux_losses[1..] {
            aux_sum = g.add(aux_sum, l)?;
        }
        let weighted = g.scale(aux_sum, lambda);
        total = g.add(total, weighted)?;
    }
    Ok(total)
}

/// Uncertainty-weighted multi-task objective over scalar losses. `s_ids`
/// are the bound log-variance leaves; gradients flow into them.
pub fn combine_uncertainty(g: &mut Graph, losses: &[NodeId], s_ids: &[NodeId]) -> Result<NodeId> {
    if losses.is_empty() || losses.len() != s_ids.len() {
        return Err(SxlError::invalid(format!(
            "need matching task/weight counts >= 1, got {} losses and {} weights",
            losses.len(),
            s_ids.len()
        )));
    }
    let mut total: Option<NodeId> = None;
    for (&loss, &s) in losses.iter().zip(s_ids) {
        let neg_s = g.scale(s, -1.0);
        let precision = g.exp(neg_s); // exp(-s) = 1/sigma^2
        let half_prec = g.scale(precision, 0.5);
        let weighted = g.mul(half_prec, loss)?;
        let reg = g.scale(s, 0.5);
        let term = g.add(weighted, reg)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.unwrap())
}

/// Discriminator objective with uncertainty weights on both the main GAN
/// loss and each auxiliary loss (one sigma per task, main task first).
pub fn combine_gan_uncertainty(
    g: &mut Graph,
    d_main_loss: NodeId,
    d_aux_losses: &[NodeId],
    s_ids: &[NodeId],
) -> Result<NodeId> {
    if s_ids.len() != 1 + d_aux_losses.len() {
        return Err(SxlError::invalid(format!(
            "need 1 + {} uncertainty weights, got {}",
            d_aux_losses.len(),
            s_ids.len()
        )));
    }
    let mut losses = vec![d_main_loss];
    losses.extend_from_slice(d_aux_losses);
    combine_uncertainty(g, &losses, s_ids)
}
