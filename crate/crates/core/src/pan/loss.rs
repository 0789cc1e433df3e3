use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{layer_backward, stack_forward_fixed, AttentionMode, LayerCache, PanStack, Target};
use crate::cluster::{ClassMatching, GroupAssignment, GroupPartition};
use crate::error::{Error, Result};
use crate::prototype::{
    balance_regularizer, balance_regularizer_grad, RepresentativenessMatrix, PROB_FLOOR,
};
use crate::refine::{consistency_grads, consistency_loss_raw};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub reg: f64,
    pub con: f64,
    pub total: f64,
}

/// Per-layer gradients of the total loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub prototypes: Vec<Array2<f64>>,
}

/// Maps each supervised node to its target group in every layer. Nodes whose
/// label has no matched group in a layer are dropped for that layer.
pub fn ce_targets(
    matchings: &[ClassMatching<Target>],
    supervised: &[(usize, Target)],
) -> Vec<Vec<(usize, usize)>> {
    matchings
        .iter()
        .map(|m| {
            let lookup = m.class_to_group();
            supervised
                .iter()
                .filter_map(|(i, t)| lookup.get(t).map(|&g| (*i, g)))
                .collect()
        })
        .collect()
}

fn ce_from_targets(
    p: &Array2<f64>,
    targets: &[(usize, usize)],
    grad: Option<&mut Array2<f64>>,
) -> f64 {
    let mut loss = 0.0;
    let mut grad = grad;
    for &(i, g) in targets {
        let prob = p[[i, g]];
        loss -= prob.clamp(PROB_FLOOR, 1.0).ln();
        if let Some(d) = grad.as_deref_mut() {
            if prob > PROB_FLOOR && prob < 1.0 {
                d[[i, g]] -= 1.0 / prob;
            }
        }
    }
    loss
}

/// `sum_l sum_i -ln p^(l)_{i, group_l(y_i)}` with probabilities clamped to
/// `[PROB_FLOOR, 1]`.
pub fn ce_loss(
    p_layers: &[GroupAssignment],
    matchings: &[ClassMatching<Target>],
    supervised: &[(usize, Target)],
) -> Result<f64> {
    if supervised.is_empty() {
        return Err(Error::Empty("supervised node set"));
    }
    if p_layers.len() != matchings.len() {
        return Err(Error::Dimension(format!(
            "{} prediction layers vs {} matchings",
            p_layers.len(),
            matchings.len()
        )));
    }
    let targets = ce_targets(matchings, supervised);
    Ok(p_layers
        .iter()
        .zip(&targets)
        .map(|(p, t)| ce_from_targets(&p.0, t, None))
        .sum())
}

/// Unweighted sum of the three loss components.
pub fn total_loss(ce: f64, reg: f64, con: f64) -> Result<f64> {
    for (name, x) in [
        ("cross-entropy loss", ce),
        ("balance loss", reg),
        ("consistency loss", con),
    ] {
        if !x.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }
    Ok(ce + reg + con)
}

/// Node features and closed-neighborhood adjacency of one graph view.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    pub features: &'a Array2<f64>,
    pub adjacency: &'a [Vec<usize>],
}

/// Loss value, optional gradients and the clean-view caches of one step.
pub struct Objective {
    pub loss: LossBreakdown,
    pub grads: Option<ParamGrads>,
    pub clean: Vec<LayerCache>,
}

/// Total loss of the stack with every discrete selection frozen:
/// cross-entropy on `targets` and balance regularization on the clean view,
/// plus consistency between clean and augmented predictions when an
/// augmented view is given.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    stack: &PanStack,
    partitions: &[GroupPartition],
    targets: &[Vec<(usize, usize)>],
    clean: View<'_>,
    augmented: Option<View<'_>>,
    mode: AttentionMode,
    with_grads: bool,
) -> Result<Objective> {
    let depth = stack.depth();
    if partitions.len() != depth || targets.len() != depth {
        return Err(Error::Dimension(format!(
            "{depth} layers, {} partitions, {} target lists",
            partitions.len(),
            targets.len()
        )));
    }
    let caches = stack_forward_fixed(stack, clean.features, clean.adjacency, partitions, mode)?;
    let aug_caches = match augmented {
        Some(v) => Some(stack_forward_fixed(
            stack,
            v.features,
            v.adjacency,
            partitions,
            mode,
        )?),
        None => None,
    };

    let mut d_p: Vec<Array2<f64>> = caches.iter().map(|c| Array2::zeros(c.p.dim())).collect();
    let mut d_p_aug: Vec<Array2<f64>> = caches.iter().map(|c| Array2::zeros(c.p.dim())).collect();
    let mut ce = 0.0;
    let mut reg = 0.0;
    let mut con = 0.0;
    let mut d_r = Vec::with_capacity(depth);
    for l in 0..depth {
        ce += ce_from_targets(&caches[l].p, &targets[l], with_grads.then_some(&mut d_p[l]));
        let r = RepresentativenessMatrix(caches[l].r.clone());
        reg += balance_regularizer(&r);
        d_r.push(if with_grads {
            Some(balance_regularizer_grad(&r))
        } else {
            None
        });
        if let Some(aug) = &aug_caches {
            con += consistency_loss_raw(&caches[l].p, &aug[l].p);
            if with_grads {
                consistency_grads(&caches[l].p, &aug[l].p, &mut d_p[l], &mut d_p_aug[l]);
            }
        }
    }
    let total = total_loss(ce, reg, con)?;
    let loss = LossBreakdown {
        ce,
        reg,
        con,
        total,
    };

    let grads = if with_grads {
        let mut weights: Vec<Array2<f64>> = stack
            .layers
            .iter()
            .map(|l| Array2::zeros(l.weight.dim()))
            .collect();
        let mut prototypes: Vec<Array2<f64>> = stack
            .layers
            .iter()
            .map(|l| Array2::zeros(l.prototypes.vectors.dim()))
            .collect();
        let mut backprop =
            |caches: &[LayerCache], d_p: &[Array2<f64>], d_r: &[Option<Array2<f64>>]| {
                let mut upstream = Array2::zeros(caches[depth - 1].h_out.dim());
                for l in (0..depth).rev() {
                    let g = layer_backward(
                        &stack.layers[l],
                        &caches[l],
                        &upstream,
                        &d_p[l],
                        d_r[l].as_ref(),
                    );
                    weights[l] += &g.weight;
                    prototypes[l] += &g.prototypes;
                    upstream = g.h_in;
                }
            };
        backprop(&caches, &d_p, &d_r);
        if let Some(aug) = &aug_caches {
            let none: Vec<Option<Array2<f64>>> = vec![None; depth];
            backprop(aug, &d_p_aug, &none);
        }
        Some(ParamGrads {
            weights,
            prototypes,
        })
    } else {
        None
    };

    Ok(Objective {
        loss,
        grads,
        clean: caches,
    })
}
