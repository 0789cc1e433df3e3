use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{objective, View};
use super::{stack_forward_fixed, AttentionMode, LayerCache, PanStack};
use crate::cluster::GroupPartition;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitude below which relative error is measured against this
/// floor instead, so round-off on near-zero entries does not dominate.
pub const ABS_FLOOR: f64 = 1e-6;
const MAX_RESAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Prototype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradProbe {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub probes: Vec<GradProbe>,
    /// Probes discarded because the perturbation crossed a rectifier kink.
    pub kinks_resampled: usize,
    pub max_rel_error: f64,
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(ABS_FLOOR);
    (a - b).abs() / scale
}

fn param_mut(stack: &mut PanStack, layer: usize, kind: ParamKind) -> &mut Array2<f64> {
    match kind {
        ParamKind::Weight => &mut stack.layers[layer].weight,
        ParamKind::Prototype => &mut stack.layers[layer].prototypes.vectors,
    }
}

fn activation_pattern(caches: &[LayerCache]) -> Vec<bool> {
    caches
        .iter()
        .flat_map(|c| {
            c.pre_activation
                .iter()
                .map(|&x| x > 0.0)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Compares analytic gradients of the total loss with central differences
/// on `n_probes` randomly chosen weight and prototype entries, holding the
/// partitions and targets fixed. A probe whose perturbation flips any
/// rectifier is resampled.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    stack: &PanStack,
    partitions: &[GroupPartition],
    targets: &[Vec<(usize, usize)>],
    clean: View<'_>,
    augmented: Option<View<'_>>,
    mode: AttentionMode,
    n_probes: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let base = objective(stack, partitions, targets, clean, augmented, mode, true)?;
    let grads = base.grads.expect("gradients requested");
    let pattern = |s: &PanStack| -> Result<Vec<bool>> {
        let mut p = activation_pattern(&stack_forward_fixed(
            s,
            clean.features,
            clean.adjacency,
            partitions,
            mode,
        )?);
        if let Some(v) = augmented {
            p.extend(activation_pattern(&stack_forward_fixed(
                s,
                v.features,
                v.adjacency,
                partitions,
                mode,
            )?));
        }
        Ok(p)
    };
    let reference = pattern(stack)?;
    let loss_at = |s: &PanStack| -> Result<f64> {
        Ok(
            objective(s, partitions, targets, clean, augmented, mode, false)?
                .loss
                .total,
        )
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(n_probes);
    let mut kinks = 0;
    let mut work = stack.clone();
    while probes.len() < n_probes {
        let layer = rng.random_range(0..stack.depth());
        let kind = if rng.random_bool(0.5) {
            ParamKind::Weight
        } else {
            ParamKind::Prototype
        };
        let (rows, cols) = param_mut(&mut work, layer, kind).dim();
        let index = (rng.random_range(0..rows), rng.random_range(0..cols));
        let original = param_mut(&mut work, layer, kind)[index];

        param_mut(&mut work, layer, kind)[index] = original + FD_STEP;
        let plus_ok = pattern(&work)? == reference;
        let plus = loss_at(&work)?;
        param_mut(&mut work, layer, kind)[index] = original - FD_STEP;
        let minus_ok = pattern(&work)? == reference;
        let minus = loss_at(&work)?;
        param_mut(&mut work, layer, kind)[index] = original;

        if !(plus_ok && minus_ok) {
            kinks += 1;
            if kinks > MAX_RESAMPLES * n_probes.max(1) {
                break;
            }
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = match kind {
            ParamKind::Weight => grads.weights[layer][index],
            ParamKind::Prototype => grads.prototypes[layer][index],
        };
        probes.push(GradProbe {
            layer,
            kind,
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        kinks_resampled: kinks,
        max_rel_error,
    })
}
