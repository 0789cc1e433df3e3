use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ce_targets, objective, LossBreakdown, View};
use super::optim::Adam;
use super::{stack_forward, AttentionMode, Granularity, LayerOutput, PanStack, Target};
use crate::cluster::{match_and_score, GroupAssignment};
use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, EdgeSet, OpenWorldSplit};
use crate::pseudo::{select_confident, ConfidentSet, EnsemblePrediction};
use crate::refine::{augment, refine};
use crate::seed::derive;

const TAG_INIT: u64 = 1;
const TAG_FORWARD: u64 = 2;
const TAG_AUGMENT: u64 = 3;
const TAG_FINAL: u64 = 4;

/// Which nodes feed the cross-entropy term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupervisionMode {
    /// Labeled training nodes only.
    LabeledOnly,
    /// Labeled nodes plus the confident pseudo-labeled nodes of the latest
    /// refinement round.
    WithPseudo,
}

/// How many groups each layer forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GranularityMode {
    /// Search `[max(2, |known|), min(n_pro, 3 |known|)]`.
    Search,
    /// Use this many groups in every layer.
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_pro: usize,
    pub topk: usize,
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub max_iterations: usize,
    pub refine_period: usize,
    pub eta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub edge_drop: f64,
    pub feature_mask: f64,
    pub granularity: GranularityMode,
    pub attention: AttentionMode,
    pub supervision: SupervisionMode,
    pub seed: u64,
    /// Stop once the relative change of the total loss over
    /// `convergence_window` epochs falls below this.
    pub convergence_tol: f64,
    pub convergence_window: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_pro: 40,
            topk: 3,
            layers: 3,
            hidden: 64,
            lr: 0.01,
            max_iterations: 200,
            refine_period: 50,
            eta: 0.01,
            gamma: 0.3,
            mu: 0.015,
            edge_drop: 0.2,
            feature_mask: 0.1,
            granularity: GranularityMode::Search,
            attention: AttentionMode::GroupAware,
            supervision: SupervisionMode::WithPseudo,
            seed: 0,
            convergence_tol: 1e-4,
            convergence_window: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_pro < 2 {
            return bad(format!("n_pro must be >= 2, got {}", self.n_pro));
        }
        if self.topk == 0 || self.topk > self.n_pro {
            return bad(format!("topk must lie in [1, n_pro], got {}", self.topk));
        }
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers and hidden must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be finite and >= 0, got {}", self.eta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 1], got {}", self.mu));
        }
        for (name, r) in [
            ("edge_drop", self.edge_drop),
            ("feature_mask", self.feature_mask),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1), got {r}"));
            }
        }
        if let GranularityMode::Fixed(n) = self.granularity {
            if n < 2 || n > self.n_pro {
                return bad(format!("fixed group count must lie in [2, n_pro], got {n}"));
            }
        }
        if self.convergence_window == 0 {
            return bad("convergence_window must be positive".into());
        }
        Ok(())
    }

    /// The granularity used for a full search given `known` labeled classes.
    pub fn search_granularity(&self, known: usize) -> Result<Granularity> {
        match self.granularity {
            GranularityMode::Fixed(n) => Ok(Granularity::Fixed(n)),
            GranularityMode::Search => {
                let lo = known.max(2);
                let hi = self.n_pro.min(3 * known);
                if lo > hi {
                    return Err(Error::invalid(format!(
                        "empty granularity range [{lo}, {hi}] for {known} known classes and {} prototypes",
                        self.n_pro
                    )));
                }
                Ok(Granularity::Search(lo..=hi))
            }
        }
    }
}

/// One structure-refinement round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementLog {
    pub epoch: usize,
    pub confident: usize,
    pub recovered: usize,
    pub removed: usize,
    pub edges_after: usize,
    pub ensemble_groups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: Adam,
    pub seed: u64,
    pub loss_history: Vec<LossBreakdown>,
    pub edges: EdgeSet,
    pub best_n: Vec<usize>,
    pub refinements: Vec<RefinementLog>,
    pub pseudo_labels: Option<ConfidentSet>,
    pub converged: bool,
}

pub struct FitOutput {
    pub stack: PanStack,
    pub state: TrainState,
    /// Final forward pass on the final edge set.
    pub outputs: Vec<LayerOutput>,
    /// Labeled plus pseudo-labeled targets used at the end of training.
    pub supervised: Vec<(usize, Target)>,
}

impl FitOutput {
    pub fn edges(&self) -> &EdgeSet {
        &self.state.edges
    }

    pub fn layer_predictions(&self) -> Vec<Array2<f64>> {
        self.outputs.iter().map(|o| o.cache.p.clone()).collect()
    }
}

fn converged(history: &[LossBreakdown], since: usize, tol: f64, window: usize) -> bool {
    let run = &history[since..];
    if run.len() <= window {
        return false;
    }
    let last = run[run.len() - 1].total;
    let prev = run[run.len() - 1 - window].total;
    let scale = prev.abs().max(f64::MIN_POSITIVE);
    (last - prev).abs() / scale < tol
}

/// Confident nodes relabeled through the first layer: groups matched to a
/// known class keep that class, the rest become pseudo-classes named after
/// their ensemble group.
fn pseudo_targets(
    confident: &ConfidentSet,
    first_layer: &LayerOutput,
    labeled: &[(usize, Target)],
) -> Result<Vec<(usize, Target)>> {
    let matching = match_and_score(&GroupAssignment(first_layer.cache.p.clone()), labeled)?;
    Ok(confident
        .labels()
        .into_iter()
        .map(|(i, k)| {
            (
                i,
                matching
                    .group_to_class
                    .get(&k)
                    .copied()
                    .unwrap_or(Target::Pseudo(k)),
            )
        })
        .collect())
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            epoch,
            msg: format!("{what} is not finite"),
        },
        other => other,
    }
}

fn parameter_shapes(stack: &PanStack) -> Vec<(usize, usize)> {
    stack
        .layers
        .iter()
        .flat_map(|l| [l.weight.dim(), l.prototypes.vectors.dim()])
        .collect()
}

/// Trains a stack on `g` under `split`: forward with clustering, one
/// gradient step on the clean and augmented views per epoch, and a
/// pseudo-label driven structure refinement every `refine_period` epochs.
pub fn fit(g: &AttributedGraph, split: &OpenWorldSplit, cfg: &FitConfig) -> Result<FitOutput> {
    cfg.validate()?;
    let n = g.node_count();
    let labeled: Vec<(usize, Target)> = split
        .train_nodes
        .iter()
        .filter_map(|&i| {
            g.labels
                .get(i)
                .copied()
                .flatten()
                .map(|y| (i, Target::Class(y)))
        })
        .collect();
    if labeled.is_empty() {
        return Err(Error::Empty("labeled training nodes"));
    }
    let search = cfg.search_granularity(split.known_classes.len())?;
    let is_train: Vec<bool> = {
        let mut v = vec![false; n];
        for &i in &split.train_nodes {
            v[i] = true;
        }
        v
    };
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[TAG_INIT]));
    let mut stack = PanStack::init(
        &g.features,
        &g.edges,
        cfg.layers,
        cfg.hidden,
        cfg.n_pro,
        cfg.topk,
        &mut init_rng,
    )?;
    let mut state = TrainState {
        epoch: 0,
        optimizer: Adam::new(cfg.lr, &parameter_shapes(&stack)),
        seed: cfg.seed,
        loss_history: Vec::new(),
        edges: g.edges.clone(),
        best_n: Vec::new(),
        refinements: Vec::new(),
        pseudo_labels: None,
        converged: false,
    };
    let mut supervised = labeled.clone();
    let mut need_search = true;
    let mut window_start = 0;

    for epoch in 0..cfg.max_iterations {
        let granularities: Vec<Granularity> = if need_search {
            vec![search.clone(); cfg.layers]
        } else {
            state
                .best_n
                .iter()
                .map(|&k| Granularity::Fixed(k))
                .collect()
        };
        let forward_seed = derive(cfg.seed, &[TAG_FORWARD, epoch as u64]);
        let outputs = stack_forward(
            &stack,
            &g.features,
            &state.edges,
            &granularities,
            &supervised,
            cfg.attention,
            forward_seed,
        )
        .map_err(|e| diverged(epoch, e).in_stage("forward"))?;
        if need_search {
            state.best_n = outputs.iter().map(LayerOutput::n_groups).collect();
            need_search = false;
        }

        let partitions: Vec<_> = outputs.iter().map(|o| o.partition.clone()).collect();
        let matchings: Vec<_> = outputs.iter().map(|o| o.matching.clone()).collect();
        let targets = ce_targets(&matchings, &supervised);
        let adjacency = state.edges.adjacency(n);
        let view = augment(
            &g.features,
            &state.edges,
            cfg.edge_drop,
            cfg.feature_mask,
            derive(cfg.seed, &[TAG_AUGMENT, epoch as u64]),
        )?;
        let aug_adjacency = view.edges.adjacency(n);
        let obj = objective(
            &stack,
            &partitions,
            &targets,
            View {
                features: &g.features,
                adjacency: &adjacency,
            },
            Some(View {
                features: &view.features,
                adjacency: &aug_adjacency,
            }),
            cfg.attention,
            true,
        )
        .map_err(|e| diverged(epoch, e))?;
        let grads = obj.grads.expect("gradients requested");
        if grads
            .weights
            .iter()
            .chain(&grads.prototypes)
            .any(|g| g.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Diverged {
                epoch,
                msg: "non-finite gradient".into(),
            });
        }
        {
            let mut params: Vec<&mut Array2<f64>> = Vec::with_capacity(2 * cfg.layers);
            for layer in stack.layers.iter_mut() {
                params.push(&mut layer.weight);
                params.push(&mut layer.prototypes.vectors);
            }
            let g_refs: Vec<&Array2<f64>> = grads
                .weights
                .iter()
                .zip(&grads.prototypes)
                .flat_map(|(w, p)| [w, p])
                .collect();
            state.optimizer.update(&mut params, &g_refs);
        }
        state.loss_history.push(obj.loss);
        state.epoch = epoch + 1;

        if cfg.refine_period > 0
            && (epoch + 1) % cfg.refine_period == 0
            && epoch + 1 < cfg.max_iterations
        {
            let preds: Vec<Array2<f64>> = outputs.iter().map(|o| o.cache.p.clone()).collect();
            let ensemble = EnsemblePrediction::from_layers(&preds, cfg.eta)
                .map_err(|e| e.in_stage("pseudo-label"))?;
            let confident = select_confident(&ensemble.p_hat, &unlabeled, cfg.gamma)?;
            let r_layers: Vec<_> = outputs
                .iter()
                .map(LayerOutput::representativeness)
                .collect();
            let result = refine(&confident, &r_layers, cfg.mu, &state.edges)
                .map_err(|e| e.in_stage("refine"))?;
            state.refinements.push(RefinementLog {
                epoch: epoch + 1,
                confident: confident.len(),
                recovered: result.recovered.len(),
                removed: result.removed.len(),
                edges_after: result.refined.len(),
                ensemble_groups: ensemble.active_groups(),
            });
            state.edges = result.refined;
            if cfg.supervision == SupervisionMode::WithPseudo {
                supervised = labeled.clone();
                supervised.extend(pseudo_targets(&confident, &outputs[0], &labeled)?);
            }
            state.pseudo_labels = Some(confident);
            need_search = true;
            window_start = state.loss_history.len();
        }

        if converged(
            &state.loss_history,
            window_start,
            cfg.convergence_tol,
            cfg.convergence_window,
        ) {
            state.converged = true;
            break;
        }
    }

    let final_granularities = vec![search; cfg.layers];
    let outputs = stack_forward(
        &stack,
        &g.features,
        &state.edges,
        &final_granularities,
        &supervised,
        cfg.attention,
        derive(cfg.seed, &[TAG_FINAL]),
    )
    .map_err(|e| e.in_stage("final forward"))?;
    state.best_n = outputs.iter().map(LayerOutput::n_groups).collect();
    Ok(FitOutput {
        stack,
        state,
        outputs,
        supervised,
    })
}
