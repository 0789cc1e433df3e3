use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AttributedGraph;
use crate::error::{Error, Result};

/// Known/novel class split with train, validation and test node sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenWorldSplit {
    pub known_classes: Vec<usize>,
    pub all_classes: Vec<usize>,
    pub train_nodes: Vec<usize>,
    pub val_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
}

impl OpenWorldSplit {
    pub fn novel_classes(&self) -> Vec<usize> {
        let known: BTreeSet<_> = self.known_classes.iter().collect();
        self.all_classes
            .iter()
            .filter(|c| !known.contains(c))
            .copied()
            .collect()
    }

    pub fn is_known(&self, class: usize) -> bool {
        self.known_classes.binary_search(&class).is_ok()
    }

    /// Copy of `g` whose label mask exposes exactly the training nodes.
    pub fn masked(&self, g: &AttributedGraph) -> AttributedGraph {
        let mut out = g.clone();
        out.label_mask = vec![false; g.node_count()];
        for &i in &self.train_nodes {
            out.label_mask[i] = true;
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

fn check_fraction(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {x}"
        )))
    }
}

/// Number of known classes: `floor(fraction * classes)`, clamped to
/// `[1, classes - 1]` so at least one class stays novel.
pub(crate) fn known_class_count(fraction: f64, classes: usize) -> usize {
    let m = (fraction * classes as f64 + 1e-9).floor() as usize;
    m.clamp(1, classes - 1)
}

/// Draws known classes uniformly at random, then splits each known class into
/// train/validation/test by the given fractions. Every node of a novel class
/// lands in the test set.
pub fn make_open_world_split(
    g: &AttributedGraph,
    known_class_fraction: f64,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<OpenWorldSplit> {
    if !g.is_fully_labeled() {
        return Err(Error::invalid(
            "open-world split needs a fully labeled graph",
        ));
    }
    check_fraction("known_class_fraction", known_class_fraction)?;
    check_fraction("train_fraction", train_fraction)?;
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!(
            "val_fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    if train_fraction + val_fraction > 1.0 {
        return Err(Error::invalid("train_fraction + val_fraction exceeds 1"));
    }

    let all_classes = g.classes();
    if all_classes.len() < 2 {
        return Err(Error::invalid(
            "need at least two classes for a strict known-class subset",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = all_classes.clone();
    shuffled.shuffle(&mut rng);
    let m = known_class_count(known_class_fraction, all_classes.len());
    let mut known_classes = shuffled[..m].to_vec();
    known_classes.sort_unstable();

    let mut train_nodes = Vec::new();
    let mut val_nodes = Vec::new();
    let mut test_nodes = Vec::new();
    for &c in &all_classes {
        let mut members: Vec<usize> = (0..g.node_count())
            .filter(|&i| g.labels[i] == Some(c))
            .collect();
        if known_classes.binary_search(&c).is_err() {
            test_nodes.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((train_fraction * n as f64).round() as usize).min(n);
        let n_val = ((val_fraction * n as f64).round() as usize).min(n - n_train);
        train_nodes.extend_from_slice(&members[..n_train]);
        val_nodes.extend_from_slice(&members[n_train..n_train + n_val]);
        test_nodes.extend_from_slice(&members[n_train + n_val..]);
    }
    train_nodes.sort_unstable();
    val_nodes.sort_unstable();
    test_nodes.sort_unstable();

    if train_nodes.is_empty() {
        return Err(Error::invalid("split produced an empty training set"));
    }
    if test_nodes.is_empty() {
        return Err(Error::invalid("split produced an empty test set"));
    }

    Ok(OpenWorldSplit {
        known_classes,
        all_classes,
        train_nodes,
        val_nodes,
        test_nodes,
    })
}
