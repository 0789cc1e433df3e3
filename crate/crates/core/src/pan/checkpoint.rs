use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PanStack;
use crate::error::{Error, Result};
use crate::graph::EdgeSet;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters, chosen group counts and the final edge set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub stack: PanStack,
    pub best_n: Vec<usize>,
    pub edges: EdgeSet,
}

impl Checkpoint {
    pub fn new(stack: PanStack, best_n: Vec<usize>, edges: EdgeSet) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            stack,
            best_n,
            edges,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("checkpoint encoding: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            file: "checkpoint".into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let stack = PanStack::new(ck.stack.layers)?;
        Ok(Self { stack, ..ck })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
