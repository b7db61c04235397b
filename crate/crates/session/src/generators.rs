//! Builds clip generators from a [`GeneratorSpec`].

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use scenemem_generator::{checkpoint, ClipGenerator, ConditionSet, FlowGenerator, Model, OracleGenerator};

use crate::config::GeneratorSpec;
use crate::error::{Error, Result};
use crate::state::SessionState;

/// Loads each checkpoint once and hands out shared models.
#[derive(Default)]
pub struct GeneratorFactory {
    checkpoints: Mutex<HashMap<PathBuf, Arc<Model>>>,
}

impl GeneratorFactory {
    pub fn new() -> Self {
        Self::default()
    }

    fn checkpoint(&self, path: &PathBuf) -> Result<Arc<Model>> {
        let mut cache = self.checkpoints.lock().expect("checkpoint cache poisoned");
        if let Some(m) = cache.get(path) {
            return Ok(m.clone());
        }
        let (model, _) = checkpoint::load(path)?;
        let model = Arc::new(model);
        cache.insert(path.clone(), model.clone());
        Ok(model)
    }

    pub fn build(&self, spec: &GeneratorSpec, state: &SessionState) -> Result<Box<dyn ClipGenerator>> {
        Ok(match spec {
            GeneratorSpec::Oracle => {
                let source = state.scene.as_ref().ok_or_else(|| {
                    Error::InvalidRequest("the oracle generator needs a scene-initialized session".into())
                })?;
                Box::new(OracleGenerator { scene: source.build()? })
            }
            GeneratorSpec::Flow {
                checkpoint,
                steps,
                conditions,
            } => Box::new(FlowGenerator::new(self.checkpoint(checkpoint)?, *steps, *conditions)),
            GeneratorSpec::Random { model, steps } => {
                let mut cfg = model.clone().unwrap_or_default();
                let intr = &state.archive[0].view.intrinsics;
                if model.is_none() {
                    cfg.width = intr.width;
                    cfg.height = intr.height;
                }
                Box::new(FlowGenerator::new(Model::new(cfg)?, *steps, ConditionSet::ALL).with_name("random"))
            }
        })
    }
}
