use super::env::observe;
use super::train::AgentBundle;
use crate::model::ControlInput;
use crate::simulate::{ControlContext, ControlError, Controller};

/// Greedy (noise-free) policy as a closed-loop controller.
#[derive(Debug, Clone)]
pub struct RlController {
    bundle: AgentBundle,
    y1_prev: Option<f64>,
}

impl RlController {
    pub fn new(bundle: AgentBundle) -> Self {
        Self { bundle, y1_prev: None }
    }

    pub fn bundle(&self) -> &AgentBundle {
        &self.bundle
    }
}

impl Controller for RlController {
    fn control(&mut self, ctx: &ControlContext<'_>) -> Result<ControlInput, ControlError> {
        let y1 = ctx.measurement.dry_matter();
        if ctx.k == 0 {
            self.y1_prev = None;
        }
        let d = ctx.weather.first().ok_or_else(|| ControlError("no weather for the current step".into()))?;
        let obs = observe(
            ctx.measurement,
            self.y1_prev.unwrap_or(y1),
            d,
            &ctx.previous_input,
            &self.bundle.schedule,
        );
        self.y1_prev = Some(y1);
        Ok(self.bundle.agent.policy(&obs))
    }
}
