//! Closed-loop simulation at the control period.

use nalgebra::Vector4;

use crate::error::Result;
use crate::lqg::{LqgDesign, LqgRuntime};
use crate::neural::NeuralRuntime;
use crate::plant::{
    advance, is_out_of_bounds, measure, Measurement, PlantParams, PlantState, SensorModel,
};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActiveController {
    Lqg,
    Neural,
}

impl ActiveController {
    /// Controller-select flag as logged: 0 = LQG, 1 = neural.
    pub fn flag(self) -> u8 {
        match self {
            ActiveController::Lqg => 0,
            ActiveController::Neural => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub voltage: f64,
    pub x_hat: Vector4<f64>,
    pub active: ActiveController,
}

/// A sampled-data controller called once per control period.
pub trait Controller {
    fn control(&mut self, meas: &Measurement, r: f64) -> Result<ControlOutput>;
}

impl Controller for LqgRuntime {
    fn control(&mut self, meas: &Measurement, r: f64) -> Result<ControlOutput> {
        let voltage = self.step(meas, r)?;
        Ok(ControlOutput {
            voltage,
            x_hat: self.estimator.x_hat,
            active: ActiveController::Lqg,
        })
    }
}

impl Controller for NeuralRuntime {
    fn control(&mut self, meas: &Measurement, r: f64) -> Result<ControlOutput> {
        let voltage = self.step(meas, r)?;
        Ok(ControlOutput {
            voltage,
            x_hat: self.estimator.x_hat,
            active: ActiveController::Neural,
        })
    }
}

/// Everything needed to close the loop around the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSetup {
    pub plant: PlantParams,
    pub sensors: SensorModel,
    pub design: LqgDesign,
    /// RK4 steps per control period.
    pub substeps: usize,
}

impl SimSetup {
    pub fn ts(&self) -> f64 {
        self.design.ts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: PlantState,
    pub x_hat: Vector4<f64>,
    pub meas: Measurement,
    pub r: f64,
    pub voltage: f64,
    pub active: ActiveController,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEnd {
    Completed,
    /// The caller's stop rule fired on the state reached at `t`.
    Stopped {
        t: f64,
    },
    /// Bound violation, blow-up or controller fault at `t`.
    Failed {
        t: f64,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub end: RunEnd,
}

impl Trajectory {
    pub fn failed(&self) -> bool {
        matches!(self.end, RunEnd::Failed { .. })
    }
}

/// Runs the loop for `duration` seconds. The controller is built from the
/// first measurement. `stop` sees every post-step state and may end the run
/// early; a hard-limit violation always ends it as a failure.
pub fn simulate<C, F, S>(
    setup: &SimSetup,
    make_controller: F,
    initial: PlantState,
    reference: &dyn Fn(f64) -> f64,
    duration: f64,
    noise: &mut RngStream,
    mut stop: S,
) -> Trajectory
where
    C: Controller,
    F: FnOnce(&Measurement) -> C,
    S: FnMut(&PlantState, f64) -> bool,
{
    let ts = setup.ts();
    let steps = (duration / ts).round() as usize;
    let mut samples = Vec::with_capacity(steps);
    let mut state = initial;
    let mut meas = measure(&state, &setup.sensors, noise);
    let mut controller = make_controller(&meas);

    for k in 0..steps {
        let t = k as f64 * ts;
        state.t = t;
        meas.t = t;
        let r = reference(t);
        let out = match controller.control(&meas, r) {
            Ok(o) => o,
            Err(e) => {
                return Trajectory {
                    samples,
                    end: RunEnd::Failed {
                        t,
                        reason: e.to_string(),
                    },
                }
            }
        };
        samples.push(Sample {
            t,
            state,
            x_hat: out.x_hat,
            meas,
            r,
            voltage: out.voltage,
            active: out.active,
        });
        let next_t = (k + 1) as f64 * ts;
        state = match advance(&state, out.voltage, &setup.plant, ts, setup.substeps) {
            Ok(s) => s,
            Err(e) => {
                return Trajectory {
                    samples,
                    end: RunEnd::Failed {
                        t: next_t,
                        reason: e.to_string(),
                    },
                }
            }
        };
        state.t = next_t;
        if is_out_of_bounds(&state, &setup.plant) {
            return Trajectory {
                samples,
                end: RunEnd::Failed {
                    t: next_t,
                    reason: format!(
                        "hard limit reached (p = {:.4} m, theta = {:.4} rad)",
                        state.p, state.theta
                    ),
                },
            };
        }
        if stop(&state, reference(next_t)) {
            return Trajectory {
                samples,
                end: RunEnd::Stopped { t: next_t },
            };
        }
        if k + 1 < steps {
            meas = measure(&state, &setup.sensors, noise);
        }
    }
    Trajectory {
        samples,
        end: RunEnd::Completed,
    }
}
