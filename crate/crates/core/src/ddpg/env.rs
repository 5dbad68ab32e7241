//! Agent-facing view of the greenhouse: references, reward, observations
//! and the episodic environment.

use serde::{Deserialize, Serialize};

use super::networks::OBSERVATION_SIZE;
use crate::model::{ControlInput, GreenhouseModel, GreenhouseState, Measurement, WeatherRecord};
use crate::mpc::{temperature_band, NIGHT_RADIATION_THRESHOLD};

/// Day/night CO₂ and temperature bands with references at the midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSchedule {
    pub co2_night: [f64; 2],
    pub co2_day: [f64; 2],
    pub temperature_night: [f64; 2],
    pub temperature_day: [f64; 2],
    pub night_threshold: f64,
}

impl Default for ReferenceSchedule {
    fn default() -> Self {
        let (nl, nh) = temperature_band(0.0);
        let (dl, dh) = temperature_band(NIGHT_RADIATION_THRESHOLD);
        Self {
            co2_night: [0.4, 0.8],
            co2_day: [0.8, 1.6],
            temperature_night: [nl, nh],
            temperature_day: [dl, dh],
            night_threshold: NIGHT_RADIATION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct References {
    pub co2_min: f64,
    pub co2_max: f64,
    pub temperature_min: f64,
    pub temperature_max: f64,
}

impl References {
    pub fn co2_ref(&self) -> f64 {
        0.5 * (self.co2_min + self.co2_max)
    }

    pub fn temperature_ref(&self) -> f64 {
        0.5 * (self.temperature_min + self.temperature_max)
    }
}

impl ReferenceSchedule {
    pub fn at(&self, radiation: f64) -> References {
        let (co2, t) = if radiation < self.night_threshold {
            (self.co2_night, self.temperature_night)
        } else {
            (self.co2_day, self.temperature_day)
        };
        References {
            co2_min: co2[0],
            co2_max: co2[1],
            temperature_min: t[0],
            temperature_max: t[1],
        }
    }
}

/// Reward weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight on the dry-matter increment (per g·m⁻²).
    pub dry_matter: f64,
    /// Quadratic penalty outside / constant reward inside the CO₂ band.
    pub co2: [f64; 2],
    /// Quadratic penalty outside / constant reward inside the temperature band.
    pub temperature: [f64; 2],
    /// Input weights as tabulated (negative numbers).
    pub inputs: [f64; 3],
    /// Subtract `Σ c_j·u_j` with the signed weights instead of `Σ |c_j|·u_j`.
    pub literal_reward_sign: bool,
    /// Air temperature (°C) above which the episode is cut short; the
    /// photosynthesis temperature factor changes sign near 40 °C.
    pub temperature_limit: f64,
    /// Reward of the step that leaves the valid region or makes the
    /// integration fail.
    pub invalid_state_reward: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            dry_matter: 16.0,
            co2: [0.1, 0.0005],
            temperature: [0.001, 0.0005],
            inputs: [-4.5360e-4, -0.0075, -8.5725e-4],
            literal_reward_sign: false,
            temperature_limit: 40.0,
            invalid_state_reward: -1.0,
        }
    }
}

fn band_reward(v: f64, lo: f64, hi: f64, weights: [f64; 2]) -> f64 {
    if v < lo {
        -weights[0] * (v - lo).powi(2)
    } else if v > hi {
        -weights[0] * (v - hi).powi(2)
    } else {
        weights[1]
    }
}

/// Reward for reaching measurement `y` after applying `u_prev`, with
/// `delta_y1` the dry-matter increment in g·m⁻².
pub fn reward(delta_y1: f64, y: &Measurement, u_prev: &ControlInput, refs: &References, cfg: &RewardConfig) -> f64 {
    let r_co2 = band_reward(y.co2(), refs.co2_min, refs.co2_max, cfg.co2);
    let r_t = band_reward(y.temperature(), refs.temperature_min, refs.temperature_max, cfg.temperature);
    let penalty: f64 = (0..3)
        .map(|j| {
            let c = if cfg.literal_reward_sign { cfg.inputs[j] } else { cfg.inputs[j].abs() };
            c * u_prev.0[j]
        })
        .sum();
    cfg.dry_matter * delta_y1 + r_co2 + r_t - penalty
}

/// Raw agent observation:
/// `(Δy1, y2_ref − y2, y3_ref − y3, y4, d1, d2, d3, u1, u2, u3)` with the
/// inputs being those applied over the previous step.
pub fn observe(
    y: &Measurement,
    y1_prev: f64,
    d: &WeatherRecord,
    u_prev: &ControlInput,
    schedule: &ReferenceSchedule,
) -> [f64; OBSERVATION_SIZE] {
    let refs = schedule.at(d.radiation());
    [
        y.dry_matter() - y1_prev,
        refs.co2_ref() - y.co2(),
        refs.temperature_ref() - y.temperature(),
        y.relative_humidity(),
        d.d[0],
        d.d[1],
        d.d[2],
        u_prev.0[0],
        u_prev.0[1],
        u_prev.0[2],
    ]
}

/// Fixed per-dimension affine scaling `(x − center) / scale`, clipped to
/// `±clip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationScaler {
    pub center: [f64; OBSERVATION_SIZE],
    pub scale: [f64; OBSERVATION_SIZE],
    pub clip: f64,
}

impl Default for ObservationScaler {
    fn default() -> Self {
        let u = ControlInput::MAX.0;
        Self {
            center: [0.0, 0.0, 0.0, 50.0, 200.0, 7.2e-4, 10.0, u[0] / 2.0, u[1] / 2.0, u[2] / 2.0],
            scale: [0.1, 1.0, 10.0, 50.0, 200.0, 3e-4, 10.0, u[0] / 2.0, u[1] / 2.0, u[2] / 2.0],
            clip: 10.0,
        }
    }
}

impl ObservationScaler {
    pub fn normalize(&self, x: &[f64; OBSERVATION_SIZE]) -> [f64; OBSERVATION_SIZE] {
        let mut z = [0.0; OBSERVATION_SIZE];
        for i in 0..OBSERVATION_SIZE {
            z[i] = ((x[i] - self.center[i]) / self.scale[i]).clamp(-self.clip, self.clip);
        }
        z
    }

    pub fn denormalize(&self, z: &[f64; OBSERVATION_SIZE]) -> [f64; OBSERVATION_SIZE] {
        let mut x = [0.0; OBSERVATION_SIZE];
        for i in 0..OBSERVATION_SIZE {
            x[i] = self.center[i] + z[i] * self.scale[i];
        }
        x
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scale.iter().all(|s| s.is_finite() && *s > 0.0) && self.center.iter().all(|c| c.is_finite()) && self.clip > 0.0 {
            Ok(())
        } else {
            Err("observation scales must be positive and centers finite".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: [f64; OBSERVATION_SIZE],
    pub reward: f64,
    pub done: bool,
}

/// Fixed-length episode on a given weather window.
#[derive(Debug, Clone)]
pub struct GreenhouseEnv {
    model: GreenhouseModel,
    schedule: ReferenceSchedule,
    reward: RewardConfig,
    weather: Vec<WeatherRecord>,
    sample_period: f64,
    steps: usize,
    k: usize,
    x: GreenhouseState,
    y: Measurement,
    y1_prev: f64,
    u_prev: ControlInput,
    invalid: bool,
}

impl GreenhouseEnv {
    pub fn new(
        model: GreenhouseModel,
        schedule: ReferenceSchedule,
        reward: RewardConfig,
        x0: GreenhouseState,
        weather: &[WeatherRecord],
        sample_period: f64,
        steps: usize,
    ) -> Self {
        assert!(!weather.is_empty(), "episode needs weather");
        let y = model.measure(&x0);
        Self {
            model,
            schedule,
            reward,
            weather: weather.to_vec(),
            sample_period,
            steps,
            k: 0,
            x: x0,
            y1_prev: y.dry_matter(),
            y,
            u_prev: ControlInput::ZERO,
            invalid: false,
        }
    }

    fn record(&self, k: usize) -> &WeatherRecord {
        &self.weather[k.min(self.weather.len() - 1)]
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn state(&self) -> &GreenhouseState {
        &self.x
    }

    pub fn observation(&self) -> [f64; OBSERVATION_SIZE] {
        observe(&self.y, self.y1_prev, self.record(self.k), &self.u_prev, &self.schedule)
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.steps || self.invalid
    }

    /// `true` once a step has left the valid region.
    pub fn left_valid_region(&self) -> bool {
        self.invalid
    }

    /// Advance one sample period. A step that fails to integrate or ends
    /// above the temperature limit terminates the episode with
    /// `invalid_state_reward`; the state is then left unchanged.
    pub fn step(&mut self, u: ControlInput) -> StepOutcome {
        let u = u.clamped(&ControlInput::MIN, &ControlInput::MAX);
        let d = *self.record(self.k);
        let next = match self.model.rk4_step(&self.x, &u, &d, self.sample_period) {
            Ok(mut next) if next.temperature() <= self.reward.temperature_limit => {
                next.clamp_nonnegative();
                next
            }
            _ => {
                self.k += 1;
                self.invalid = true;
                self.u_prev = u;
                return StepOutcome {
                    observation: self.observation(),
                    reward: self.reward.invalid_state_reward,
                    done: true,
                };
            }
        };
        let y = self.model.measure(&next);
        self.k += 1;
        let refs = self.schedule.at(self.record(self.k).radiation());
        let r = reward(y.dry_matter() - self.y.dry_matter(), &y, &u, &refs, &self.reward);
        self.y1_prev = self.y.dry_matter();
        self.x = next;
        self.y = y;
        self.u_prev = u;
        StepOutcome {
            observation: self.observation(),
            reward: r,
            done: self.is_done(),
        }
    }
}
