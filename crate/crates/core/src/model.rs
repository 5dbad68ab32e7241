//! Lettuce greenhouse climate dynamics.
//!
//! Four states (dry matter, indoor CO₂, air temperature, humidity) driven by
//! three control inputs and four weather disturbances. The continuous-time
//! right-hand side is integrated with a fixed-step classical Runge-Kutta
//! scheme under zero-order hold of inputs and weather. Analytic Jacobians
//! of the right-hand side and of the discrete step are provided for
//! gradient-based controllers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default guard on the photosynthesis denominator.
pub const DEFAULT_DENOMINATOR_EPSILON: f64 = 1e-12;

/// Default controller sample period in seconds (15 minutes).
pub const DEFAULT_SAMPLE_PERIOD: f64 = 900.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("photosynthesis denominator {value:e} is below the guard {epsilon:e}")]
    DegenerateDenominator { value: f64, epsilon: f64 },
    #[error("non-finite value produced in Runge-Kutta stage {stage}")]
    NonFiniteState { stage: usize },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("unknown model parameter `{0}`")]
    UnknownParameter(String),
    #[error("model parameter `{key}` must be strictly positive and finite, got {value}")]
    InvalidParameter { key: String, value: f64 },
}

/// Crop and climate state `x`.
///
/// Index 0: dry matter (kg·m⁻²), 1: indoor CO₂ (kg·m⁻³),
/// 2: air temperature (°C), 3: humidity (kg·m⁻³).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenhouseState(pub [f64; 4]);

impl GreenhouseState {
    /// Initial state used throughout the experiments.
    pub const INITIAL: GreenhouseState = GreenhouseState([0.0035, 0.001, 15.0, 0.008]);

    pub fn dry_matter(&self) -> f64 {
        self.0[0]
    }

    pub fn co2(&self) -> f64 {
        self.0[1]
    }

    pub fn temperature(&self) -> f64 {
        self.0[2]
    }

    pub fn humidity(&self) -> f64 {
        self.0[3]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Clamp the nonnegative channels (dry matter, CO₂, humidity) at zero.
    /// Returns true when anything was clamped.
    pub fn clamp_nonnegative(&mut self) -> bool {
        let mut clamped = false;
        for i in [0, 1, 3] {
            if self.0[i] < 0.0 {
                self.0[i] = 0.0;
                clamped = true;
            }
        }
        clamped
    }
}

impl Default for GreenhouseState {
    fn default() -> Self {
        Self::INITIAL
    }
}

/// Control input `u`: CO₂ supply (mg·m⁻²·s⁻¹), ventilation (mm·s⁻¹),
/// heating (W·m⁻²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput(pub [f64; 3]);

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput([0.0; 3]);
    pub const MIN: ControlInput = ControlInput([0.0, 0.0, 0.0]);
    pub const MAX: ControlInput = ControlInput([1.2, 7.5, 150.0]);

    pub fn co2_supply(&self) -> f64 {
        self.0[0]
    }

    pub fn ventilation(&self) -> f64 {
        self.0[1]
    }

    pub fn heating(&self) -> f64 {
        self.0[2]
    }

    /// Componentwise clamp into `[lo, hi]`.
    pub fn clamped(&self, lo: &ControlInput, hi: &ControlInput) -> ControlInput {
        let mut out = self.0;
        for i in 0..3 {
            out[i] = out[i].clamp(lo.0[i], hi.0[i]);
        }
        ControlInput(out)
    }

    pub fn within(&self, lo: &ControlInput, hi: &ControlInput) -> bool {
        (0..3).all(|i| self.0[i] >= lo.0[i] && self.0[i] <= hi.0[i])
    }
}

/// Weather disturbance `d` with its timestamp in seconds.
///
/// `d[0]`: radiation (W·m⁻²), `d[1]`: outdoor CO₂ (kg·m⁻³),
/// `d[2]`: outdoor temperature (°C), `d[3]`: outdoor humidity (kg·m⁻³).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub t: f64,
    pub d: [f64; 4],
}

impl WeatherRecord {
    pub fn new(t: f64, d: [f64; 4]) -> Self {
        Self { t, d }
    }

    pub fn radiation(&self) -> f64 {
        self.d[0]
    }

    pub fn is_valid(&self) -> bool {
        self.t.is_finite()
            && self.d.iter().all(|v| v.is_finite())
            && self.d[0] >= 0.0
            && self.d[1] >= 0.0
            && self.d[3] >= 0.0
    }
}

/// Measured outputs `y`: dry matter (g·m⁻²), CO₂ (ppm·10³),
/// temperature (°C), relative humidity (%).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement(pub [f64; 4]);

impl Measurement {
    pub fn dry_matter(&self) -> f64 {
        self.0[0]
    }

    pub fn co2(&self) -> f64 {
        self.0[1]
    }

    pub fn temperature(&self) -> f64 {
        self.0[2]
    }

    pub fn relative_humidity(&self) -> f64 {
        self.0[3]
    }
}

macro_rules! model_param_table {
    ($($field:ident = $key:literal => $value:expr),* $(,)?) => {
        /// The 28 model parameters, keyed `p_{i,j}` in configuration files.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct ModelParams {
            $(
                #[serde(rename = $key)]
                pub $field: f64,
            )*
        }

        impl Default for ModelParams {
            fn default() -> Self {
                Self { $($field: $value,)* }
            }
        }

        impl ModelParams {
            /// Parameter keys in table order.
            pub const KEYS: [&'static str; 28] = [$($key),*];

            pub fn get(&self, key: &str) -> Option<f64> {
                match key {
                    $($key => Some(self.$field),)*
                    _ => None,
                }
            }

            pub fn set(&mut self, key: &str, value: f64) -> Result<(), ModelError> {
                if !(value.is_finite() && value > 0.0) {
                    return Err(ModelError::InvalidParameter { key: key.to_string(), value });
                }
                match key {
                    $($key => self.$field = value,)*
                    _ => return Err(ModelError::UnknownParameter(key.to_string())),
                }
                Ok(())
            }

            /// Check that every parameter is strictly positive and finite.
            pub fn validate(&self) -> Result<(), ModelError> {
                $(
                    if !(self.$field.is_finite() && self.$field > 0.0) {
                        return Err(ModelError::InvalidParameter {
                            key: $key.to_string(),
                            value: self.$field,
                        });
                    }
                )*
                Ok(())
            }
        }
    };
}

model_param_table! {
    p1_1 = "p_{1,1}" => 0.544,
    p1_2 = "p_{1,2}" => 2.65e-7,
    p1_3 = "p_{1,3}" => 53.0,
    p1_4 = "p_{1,4}" => 3.55e-9,
    p1_5 = "p_{1,5}" => 5.11e-6,
    p1_6 = "p_{1,6}" => 2.3e-4,
    p1_7 = "p_{1,7}" => 6.29e-4,
    p1_8 = "p_{1,8}" => 5.2e-5,
    p2_1 = "p_{2,1}" => 4.1,
    p2_2 = "p_{2,2}" => 4.87e-7,
    p2_3 = "p_{2,3}" => 7.5e-6,
    p2_4 = "p_{2,4}" => 8.31,
    p2_5 = "p_{2,5}" => 273.15,
    p2_6 = "p_{2,6}" => 101325.0,
    p2_7 = "p_{2,7}" => 0.044,
    p3_1 = "p_{3,1}" => 3.0e4,
    p3_2 = "p_{3,2}" => 1290.0,
    p3_3 = "p_{3,3}" => 6.1,
    p3_4 = "p_{3,4}" => 0.2,
    p4_1 = "p_{4,1}" => 4.1,
    p4_2 = "p_{4,2}" => 0.0036,
    p4_3 = "p_{4,3}" => 9348.0,
    p4_4 = "p_{4,4}" => 8314.0,
    p4_5 = "p_{4,5}" => 273.15,
    p4_6 = "p_{4,6}" => 17.4,
    p4_7 = "p_{4,7}" => 239.0,
    p4_8 = "p_{4,8}" => 17.269,
    p4_9 = "p_{4,9}" => 238.3,
}

/// Canopy and vent exchange terms of the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSet {
    /// Gross canopy photosynthesis.
    pub photosynthesis: f64,
    /// CO₂ exchange through the vents.
    pub co2_ventilation: f64,
    /// H₂O exchange through the vents.
    pub vapour_ventilation: f64,
    /// Canopy transpiration.
    pub transpiration: f64,
    /// Photosynthesis denominator.
    pub denominator: f64,
}

/// Partial derivatives of the right-hand side: `dx[i][j] = ∂f_i/∂x_j`,
/// `du[i][j] = ∂f_i/∂u_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobians {
    pub dx: [[f64; 4]; 4],
    pub du: [[f64; 3]; 4],
}

/// One discrete step together with its sensitivities to the state and input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSensitivity {
    pub next: GreenhouseState,
    pub dx: [[f64; 4]; 4],
    pub du: [[f64; 3]; 4],
}

/// The greenhouse model: parameters plus the numerical guard settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreenhouseModel {
    pub params: ModelParams,
    pub denominator_epsilon: f64,
}

impl Default for GreenhouseModel {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            denominator_epsilon: DEFAULT_DENOMINATOR_EPSILON,
        }
    }
}

// Shared intermediate quantities of the right-hand side.
struct Terms {
    respiration_factor: f64,
    canopy_cover: f64,
    canopy_cover_dx1: f64,
    light_use: f64,
    light_use_dx3: f64,
    co2_excess: f64,
    light: f64,
    denominator: f64,
    vent_rate: f64,
    saturation: f64,
    saturation_dx3: f64,
}

impl GreenhouseModel {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    fn terms(&self, x: &GreenhouseState, u: &ControlInput, d: &[f64; 4]) -> Result<Terms, ModelError> {
        let p = &self.params;
        let [x1, x2, x3, _] = x.0;
        let respiration_factor = 2f64.powf(x3 / 10.0 - 2.5);
        let cover_exp = (-p.p1_3 * x1).exp();
        let canopy_cover = 1.0 - cover_exp;
        let light_use = -p.p1_5 * x3 * x3 + p.p1_6 * x3 - p.p1_7;
        let co2_excess = x2 - p.p1_8;
        let light = p.p1_4 * d[0];
        let denominator = light + light_use * co2_excess;
        if !(denominator.abs() >= self.denominator_epsilon) {
            return Err(ModelError::DegenerateDenominator {
                value: denominator,
                epsilon: self.denominator_epsilon,
            });
        }
        let saturation = p.p4_3 / (p.p4_4 * (x3 + p.p4_5)) * (p.p4_6 * x3 / (x3 + p.p4_7)).exp();
        let saturation_dx3 =
            saturation * (-1.0 / (x3 + p.p4_5) + p.p4_6 * p.p4_7 / ((x3 + p.p4_7) * (x3 + p.p4_7)));
        Ok(Terms {
            respiration_factor,
            canopy_cover,
            canopy_cover_dx1: p.p1_3 * cover_exp,
            light_use,
            light_use_dx3: -2.0 * p.p1_5 * x3 + p.p1_6,
            co2_excess,
            light,
            denominator,
            vent_rate: u.0[1] * 1e-3 + p.p2_3,
            saturation,
            saturation_dx3,
        })
    }

    /// Photosynthesis, ventilation and transpiration fluxes.
    pub fn canopy_fluxes(
        &self,
        x: &GreenhouseState,
        u: &ControlInput,
        d: &WeatherRecord,
    ) -> Result<FluxSet, ModelError> {
        self.fluxes_from(x, u, &d.d)
    }

    fn fluxes_from(&self, x: &GreenhouseState, u: &ControlInput, d: &[f64; 4]) -> Result<FluxSet, ModelError> {
        let t = self.terms(x, u, d)?;
        Ok(self.assemble_fluxes(x, d, &t))
    }

    fn assemble_fluxes(&self, x: &GreenhouseState, d: &[f64; 4], t: &Terms) -> FluxSet {
        let p = &self.params;
        FluxSet {
            photosynthesis: t.canopy_cover * t.light * t.light_use * t.co2_excess / t.denominator,
            co2_ventilation: t.vent_rate * (x.0[1] - d[1]),
            vapour_ventilation: t.vent_rate * (x.0[3] - d[3]),
            transpiration: p.p4_2 * t.canopy_cover * (t.saturation - x.0[3]),
            denominator: t.denominator,
        }
    }

    fn rhs(&self, x: &GreenhouseState, u: &ControlInput, d: &[f64; 4]) -> Result<[f64; 4], ModelError> {
        let p = &self.params;
        let t = self.terms(x, u, d)?;
        let f = self.assemble_fluxes(x, d, &t);
        let [x1, _, x3, _] = x.0;
        let respiration = x1 * t.respiration_factor;
        Ok([
            p.p1_1 * f.photosynthesis - p.p1_2 * respiration,
            (-f.photosynthesis + p.p2_2 * respiration + u.0[0] * 1e-6 - f.co2_ventilation) / p.p2_1,
            (u.0[2] - (p.p3_2 * u.0[1] * 1e-3 + p.p3_3) * (x3 - d[2]) + p.p3_4 * d[0]) / p.p3_1,
            (f.transpiration - f.vapour_ventilation) / p.p4_1,
        ])
    }

    /// Time derivative of the state in per-second rates.
    pub fn state_derivative(
        &self,
        x: &GreenhouseState,
        u: &ControlInput,
        d: &WeatherRecord,
    ) -> Result<[f64; 4], ModelError> {
        self.rhs(x, u, &d.d)
    }

    /// Analytic partial derivatives of [`Self::state_derivative`].
    pub fn jacobians(
        &self,
        x: &GreenhouseState,
        u: &ControlInput,
        d: &WeatherRecord,
    ) -> Result<Jacobians, ModelError> {
        self.jacobians_from(x, u, &d.d)
    }

    fn jacobians_from(&self, x: &GreenhouseState, u: &ControlInput, d: &[f64; 4]) -> Result<Jacobians, ModelError> {
        let p = &self.params;
        let t = self.terms(x, u, d)?;
        let [x1, x2, x3, x4] = x.0;
        let ln2 = std::f64::consts::LN_2;

        // ratio = light·light_use·co2_excess / denominator
        let denom2 = t.denominator * t.denominator;
        let ratio = t.light * t.light_use * t.co2_excess / t.denominator;
        let ratio_dx2 = t.light * t.light * t.light_use / denom2;
        let ratio_dx3 = t.light * t.light * t.light_use_dx3 * t.co2_excess / denom2;
        let phot = [
            t.canopy_cover_dx1 * ratio,
            t.canopy_cover * ratio_dx2,
            t.canopy_cover * ratio_dx3,
            0.0,
        ];
        let resp = [
            t.respiration_factor,
            0.0,
            x1 * t.respiration_factor * ln2 / 10.0,
            0.0,
        ];
        let transp = [
            p.p4_2 * t.canopy_cover_dx1 * (t.saturation - x4),
            0.0,
            p.p4_2 * t.canopy_cover * t.saturation_dx3,
            -p.p4_2 * t.canopy_cover,
        ];

        let mut dx = [[0.0; 4]; 4];
        let mut du = [[0.0; 3]; 4];
        for j in 0..4 {
            dx[0][j] = p.p1_1 * phot[j] - p.p1_2 * resp[j];
            dx[1][j] = (-phot[j] + p.p2_2 * resp[j]) / p.p2_1;
            dx[3][j] = transp[j] / p.p4_1;
        }
        dx[1][1] -= t.vent_rate / p.p2_1;
        dx[2][2] = -(p.p3_2 * u.0[1] * 1e-3 + p.p3_3) / p.p3_1;
        dx[3][3] -= t.vent_rate / p.p4_1;

        du[1][0] = 1e-6 / p.p2_1;
        du[1][1] = -1e-3 * (x2 - d[1]) / p.p2_1;
        du[2][1] = -p.p3_2 * 1e-3 * (x3 - d[2]) / p.p3_1;
        du[2][2] = 1.0 / p.p3_1;
        du[3][1] = -1e-3 * (x4 - d[3]) / p.p4_1;
        Ok(Jacobians { dx, du })
    }

    /// One classical fourth-order Runge-Kutta step of length `h` seconds,
    /// holding `u` and `d` constant over the step.
    pub fn rk4_step(
        &self,
        x: &GreenhouseState,
        u: &ControlInput,
        d: &WeatherRecord,
        h: f64,
    ) -> Result<GreenhouseState, ModelError> {
        check_step(h)?;
        let k1 = self.stage(x, u, &d.d, 1)?;
        let k2 = self.stage(&offset(x, &k1, h / 2.0), u, &d.d, 2)?;
        let k3 = self.stage(&offset(x, &k2, h / 2.0), u, &d.d, 3)?;
        let k4 = self.stage(&offset(x, &k3, h), u, &d.d, 4)?;
        let mut next = x.0;
        for i in 0..4 {
            next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let next = GreenhouseState(next);
        if !next.is_finite() {
            return Err(ModelError::NonFiniteState { stage: 4 });
        }
        Ok(next)
    }

    fn stage(&self, x: &GreenhouseState, u: &ControlInput, d: &[f64; 4], stage: usize) -> Result<[f64; 4], ModelError> {
        if !x.is_finite() {
            return Err(ModelError::NonFiniteState { stage });
        }
        let k = self.rhs(x, u, d)?;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteState { stage });
        }
        Ok(k)
    }

    /// Runge-Kutta step plus its exact derivative with respect to `x` and `u`.
    pub fn rk4_step_with_sensitivity(
        &self,
        x: &GreenhouseState,
        u: &ControlInput,
        d: &WeatherRecord,
        h: f64,
    ) -> Result<StepSensitivity, ModelError> {
        check_step(h)?;
        let dd = &d.d;
        let half = h / 2.0;

        let k1 = self.stage(x, u, dd, 1)?;
        let j1 = self.jacobians_from(x, u, dd)?;
        let dk1x = j1.dx;
        let dk1u = j1.du;

        let x2 = offset(x, &k1, half);
        let k2 = self.stage(&x2, u, dd, 2)?;
        let j2 = self.jacobians_from(&x2, u, dd)?;
        let dk2x = mat44_mul(&j2.dx, &identity_plus(&dk1x, half));
        let dk2u = mat43_add(&mat44_mul43(&j2.dx, &scale43(&dk1u, half)), &j2.du);

        let x3 = offset(x, &k2, half);
        let k3 = self.stage(&x3, u, dd, 3)?;
        let j3 = self.jacobians_from(&x3, u, dd)?;
        let dk3x = mat44_mul(&j3.dx, &identity_plus(&dk2x, half));
        let dk3u = mat43_add(&mat44_mul43(&j3.dx, &scale43(&dk2u, half)), &j3.du);

        let x4 = offset(x, &k3, h);
        let k4 = self.stage(&x4, u, dd, 4)?;
        let j4 = self.jacobians_from(&x4, u, dd)?;
        let dk4x = mat44_mul(&j4.dx, &identity_plus(&dk3x, h));
        let dk4u = mat43_add(&mat44_mul43(&j4.dx, &scale43(&dk3u, h)), &j4.du);

        let mut next = x.0;
        let mut dx = [[0.0; 4]; 4];
        let mut du = [[0.0; 3]; 4];
        for i in 0..4 {
            next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            for j in 0..4 {
                dx[i][j] = h / 6.0 * (dk1x[i][j] + 2.0 * dk2x[i][j] + 2.0 * dk3x[i][j] + dk4x[i][j]);
            }
            dx[i][i] += 1.0;
            for j in 0..3 {
                du[i][j] = h / 6.0 * (dk1u[i][j] + 2.0 * dk2u[i][j] + 2.0 * dk3u[i][j] + dk4u[i][j]);
            }
        }
        let next = GreenhouseState(next);
        if !next.is_finite() {
            return Err(ModelError::NonFiniteState { stage: 4 });
        }
        Ok(StepSensitivity { next, dx, du })
    }

    /// Measurement map `y = g(x)`. Requires `x3 > -p_{2,5}`.
    pub fn measure(&self, x: &GreenhouseState) -> Measurement {
        let p = &self.params;
        let [x1, x2, x3, x4] = x.0;
        debug_assert!(x3 > -p.p2_5, "temperature below absolute zero");
        Measurement([
            1e3 * x1,
            1e3 * p.p2_4 * (x3 + p.p2_5) / (p.p2_6 * p.p2_7) * x2,
            x3,
            self.humidity_gain(x3) * x4,
        ])
    }

    fn humidity_gain(&self, x3: f64) -> f64 {
        let p = &self.params;
        1e2 * p.p2_4 * (x3 + p.p2_5) / (11.0 * (p.p4_8 * x3 / (x3 + p.p4_9)).exp())
    }

    /// `dy[i][j] = ∂y_i/∂x_j`.
    pub fn measurement_jacobian(&self, x: &GreenhouseState) -> [[f64; 4]; 4] {
        let p = &self.params;
        let [_, x2, x3, x4] = x.0;
        let co2_gain = 1e3 * p.p2_4 / (p.p2_6 * p.p2_7);
        let gain = self.humidity_gain(x3);
        let gain_dx3 = gain * (1.0 / (x3 + p.p2_5) - p.p4_8 * p.p4_9 / ((x3 + p.p4_9) * (x3 + p.p4_9)));
        [
            [1e3, 0.0, 0.0, 0.0],
            [0.0, co2_gain * (x3 + p.p2_5), co2_gain * x2, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, gain_dx3 * x4, gain],
        ]
    }
}

fn check_step(h: f64) -> Result<(), ModelError> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidStepSize(h))
    }
}

fn offset(x: &GreenhouseState, k: &[f64; 4], scale: f64) -> GreenhouseState {
    let mut out = x.0;
    for i in 0..4 {
        out[i] += scale * k[i];
    }
    GreenhouseState(out)
}

fn identity_plus(m: &[[f64; 4]; 4], scale: f64) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = scale * m[i][j];
        }
        out[i][i] += 1.0;
    }
    out
}

fn mat44_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat44_mul43(a: &[[f64; 4]; 4], b: &[[f64; 3]; 4]) -> [[f64; 3]; 4] {
    let mut out = [[0.0; 3]; 4];
    for i in 0..4 {
        for j in 0..3 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat43_add(a: &[[f64; 3]; 4], b: &[[f64; 3]; 4]) -> [[f64; 3]; 4] {
    let mut out = *a;
    for i in 0..4 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

fn scale43(a: &[[f64; 3]; 4], s: f64) -> [[f64; 3]; 4] {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn rec(d: [f64; 4]) -> WeatherRecord {
        WeatherRecord::new(0.0, d)
    }

    #[test]
    fn defaults_match_parameter_table() {
        let p = ModelParams::default();
        p.validate().unwrap();
        assert_eq!(ModelParams::KEYS.len(), 28);
        assert_eq!(p.get("p_{1,1}"), Some(0.544));
        assert_eq!(p.get("p_{3,1}"), Some(3.0e4));
        assert_eq!(p.get("p_{4,9}"), Some(238.3));
        assert_eq!(p.get("p_{5,1}"), None);
    }

    #[test]
    fn set_rejects_unknown_and_nonpositive() {
        let mut p = ModelParams::default();
        p.set("p_{2,3}", 1e-5).unwrap();
        assert_eq!(p.p2_3, 1e-5);
        assert!(matches!(p.set("p_{9,9}", 1.0), Err(ModelError::UnknownParameter(_))));
        assert!(matches!(p.set("p_{1,1}", 0.0), Err(ModelError::InvalidParameter { .. })));
    }

    #[test]
    fn no_light_no_photosynthesis() {
        let m = GreenhouseModel::default();
        let f = m
            .canopy_fluxes(&GreenhouseState::INITIAL, &ControlInput::ZERO, &rec([0.0, 7e-4, 10.0, 0.006]))
            .unwrap();
        assert_eq!(f.photosynthesis, 0.0);
    }

    #[test]
    fn no_gradient_no_co2_vent_flux() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState::INITIAL;
        let f = m.canopy_fluxes(&x, &ControlInput::ZERO, &rec([50.0, x.co2(), 10.0, 0.006])).unwrap();
        assert_eq!(f.co2_ventilation, 0.0);
    }

    #[test]
    fn fluxes_match_hand_evaluation() {
        // Direct substitution at 30 significant digits.
        let m = GreenhouseModel::default();
        let f = m
            .canopy_fluxes(&GreenhouseState::INITIAL, &ControlInput::ZERO, &rec([100.0, 0.001, 10.0, 0.005]))
            .unwrap();
        assert!(rel(f.photosynthesis, 4.910_306_849_013_344_6e-8) < 1e-12);
        assert_eq!(f.co2_ventilation, 0.0);
        assert!(rel(f.vapour_ventilation, 2.25e-8) < 1e-12);
        assert!(rel(f.transpiration, 1.769_548_440_722_462_3e-6) < 1e-12);
        assert!(rel(f.denominator, 1.939_345e-6) < 1e-12);
    }

    #[test]
    fn degenerate_denominator_is_reported() {
        let m = GreenhouseModel::default();
        let mut x = GreenhouseState::INITIAL;
        x.0[1] = m.params.p1_8;
        let err = m.canopy_fluxes(&x, &ControlInput::ZERO, &rec([0.0, 7e-4, 10.0, 0.006])).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateDenominator { .. }));
    }

    #[test]
    fn derivative_matches_hand_evaluation() {
        let m = GreenhouseModel::default();
        let dx = m
            .state_derivative(&GreenhouseState::INITIAL, &ControlInput::MAX, &rec([100.0, 7.2e-4, 10.0, 0.006]))
            .unwrap();
        let expected = [
            2.624_831_925_863_259_4e-8,
            -2.317_928_825_585_691_3e-7,
            0.003_037_5,
            -3.230_597_941_287_204_3e-6,
        ];
        for i in 0..4 {
            assert!(rel(dx[i], expected[i]) < 1e-11, "component {i}: {} vs {}", dx[i], expected[i]);
        }
    }

    #[test]
    fn respiration_only_at_25_degrees_in_the_dark() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState([0.01, 0.001, 25.0, 0.008]);
        let dx = m.state_derivative(&x, &ControlInput::ZERO, &rec([0.0, 7e-4, 10.0, 0.006])).unwrap();
        assert!(rel(dx[0], -m.params.p1_2 * 0.01) < 1e-14);
    }

    #[test]
    fn exchange_vanishes_when_inside_equals_outside() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState([0.0, 8e-4, 12.0, 0.007]);
        let dx = m.state_derivative(&x, &ControlInput::ZERO, &rec([0.0, 8e-4, 12.0, 0.007])).unwrap();
        assert_eq!(dx[1], 0.0);
        assert_eq!(dx[3], 0.0);
    }

    #[test]
    fn rk4_identity_at_equilibrium() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState([0.0, 8e-4, 12.0, 0.007]);
        let next = m.rk4_step(&x, &ControlInput::ZERO, &rec([0.0, 8e-4, 12.0, 0.007]), 900.0).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        let m = GreenhouseModel::default();
        let d = rec([0.0, 7e-4, 10.0, 0.006]);
        for h in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                m.rk4_step(&GreenhouseState::INITIAL, &ControlInput::ZERO, &d, h),
                Err(ModelError::InvalidStepSize(_))
            ));
        }
    }

    #[test]
    fn rk4_flags_non_finite() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState([0.0035, 0.001, f64::NAN, 0.008]);
        let err = m.rk4_step(&x, &ControlInput::ZERO, &rec([0.0, 7e-4, 10.0, 0.006]), 900.0).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteState { .. }));
    }

    #[test]
    fn measurement_matches_hand_evaluation() {
        let m = GreenhouseModel::default();
        let y = m.measure(&GreenhouseState::INITIAL);
        assert_eq!(y.dry_matter(), 1e3 * 0.0035);
        assert!(rel(y.co2(), 0.537_094_071_731_377_4) < 1e-10);
        assert_eq!(y.temperature(), 15.0);
        assert!(rel(y.relative_humidity(), 62.631_028_963_512_857) < 1e-10);
    }

    fn central_diff<F: Fn(f64) -> [f64; 4]>(f: F, v: f64, step: f64) -> [f64; 4] {
        let a = f(v + step);
        let b = f(v - step);
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = (a[i] - b[i]) / (2.0 * step);
        }
        out
    }

    fn close(a: f64, b: f64, scale: f64) -> bool {
        (a - b).abs() <= 1e-6 * scale.max(a.abs()).max(b.abs())
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState([0.02, 9e-4, 17.0, 0.009]);
        let u = ControlInput([0.6, 2.0, 60.0]);
        let d = rec([250.0, 7e-4, 8.0, 0.006]);
        let j = m.jacobians(&x, &u, &d).unwrap();
        for c in 0..4 {
            let step = 1e-6 * x.0[c].abs().max(1e-3);
            let fd = central_diff(
                |v| {
                    let mut xx = x;
                    xx.0[c] = v;
                    m.state_derivative(&xx, &u, &d).unwrap()
                },
                x.0[c],
                step,
            );
            let scale = (0..4).map(|i| j.dx[i][c].abs()).fold(0.0, f64::max);
            for i in 0..4 {
                assert!(close(j.dx[i][c], fd[i], scale), "dx[{i}][{c}] {} vs {}", j.dx[i][c], fd[i]);
            }
        }
        for c in 0..3 {
            let step = 1e-6 * u.0[c].abs().max(1e-3);
            let fd = central_diff(
                |v| {
                    let mut uu = u;
                    uu.0[c] = v;
                    m.state_derivative(&x, &uu, &d).unwrap()
                },
                u.0[c],
                step,
            );
            let scale = (0..4).map(|i| j.du[i][c].abs()).fold(0.0, f64::max);
            for i in 0..4 {
                assert!(close(j.du[i][c], fd[i], scale), "du[{i}][{c}] {} vs {}", j.du[i][c], fd[i]);
            }
        }
    }

    #[test]
    fn step_sensitivity_matches_finite_differences() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState([0.02, 9e-4, 17.0, 0.009]);
        let u = ControlInput([0.6, 2.0, 60.0]);
        let d = rec([250.0, 7e-4, 8.0, 0.006]);
        let s = m.rk4_step_with_sensitivity(&x, &u, &d, 900.0).unwrap();
        assert_eq!(s.next, m.rk4_step(&x, &u, &d, 900.0).unwrap());
        for c in 0..4 {
            let step = 1e-6 * x.0[c].abs().max(1e-3);
            let fd = central_diff(
                |v| {
                    let mut xx = x;
                    xx.0[c] = v;
                    m.rk4_step(&xx, &u, &d, 900.0).unwrap().0
                },
                x.0[c],
                step,
            );
            let scale = (0..4).map(|i| s.dx[i][c].abs()).fold(0.0, f64::max);
            for i in 0..4 {
                assert!(close(s.dx[i][c], fd[i], scale), "A[{i}][{c}] {} vs {}", s.dx[i][c], fd[i]);
            }
        }
        for c in 0..3 {
            let step = 1e-6 * u.0[c].abs().max(1e-3);
            let fd = central_diff(
                |v| {
                    let mut uu = u;
                    uu.0[c] = v;
                    m.rk4_step(&x, &uu, &d, 900.0).unwrap().0
                },
                u.0[c],
                step,
            );
            let scale = (0..4).map(|i| s.du[i][c].abs()).fold(0.0, f64::max);
            for i in 0..4 {
                assert!(close(s.du[i][c], fd[i], scale), "B[{i}][{c}] {} vs {}", s.du[i][c], fd[i]);
            }
        }
    }

    #[test]
    fn measurement_jacobian_matches_finite_differences() {
        let m = GreenhouseModel::default();
        let x = GreenhouseState([0.02, 9e-4, 17.0, 0.009]);
        let j = m.measurement_jacobian(&x);
        for c in 0..4 {
            let step = 1e-6 * x.0[c].abs();
            let fd = central_diff(
                |v| {
                    let mut xx = x;
                    xx.0[c] = v;
                    m.measure(&xx).0
                },
                x.0[c],
                step,
            );
            for i in 0..4 {
                assert!(close(j[i][c], fd[i], 1e-12), "dy[{i}][{c}] {} vs {}", j[i][c], fd[i]);
            }
        }
    }
}
