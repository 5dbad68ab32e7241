//! Episode generation, the training loop, evaluation and checkpoints.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::Agent;
use super::env::{GreenhouseEnv, ReferenceSchedule, RewardConfig};
use super::replay::{ReplayBuffer, Transition};
use super::{DdpgError, TrainConfig};
use crate::model::{GreenhouseModel, GreenhouseState, WeatherRecord};
use crate::simulate::fmt_f64;
use crate::weather::{perturb, WeatherSeries};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const LEARNING_CURVE_HEADER: [&str; 4] = ["epoch", "cum_reward", "eval_reward", "epsilon_sigma"];
const CHECKPOINT_FORMAT: &str = "greenhouse-ddpg";

/// Initial state and weather for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub x0: GreenhouseState,
    /// `steps + 1` records starting at the first step.
    pub weather: Vec<WeatherRecord>,
}

/// Draws training and evaluation episodes from a pool of weather.
#[derive(Debug, Clone)]
pub struct EpisodeFactory {
    pub model: GreenhouseModel,
    pub pool: WeatherSeries,
    pub schedule: ReferenceSchedule,
    pub reward: RewardConfig,
    pub nominal_state: GreenhouseState,
}

impl EpisodeFactory {
    pub fn new(model: GreenhouseModel, pool: WeatherSeries) -> Self {
        Self {
            model,
            pool,
            schedule: ReferenceSchedule::default(),
            reward: RewardConfig::default(),
            nominal_state: GreenhouseState::INITIAL,
        }
    }

    /// Episode starting at a uniformly chosen whole-episode offset of the
    /// pool, with per-channel weather scaling and a scaled initial state.
    pub fn episode<R: Rng + ?Sized>(&self, config: &TrainConfig, rng: &mut R) -> Result<Episode, DdpgError> {
        let steps = config.steps_per_epoch;
        let records = self.pool.records();
        if records.is_empty() {
            return Err(DdpgError::InvalidConfig("weather pool is empty".into()));
        }
        let slots = (records.len().saturating_sub(1) / steps).max(1);
        let start = rng.random_range(0..slots) * steps;
        let end = (start + steps + 1).min(records.len());
        let mut window = WeatherSeries::new(records[start..end].to_vec(), self.pool.sample_period())?;
        let weather_seed: u64 = rng.random();
        if config.perturb_weather {
            window = perturb(&window, weather_seed);
        }
        let [lo, hi] = config.initial_state_range;
        let mut x0 = self.nominal_state;
        for v in x0.0.iter_mut() {
            *v *= if lo < hi { rng.random_range(lo..hi) } else { lo };
        }
        Ok(Episode {
            x0,
            weather: window.records().to_vec(),
        })
    }

    pub fn environment(&self, episode: &Episode, steps: usize) -> GreenhouseEnv {
        GreenhouseEnv::new(
            self.model.clone(),
            self.schedule.clone(),
            self.reward.clone(),
            episode.x0,
            &episode.weather,
            self.pool.sample_period(),
            steps,
        )
    }

    /// Fixed evaluation episodes derived from `config.eval_seed`.
    pub fn evaluation_episodes(&self, config: &TrainConfig) -> Result<Vec<Episode>, DdpgError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.eval_seed);
        (0..config.eval_episodes).map(|_| self.episode(config, &mut rng)).collect()
    }
}

/// Mean noise-free return over `episodes`.
pub fn evaluate(agent: &Agent, factory: &EpisodeFactory, episodes: &[Episode], steps: usize) -> Result<f64, DdpgError> {
    if episodes.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for ep in episodes {
        let mut env = factory.environment(ep, steps);
        while !env.is_done() {
            let u = agent.policy(&env.observation());
            total += env.step(u).reward;
        }
    }
    Ok(total / episodes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub cum_reward: f64,
    pub eval_reward: f64,
    pub epsilon_sigma: f64,
}

/// Everything needed to run the trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBundle {
    pub agent: Agent,
    pub schedule: ReferenceSchedule,
}

/// Complete training state, sufficient to resume bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub reward: RewardConfig,
    pub bundle: AgentBundle,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub epochs_done: usize,
    pub curve: Vec<CurvePoint>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), DdpgError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|e| DdpgError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DdpgError> {
        let text = std::fs::read_to_string(path)?;
        let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| DdpgError::Checkpoint(e.to_string()))?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(DdpgError::Checkpoint(format!("unknown format `{}`", cp.format)));
        }
        if cp.version != CHECKPOINT_VERSION {
            return Err(DdpgError::Checkpoint(format!("unsupported version {}", cp.version)));
        }
        Ok(cp)
    }
}

/// Resumable training loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub factory: EpisodeFactory,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub curve: Vec<CurvePoint>,
    rng: ChaCha8Rng,
    epochs_done: usize,
    eval_set: Vec<Episode>,
}

impl Trainer {
    pub fn new(factory: EpisodeFactory, config: TrainConfig, seed: u64) -> Result<Self, DdpgError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(&config, &mut rng);
        let eval_set = factory.evaluation_episodes(&config)?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            factory,
            agent,
            curve: Vec::new(),
            rng,
            epochs_done: 0,
            eval_set,
        })
    }

    /// Continue from a checkpoint. The episode factory must match the one
    /// used originally for the run to be a faithful continuation.
    pub fn resume(mut factory: EpisodeFactory, checkpoint: Checkpoint) -> Result<Self, DdpgError> {
        factory.schedule = checkpoint.bundle.schedule.clone();
        factory.reward = checkpoint.reward.clone();
        let eval_set = factory.evaluation_episodes(&checkpoint.config)?;
        Ok(Self {
            config: checkpoint.config,
            factory,
            agent: checkpoint.bundle.agent,
            buffer: checkpoint.buffer,
            curve: checkpoint.curve,
            rng: checkpoint.rng,
            epochs_done: checkpoint.epochs_done,
            eval_set,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn noise_scale(&self) -> f64 {
        self.config.noise_std * self.config.noise_decay.powi(self.epochs_done as i32)
    }

    pub fn evaluate(&self) -> Result<f64, DdpgError> {
        evaluate(&self.agent, &self.factory, &self.eval_set, self.config.steps_per_epoch)
    }

    /// One episode of interaction and learning.
    pub fn run_epoch(&mut self) -> Result<CurvePoint, DdpgError> {
        let steps = self.config.steps_per_epoch;
        let episode = self.factory.episode(&self.config, &mut self.rng)?;
        let mut env = self.factory.environment(&episode, steps);
        let sigma = self.noise_scale();
        let half = self.agent.action_map.half_range();
        let noise = [sigma * half[0], sigma * half[1], sigma * half[2]];
        let mut cum_reward = 0.0;
        let mut obs = self.agent.scaler.normalize(&env.observation());
        while !env.is_done() {
            let u = if self.buffer.len() < self.config.warmup_steps {
                let a: [f64; 3] = std::array::from_fn(|_| self.rng.random_range(-1.0..1.0));
                self.agent.action_map.to_input(&a)
            } else {
                self.agent.act(&obs, Some(noise), &mut self.rng)
            };
            let out = env.step(u);
            let next_obs = self.agent.scaler.normalize(&out.observation);
            cum_reward += out.reward;
            self.buffer.push(Transition {
                obs,
                action: self.agent.action_map.to_action(&u),
                reward: out.reward,
                next_obs,
                terminal: out.done,
            });
            if self.buffer.len() >= self.config.batch_size.max(self.config.warmup_steps) {
                let idx = self.buffer.sample_indices(self.config.batch_size, &mut self.rng);
                let batch: Vec<&Transition> = idx.iter().map(|i| self.buffer.get(*i).unwrap()).collect();
                self.agent.learn(&batch, &self.config)?;
            }
            obs = next_obs;
        }
        self.epochs_done += 1;
        let point = CurvePoint {
            epoch: self.epochs_done,
            cum_reward,
            eval_reward: self.evaluate()?,
            epsilon_sigma: sigma,
        };
        log::info!(
            "epoch {}: reward {:.4}, eval {:.4}, sigma {:.4}",
            point.epoch,
            point.cum_reward,
            point.eval_reward,
            point.epsilon_sigma
        );
        self.curve.push(point);
        Ok(point)
    }

    /// Train until `config.epochs` epochs have been completed.
    pub fn run(&mut self) -> Result<(), DdpgError> {
        while self.epochs_done < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn bundle(&self) -> AgentBundle {
        AgentBundle {
            agent: self.agent.clone(),
            schedule: self.factory.schedule.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            reward: self.factory.reward.clone(),
            bundle: self.bundle(),
            buffer: self.buffer.clone(),
            rng: self.rng.clone(),
            epochs_done: self.epochs_done,
            curve: self.curve.clone(),
        }
    }

    pub fn write_curve<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        write_curve(&self.curve, writer)
    }
}

pub(crate) fn write_curve<W: Write>(curve: &[CurvePoint], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LEARNING_CURVE_HEADER)?;
    for p in curve {
        w.write_record([
            p.epoch.to_string(),
            fmt_f64(p.cum_reward),
            fmt_f64(p.eval_reward),
            fmt_f64(p.epsilon_sigma),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Train a fresh agent for `config.epochs` epochs.
pub fn train(factory: &EpisodeFactory, config: &TrainConfig, seed: u64) -> Result<(AgentBundle, Vec<CurvePoint>), DdpgError> {
    let mut trainer = Trainer::new(factory.clone(), config.clone(), seed)?;
    trainer.run()?;
    Ok((trainer.bundle(), trainer.curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weather::{resample, synthesize, WeatherProfile};

    fn factory(days: usize) -> EpisodeFactory {
        let pool = resample(&synthesize(days, 1, &WeatherProfile::default()).unwrap(), 900.0).unwrap();
        EpisodeFactory::new(GreenhouseModel::default(), pool)
    }

    #[test]
    fn zero_epochs_give_untrained_bundle() {
        let config = TrainConfig { epochs: 0, eval_episodes: 1, ..TrainConfig::default() };
        let (bundle, curve) = train(&factory(2), &config, 3).unwrap();
        assert!(curve.is_empty());
        let fresh = Trainer::new(factory(2), config, 3).unwrap();
        assert_eq!(bundle.agent, fresh.agent);
    }

    #[test]
    fn buffer_occupancy_follows_steps() {
        let config = TrainConfig {
            steps_per_epoch: 50,
            eval_episodes: 0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(factory(2), config, 1).unwrap();
        for _ in 0..3 {
            t.run_epoch().unwrap();
        }
        assert_eq!(t.buffer.len(), 150);
        // Only the last transition of each episode is terminal.
        let terminals: Vec<usize> = t.buffer.iter().enumerate().filter(|(_, x)| x.terminal).map(|(i, _)| i).collect();
        assert_eq!(terminals, vec![49, 99, 149]);
    }

    #[test]
    fn networks_stay_fixed_during_warmup() {
        let config = TrainConfig {
            steps_per_epoch: 50,
            eval_episodes: 0,
            batch_size: 8,
            warmup_steps: 120,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(factory(2), config, 5).unwrap();
        let initial = t.agent.clone();
        t.run_epoch().unwrap();
        t.run_epoch().unwrap();
        assert_eq!(t.agent.actor, initial.actor);
        assert_eq!(t.agent.critic, initial.critic);
        t.run_epoch().unwrap();
        assert_ne!(t.agent.actor, initial.actor);
    }

    #[test]
    fn episodes_scale_initial_state_within_range() {
        let f = factory(3);
        let config = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let ep = f.episode(&config, &mut rng).unwrap();
            assert_eq!(ep.weather.len(), 97);
            for (v, n) in ep.x0.0.iter().zip(GreenhouseState::INITIAL.0) {
                let ratio = v / n;
                assert!((0.8..1.2).contains(&ratio));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig {
            epochs: 3,
            steps_per_epoch: 24,
            batch_size: 16,
            warmup_steps: 30,
            eval_episodes: 1,
            ..TrainConfig::default()
        };
        let mut straight = Trainer::new(factory(2), config.clone(), 9).unwrap();
        straight.run().unwrap();

        let mut first = Trainer::new(factory(2), TrainConfig { epochs: 2, ..config.clone() }, 9).unwrap();
        first.run().unwrap();
        let path = dir.path().join("agent.json");
        first.checkpoint().save(&path).unwrap();
        let mut cp = Checkpoint::load(&path).unwrap();
        assert_eq!(cp, first.checkpoint());
        cp.config.epochs = 3;
        let mut resumed = Trainer::resume(factory(2), cp).unwrap();
        resumed.run().unwrap();
        assert_eq!(resumed.agent, straight.agent);
        assert_eq!(resumed.curve, straight.curve);

        let mut buf = Vec::new();
        resumed.write_curve(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,cum_reward,eval_reward,epsilon_sigma\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig { epochs: 0, eval_episodes: 0, ..TrainConfig::default() };
        let mut cp = Trainer::new(factory(2), config, 1).unwrap().checkpoint();
        cp.version = 99;
        let path = dir.path().join("bad.json");
        cp.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(DdpgError::Checkpoint(_))));
    }
}
