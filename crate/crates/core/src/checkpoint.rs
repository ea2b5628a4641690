//! Binary checkpoints: networks, optional resumable training state, and the
//! effective configuration that produced them.
//!
//! Layout (little-endian): `BWRD`, version `u32`, config fingerprint
//! `[u8; 32]`, config text, episode and step counters, four networks
//! (actor, actor target, critic, critic target) each as a layer manifest
//! followed by its parameter blocks, an optional training-state section
//! (optimizers, noise, random streams, replay buffer), and a trailing
//! SHA-256 of everything before it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::ddpg::{Agent, OuNoise, OuParams, ReplayBuffer, RngState, Trainer, Transition};
use crate::nn::{Adam, Critic, LayerDesc, Mlp, Parametric};

pub const MAGIC: &[u8; 4] = b"BWRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch: file is corrupted")]
    Checksum,
    #[error("checkpoint ends unexpectedly")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("embedded config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint was produced by a different configuration")]
    ConfigMismatch,
    #[error("checkpoint holds no training state")]
    NoTrainingState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
    fn block(&mut self, m: &DMatrix<f64>) {
        self.u32(m.nrows() as u32);
        self.u32(m.ncols() as u32);
        for x in m.iter() {
            self.f64(*x);
        }
    }

    fn mlp(&mut self, net: &Mlp) {
        let desc = net.describe();
        self.u32(desc.len() as u32);
        for d in &desc {
            match d {
                LayerDesc::Dense { inputs, outputs } => {
                    self.u8(0);
                    self.u32(*inputs as u32);
                    self.u32(*outputs as u32);
                }
                LayerDesc::BatchNorm { dim } => {
                    self.u8(1);
                    self.u32(*dim as u32);
                }
                LayerDesc::Relu => self.u8(2),
                LayerDesc::Tanh => self.u8(3),
                LayerDesc::Scale(s) => {
                    self.u8(4);
                    self.f64(*s);
                }
            }
        }
        let blocks = net.all_blocks();
        self.u32(blocks.len() as u32);
        for b in blocks {
            self.block(b);
        }
    }

    fn adam(&mut self, a: &Adam) {
        for v in [a.lr, a.beta1, a.beta2, a.eps] {
            self.f64(v);
        }
        self.u64(a.step);
        self.u32(a.first.len() as u32);
        for (m, v) in a.first.iter().zip(&a.second) {
            self.block(m);
            self.block(v);
        }
    }

    fn rng(&mut self, r: &RngState) {
        self.0.extend_from_slice(&r.seed);
        self.u64(r.stream);
        self.u128(r.word_pos);
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

const MAX_DIM: usize = 1 << 20;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.data.len() - self.pos < n {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A length prefix that cannot exceed the bytes left at `unit` bytes per item.
    fn len(&mut self, unit: usize) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        if n > ((self.data.len() - self.pos) / unit.max(1)) as u64 {
            return Err(CheckpointError::Truncated);
        }
        Ok(n as usize)
    }
    fn dim(&mut self) -> Result<usize, CheckpointError> {
        let d = self.u32()? as usize;
        if d > MAX_DIM {
            return Err(CheckpointError::Malformed(format!("dimension {d} too large")));
        }
        Ok(d)
    }
    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.len(1)?;
        self.take(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn block(&mut self) -> Result<DMatrix<f64>, CheckpointError> {
        let (r, c) = (self.dim()?, self.dim()?);
        if r.saturating_mul(c) > (self.data.len() - self.pos) / 8 {
            return Err(CheckpointError::Truncated);
        }
        let vals = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_vec(r, c, vals))
    }

    fn mlp(&mut self) -> Result<Mlp, CheckpointError> {
        let n = self.dim()?;
        let mut desc = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            desc.push(match self.u8()? {
                0 => LayerDesc::Dense {
                    inputs: self.dim()?,
                    outputs: self.dim()?,
                },
                1 => LayerDesc::BatchNorm { dim: self.dim()? },
                2 => LayerDesc::Relu,
                3 => LayerDesc::Tanh,
                4 => LayerDesc::Scale(self.f64()?),
                t => return Err(CheckpointError::Malformed(format!("unknown layer tag {t}"))),
            });
        }
        let values: usize = desc
            .iter()
            .map(|d| match d {
                LayerDesc::Dense { inputs, outputs } => inputs.saturating_mul(*outputs).saturating_add(*outputs),
                LayerDesc::BatchNorm { dim } => 4 * dim,
                _ => 0,
            })
            .fold(0usize, |a, b| a.saturating_add(b));
        if values > (self.data.len() - self.pos) / 8 {
            return Err(CheckpointError::Truncated);
        }
        let mut net = Mlp::from_desc(&desc);
        let count = self.dim()?;
        let expected = net.all_blocks().len();
        if count != expected {
            return Err(CheckpointError::Malformed(format!(
                "{count} parameter blocks for a manifest needing {expected}"
            )));
        }
        for slot in net.all_blocks_mut() {
            let b = self.block()?;
            if b.shape() != slot.shape() {
                return Err(CheckpointError::Malformed("parameter block shape disagrees with manifest".into()));
            }
            *slot = b;
        }
        Ok(net)
    }

    fn adam(&mut self, net: &impl Parametric) -> Result<Adam, CheckpointError> {
        let (lr, beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let step = self.u64()?;
        let n = self.dim()?;
        let shapes: Vec<_> = net.trainable().iter().map(|b| b.shape()).collect();
        if n != shapes.len() {
            return Err(CheckpointError::Malformed("optimizer state does not match its network".into()));
        }
        let (mut first, mut second) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for shape in shapes {
            let (m, v) = (self.block()?, self.block()?);
            if m.shape() != shape || v.shape() != shape {
                return Err(CheckpointError::Malformed("optimizer block shape mismatch".into()));
            }
            first.push(m);
            second.push(v);
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            step,
            first,
            second,
        })
    }

    fn rng(&mut self) -> Result<RngState, CheckpointError> {
        Ok(RngState {
            seed: self.take(32)?.try_into().unwrap(),
            stream: self.u64()?,
            word_pos: self.u128()?,
        })
    }
}

/// Random streams, counters and learner state that make a resume continue
/// exactly where the saved run stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub noise: OuNoise,
    pub buffer: ReplayBuffer,
    pub env_rng: RngState,
    pub noise_rng: RngState,
    pub sample_rng: RngState,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub config_text: String,
    pub episodes_done: u64,
    pub total_steps: u64,
    /// Networks are restored exactly; without training state the optimizers,
    /// noise and buffer are fresh.
    pub agent: Agent,
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub fn from_trainer(config: &RunConfig, trainer: &Trainer) -> Checkpoint {
        let a = &trainer.agent;
        Checkpoint {
            config: config.clone(),
            config_text: config.echo(),
            episodes_done: trainer.episodes_done,
            total_steps: trainer.total_steps,
            agent: a.clone(),
            training: Some(TrainingState {
                actor_opt: a.actor_opt.clone(),
                critic_opt: a.critic_opt.clone(),
                noise: a.noise.clone(),
                buffer: a.buffer.clone(),
                env_rng: RngState::capture(&trainer.env_rng),
                noise_rng: RngState::capture(&trainer.noise_rng),
                sample_rng: RngState::capture(&trainer.sample_rng),
            }),
        }
    }

    /// Networks only.
    pub fn from_agent(config: &RunConfig, agent: &Agent, episodes_done: u64) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            config_text: config.echo(),
            episodes_done,
            total_steps: 0,
            agent: agent.clone(),
            training: None,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer, CheckpointError> {
        let state = self.training.ok_or(CheckpointError::NoTrainingState)?;
        let mut agent = self.agent;
        agent.actor_opt = state.actor_opt;
        agent.critic_opt = state.critic_opt;
        agent.noise = state.noise;
        agent.buffer = state.buffer;
        let max_steps = self.config.episode_steps();
        Ok(Trainer {
            agent,
            env_rng: state.env_rng.restore(),
            noise_rng: state.noise_rng.restore(),
            sample_rng: state.sample_rng.restore(),
            episodes_done: self.episodes_done,
            total_steps: self.total_steps,
            max_steps,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.0.extend_from_slice(&self.config.fingerprint());
        w.bytes(self.config_text.as_bytes());
        w.u64(self.episodes_done);
        w.u64(self.total_steps);
        let a = &self.agent;
        w.u32(a.obs_dim as u32);
        w.u32(a.act_dim as u32);
        w.f64(a.action_bound);
        w.mlp(&a.actor);
        w.mlp(&a.actor_target);
        for c in [&a.critic, &a.critic_target] {
            w.mlp(&c.state_path);
            w.mlp(&c.head);
        }
        match &self.training {
            None => w.u8(0),
            Some(t) => {
                w.u8(1);
                w.adam(&t.actor_opt);
                w.adam(&t.critic_opt);
                let OuParams { mu, theta, sigma } = t.noise.params;
                for v in [mu, theta, sigma] {
                    w.f64(v);
                }
                w.f64s(&t.noise.x);
                for r in [&t.env_rng, &t.noise_rng, &t.sample_rng] {
                    w.rng(r);
                }
                let (items, cursor) = t.buffer.raw_parts();
                w.u64(t.buffer.capacity() as u64);
                w.u64(cursor as u64);
                w.u64(items.len() as u64);
                for tr in items {
                    w.f64s(&tr.s);
                    w.f64s(&tr.a);
                    w.f64(tr.r);
                    w.f64s(&tr.s_next);
                    w.u8(tr.done as u8);
                }
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<Checkpoint, CheckpointError> {
        if data.len() < 4 || &data[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if data.len() < 8 + 32 {
            return Err(CheckpointError::Truncated);
        }
        let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let (body, digest) = data.split_at(data.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { data: body, pos: 8 };
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let config_text = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| CheckpointError::Malformed("config text is not UTF-8".into()))?;
        let config = RunConfig::parse(&config_text)?;
        if config.fingerprint() != fingerprint {
            return Err(CheckpointError::ConfigMismatch);
        }
        let episodes_done = r.u64()?;
        let total_steps = r.u64()?;
        let obs_dim = r.dim()?;
        let act_dim = r.dim()?;
        let action_bound = r.f64()?;
        let actor = r.mlp()?;
        let actor_target = r.mlp()?;
        let critic = Critic {
            state_path: r.mlp()?,
            head: r.mlp()?,
        };
        let critic_target = Critic {
            state_path: r.mlp()?,
            head: r.mlp()?,
        };
        if actor.input_dim() != Some(obs_dim) || actor.output_dim() != Some(act_dim) {
            return Err(CheckpointError::Malformed("actor shape disagrees with recorded dimensions".into()));
        }
        if actor.describe() != actor_target.describe()
            || critic.state_path.describe() != critic_target.state_path.describe()
            || critic.head.describe() != critic_target.head.describe()
        {
            return Err(CheckpointError::Malformed("target network differs from its source".into()));
        }
        let training = match r.u8()? {
            0 => None,
            1 => {
                let actor_opt = r.adam(&actor)?;
                let critic_opt = r.adam(&critic)?;
                let params = OuParams {
                    mu: r.f64()?,
                    theta: r.f64()?,
                    sigma: r.f64()?,
                };
                let x = r.f64s()?;
                let (env_rng, noise_rng, sample_rng) = (r.rng()?, r.rng()?, r.rng()?);
                let capacity = r.u64()? as usize;
                let cursor = r.u64()? as usize;
                let len = r.len(8 * 3 + 1)?;
                let mut items = Vec::with_capacity(len.min(1 << 16));
                for _ in 0..len {
                    items.push(Transition {
                        s: r.f64s()?,
                        a: r.f64s()?,
                        r: r.f64()?,
                        s_next: r.f64s()?,
                        done: r.u8()? != 0,
                    });
                }
                Some(TrainingState {
                    actor_opt,
                    critic_opt,
                    noise: OuNoise { params, x },
                    buffer: ReplayBuffer::from_raw_parts(capacity, items, cursor)
                        .ok_or_else(|| CheckpointError::Malformed("replay buffer sizes".into()))?,
                    env_rng,
                    noise_rng,
                    sample_rng,
                })
            }
            t => return Err(CheckpointError::Malformed(format!("training-state flag {t}"))),
        };
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        let ddpg = config.ddpg.clone();
        let agent = Agent {
            actor_opt: Adam::new(&actor, ddpg.actor_lr),
            critic_opt: Adam::new(&critic, ddpg.critic_lr),
            noise: OuNoise::new(ddpg.ou, act_dim),
            buffer: ReplayBuffer::new(ddpg.buffer_capacity),
            actor,
            critic,
            actor_target,
            critic_target,
            config: ddpg,
            obs_dim,
            act_dim,
            action_bound,
        };
        Ok(Checkpoint {
            config,
            config_text,
            episodes_done,
            total_steps,
            agent,
            training,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Replaces `path` with `bytes` so readers see either the old or the new file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
