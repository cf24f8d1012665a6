//! Binary checkpoints.
//!
//! Layout (all integers u64 and all reals f64, little-endian, unless noted):
//!
//! 1. magic `TEENCKPT` (8 bytes), format version (u32)
//! 2. `N`, `M`, state dim, action dim, hidden width
//! 3. config hash (64 ASCII hex bytes), config JSON (length, then bytes)
//! 4. per sub-policy `k = 0..N`: actor, critic, target critic parameters
//! 5. discriminator parameters
//! 6. Adam states: actors `0..N`, critics `0..N`, discriminator; each is the step
//!    count then first and second moments
//! 7. counters: env step, gradient steps, behavior index, selected index, episodes
//!    completed; episode return, episode state, episode length, done flag (u8)
//! 8. behavior histogram (`N` counts); selection log (count, then step/index pairs)
//! 9. RNG: 32-byte seed, stream, word position (u128)
//! 10. replay: capacity, length, write cursor, then each slot as state, action,
//!     reward, next state, terminal (u8), label
//! 11. end marker `END.` (4 bytes)
//!
//! Parameters are written layer by layer, weights (row-major, out x in) then biases.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::TrainerConfig;
use crate::envs::Episode;
use crate::error::{Error, Result};
use crate::ndmath::{OptimizerState, ParamSet};
use crate::replay::{ReplayBuffer, Transition};
use crate::trainer::{SelectionEvent, Trainer};

pub const MAGIC: &[u8; 8] = b"TEENCKPT";
pub const FORMAT_VERSION: u32 = 1;
const END: &[u8; 4] = b"END.";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub ensemble_n: usize,
    pub target_m: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub config_hash: String,
    pub config: TrainerConfig,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        vs.into_iter().for_each(|v| self.f64(*v));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn params(&mut self, p: &ParamSet) {
        self.f64s(p.values());
    }
    fn adam(&mut self, o: &OptimizerState) {
        self.u64(o.step);
        self.f64s(o.first_moment.values());
        self.f64s(o.second_moment.values());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const L: usize>(&mut self) -> Result<[u8; L]> {
        Ok(self.take(L)?.try_into().expect("slice has requested length"))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("count exceeds address space".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn flag(&mut self) -> Result<bool> {
        match self.array::<1>()?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("invalid flag byte {b}"))),
        }
    }
    fn fill<'b>(&mut self, slots: impl Iterator<Item = &'b mut f64>) -> Result<()> {
        for v in slots {
            *v = self.f64()?;
        }
        Ok(())
    }
    fn adam(&mut self, o: &mut OptimizerState) -> Result<()> {
        o.step = self.u64()?;
        self.fill(o.first_moment.values_mut())?;
        self.fill(o.second_moment.values_mut())
    }
}

/// Serializes the complete trainer state.
pub fn encode(t: &Trainer) -> Vec<u8> {
    let cfg = &t.config;
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.bytes(&FORMAT_VERSION.to_le_bytes());
    w.usize(cfg.ensemble_n);
    w.usize(cfg.target_m);
    w.usize(t.agent.state_dim());
    w.usize(t.agent.action_dim());
    w.usize(cfg.hidden);
    w.bytes(cfg.hash().as_bytes());
    let json = serde_json::to_vec(cfg).expect("config serializes to JSON");
    w.usize(json.len());
    w.bytes(&json);

    for k in 0..cfg.ensemble_n {
        w.params(&t.agent.actors[k]);
        w.params(&t.agent.critics[k]);
        w.params(&t.agent.target_critics[k]);
    }
    w.params(&t.discriminator.params);
    t.agent.actor_opts.iter().for_each(|o| w.adam(o));
    t.agent.critic_opts.iter().for_each(|o| w.adam(o));
    w.adam(&t.discriminator.opt);

    w.u64(t.step);
    w.u64(t.gradient_steps);
    w.usize(t.behavior_index);
    w.usize(t.selected_index);
    w.u64(t.episodes_completed);
    w.f64(t.episode_return);
    w.f64s(&t.episode.state);
    w.usize(t.episode.steps);
    w.bytes(&[t.episode.done as u8]);
    t.behavior_histogram.iter().for_each(|c| w.u64(*c));
    w.usize(t.selections.len());
    for e in &t.selections {
        w.u64(e.step);
        w.usize(e.index);
    }

    w.bytes(&t.rng.get_seed());
    w.u64(t.rng.get_stream());
    w.bytes(&t.rng.get_word_pos().to_le_bytes());

    let (items, next) = t.replay.raw_parts();
    w.usize(t.replay.capacity());
    w.usize(items.len());
    w.usize(next);
    for tr in items {
        w.f64s(&tr.state);
        w.f64s(&tr.action);
        w.f64(tr.reward);
        w.f64s(&tr.next_state);
        w.bytes(&[tr.terminal as u8]);
        w.usize(tr.z);
    }
    w.bytes(END);
    w.0
}

fn decode_header(r: &mut Reader) -> Result<CheckpointHeader> {
    if &r.array::<8>()? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let ensemble_n = r.usize()?;
    let target_m = r.usize()?;
    let state_dim = r.usize()?;
    let action_dim = r.usize()?;
    let hidden = r.usize()?;
    let config_hash = String::from_utf8(r.take(64)?.to_vec())
        .map_err(|_| Error::Format("config hash is not ASCII".into()))?;
    let len = r.usize()?;
    let config: TrainerConfig = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Format(format!("embedded config: {e}")))?;
    if config.hash() != config_hash || config.ensemble_n != ensemble_n || config.target_m != target_m {
        return Err(Error::Format("header disagrees with the embedded config".into()));
    }
    Ok(CheckpointHeader {
        version,
        ensemble_n,
        target_m,
        state_dim,
        action_dim,
        hidden,
        config_hash,
        config,
    })
}

pub fn read_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    decode_header(&mut Reader { buf: bytes, pos: 0 })
}

/// Rebuilds a trainer that continues exactly where the encoded one stopped.
pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let h = decode_header(&mut r)?;
    let n = h.ensemble_n;
    // A fresh trainer supplies every shape; all of its state is then overwritten.
    let mut t = Trainer::new(h.config.clone())?;
    if t.agent.state_dim() != h.state_dim || t.agent.action_dim() != h.action_dim {
        return Err(Error::Format("dimensions disagree with the environment".into()));
    }
    for k in 0..n {
        r.fill(t.agent.actors[k].values_mut())?;
        r.fill(t.agent.critics[k].values_mut())?;
        r.fill(t.agent.target_critics[k].values_mut())?;
    }
    r.fill(t.discriminator.params.values_mut())?;
    for o in t.agent.actor_opts.iter_mut().chain(t.agent.critic_opts.iter_mut()) {
        r.adam(o)?;
    }
    r.adam(&mut t.discriminator.opt)?;

    t.step = r.u64()?;
    t.gradient_steps = r.u64()?;
    t.behavior_index = r.usize()?;
    t.selected_index = r.usize()?;
    if t.behavior_index >= n || t.selected_index >= n {
        return Err(Error::Format("sub-policy index out of range".into()));
    }
    t.episodes_completed = r.u64()?;
    t.episode_return = r.f64()?;
    t.episode = Episode {
        state: r.f64_vec(h.state_dim)?,
        steps: r.usize()?,
        done: r.flag()?,
    };
    for c in t.behavior_histogram.iter_mut() {
        *c = r.u64()?;
    }
    let events = r.usize()?;
    t.selections = (0..events)
        .map(|_| {
            Ok(SelectionEvent {
                step: r.u64()?,
                index: r.usize()?,
            })
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::from_seed(r.array()?);
    rng.set_stream(r.u64()?);
    rng.set_word_pos(u128::from_le_bytes(r.array()?));
    t.rng = rng;

    let capacity = r.usize()?;
    let len = r.usize()?;
    let next = r.usize()?;
    if capacity != h.config.buffer_capacity || len > capacity {
        return Err(Error::Format("replay sizes disagree with the config".into()));
    }
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        items.push(Transition {
            state: r.f64_vec(h.state_dim)?,
            action: r.f64_vec(h.action_dim)?,
            reward: r.f64()?,
            next_state: r.f64_vec(h.state_dim)?,
            terminal: r.flag()?,
            z: r.usize()?,
        });
    }
    t.replay = ReplayBuffer::from_raw_parts(capacity, h.state_dim, h.action_dim, n, items, next)?;
    if &r.array::<4>()? != END || r.pos != bytes.len() {
        return Err(Error::Format("missing end marker or trailing bytes".into()));
    }
    Ok(t)
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save(t: &Trainer, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(t))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trainer> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint for resumption under `config`, refusing on a config-hash mismatch.
/// The horizon (`total_steps`) and checkpoint period are taken from `config`.
pub fn resume(path: &Path, config: &TrainerConfig) -> Result<Trainer> {
    let bytes = fs::read(path)?;
    let header = read_header(&bytes)?;
    if header.config_hash != config.hash() {
        return Err(Error::Config(format!(
            "checkpoint config hash {} does not match {}",
            header.config_hash,
            config.hash()
        )));
    }
    let mut t = decode(&bytes)?;
    t.config.total_steps = config.total_steps;
    t.config.checkpoint_period = config.checkpoint_period;
    Ok(t)
}
