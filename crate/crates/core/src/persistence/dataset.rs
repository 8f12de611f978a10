use std::path::Path;

use super::{check_crc, push_crc, read_file, write_atomic, Reader};
use crate::env::{Command, Dataset, EnvKind, Episode, Transition};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"FGD1";
pub const DATASET_VERSION: u32 = 1;

fn env_code(k: EnvKind) -> u8 {
    match k {
        EnvKind::Walk => 0,
        EnvKind::Flight => 1,
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit the dataset format")))
}

/// Header: magic, version, env code (u8), obs/act dims, dt (f64), episode
/// length, command table (speed, yaw, climb as f64), episode count. Each
/// episode: cell, length, then fixed-stride f32 records
/// `obs | action | reward | done | expert_mu | expert_sigma`.
pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    d.validate()?;
    let mut out = Vec::with_capacity(64 + d.num_steps() * 4 * (d.obs_dim + 3 * d.act_dim + 2));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.push(env_code(d.env));
    out.extend_from_slice(&u32_of(d.obs_dim, "obs_dim")?.to_le_bytes());
    out.extend_from_slice(&u32_of(d.act_dim, "act_dim")?.to_le_bytes());
    out.extend_from_slice(&d.dt.to_le_bytes());
    out.extend_from_slice(&u32_of(d.episode_len, "episode_len")?.to_le_bytes());
    out.extend_from_slice(&u32_of(d.commands.len(), "command count")?.to_le_bytes());
    for c in &d.commands {
        for v in [c.speed, c.yaw, c.climb] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&u32_of(d.episodes.len(), "episode count")?.to_le_bytes());
    for ep in &d.episodes {
        if ep.is_empty() {
            return Err(Error::invalid("dataset episodes must be non-empty"));
        }
        out.extend_from_slice(&ep.cell.to_le_bytes());
        out.extend_from_slice(&u32_of(ep.len(), "episode length")?.to_le_bytes());
        for t in &ep.steps {
            let done = if t.done { 1.0f32 } else { 0.0 };
            let fields = t
                .obs
                .iter()
                .chain(&t.action)
                .chain([&t.reward, &done])
                .chain(&t.expert_mu)
                .chain(&t.expert_sigma);
            for v in fields {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(push_crc(out))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 4 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: "dataset" });
    }
    let body = check_crc(bytes)?;
    let mut r = Reader::new(body);
    r.take(4)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Version(version));
    }
    let env = match r.u8()? {
        0 => EnvKind::Walk,
        1 => EnvKind::Flight,
        c => return Err(Error::Corrupt(format!("unknown environment code {c}"))),
    };
    let obs_dim = r.u32()? as usize;
    let act_dim = r.u32()? as usize;
    if obs_dim != env.obs_dim() || act_dim != env.act_dim() {
        return Err(Error::Corrupt(format!("header dims {obs_dim}/{act_dim} do not match {env}")));
    }
    let dt = r.f64()?;
    let episode_len = r.u32()? as usize;
    let n_commands = r.u32()? as usize;
    let mut commands = Vec::with_capacity(n_commands.min(1024));
    for _ in 0..n_commands {
        commands.push(Command {
            speed: r.f64()?,
            yaw: r.f64()?,
            climb: r.f64()?,
        });
    }
    let n_episodes = r.u32()? as usize;
    let mut episodes = Vec::with_capacity(n_episodes.min(4096));
    for _ in 0..n_episodes {
        let cell = r.u32()?;
        let len = r.u32()? as usize;
        if len == 0 {
            return Err(Error::Corrupt("empty episode".into()));
        }
        let mut steps = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            let mut vec = |n: usize| (0..n).map(|_| r.f32()).collect::<Result<Vec<f32>>>();
            let obs = vec(obs_dim)?;
            let action = vec(act_dim)?;
            let rd = vec(2)?;
            let expert_mu = vec(act_dim)?;
            let expert_sigma = vec(act_dim)?;
            let done = match rd[1] {
                0.0 => false,
                1.0 => true,
                _ => return Err(Error::Corrupt("done flag must be 0 or 1".into())),
            };
            steps.push(Transition {
                obs,
                action,
                reward: rd[0],
                done,
                expert_mu,
                expert_sigma,
            });
        }
        episodes.push(Episode { cell, steps });
    }
    if !r.is_done() {
        return Err(Error::Corrupt("trailing bytes after the last episode".into()));
    }
    let d = Dataset {
        env,
        obs_dim,
        act_dim,
        dt,
        episode_len,
        commands,
        episodes,
    };
    d.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(d)
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_atomic(path, &encode_dataset(d)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}
