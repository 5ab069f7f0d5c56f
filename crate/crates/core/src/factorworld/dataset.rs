//! Demonstration datasets: scripted-expert rollouts rendered to pixels,
//! serialized one episode per file under a JSON manifest.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::env::{self, Task, ACTION_DIM, PROPRIO_DIM};
use super::factors::{FactorVector, IMG_LEN};
use super::render;
use crate::numcore::{NumError, Result, Rng};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// One expert episode. Images stay quantized (8-bit) in memory; callers
/// divide by 255 when building model inputs.
#[derive(Clone)]
pub struct Episode {
    pub images: Vec<u8>,
    pub proprio: Vec<f32>,
    pub actions: Vec<f32>,
    pub len: usize,
}

pub struct DemoDataset {
    pub task: Task,
    pub seed: u64,
    pub episodes: Vec<Episode>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    task: Task,
    seed: u64,
    num_episodes: usize,
    episodes: Vec<EpisodeEntry>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeEntry {
    file: String,
    len: usize,
}

fn manifest_err(msg: impl Into<String>) -> NumError {
    NumError::InvalidArgument(msg.into())
}

/// Rolls out `num_episodes` expert demonstrations with clean training
/// visuals and randomized geometry. Retries episodes where the scripted
/// expert fails (it should not, but the dataset must contain successes only).
pub fn generate(task: Task, num_episodes: usize, seed: u64) -> DemoDataset {
    let root = Rng::new(seed);
    let visual = FactorVector::training_default();
    let mut episodes = Vec::with_capacity(num_episodes);
    let mut attempt = 0u64;
    while episodes.len() < num_episodes {
        let mut rng = root.derive(attempt);
        attempt += 1;
        let (traj, _, ok) = env::run_expert_episode(task, &mut rng);
        if !ok || traj.is_empty() {
            continue;
        }
        let len = traj.len();
        let mut images = Vec::with_capacity(len * IMG_LEN);
        let mut proprio = Vec::with_capacity(len * PROPRIO_DIM);
        let mut actions = Vec::with_capacity(len * ACTION_DIM);
        for (state, action) in &traj {
            let f = env::factors_for_state(&visual, state);
            let frame = render::render_u8(&f, state).expect("training factors are valid");
            images.extend_from_slice(&frame);
            proprio.extend_from_slice(&state.proprio());
            actions.extend_from_slice(&action.as_vec());
        }
        episodes.push(Episode {
            images,
            proprio,
            actions,
            len,
        });
    }
    DemoDataset {
        task,
        seed,
        episodes,
    }
}

fn write_array(buf: &mut Vec<u8>, dims: &[usize], data: &[f32]) {
    let n: usize = dims.iter().product();
    assert_eq!(n, data.len());
    buf.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_array(bytes: &[u8], pos: &mut usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(manifest_err("episode file truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let ndim = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
    if ndim > 8 {
        return Err(manifest_err(format!("implausible ndim {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize);
    }
    let n: usize = dims.iter().product();
    let raw = take(pos, n * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

impl DemoDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.episodes.len());
        for (i, ep) in self.episodes.iter().enumerate() {
            let file = format!("episode_{i:05}.bin");
            let mut buf = Vec::new();
            let images_f32: Vec<f32> = ep.images.iter().map(|&b| b as f32 / 255.0).collect();
            write_array(&mut buf, &[ep.len, 3, 64, 64], &images_f32);
            write_array(&mut buf, &[ep.len, PROPRIO_DIM], &ep.proprio);
            write_array(&mut buf, &[ep.len, ACTION_DIM], &ep.actions);
            fs::File::create(dir.join(&file))?.write_all(&buf)?;
            entries.push(EpisodeEntry { file, len: ep.len });
        }
        let manifest = Manifest {
            schema_version: DATASET_SCHEMA_VERSION,
            task: self.task,
            seed: self.seed,
            num_episodes: self.episodes.len(),
            episodes: entries,
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(dir.join("manifest.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DemoDataset> {
        let manifest_path: PathBuf = dir.join("manifest.json");
        let json = fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&json)?;
        if manifest.schema_version != DATASET_SCHEMA_VERSION {
            return Err(manifest_err(format!(
                "unsupported dataset schema {}",
                manifest.schema_version
            )));
        }
        if manifest.episodes.len() != manifest.num_episodes {
            return Err(manifest_err("episode count mismatch"));
        }
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for entry in &manifest.episodes {
            let mut bytes = Vec::new();
            fs::File::open(dir.join(&entry.file))?.read_to_end(&mut bytes)?;
            let mut pos = 0usize;
            let (idims, images_f32) = read_array(&bytes, &mut pos)?;
            let (pdims, proprio) = read_array(&bytes, &mut pos)?;
            let (adims, actions) = read_array(&bytes, &mut pos)?;
            if idims != [entry.len, 3, 64, 64]
                || pdims != [entry.len, PROPRIO_DIM]
                || adims != [entry.len, ACTION_DIM]
            {
                return Err(manifest_err(format!(
                    "bad shapes in {}: {idims:?} {pdims:?} {adims:?}",
                    entry.file
                )));
            }
            let images = images_f32
                .iter()
                .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            episodes.push(Episode {
                images,
                proprio,
                actions,
                len: entry.len,
            });
        }
        Ok(DemoDataset {
            task: manifest.task,
            seed: manifest.seed,
            episodes,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let ds = generate(Task::ReachGrasp, 3, 42);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = DemoDataset::load(dir.path()).unwrap();
        assert_eq!(back.episodes.len(), ds.episodes.len());
        for (a, b) in ds.episodes.iter().zip(&back.episodes) {
            assert_eq!(a.len, b.len);
            assert_eq!(a.images, b.images);
            assert_eq!(a.proprio, b.proprio);
            assert_eq!(a.actions, b.actions);
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let a = generate(Task::Push, 2, 7);
        let b = generate(Task::Push, 2, 7);
        for (x, y) in a.episodes.iter().zip(&b.episodes) {
            assert_eq!(x.images, y.images);
            assert_eq!(x.proprio, y.proprio);
            assert_eq!(x.actions, y.actions);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(Task::ReachGrasp, 1, 1);
        let b = generate(Task::ReachGrasp, 1, 2);
        assert_ne!(a.episodes[0].proprio, b.episodes[0].proprio);
    }

    #[test]
    fn corrupt_manifest_rejected() {
        let ds = generate(Task::ReachGrasp, 1, 5);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        assert!(DemoDataset::load(dir.path()).is_err());
    }

    #[test]
    fn truncated_episode_rejected() {
        let ds = generate(Task::ReachGrasp, 1, 5);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let file = dir.path().join("episode_00000.bin");
        let bytes = std::fs::read(&file).unwrap();
        std::fs::write(&file, &bytes[..bytes.len() / 2]).unwrap();
        assert!(DemoDataset::load(dir.path()).is_err());
    }
}
