use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::featurize::{ConditioningTokens, Featurizer};
use super::planner::oracle_motion;
use super::video::{descriptor_len, ContextMask, ToyVideo};
use super::wall::{gen_route, gen_wall, Route, Wall};
use super::WorldConfig;
use crate::error::{Result, SabrError};
use crate::geometry::{BodySpec, CameraIntrinsics, ShapeParams};
use crate::model::{encode_motion, NormStats};
use crate::tensor::{RngStream, Tensor};

pub const RECORD_MAGIC: &[u8; 8] = b"SABRDAT1";
pub const DATASET_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const RECORD_DIR: &str = "records";
const ATTEMPTS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    /// Every record whose index hash is divisible by ten is held out.
    pub fn of(index: usize) -> Split {
        let h = Sha256::digest((index as u64).to_le_bytes());
        let v = u64::from_le_bytes(h[..8].try_into().expect("digest is 32 bytes"));
        if v % 10 == 0 {
            Split::Heldout
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub index: usize,
    pub wall: Wall,
    pub route: Route,
    pub video: ToyVideo,
    pub ctx_mask: ContextMask,
    pub depth: f64,
    pub shape: ShapeParams,
    /// Raw (unnormalized) motion [F×D].
    pub motion: Tensor<f64>,
}

impl DatasetRecord {
    pub fn frames(&self) -> usize {
        self.motion.shape()[0]
    }

    /// The same record seen through a different context mask.
    pub fn with_context(
        &self,
        cfg: &WorldConfig,
        k: &CameraIntrinsics,
        mask: ContextMask,
    ) -> Result<ToyVideo> {
        ToyVideo::build(&self.wall, &self.route, cfg, k, self.frames(), mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub index: usize,
    pub file: String,
    pub frames: usize,
    pub split: Split,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config: WorldConfig,
    pub body: BodySpec,
    pub intrinsics: CameraIntrinsics,
    /// Fitted on the train split.
    pub stats: NormStats,
    pub flagged_dims: Vec<usize>,
    pub records: Vec<RecordEntry>,
}

impl Manifest {
    /// Digest of the canonical manifest JSON, recorded in checkpoints.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<usize> {
        self.manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn featurizer(&self) -> Result<Featurizer> {
        Featurizer::new(
            descriptor_len(self.manifest.config.patch_cells),
            self.manifest.config.cond_width,
        )
    }

    pub fn tokens(&self, i: usize) -> Result<ConditioningTokens> {
        self.featurizer()?.featurize(&self.records[i].video)
    }

    pub fn normalized(&self, i: usize) -> Result<Tensor<f64>> {
        self.manifest.stats.normalize(&self.records[i].motion)
    }
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Record `index` of the dataset seeded by `seed`. Walls, routes and
/// climbs that fail their constraints are redrawn a bounded number of times.
pub fn gen_record(
    cfg: &WorldConfig,
    spec: &BodySpec,
    k: &CameraIntrinsics,
    seed: u64,
    index: usize,
) -> Result<DatasetRecord> {
    let base = RngStream::new(seed).split_index("record", index as u64);
    let mut last = String::new();
    for attempt in 0..ATTEMPTS {
        let mut rng = base.split_index("attempt", attempt);
        let wall = gen_wall(cfg, &mut rng);
        if let Err(e) = wall.validate() {
            last = e.to_string();
            continue;
        }
        let route = match gen_route(&wall, cfg, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let shape = ShapeParams(
            (0..spec.shape_dim)
                .map(|_| round_f32(rng.uniform_range(-1.0, 1.0)))
                .collect(),
        );
        let depth = cfg.depth + rng.uniform_range(-cfg.depth_jitter, cfg.depth_jitter);
        let oracle = match oracle_motion(&wall, &route, spec, k, &shape, depth, cfg) {
            Ok(o) => o,
            Err(SabrError::Generation(e)) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut motion = encode_motion(&oracle.frames)?;
        motion
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = round_f32(*v));
        let ctx_mask = ContextMask {
            seed: rng.next_u64(),
            fraction: 1.0,
        };
        let video = ToyVideo::build(&wall, &route, cfg, k, motion.shape()[0], ctx_mask)?;
        return Ok(DatasetRecord {
            index,
            wall,
            route,
            video,
            ctx_mask,
            depth,
            shape,
            motion,
        });
    }
    Err(SabrError::Generation(format!(
        "record {index}: no valid climb after {ATTEMPTS} attempts ({last})"
    )))
}

/// `count` records plus a manifest whose statistics come from the train
/// split (all records when the split is empty).
pub fn gen_dataset(
    cfg: &WorldConfig,
    spec: &BodySpec,
    k: &CameraIntrinsics,
    seed: u64,
    count: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    spec.validate()?;
    k.validate()?;
    if count == 0 {
        return Err(SabrError::Config(
            "dataset needs at least one record".into(),
        ));
    }
    let records: Vec<DatasetRecord> = (0..count)
        .map(|i| gen_record(cfg, spec, k, seed, i))
        .collect::<Result<_>>()?;
    let train: Vec<&Tensor<f64>> = records
        .iter()
        .filter(|r| Split::of(r.index) == Split::Train)
        .map(|r| &r.motion)
        .collect();
    let stats = if train.is_empty() {
        NormStats::fit(records.iter().map(|r| &r.motion))?
    } else {
        NormStats::fit(train)?
    };
    let entries = records
        .iter()
        .map(|r| {
            Ok(RecordEntry {
                index: r.index,
                file: record_path(r.index),
                frames: r.frames(),
                split: Split::of(r.index),
                sha256: hex::encode(Sha256::digest(encode_record(r)?)),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        version: DATASET_VERSION,
        seed,
        config: cfg.clone(),
        body: spec.clone(),
        intrinsics: *k,
        flagged_dims: stats.flagged(),
        stats,
        records: entries,
    };
    Ok(Dataset { manifest, records })
}

/// Relative path of a record file inside the dataset directory.
pub fn record_path(index: usize) -> String {
    format!("{RECORD_DIR}/{index:06}.sabr")
}

#[derive(Serialize, Deserialize)]
struct Field {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordHeader {
    version: u32,
    index: usize,
    wall: Wall,
    route: Route,
    depth: f64,
    ctx_mask: ContextMask,
    grid: (usize, usize),
    fps: f64,
    resolution: (f64, f64),
    fields: Vec<Field>,
    payload_sha256: String,
}

fn encode_record(r: &DatasetRecord) -> Result<Vec<u8>> {
    let p = r.video.patches();
    let l = r.video.descriptor_len();
    let fields = vec![
        Field {
            name: "motion".into(),
            shape: r.motion.shape().to_vec(),
        },
        Field {
            name: "shape".into(),
            shape: vec![r.shape.0.len()],
        },
        Field {
            name: "env".into(),
            shape: vec![p, l],
        },
        Field {
            name: "ctx".into(),
            shape: vec![r.video.ctx.len(), p, l],
        },
    ];
    let values = r
        .motion
        .data()
        .iter()
        .chain(&r.shape.0)
        .chain(r.video.env.iter().flatten())
        .chain(r.video.ctx.iter().flatten().flatten());
    let mut payload = Vec::new();
    for v in values {
        payload.extend((*v as f32).to_le_bytes());
    }
    let header = RecordHeader {
        version: DATASET_VERSION,
        index: r.index,
        wall: r.wall.clone(),
        route: r.route.clone(),
        depth: r.depth,
        ctx_mask: r.ctx_mask,
        grid: r.video.grid,
        fps: r.video.fps,
        resolution: r.video.resolution,
        fields,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend(RECORD_MAGIC);
    out.extend((json.len() as u32).to_le_bytes());
    out.extend(json);
    out.extend(payload);
    Ok(out)
}

fn decode_record(bytes: &[u8], path: &Path) -> Result<DatasetRecord> {
    let name = path.display().to_string();
    let integrity = |reason: String| SabrError::Integrity {
        record: name.clone(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..8] != RECORD_MAGIC {
        return Err(SabrError::format(path, "missing SABRDAT1 magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(integrity(format!(
            "header of {hlen} bytes truncated to {}",
            body.len()
        )));
    }
    let header: RecordHeader = serde_json::from_slice(&body[..hlen])
        .map_err(|e| SabrError::format(path, format!("bad header: {e}")))?;
    if header.version != DATASET_VERSION {
        return Err(SabrError::format(
            path,
            format!("version {} (reader is {DATASET_VERSION})", header.version),
        ));
    }
    let payload = &body[hlen..];
    let expected: usize = header
        .fields
        .iter()
        .map(|f| f.shape.iter().product::<usize>())
        .sum::<usize>()
        * 4;
    if payload.len() != expected {
        return Err(integrity(format!(
            "payload is {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(integrity("payload checksum mismatch".into()));
    }
    let names: Vec<&str> = header.fields.iter().map(|f| f.name.as_str()).collect();
    if names != ["motion", "shape", "env", "ctx"] {
        return Err(SabrError::format(
            path,
            format!("unexpected field order {names:?}"),
        ));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let ms = &header.fields[0].shape;
    let shape_len = header.fields[1].shape.iter().product();
    let (es, cs) = (&header.fields[2].shape, &header.fields[3].shape);
    if ms.len() != 2
        || es.len() != 2
        || cs.len() != 3
        || es[0] != header.grid.0 * header.grid.1
        || cs[1] != es[0]
    {
        return Err(SabrError::format(
            path,
            "field shapes disagree with the patch grid",
        ));
    }
    let motion = Tensor::new(ms, take(ms[0] * ms[1]))?;
    let shape = ShapeParams(take(shape_len));
    let env: Vec<Vec<f64>> = (0..es[0]).map(|_| take(es[1])).collect();
    let ctx = (0..cs[0])
        .map(|_| (0..cs[1]).map(|_| take(cs[2])).collect())
        .collect();
    let video = ToyVideo {
        env,
        ctx,
        env_frames: ms[0],
        grid: header.grid,
        fps: header.fps,
        resolution: header.resolution,
    };
    Ok(DatasetRecord {
        index: header.index,
        wall: header.wall,
        route: header.route,
        video,
        ctx_mask: header.ctx_mask,
        depth: header.depth,
        shape,
        motion,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| SabrError::io(path, e))
}

/// Writes one record file and returns its SHA-256.
pub fn write_record(path: &Path, r: &DatasetRecord) -> Result<String> {
    let bytes = encode_record(r)?;
    write_bytes(path, &bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_record(path: &Path) -> Result<DatasetRecord> {
    let bytes = fs::read(path).map_err(|e| SabrError::io(path, e))?;
    decode_record(&bytes, path)
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.records.len() != ds.manifest.records.len() {
        return Err(SabrError::Contract(
            "manifest and records disagree in count".into(),
        ));
    }
    for (r, e) in ds.records.iter().zip(&ds.manifest.records) {
        let sha = write_record(&dir.join(&e.file), r)?;
        if sha != e.sha256 {
            return Err(SabrError::Integrity {
                record: e.file.clone(),
                reason: "record differs from its manifest entry".into(),
            });
        }
    }
    let mut json = serde_json::to_string_pretty(&ds.manifest)?;
    json.push('\n');
    write_bytes(&dir.join(MANIFEST), json.as_bytes())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| SabrError::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| SabrError::format(&mpath, format!("bad manifest: {e}")))?;
    if manifest.version != DATASET_VERSION {
        return Err(SabrError::format(
            &mpath,
            format!("version {} (reader is {DATASET_VERSION})", manifest.version),
        ));
    }
    if manifest.stats.std.iter().any(|s| !(*s > 0.0)) {
        return Err(SabrError::format(&mpath, "non-positive std in statistics"));
    }
    let rdir = dir.join(RECORD_DIR);
    let on_disk = fs::read_dir(&rdir)
        .map_err(|e| SabrError::io(&rdir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "sabr"))
        .count();
    if on_disk != manifest.records.len() {
        return Err(SabrError::Integrity {
            record: rdir.display().to_string(),
            reason: format!(
                "{on_disk} record files, manifest lists {}",
                manifest.records.len()
            ),
        });
    }
    let mut records = Vec::with_capacity(manifest.records.len());
    for e in &manifest.records {
        let path: PathBuf = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| SabrError::io(&path, err))?;
        let r = decode_record(&bytes, &path)?;
        if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
            return Err(SabrError::Integrity {
                record: e.file.clone(),
                reason: "file checksum differs from manifest".into(),
            });
        }
        if r.index != e.index || r.frames() != e.frames {
            return Err(SabrError::Integrity {
                record: e.file.clone(),
                reason: "record disagrees with manifest entry".into(),
            });
        }
        records.push(r);
    }
    Ok(Dataset { manifest, records })
}
