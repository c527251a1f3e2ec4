//! `GAVK` checkpoints: a header followed by named blocks, each either a
//! shaped little-endian f64 array or an opaque byte string (JSON or a
//! `GHM1` head model).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{Avatar, AvatarParts, CorrectionMode, StoredCorrection, TrainConfig};
use crate::binding::BoundGaussianCloud;
use crate::error::{Error, Result};
use crate::geocorrect::{CorrectionNet, ExpressionBank, FEATURE_DIM};
use crate::headmodel::{decode_model, encode_model, HeadParams};
use crate::math::Vec3;
use crate::nn::ParamStore;
use crate::optim::{Adam, Moments};
use crate::raster::{Camera, CameraRecord};
use crate::synth::Split;
use crate::texattn::TextureNet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GAVK";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_F64: u8 = 0;
const KIND_BYTES: u8 = 1;

enum Block {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    Bytes(Vec<u8>),
}

#[derive(Default)]
struct Writer {
    blocks: Vec<(String, Block)>,
}

impl Writer {
    fn array(&mut self, name: impl Into<String>, shape: &[usize], data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.blocks.push((
            name.into(),
            Block::F64 {
                shape: shape.to_vec(),
                data: data.to_vec(),
            },
        ));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_vec(value)
            .map_err(|e| Error::Internal(format!("serialize {name}: {e}")))?;
        self.blocks.push((name.into(), Block::Bytes(text)));
        Ok(())
    }

    fn finish(self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LE>(CHECKPOINT_VERSION).unwrap();
        out.write_u32::<LE>(self.blocks.len() as u32).unwrap();
        for (name, block) in &self.blocks {
            out.write_u32::<LE>(name.len() as u32).unwrap();
            out.extend_from_slice(name.as_bytes());
            match block {
                Block::F64 { shape, data } => {
                    out.push(KIND_F64);
                    out.write_u32::<LE>(shape.len() as u32).unwrap();
                    for &d in shape {
                        out.write_u64::<LE>(d as u64).unwrap();
                    }
                    for &x in data {
                        out.write_f64::<LE>(x).unwrap();
                    }
                }
                Block::Bytes(b) => {
                    out.push(KIND_BYTES);
                    out.write_u32::<LE>(1).unwrap();
                    out.write_u64::<LE>(b.len() as u64).unwrap();
                    out.extend_from_slice(b);
                }
            }
        }
        out
    }
}

struct Blocks(BTreeMap<String, Block>);

fn truncated(what: &str) -> Error {
    Error::Format(format!("checkpoint truncated in {what}"))
}

impl Blocks {
    fn parse(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| truncated("header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected GAVK")));
        }
        let version = cur.read_u32::<LE>().map_err(|_| truncated("header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = cur.read_u32::<LE>().map_err(|_| truncated("header"))?;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let len = cur.read_u32::<LE>().map_err(|_| truncated("block name"))? as usize;
            let mut name = vec![0u8; len.min(bytes.len())];
            cur.read_exact(&mut name)
                .map_err(|_| truncated("block name"))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
            let kind = cur.read_u8().map_err(|_| truncated(&name))?;
            let ndim = cur.read_u32::<LE>().map_err(|_| truncated(&name))? as usize;
            if ndim > 8 {
                return Err(Error::Format(format!("block {name} has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.read_u64::<LE>().map_err(|_| truncated(&name))? as usize);
            }
            let count: usize = shape.iter().product();
            let remaining = bytes.len() - cur.position() as usize;
            let block = match kind {
                KIND_F64 => {
                    if count.checked_mul(8).is_none_or(|b| b > remaining) {
                        return Err(truncated(&name));
                    }
                    let mut data = vec![0.0; count];
                    cur.read_f64_into::<LE>(&mut data)
                        .map_err(|_| truncated(&name))?;
                    Block::F64 { shape, data }
                }
                KIND_BYTES => {
                    if count > remaining {
                        return Err(truncated(&name));
                    }
                    let mut b = vec![0u8; count];
                    cur.read_exact(&mut b).map_err(|_| truncated(&name))?;
                    Block::Bytes(b)
                }
                k => return Err(Error::Format(format!("block {name} has unknown kind {k}"))),
            };
            if map.insert(name.clone(), block).is_some() {
                return Err(Error::Format(format!("duplicate block {name}")));
            }
        }
        if cur.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after the last block".into()));
        }
        Ok(Self(map))
    }

    fn array(&self, name: &str, expected: Option<usize>) -> Result<(&[usize], &[f64])> {
        match self.0.get(name) {
            Some(Block::F64 { shape, data }) => {
                if let Some(n) = expected {
                    if data.len() != n {
                        return Err(Error::dim(name, n, data.len()));
                    }
                }
                Ok((shape, data))
            }
            Some(_) => Err(Error::Format(format!("block {name} is not an array"))),
            None => Err(Error::Format(format!("missing block {name}"))),
        }
    }

    fn values(&self, name: &str, n: usize) -> Result<Vec<f64>> {
        Ok(self.array(name, Some(n))?.1.to_vec())
    }

    fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.0.get(name) {
            Some(Block::Bytes(b)) => Ok(b),
            Some(_) => Err(Error::Format(format!("block {name} is not a byte string"))),
            None => Err(Error::Format(format!("missing block {name}"))),
        }
    }

    fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_slice(self.bytes(name)?)
            .map_err(|e| Error::Format(format!("block {name}: {e}")))
    }

    fn prefixed<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Block)> + 'a {
        self.0
            .iter()
            .filter_map(move |(k, b)| k.strip_prefix(prefix).map(|rest| (rest, b)))
    }
}

fn cloud_blocks(w: &mut Writer, c: &BoundGaussianCloud) {
    let n = c.len();
    let ids: Vec<f64> = c.triangle_id.iter().map(|&i| i as f64).collect();
    let bary: Vec<f64> = c.barycentric.iter().flatten().copied().collect();
    w.array("cloud.triangle_id", &[n], &ids);
    w.array("cloud.barycentric", &[n, 3], &bary);
    w.array("cloud.local_offset", &[n, 3], &c.local_offset);
    w.array("cloud.log_scale", &[n, 3], &c.log_scale);
    w.array("cloud.rotation", &[n, 4], &c.rotation);
    w.array("cloud.opacity_logit", &[n], &c.opacity_logit);
    let per = c.sh_coeffs.len() / n.max(1) / 3;
    w.array("cloud.sh_coeffs", &[n, per, 3], &c.sh_coeffs);
}

fn read_cloud(b: &Blocks, sh_degree: usize) -> Result<BoundGaussianCloud> {
    let (shape, ids) = b.array("cloud.triangle_id", None)?;
    let n = shape.first().copied().unwrap_or(0);
    let triangle_id = ids
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as u32)
            } else {
                Err(Error::Format(format!("triangle id {x} is not an index")))
            }
        })
        .collect::<Result<_>>()?;
    let bary = b.values("cloud.barycentric", 3 * n)?;
    let per = crate::binding::sh_coeff_count(sh_degree) * 3;
    Ok(BoundGaussianCloud {
        triangle_id,
        barycentric: bary.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        local_offset: b.values("cloud.local_offset", 3 * n)?,
        log_scale: b.values("cloud.log_scale", 3 * n)?,
        rotation: b.values("cloud.rotation", 4 * n)?,
        opacity_logit: b.values("cloud.opacity_logit", n)?,
        sh_degree,
        sh_coeffs: b.values("cloud.sh_coeffs", per * n)?,
    })
}

impl Avatar {
    /// Serializes the full training state.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.json("config", &self.config)?;
        w.blocks
            .push(("model".into(), Block::Bytes(encode_model(&self.model))));
        let cams: Vec<CameraRecord> = self.cameras.iter().map(Camera::to_record).collect();
        w.json("cameras", &cams)?;
        w.json("split", &self.split)?;
        w.json("params", &self.params)?;
        w.json("iteration", &self.iteration)?;
        w.json("corrections", &self.corrections)?;
        cloud_blocks(&mut w, &self.cloud);
        if let Some(bank) = &self.bank {
            w.array("bank.momentum", &[1], &[bank.momentum]);
            for (t, slots) in &bank.entries {
                w.array(
                    format!("bank.t{t:06}"),
                    &[bank.view_count, bank.n_expr],
                    slots,
                );
            }
        }
        if let Some(tex) = &self.texture {
            let bb = tex
                .triplane
                .bbox_min
                .iter()
                .chain(tex.triplane.bbox_max.iter())
                .copied()
                .collect::<Vec<_>>();
            w.array("texture.bbox", &[2, 3], &bb);
        }
        for (name, p) in self.store.iter() {
            w.array(format!("net.{name}"), &p.shape, &p.value);
        }
        for (name, m) in &self.optimizer.state {
            w.array(format!("adam.{name}.m"), &[m.m.len()], &m.m);
            w.array(format!("adam.{name}.v"), &[m.v.len()], &m.v);
            w.array(format!("adam.{name}.step"), &[1], &[m.step as f64]);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let b = Blocks::parse(bytes)?;
        let config: TrainConfig = b.json("config")?;
        config.validate()?;
        let model = decode_model(b.bytes("model")?)?;
        model.validate()?;
        let cams: Vec<CameraRecord> = b.json("cameras")?;
        let cameras = cams
            .iter()
            .map(Camera::from_record)
            .collect::<Result<Vec<_>>>()?;
        if cameras.is_empty() {
            return Err(Error::Format("checkpoint has no cameras".into()));
        }
        let split: Split = b.json("split")?;
        let params: Vec<HeadParams> = b.json("params")?;
        for p in &params {
            p.check(&model)?;
        }
        if split
            .train_t
            .iter()
            .chain(&split.heldout_t)
            .any(|&t| t as usize >= params.len())
        {
            return Err(Error::Format("split references missing timestamps".into()));
        }
        let iteration: usize = b.json("iteration")?;
        let corrections: BTreeMap<u32, StoredCorrection> = b.json("corrections")?;
        let cloud = read_cloud(&b, config.sh_degree)?;
        cloud.validate(model.faces.len())?;

        let sw = config.switches;
        let train_views = split.train_views(cameras.len());
        let bank = if sw.bank {
            let m = b.values("bank.momentum", 1)?[0];
            let mut bank = ExpressionBank::new(train_views.len(), model.n_expr, m)?;
            for (key, block) in b.prefixed("bank.t") {
                let t: u32 = key
                    .parse()
                    .map_err(|_| Error::Format(format!("bad bank key {key}")))?;
                let Block::F64 { data, .. } = block else {
                    return Err(Error::Format(format!("bank slot {key} is not an array")));
                };
                if data.len() != bank.view_count * bank.n_expr {
                    return Err(Error::dim(
                        "bank slots",
                        bank.view_count * bank.n_expr,
                        data.len(),
                    ));
                }
                bank.entries.insert(t, data.clone());
            }
            Some(bank)
        } else {
            None
        };

        // rebuild the network layout, then overwrite every value
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cam = &cameras[0];
        let correction = match sw.correction {
            CorrectionMode::Off => None,
            _ => Some(CorrectionNet::new(
                &mut store,
                cam.width,
                cam.height,
                model.n_expr,
                &mut rng,
            )?),
        };
        let texture = if sw.texture {
            let bb = b.values("texture.bbox", 6)?;
            let lo = Vec3::new(bb[0], bb[1], bb[2]);
            let hi = Vec3::new(bb[3], bb[4], bb[5]);
            Some(TextureNet::new(&mut store, FEATURE_DIM, lo, hi, &mut rng)?)
        } else {
            None
        };
        for (name, p) in store.iter_mut() {
            let (shape, data) = b.array(&format!("net.{name}"), Some(p.value.len()))?;
            if shape != p.shape.as_slice() {
                return Err(Error::Format(format!(
                    "network parameter {name} has the wrong shape"
                )));
            }
            p.value.copy_from_slice(data);
        }
        if b.prefixed("net.").count() != store.len() {
            return Err(Error::Format(
                "checkpoint holds unknown network parameters".into(),
            ));
        }

        let mut optimizer = Adam::new(config.adam);
        for (key, _) in b.prefixed("adam.") {
            let Some(name) = key.strip_suffix(".step") else {
                continue;
            };
            let step = b.values(&format!("adam.{name}.step"), 1)?[0];
            let (_, m) = b.array(&format!("adam.{name}.m"), None)?;
            let v = b.values(&format!("adam.{name}.v"), m.len())?;
            optimizer.state.insert(
                name.to_string(),
                Moments {
                    m: m.to_vec(),
                    v,
                    step: step as u64,
                },
            );
        }

        Ok(Avatar::assemble(AvatarParts {
            config,
            model,
            cameras,
            split,
            params,
            cloud,
            bank,
            store,
            correction,
            texture,
            optimizer,
            corrections,
            iteration,
        }))
    }

    /// Writes atomically: a sibling temp file renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp_name = path
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
