//! `GHM1` head-model asset: little-endian binary with a JSON sidecar that
//! mirrors the dimensions.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::HeadModel;
use crate::error::{Error, Result};
use crate::math::Vec3;

const MAGIC: &[u8; 4] = b"GHM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadModelDims {
    pub vertices: usize,
    pub faces: usize,
    pub n_shape: usize,
    pub n_expr: usize,
    pub joints: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_head_model(model: &HeadModel, path: &Path) -> Result<()> {
    let bytes = encode(model);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&model.dims()).expect("dims serialize");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn load_head_model(path: &Path) -> Result<HeadModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn put_f32s(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for x in values {
        out.write_f32::<LE>(x as f32).unwrap();
    }
}

pub(crate) fn encode(model: &HeadModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.write_all(MAGIC).unwrap();
    let d = model.dims();
    for n in [d.vertices, d.faces, d.n_shape, d.n_expr, d.joints] {
        out.write_u32::<LE>(n as u32).unwrap();
    }
    put_f32s(
        &mut out,
        model
            .template_vertices
            .iter()
            .flat_map(|p| p.iter().copied()),
    );
    for f in &model.faces {
        for &i in f {
            out.write_u32::<LE>(i).unwrap();
        }
    }
    put_f32s(&mut out, model.shape_basis.iter().copied());
    put_f32s(&mut out, model.expression_basis.iter().copied());
    put_f32s(
        &mut out,
        model.vertex_offsets.iter().flat_map(|p| p.iter().copied()),
    );
    put_f32s(&mut out, model.skinning_weights.iter().copied());
    for &p in &model.joint_parents {
        out.write_i32::<LE>(p).unwrap();
    }
    put_f32s(
        &mut out,
        model
            .joint_rest_positions
            .iter()
            .flat_map(|p| p.iter().copied()),
    );
    put_f32s(
        &mut out,
        model.vertex_colors.iter().flat_map(|c| c.iter().copied()),
    );
    out
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v = self
                .cur
                .read_f32::<LE>()
                .map_err(|_| Error::Format(format!("truncated while reading {field}")))?;
            out.push(v as f64);
        }
        Ok(out)
    }

    fn vec3s(&mut self, n: usize, field: &str) -> Result<Vec<Vec3>> {
        Ok(self
            .f32s(n * 3, field)?
            .chunks(3)
            .map(Vec3::from_column_slice)
            .collect())
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        self.cur
            .read_u32::<LE>()
            .map_err(|_| Error::Format(format!("truncated while reading {field}")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<HeadModel> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
    };
    let mut magic = [0u8; 4];
    r.cur
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("missing header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected GHM1")));
    }
    let nv = r.u32("header vertices")? as usize;
    let nf = r.u32("header faces")? as usize;
    let n_shape = r.u32("header n_shape")? as usize;
    let n_expr = r.u32("header n_expr")? as usize;
    let nj = r.u32("header joints")? as usize;

    let expected = 4
        + 20
        + 4 * (nv * 3
            + nf * 3
            + nv * 3 * (n_shape + n_expr)
            + nv * 3
            + nv * nj
            + nj
            + nj * 3
            + nv * 3);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "header declares {expected} bytes (V={nv}, F={nf}, n_shape={n_shape}, n_expr={n_expr}, J={nj}) but file has {}",
            bytes.len()
        )));
    }

    let template_vertices = r.vec3s(nv, "template_vertices")?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        faces.push([r.u32("faces")?, r.u32("faces")?, r.u32("faces")?]);
    }
    let shape_basis = r.f32s(nv * 3 * n_shape, "shape_basis")?;
    let expression_basis = r.f32s(nv * 3 * n_expr, "expression_basis")?;
    let vertex_offsets = r.vec3s(nv, "vertex_offsets")?;
    let skinning_weights = r.f32s(nv * nj, "skinning_weights")?;
    let mut joint_parents = Vec::with_capacity(nj);
    for _ in 0..nj {
        joint_parents.push(
            r.cur
                .read_i32::<LE>()
                .map_err(|_| Error::Format("truncated while reading joint_parents".into()))?,
        );
    }
    let joint_rest_positions = r.vec3s(nj, "joint_rest_positions")?;
    let vertex_colors = r
        .f32s(nv * 3, "vertex_colors")?
        .chunks(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();

    let model = HeadModel {
        template_vertices,
        faces,
        n_shape,
        n_expr,
        shape_basis,
        expression_basis,
        vertex_offsets,
        joint_count: nj,
        skinning_weights,
        joint_parents,
        joint_rest_positions,
        vertex_colors,
    };
    model.validate()?;
    Ok(model)
}
