//! Parametric blendshape head: linear shape and expression spaces, linear
//! blend skinning over a small joint tree, then a global rigid motion.

mod frames;
mod io;

pub use frames::{
    triangle_frames, triangle_frames_backward, TriangleFrames, DEGENERATE_AREA, SCALE_FLOOR,
};
pub(crate) use io::{decode as decode_model, encode as encode_model};
pub use io::{load_head_model, save_head_model, HeadModelDims};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::math::{rodrigues, rodrigues_backward, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub template_vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub n_shape: usize,
    pub n_expr: usize,
    /// Indexed `(v * 3 + c) * n_shape + k`.
    pub shape_basis: Vec<f64>,
    /// Indexed `(v * 3 + c) * n_expr + k`.
    pub expression_basis: Vec<f64>,
    pub vertex_offsets: Vec<Vec3>,
    pub joint_count: usize,
    /// Indexed `v * joint_count + j`; rows are convex.
    pub skinning_weights: Vec<f64>,
    /// Parent index per joint, `-1` for a root. Parents precede children.
    pub joint_parents: Vec<i32>,
    pub joint_rest_positions: Vec<Vec3>,
    pub vertex_colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// Axis-angle rotation followed by translation.
    pub rigid: [f64; 6],
    pub joint_rotations: Vec<f64>,
    pub shape: Vec<f64>,
    pub expression: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

/// Gradients with the same layout as [`HeadParams`], plus the per-vertex offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParamGrads {
    pub rigid: [f64; 6],
    pub joint_rotations: Vec<f64>,
    pub shape: Vec<f64>,
    pub expression: Vec<f64>,
    pub vertex_offsets: Vec<Vec3>,
}

/// Intermediate values retained by [`HeadModel::evaluate_with_cache`].
#[derive(Debug, Clone)]
pub struct EvalCache {
    blended: Vec<Vec3>,
    skinned: Vec<Vec3>,
    local_rot: Vec<Mat3>,
    global_rot: Vec<Mat3>,
    global_rigid: Mat3,
}

impl HeadParams {
    pub fn zeros(model: &HeadModel) -> Self {
        Self {
            rigid: [0.0; 6],
            joint_rotations: vec![0.0; model.joint_count * 3],
            shape: vec![0.0; model.n_shape],
            expression: vec![0.0; model.n_expr],
        }
    }

    pub fn check(&self, model: &HeadModel) -> Result<()> {
        ensure_len(
            "joint_rotations",
            model.joint_count * 3,
            self.joint_rotations.len(),
        )?;
        ensure_len("shape", model.n_shape, self.shape.len())?;
        ensure_len("expression", model.n_expr, self.expression.len())?;
        let all = self
            .rigid
            .iter()
            .chain(&self.joint_rotations)
            .chain(&self.shape)
            .chain(&self.expression);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head parameters".into()));
        }
        Ok(())
    }

    pub fn rigid_rotation(&self) -> Vec3 {
        Vec3::new(self.rigid[0], self.rigid[1], self.rigid[2])
    }

    pub fn rigid_translation(&self) -> Vec3 {
        Vec3::new(self.rigid[3], self.rigid[4], self.rigid[5])
    }

    pub fn joint(&self, j: usize) -> Vec3 {
        Vec3::new(
            self.joint_rotations[3 * j],
            self.joint_rotations[3 * j + 1],
            self.joint_rotations[3 * j + 2],
        )
    }
}

impl HeadParamGrads {
    pub fn zeros(model: &HeadModel) -> Self {
        Self {
            rigid: [0.0; 6],
            joint_rotations: vec![0.0; model.joint_count * 3],
            shape: vec![0.0; model.n_shape],
            expression: vec![0.0; model.n_expr],
            vertex_offsets: vec![Vec3::zeros(); model.vertex_count()],
        }
    }
}

impl HeadModel {
    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn dims(&self) -> HeadModelDims {
        HeadModelDims {
            vertices: self.vertex_count(),
            faces: self.face_count(),
            n_shape: self.n_shape,
            n_expr: self.n_expr,
            joints: self.joint_count,
        }
    }

    /// Checks every structural invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let v = self.vertex_count();
        let j = self.joint_count;
        ensure_len("shape_basis", v * 3 * self.n_shape, self.shape_basis.len())?;
        ensure_len(
            "expression_basis",
            v * 3 * self.n_expr,
            self.expression_basis.len(),
        )?;
        ensure_len("vertex_offsets", v, self.vertex_offsets.len())?;
        ensure_len("skinning_weights", v * j, self.skinning_weights.len())?;
        ensure_len("joint_parents", j, self.joint_parents.len())?;
        ensure_len("joint_rest_positions", j, self.joint_rest_positions.len())?;
        ensure_len("vertex_colors", v, self.vertex_colors.len())?;
        if j == 0 {
            return Err(Error::invalid(
                "joint_count",
                "at least one joint is required",
            ));
        }
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= v) {
                return Err(Error::invalid(
                    "faces",
                    format!("face {f} indexes a missing vertex"),
                ));
            }
        }
        for (row, w) in self.skinning_weights.chunks(j).enumerate() {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(
                    "skinning_weights",
                    format!("skinning_weights row {row} not convex"),
                ));
            }
        }
        for (k, &p) in self.joint_parents.iter().enumerate() {
            if p >= k as i32 || p < -1 {
                return Err(Error::invalid(
                    "joint_parents",
                    format!("joint {k} has parent {p}; parents must precede children"),
                ));
            }
        }
        let finite = self
            .template_vertices
            .iter()
            .chain(&self.vertex_offsets)
            .chain(&self.joint_rest_positions)
            .all(|p| p.iter().all(|x| x.is_finite()))
            && self
                .shape_basis
                .iter()
                .chain(&self.expression_basis)
                .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("head model arrays".into()));
        }
        Ok(())
    }

    /// Rounds every stored value to f32 precision, the precision of the asset format.
    pub fn snap_to_f32(&mut self) {
        let snap = |x: &mut f64| *x = *x as f32 as f64;
        let snap3 = |p: &mut Vec3| p.iter_mut().for_each(snap);
        self.template_vertices.iter_mut().for_each(snap3);
        self.vertex_offsets.iter_mut().for_each(snap3);
        self.joint_rest_positions.iter_mut().for_each(snap3);
        self.shape_basis.iter_mut().for_each(snap);
        self.expression_basis.iter_mut().for_each(snap);
        self.skinning_weights.iter_mut().for_each(snap);
        self.vertex_colors
            .iter_mut()
            .for_each(|c| c.iter_mut().for_each(snap));
    }

    pub fn evaluate(&self, params: &HeadParams) -> Result<Mesh> {
        Ok(self.evaluate_with_cache(params)?.0)
    }

    pub fn evaluate_with_cache(&self, params: &HeadParams) -> Result<(Mesh, EvalCache)> {
        params.check(self)?;
        let nv = self.vertex_count();
        let nj = self.joint_count;

        let mut blended = Vec::with_capacity(nv);
        for v in 0..nv {
            let mut p = self.template_vertices[v] + self.vertex_offsets[v];
            for c in 0..3 {
                let row = v * 3 + c;
                let s = &self.shape_basis[row * self.n_shape..(row + 1) * self.n_shape];
                let e = &self.expression_basis[row * self.n_expr..(row + 1) * self.n_expr];
                p[c] += dot(s, &params.shape) + dot(e, &params.expression);
            }
            blended.push(p);
        }

        let local_rot: Vec<Mat3> = (0..nj).map(|j| rodrigues(&params.joint(j))).collect();
        let (global_rot, global_t) = self.forward_kinematics(&local_rot);

        // Per-joint skinning transform x -> R (x - J) + t.
        let offsets: Vec<Vec3> = (0..nj)
            .map(|j| global_t[j] - global_rot[j] * self.joint_rest_positions[j])
            .collect();
        let mut skinned = Vec::with_capacity(nv);
        for (v, p) in blended.iter().enumerate() {
            let w = &self.skinning_weights[v * nj..(v + 1) * nj];
            let mut m = Mat3::zeros();
            let mut t = Vec3::zeros();
            for j in 0..nj {
                if w[j] != 0.0 {
                    m += global_rot[j] * w[j];
                    t += offsets[j] * w[j];
                }
            }
            skinned.push(m * p + t);
        }

        let global_rigid = rodrigues(&params.rigid_rotation());
        let trans = params.rigid_translation();
        let vertices = skinned.iter().map(|p| global_rigid * p + trans).collect();
        let mesh = Mesh {
            vertices,
            faces: self.faces.clone(),
        };
        Ok((
            mesh,
            EvalCache {
                blended,
                skinned,
                local_rot,
                global_rot,
                global_rigid,
            },
        ))
    }

    fn forward_kinematics(&self, local_rot: &[Mat3]) -> (Vec<Mat3>, Vec<Vec3>) {
        let nj = self.joint_count;
        let mut rot = Vec::with_capacity(nj);
        let mut trans = Vec::with_capacity(nj);
        for j in 0..nj {
            match self.joint_parents[j] {
                -1 => {
                    rot.push(local_rot[j]);
                    trans.push(self.joint_rest_positions[j]);
                }
                p => {
                    let p = p as usize;
                    let r: Mat3 = rot[p] * local_rot[j];
                    let t = rot[p] * (self.joint_rest_positions[j] - self.joint_rest_positions[p])
                        + trans[p];
                    rot.push(r);
                    trans.push(t);
                }
            }
        }
        (rot, trans)
    }

    /// Vector-Jacobian product of `evaluate`: maps dL/dvertices to parameter gradients.
    pub fn backward(
        &self,
        params: &HeadParams,
        cache: &EvalCache,
        d_vertices: &[Vec3],
    ) -> Result<HeadParamGrads> {
        ensure_len("vertex gradient", self.vertex_count(), d_vertices.len())?;
        let nj = self.joint_count;
        let mut grads = HeadParamGrads::zeros(self);

        // rigid motion
        let mut d_rigid_rot = Mat3::zeros();
        let mut d_trans = Vec3::zeros();
        let rt = cache.global_rigid.transpose();
        let d_skinned: Vec<Vec3> = d_vertices
            .iter()
            .zip(&cache.skinned)
            .map(|(g, p)| {
                d_rigid_rot += g * p.transpose();
                d_trans += g;
                rt * g
            })
            .collect();
        let dw = rodrigues_backward(&params.rigid_rotation(), &d_rigid_rot);
        grads.rigid = [dw.x, dw.y, dw.z, d_trans.x, d_trans.y, d_trans.z];

        // skinning
        let mut d_grot = vec![Mat3::zeros(); nj];
        let mut d_gt = vec![Vec3::zeros(); nj];
        for (v, (g, p)) in d_skinned.iter().zip(&cache.blended).enumerate() {
            let w = &self.skinning_weights[v * nj..(v + 1) * nj];
            let mut m = Mat3::zeros();
            for j in 0..nj {
                if w[j] != 0.0 {
                    m += cache.global_rot[j] * w[j];
                    d_grot[j] += (g * (p - self.joint_rest_positions[j]).transpose()) * w[j];
                    d_gt[j] += g * w[j];
                }
            }
            let d_blend = m.transpose() * g;
            grads.vertex_offsets[v] = d_blend;
            for c in 0..3 {
                let row = v * 3 + c;
                let s = &self.shape_basis[row * self.n_shape..(row + 1) * self.n_shape];
                for (acc, b) in grads.shape.iter_mut().zip(s) {
                    *acc += b * d_blend[c];
                }
                let e = &self.expression_basis[row * self.n_expr..(row + 1) * self.n_expr];
                for (acc, b) in grads.expression.iter_mut().zip(e) {
                    *acc += b * d_blend[c];
                }
            }
        }

        // kinematic chain, children before parents
        for j in (0..nj).rev() {
            let d_local = match self.joint_parents[j] {
                -1 => d_grot[j],
                p => {
                    let p = p as usize;
                    let rel = self.joint_rest_positions[j] - self.joint_rest_positions[p];
                    let d_local = cache.global_rot[p].transpose() * d_grot[j];
                    let add_rot =
                        d_grot[j] * cache.local_rot[j].transpose() + d_gt[j] * rel.transpose();
                    let add_t = d_gt[j];
                    d_grot[p] += add_rot;
                    d_gt[p] += add_t;
                    d_local
                }
            };
            let dw = rodrigues_backward(&params.joint(j), &d_local);
            grads.joint_rotations[3 * j..3 * j + 3].copy_from_slice(dw.as_slice());
        }
        Ok(grads)
    }

    /// Mesh with every parameter at zero: template plus vertex offsets.
    pub fn neutral_mesh(&self) -> Mesh {
        Mesh {
            vertices: self
                .template_vertices
                .iter()
                .zip(&self.vertex_offsets)
                .map(|(a, b)| a + b)
                .collect(),
            faces: self.faces.clone(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
