use crate::math::{normalize_backward, Mat3, Vec3};

use super::Mesh;

/// Triangles with area below this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;
pub const SCALE_FLOOR: f64 = 1e-6;

/// Per-triangle local frames. Rotation columns are (first edge, normal x edge, normal).
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleFrames {
    pub centroids: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
    pub scales: Vec<f64>,
    /// Set for triangles whose frame was substituted.
    pub degenerate: Vec<bool>,
}

impl TriangleFrames {
    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

fn corners(mesh: &Mesh, f: usize) -> [Vec3; 3] {
    let [a, b, c] = mesh.faces[f];
    [
        mesh.vertices[a as usize],
        mesh.vertices[b as usize],
        mesh.vertices[c as usize],
    ]
}

/// Computes the frame of every triangle. A degenerate triangle reuses its
/// frame from `previous` when one is supplied, otherwise gets the identity
/// with a floored scale.
pub fn triangle_frames(mesh: &Mesh, previous: Option<&TriangleFrames>) -> TriangleFrames {
    let nf = mesh.faces.len();
    let mut out = TriangleFrames {
        centroids: Vec::with_capacity(nf),
        rotations: Vec::with_capacity(nf),
        scales: Vec::with_capacity(nf),
        degenerate: Vec::with_capacity(nf),
    };
    for f in 0..nf {
        let [v0, v1, v2] = corners(mesh, f);
        let centroid = (v0 + v1 + v2) / 3.0;
        let a = v1 - v0;
        let m = a.cross(&(v2 - v0));
        let degenerate = 0.5 * m.norm() < DEGENERATE_AREA || a.norm() == 0.0;
        let (rot, scale) = if degenerate {
            match previous.filter(|p| p.len() == nf) {
                Some(p) => (p.rotations[f], p.scales[f]),
                None => (Mat3::identity(), SCALE_FLOOR),
            }
        } else {
            let e = a.normalize();
            let n = m.normalize();
            let b = n.cross(&e);
            let scale = ((v1 - v0).norm() + (v2 - v1).norm() + (v0 - v2).norm()) / 3.0;
            (Mat3::from_columns(&[e, b, n]), scale)
        };
        out.centroids.push(centroid);
        out.rotations.push(rot);
        out.scales.push(scale);
        out.degenerate.push(degenerate);
    }
    out
}

/// Accumulates dL/dvertices from gradients on frame rotations and scales.
/// Degenerate frames are treated as constants.
pub fn triangle_frames_backward(
    mesh: &Mesh,
    frames: &TriangleFrames,
    d_rot: &[Mat3],
    d_scale: &[f64],
    d_vertices: &mut [Vec3],
) {
    for f in 0..mesh.faces.len() {
        if frames.degenerate[f] {
            continue;
        }
        let idx = mesh.faces[f].map(|i| i as usize);
        let [v0, v1, v2] = corners(mesh, f);
        let mut g = [Vec3::zeros(); 3];

        // scale = mean edge length
        let ds = d_scale[f] / 3.0;
        if ds != 0.0 {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let p = [v0, v1, v2];
                let d = p[j] - p[i];
                let u = d / d.norm() * ds;
                g[j] += u;
                g[i] -= u;
            }
        }

        let dr = &d_rot[f];
        if dr.iter().any(|&x| x != 0.0) {
            let a = v1 - v0;
            let c = v2 - v0;
            let m = a.cross(&c);
            let e = a.normalize();
            let n = m.normalize();
            let ge_col: Vec3 = dr.column(0).into();
            let gb: Vec3 = dr.column(1).into();
            let gn_col: Vec3 = dr.column(2).into();
            // b = n x e
            let gn = gn_col + e.cross(&gb);
            let ge = ge_col + gb.cross(&n);
            let ga_from_e = normalize_backward(&a, &ge);
            let gm = normalize_backward(&m, &gn);
            // m = a x c
            let ga = ga_from_e + c.cross(&gm);
            let gc = gm.cross(&a);
            g[1] += ga;
            g[2] += gc;
            g[0] -= ga + gc;
        }
        for k in 0..3 {
            d_vertices[idx[k]] += g[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mesh(seed: u64) -> Mesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vertices = (0..6)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        Mesh {
            vertices,
            faces: vec![[0, 1, 2], [1, 3, 2], [3, 4, 5], [5, 0, 2]],
        }
    }

    #[test]
    fn planar_triangle_has_z_normal() {
        let h = 3f64.sqrt() / 2.0;
        let mesh = Mesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, h, 0.0),
            ],
            faces: vec![[0, 1, 2]],
        };
        let fr = triangle_frames(&mesh, None);
        assert!((fr.rotations[0].column(2) - Vec3::z()).norm() < 1e-12);
        assert!((fr.scales[0] - 1.0).abs() < 1e-12);
        assert!(!fr.degenerate[0]);
    }

    #[test]
    fn frames_match_cross_product_oracle() {
        for seed in 0..20 {
            let mesh = random_mesh(seed);
            let fr = triangle_frames(&mesh, None);
            for (f, face) in mesh.faces.iter().enumerate() {
                let p: Vec<Vec3> = face.iter().map(|&i| mesh.vertices[i as usize]).collect();
                let t = (p[1] - p[0]) / (p[1] - p[0]).norm();
                let nn = (p[1] - p[0]).cross(&(p[2] - p[0]));
                let n = nn / nn.norm();
                let b = n.cross(&t);
                let r = fr.rotations[f];
                assert!((r.column(0) - t).norm() < 1e-12);
                assert!((r.column(1) - b).norm() < 1e-12);
                assert!((r.column(2) - n).norm() < 1e-12);
                assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-6);
                assert!((r.determinant() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scaling_mesh_scales_frames_only() {
        let mesh = random_mesh(3);
        let mut big = mesh.clone();
        big.vertices.iter_mut().for_each(|v| *v *= 2.0);
        let a = triangle_frames(&mesh, None);
        let b = triangle_frames(&big, None);
        for f in 0..a.len() {
            assert!((b.scales[f] - 2.0 * a.scales[f]).abs() < 1e-12);
            assert!((b.rotations[f] - a.rotations[f]).norm() < 1e-12);
        }
    }

    #[test]
    fn degenerate_triangle_falls_back() {
        let mut mesh = random_mesh(4);
        let v0 = mesh.vertices[0];
        mesh.vertices[1] = v0;
        let fr = triangle_frames(&mesh, None);
        assert!(fr.degenerate[0]);
        assert_eq!(fr.rotations[0], Mat3::identity());
        assert_eq!(fr.scales[0], SCALE_FLOOR);

        let healthy = triangle_frames(&random_mesh(4), None);
        let fr = triangle_frames(&mesh, Some(&healthy));
        assert_eq!(fr.rotations[0], healthy.rotations[0]);
        assert_eq!(fr.scales[0], healthy.scales[0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mesh = random_mesh(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nf = mesh.faces.len();
        let d_rot: Vec<Mat3> = (0..nf)
            .map(|_| Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let d_scale: Vec<f64> = (0..nf).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |m: &Mesh| {
            let fr = triangle_frames(m, None);
            (0..nf)
                .map(|f| fr.rotations[f].component_mul(&d_rot[f]).sum() + fr.scales[f] * d_scale[f])
                .sum::<f64>()
        };
        let fr = triangle_frames(&mesh, None);
        let mut grad = vec![Vec3::zeros(); mesh.vertices.len()];
        triangle_frames_backward(&mesh, &fr, &d_rot, &d_scale, &mut grad);
        let h = 1e-6;
        for v in 0..mesh.vertices.len() {
            for c in 0..3 {
                let mut p = mesh.clone();
                let mut m = mesh.clone();
                p.vertices[v][c] += h;
                m.vertices[v][c] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!(
                    (fd - grad[v][c]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "v{v} c{c}: {fd} vs {}",
                    grad[v][c]
                );
            }
        }
    }
}
