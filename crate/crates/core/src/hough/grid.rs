//! Discretization of the 3D line space: a hemisphere of directions from a
//! subdivided icosahedron, and a (u, v) offset grid on the plane orthogonal
//! to each direction.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use crate::geom::exp_rotation;

/// Unit line directions with positive time component.
#[derive(Clone, Debug)]
pub struct DirectionGrid {
    directions: Vec<Vector3<f64>>,
    /// Rows of the Roberts projection for each direction: (u, v) = M·z.
    projections: Vec<[[f64; 3]; 2]>,
    subdivision_level: u32,
}

fn icosahedron() -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let v = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let verts = v.iter().map(|p| Vector3::from(*p).normalize()).collect();
    (verts, faces)
}

/// Vertices of the icosahedron after `level` rounds of 4-way triangle
/// subdivision, projected onto the unit sphere. Count is 10·4^level + 2.
pub fn icosphere_vertices(level: u32) -> Vec<Vector3<f64>> {
    let (mut verts, mut faces) = icosahedron();
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    verts
}

/// Fixed orientation of the sphere: one vertex near the time axis, tilted
/// off-axis so that no vertex lies on the t = 0 great circle.
fn grid_orientation() -> Matrix3<f64> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    // vertex (0, 1, φ) onto +z
    let to_pole = exp_rotation((1.0 / phi).atan(), &Vector3::x());
    let tilt = exp_rotation(0.02, &Vector3::new(0.8, 0.42426, 0.3).normalize());
    *tilt.matrix() * to_pole.matrix()
}

/// Roberts' minimal parametrization: rows mapping z to the (u, v) offset on
/// the plane through the origin orthogonal to `d`.
pub fn roberts_matrix(d: &Vector3<f64>) -> [[f64; 3]; 2] {
    let k = 1.0 / (1.0 + d.z);
    [
        [1.0 - d.x * d.x * k, -d.x * d.y * k, -d.x],
        [-d.x * d.y * k, 1.0 - d.y * d.y * k, -d.y],
    ]
}

/// Projects `z` along `d` onto the plane through the origin orthogonal to
/// `d`. Invariant to sliding `z` along `d`. Requires d.z ≠ −1.
pub fn roberts_project(z: &Vector3<f64>, d: &Vector3<f64>) -> (f64, f64) {
    let m = roberts_matrix(d);
    (
        m[0][0] * z.x + m[0][1] * z.y + m[0][2] * z.z,
        m[1][0] * z.x + m[1][1] * z.y + m[1][2] * z.z,
    )
}

impl DirectionGrid {
    pub fn build(subdivision_level: u32) -> Self {
        let rot = grid_orientation();
        let mut directions: Vec<Vector3<f64>> = icosphere_vertices(subdivision_level)
            .into_iter()
            .map(|v| rot * v)
            .filter(|d| d.z > 0.0 || (d.z == 0.0 && (d.x > 0.0 || d.x == 0.0 && d.y > 0.0)))
            .map(|d| d.normalize())
            .collect();
        // stable order: by time component, then azimuth
        directions.sort_by(|a, b| b.z.total_cmp(&a.z).then(a.y.atan2(a.x).total_cmp(&b.y.atan2(b.x))));
        let projections = directions.iter().map(roberts_matrix).collect();
        DirectionGrid {
            directions,
            projections,
            subdivision_level,
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn subdivision_level(&self) -> u32 {
        self.subdivision_level
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    pub fn direction(&self, i: usize) -> Vector3<f64> {
        self.directions[i]
    }

    #[inline]
    pub(crate) fn project(&self, i: usize, z: &Vector3<f64>) -> (f64, f64) {
        let m = &self.projections[i];
        (
            m[0][0] * z.x + m[0][1] * z.y + m[0][2] * z.z,
            m[1][0] * z.x + m[1][1] * z.y + m[1][2] * z.z,
        )
    }
}

/// Bins of the (u, v) offset plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneGrid {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub bin_size: f64,
    pub n_u: u32,
    pub n_v: u32,
}

impl PlaneGrid {
    pub fn new(u_min: f64, u_max: f64, v_min: f64, v_max: f64, bin_size: f64) -> Self {
        let n_u = ((u_max - u_min) / bin_size).ceil() as u32;
        let n_v = ((v_max - v_min) / bin_size).ceil() as u32;
        PlaneGrid {
            u_min,
            u_max,
            v_min,
            v_max,
            bin_size,
            n_u,
            n_v,
        }
    }

    /// Square grid over [−radius, radius]², enough for any point within
    /// `radius` of the origin under every direction.
    pub fn covering(radius: f64, bin_size: f64) -> Self {
        PlaneGrid::new(-radius, radius, -radius, radius, bin_size)
    }

    #[inline]
    pub fn bin(&self, u: f64, v: f64) -> Option<(u32, u32)> {
        let fu = ((u - self.u_min) / self.bin_size).floor();
        let fv = ((v - self.v_min) / self.bin_size).floor();
        if fu >= 0.0 && fv >= 0.0 && fu < self.n_u as f64 && fv < self.n_v as f64 {
            Some((fu as u32, fv as u32))
        } else {
            None
        }
    }
}
