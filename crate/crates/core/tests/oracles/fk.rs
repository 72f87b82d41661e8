//! Forward kinematics as a plain 4×4 homogeneous-matrix chain built from a
//! re-typed copy of the reference joint table.

use feedsim_core::world::kinematics::{forward_kinematics, ArmModel, Joints};

pub type M4 = [[f64; 4]; 4];

/// (origin xyz, axis) per joint, parent frame.
const TABLE: [([f64; 3], [f64; 3]); 6] = [
    ([0.0, 0.0, 0.15], [0.0, 0.0, 1.0]),
    ([0.0, 0.0, 0.15], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, 0.40], [0.0, 1.0, 0.0]),
    ([0.025, 0.0, 0.20], [0.0, 0.0, 1.0]),
    ([0.0, 0.0, 0.15], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, 0.08], [0.0, 0.0, 1.0]),
];
const TOOL: [f64; 3] = [0.0, 0.0, 0.12];

fn identity() -> M4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn translation(t: [f64; 3]) -> M4 {
    let mut m = identity();
    m[0][3] = t[0];
    m[1][3] = t[1];
    m[2][3] = t[2];
    m
}

/// Rodrigues: R = I + sinθ K + (1 − cosθ) K².
fn rotation(axis: [f64; 3], theta: f64) -> M4 {
    let [x, y, z] = axis;
    let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let mut k2 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k2[i][j] = (0..3).map(|l| k[i][l] * k[l][j]).sum();
        }
    }
    let (s, c) = theta.sin_cos();
    let mut m = identity();
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += s * k[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    m
}

pub fn oracle(q: &[f64; 6]) -> M4 {
    let mut t = identity();
    for (i, (origin, axis)) in TABLE.iter().enumerate() {
        t = mul(&t, &translation(*origin));
        t = mul(&t, &rotation(*axis, q[i]));
    }
    mul(&t, &translation(TOOL))
}

/// Largest entry-wise deviation of the library FK from the oracle.
pub fn max_abs_diff(q: &[f64; 6]) -> f64 {
    let arm = ArmModel::reference();
    let pose = forward_kinematics(&arm, &Joints::from_column_slice(q)).unwrap();
    let m = pose.orientation.to_rotation_matrix();
    let o = oracle(q);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        worst = worst.max((pose.position[i] - o[i][3]).abs());
        for j in 0..3 {
            worst = worst.max((m[(i, j)] - o[i][j]).abs());
        }
    }
    worst
}
