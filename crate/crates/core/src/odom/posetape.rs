//! Differentiable pose arithmetic on the tape. Poses are `[1 x 6]` rows
//! `[x, y, z, roll, pitch, yaw]` with Z-Y-X Euler angles.

use alloc::vec::Vec;

use crate::error::Result;
use crate::geom::Mat3;
use crate::nn::{Tape, Var};

fn entry(tape: &mut Tape, v: Var, i: usize) -> Result<Var> {
    tape.slice_cols(v, i, 1)
}

fn prod(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.mul(a, b)
}

/// `[1 x 3]` Euler angles to a `[3 x 3]` rotation matrix.
pub fn euler_to_matrix(tape: &mut Tape, e: Var) -> Result<Var> {
    let s = tape.sin(e);
    let c = tape.cos(e);
    let (sr, sp, sy) = (entry(tape, s, 0)?, entry(tape, s, 1)?, entry(tape, s, 2)?);
    let (cr, cp, cy) = (entry(tape, c, 0)?, entry(tape, c, 1)?, entry(tape, c, 2)?);
    let cy_sp = prod(tape, cy, sp)?;
    let sy_sp = prod(tape, sy, sp)?;
    let r00 = prod(tape, cy, cp)?;
    let a = prod(tape, cy_sp, sr)?;
    let b = prod(tape, sy, cr)?;
    let r01 = tape.sub(a, b)?;
    let a = prod(tape, cy_sp, cr)?;
    let b = prod(tape, sy, sr)?;
    let r02 = tape.add(a, b)?;
    let r10 = prod(tape, sy, cp)?;
    let a = prod(tape, sy_sp, sr)?;
    let b = prod(tape, cy, cr)?;
    let r11 = tape.add(a, b)?;
    let a = prod(tape, sy_sp, cr)?;
    let b = prod(tape, cy, sr)?;
    let r12 = tape.sub(a, b)?;
    let r20 = tape.scale(sp, -1.0);
    let r21 = prod(tape, cp, sr)?;
    let r22 = prod(tape, cp, cr)?;
    let row0 = tape.concat_cols(&[r00, r01, r02])?;
    let row1 = tape.concat_cols(&[r10, r11, r12])?;
    let row2 = tape.concat_cols(&[r20, r21, r22])?;
    tape.concat_rows(&[row0, row1, row2])
}

/// `[3 x 3]` rotation matrix to `[1 x 3]` Euler angles, using the same
/// extraction as [`crate::geom::Rotation::to_euler`].
pub fn matrix_to_euler(tape: &mut Tape, m: Var) -> Result<Var> {
    let flat: Vec<Var> = (0..3)
        .map(|i| tape.slice_rows(m, i, 1))
        .collect::<Result<Vec<_>>>()?;
    let r00 = entry(tape, flat[0], 0)?;
    let r10 = entry(tape, flat[1], 0)?;
    let r20 = entry(tape, flat[2], 0)?;
    let r21 = entry(tape, flat[2], 1)?;
    let r22 = entry(tape, flat[2], 2)?;
    let a = tape.square(r00);
    let b = tape.square(r10);
    let h = tape.add(a, b)?;
    let h = tape.sqrt(h);
    let neg = tape.scale(r20, -1.0);
    let pitch = tape.atan2(neg, h)?;
    let roll = tape.atan2(r21, r22)?;
    let yaw = tape.atan2(r10, r00)?;
    tape.concat_cols(&[roll, pitch, yaw])
}

fn const_mat(tape: &mut Tape, m: &Mat3) -> Result<Var> {
    let data = m.iter().flat_map(|r| r.iter().copied()).collect();
    tape.constant_matrix(3, 3, data)
}

/// Applies a rigid map `x -> R x + c` to a pose row: the translation is
/// mapped and the rotation is left-multiplied by `R`.
pub fn transform_pose(tape: &mut Tape, pose: Var, r: &Mat3, c: [f64; 3]) -> Result<Var> {
    let t = tape.slice_cols(pose, 0, 3)?;
    let e = tape.slice_cols(pose, 3, 3)?;
    let rt = const_mat(tape, &transpose(r))?;
    let t2 = tape.matmul(t, rt)?;
    let cv = tape.constant_row(&c);
    let t2 = tape.add(t2, cv)?;
    let m = euler_to_matrix(tape, e)?;
    let rv = const_mat(tape, r)?;
    let m2 = tape.matmul(rv, m)?;
    let e2 = matrix_to_euler(tape, m2)?;
    tape.concat_cols(&[t2, e2])
}

/// `prior = prev (+) delta`: translation `t + R_n^T dt_w`, rotation
/// `R_prev * R(d_euler)` with the rotation delta taken in the body frame.
pub fn compose_prior(tape: &mut Tape, prev: Var, delta_w: Var, frame_rot: &Mat3) -> Result<Var> {
    let t = tape.slice_cols(prev, 0, 3)?;
    let e = tape.slice_cols(prev, 3, 3)?;
    let dt = tape.slice_cols(delta_w, 0, 3)?;
    let de = tape.slice_cols(delta_w, 3, 3)?;
    // Row-vector form: (R^T v)^T = v^T R.
    let rn = const_mat(tape, frame_rot)?;
    let dt_n = tape.matmul(dt, rn)?;
    let t2 = tape.add(t, dt_n)?;
    let m = euler_to_matrix(tape, e)?;
    let dm = euler_to_matrix(tape, de)?;
    let m2 = tape.matmul(m, dm)?;
    let e2 = matrix_to_euler(tape, m2)?;
    tape.concat_cols(&[t2, e2])
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut o = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            o[j][i] = *v;
        }
    }
    o
}
