//! Gated recurrent unit and the bidirectional sequence encoder.
//!
//! The cell follows the gate equations literally: update and reset gates are
//! sigmoids of a weight matrix applied to the concatenation `[h_prev; x]`,
//! the candidate state is `tanh(W [r * h_prev; x])`, and the new state is
//! the per-coordinate blend `(1-z) * h_prev + z * h_cand`. There are no bias
//! terms by default; an optional bias triple can be enabled for experiments.

use rand::Rng;

use crate::error::{Result, ScclError};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Gate parameters bound on a tape. All three matrices are `d x (d+e)`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_update: Var,
    pub w_reset: Var,
    pub w_cand: Var,
    pub bias: Option<GruBiasVars>,
}

#[derive(Debug, Clone, Copy)]
pub struct GruBiasVars {
    pub b_update: Var,
    pub b_reset: Var,
    pub b_cand: Var,
}

/// Uniform init in (-1/sqrt(d+e), 1/sqrt(d+e)): `[w_update, w_reset, w_cand]`.
pub fn init_gru_matrices(d: usize, e: usize, rng: &mut impl Rng) -> [Tensor; 3] {
    let bound = 1.0 / ((d + e) as f64).sqrt();
    [
        Tensor::uniform(&[d, d + e], -bound, bound, rng),
        Tensor::uniform(&[d, d + e], -bound, bound, rng),
        Tensor::uniform(&[d, d + e], -bound, bound, rng),
    ]
}

pub struct GruStepTrace {
    pub h: Var,
    pub update_gate: Var,
    pub reset_gate: Var,
    pub candidate: Var,
}

fn gate(tape: &mut Tape, w: Var, input: Var, bias: Option<Var>) -> Result<Var> {
    let mut pre = tape.matmul(w, input)?;
    if let Some(b) = bias {
        pre = tape.add(pre, b)?;
    }
    Ok(pre)
}

pub fn gru_step(tape: &mut Tape, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    Ok(gru_step_traced(tape, x, h_prev, p)?.h)
}

pub fn gru_step_traced(tape: &mut Tape, x: Var, h_prev: Var, p: &GruVars) -> Result<GruStepTrace> {
    let d = tape.value(h_prev).len();
    let e = tape.value(x).len();
    let expect = [d, d + e];
    for (name, w) in [("w_update", p.w_update), ("w_reset", p.w_reset), ("w_cand", p.w_cand)] {
        if tape.value(w).shape() != expect {
            return Err(ScclError::shape(
                "gru_step",
                format!("{name} has shape {:?}, expected {expect:?}", tape.value(w).shape()),
            ));
        }
    }
    let cat = tape.concat(&[h_prev, x], 0)?;
    let z_pre = gate(tape, p.w_update, cat, p.bias.map(|b| b.b_update))?;
    let update_gate = tape.sigmoid(z_pre);
    let r_pre = gate(tape, p.w_reset, cat, p.bias.map(|b| b.b_reset))?;
    let reset_gate = tape.sigmoid(r_pre);

    let gated_h = tape.mul(reset_gate, h_prev)?;
    let cat_reset = tape.concat(&[gated_h, x], 0)?;
    let cand_pre = gate(tape, p.w_cand, cat_reset, p.bias.map(|b| b.b_cand))?;
    let candidate = tape.tanh(cand_pre);

    let keep = tape.scale(update_gate, -1.0);
    let ones = tape.constant(Tensor::ones(&[d]));
    let keep = tape.add(ones, keep)?;
    let retained = tape.mul(keep, h_prev)?;
    let updated = tape.mul(update_gate, candidate)?;
    let h = tape.add(retained, updated)?;
    Ok(GruStepTrace { h, update_gate, reset_gate, candidate })
}

/// Run the cell over an `L x e` input from a zero initial state. The
/// backward direction iterates from the last row to the first; outputs are
/// stored at their original positions either way, giving an `L x d` map.
pub fn gru_sequence(tape: &mut Tape, xs: Var, p: &GruVars, direction: Direction) -> Result<Var> {
    let shape = tape.value(xs).shape().to_vec();
    if shape.len() != 2 {
        return Err(ScclError::shape("gru_sequence", format!("expected L x e input, got {shape:?}")));
    }
    let (len, e) = (shape[0], shape[1]);
    let d = tape.value(p.w_update).dim(0);

    let order: Vec<usize> = match direction {
        Direction::Forward => (0..len).collect(),
        Direction::Backward => (0..len).rev().collect(),
    };
    let mut h = tape.constant(Tensor::zeros(&[d]));
    let mut states: Vec<Option<Var>> = vec![None; len];
    for t in order {
        let row = tape.slice_rows(xs, t, 1)?;
        let x = tape.reshape(row, &[e])?;
        h = gru_step(tape, x, h, p)?;
        states[t] = Some(tape.reshape(h, &[1, d])?);
    }
    let rows: Vec<Var> = states.into_iter().map(|s| s.expect("all positions visited")).collect();
    tape.concat(&rows, 0)
}

/// Forward and backward passes concatenated per position into `L x 2d`.
pub fn bigru_forward(tape: &mut Tape, xs: Var, fwd: &GruVars, bwd: &GruVars) -> Result<Var> {
    let d_f = tape.value(fwd.w_update).dim(0);
    let d_b = tape.value(bwd.w_update).dim(0);
    if d_f != d_b {
        return Err(ScclError::shape(
            "bigru",
            format!("direction widths differ: {d_f} vs {d_b}"),
        ));
    }
    let hf = gru_sequence(tape, xs, fwd, Direction::Forward)?;
    let hb = gru_sequence(tape, xs, bwd, Direction::Backward)?;
    let len = tape.value(xs).dim(0);
    let mut rows = Vec::with_capacity(len);
    for t in 0..len {
        let f = tape.slice_rows(hf, t, 1)?;
        let b = tape.slice_rows(hb, t, 1)?;
        rows.push(tape.concat(&[f, b], 1)?);
    }
    tape.concat(&rows, 0)
}
