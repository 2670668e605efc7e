//! Capsule layer: primary-capsule formation by channel cutting, per-pair
//! affine votes, and iterative routing-by-agreement with squash activation.
//!
//! Coupling coefficients are the softmax over output capsules of routing
//! logits that start at zero and grow by the vote/output agreement
//! `u_hat . v`. Gradients flow through the couplings exactly as computed.

use rand::Rng;

use crate::error::{Result, ScclError};
use crate::tensor::{Tape, Tensor, Var};

/// Cut the flattened feature map into contiguous capsules of width `d_in`.
/// The feature size must be divisible by `d_in`.
pub fn form_primary_capsules(tape: &mut Tape, features: Var, d_in: usize) -> Result<Var> {
    let n = tape.value(features).len();
    if d_in == 0 || n % d_in != 0 {
        return Err(ScclError::Config(format!(
            "capsule width {d_in} does not divide feature size {n}"
        )));
    }
    tape.reshape(features, &[n / d_in, d_in])
}

/// Affine vote tensor. `per_pair` shape: `n_in x n_out x d_out x d_in`;
/// shared shape: `1 x n_out x d_out x d_in`.
pub fn init_affine_weights(
    n_in: usize,
    n_out: usize,
    d_out: usize,
    d_in: usize,
    shared: bool,
    rng: &mut impl Rng,
) -> Tensor {
    let bound = 1.0 / (d_in as f64).sqrt();
    let rows = if shared { 1 } else { n_in };
    Tensor::uniform(&[rows, n_out, d_out, d_in], -bound, bound, rng)
}

/// Votes of every input capsule for every output capsule.
pub struct Predictions {
    /// `votes[i][j]` is the d_out-vector `W_ij u_i`.
    pub votes: Vec<Vec<Var>>,
    pub n_in: usize,
    pub n_out: usize,
    pub d_out: usize,
}

/// `u_hat[j|i] = W_ij u_i`, with no bias. A weight tensor with a single
/// leading row is shared across input capsules.
pub fn affine_predict(tape: &mut Tape, capsules: Var, weights: Var) -> Result<Predictions> {
    let cap_shape = tape.value(capsules).shape().to_vec();
    let w_shape = tape.value(weights).shape().to_vec();
    if cap_shape.len() != 2 || w_shape.len() != 4 {
        return Err(ScclError::shape(
            "affine_predict",
            format!("capsules {cap_shape:?} / weights {w_shape:?}"),
        ));
    }
    let (n_in, d_in) = (cap_shape[0], cap_shape[1]);
    let (w_rows, n_out, d_out) = (w_shape[0], w_shape[1], w_shape[2]);
    let shared = w_rows == 1;
    if w_shape[3] != d_in || (!shared && w_rows != n_in) {
        return Err(ScclError::shape(
            "affine_predict",
            format!("weights {w_shape:?} incompatible with {n_in} capsules of width {d_in}"),
        ));
    }
    let mut votes = Vec::with_capacity(n_in);
    for i in 0..n_in {
        let row = tape.slice_rows(capsules, i, 1)?;
        let u_i = tape.reshape(row, &[d_in])?;
        let w_i = tape.slice_rows(weights, if shared { 0 } else { i }, 1)?;
        let w_i = tape.reshape(w_i, &[n_out, d_out * d_in])?;
        let mut row_votes = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let w_ij = tape.slice_rows(w_i, j, 1)?;
            let w_ij = tape.reshape(w_ij, &[d_out, d_in])?;
            row_votes.push(tape.matmul(w_ij, u_i)?);
        }
        votes.push(row_votes);
    }
    Ok(Predictions { votes, n_in, n_out, d_out })
}

pub struct RoutingOutput {
    /// Output capsules, `n_out` vectors of width `d_out`.
    pub capsules: Vec<Var>,
    /// Coupling coefficient snapshot (`n_in x n_out`) at every iteration.
    pub couplings: Vec<Tensor>,
}

/// Weighted-sum routing: couplings are the per-input softmax of the logits,
/// output capsules are squashed coupling-weighted vote sums, and logits grow
/// by the agreement `u_hat . v` between iterations.
pub fn dynamic_routing(tape: &mut Tape, preds: &Predictions, iters: usize) -> Result<RoutingOutput> {
    if iters < 1 {
        return Err(ScclError::Config(format!("routing iterations must be >= 1, got {iters}")));
    }
    let (n_in, n_out, d_out) = (preds.n_in, preds.n_out, preds.d_out);

    // per output capsule: transposed vote matrix (d_out x n_in), built once
    let mut vote_mats = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let rows: Vec<Var> = (0..n_in)
            .map(|i| tape.reshape(preds.votes[i][j], &[1, d_out]))
            .collect::<Result<_>>()?;
        let stacked = tape.concat(&rows, 0)?;
        vote_mats.push(tape.transpose(stacked)?);
    }

    let mut logits = tape.constant(Tensor::zeros(&[n_in, n_out]));
    let mut couplings = Vec::with_capacity(iters);
    let mut capsules: Vec<Var> = Vec::new();
    for iter in 0..iters {
        let c = tape.softmax(logits, 1)?;
        couplings.push(tape.value(c).clone());
        let ct = tape.transpose(c)?;
        capsules.clear();
        for j in 0..n_out {
            let c_j_row = tape.slice_rows(ct, j, 1)?;
            let c_j = tape.reshape(c_j_row, &[n_in])?;
            let s_j = tape.matmul(vote_mats[j], c_j)?;
            capsules.push(tape.squash(s_j)?);
        }
        if iter + 1 < iters {
            let mut agreements = Vec::with_capacity(n_in * n_out);
            for i in 0..n_in {
                for j in 0..n_out {
                    agreements.push(tape.dot(preds.votes[i][j], capsules[j])?);
                }
            }
            let flat = tape.concat(&agreements, 0)?;
            let delta = tape.reshape(flat, &[n_in, n_out])?;
            logits = tape.add(logits, delta)?;
        }
    }
    Ok(RoutingOutput { capsules, couplings })
}

/// Concatenate output capsules into a single feature vector.
pub fn flatten_capsules(tape: &mut Tape, capsules: &[Var]) -> Result<Var> {
    tape.concat(capsules, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_check, ClosureDiffFn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn channel_cutting_preserves_values() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::new(vec![4, 6], (0..24).map(|i| i as f64).collect()).unwrap());
        let caps = form_primary_capsules(&mut tape, h, 8).unwrap();
        let c = tape.value(caps);
        assert_eq!(c.shape(), &[3, 8]);
        // concatenating the capsules reproduces the flattened map exactly
        assert_eq!(c.data(), tape.value(h).data());
    }

    #[test]
    fn single_capsule_degenerate_cut() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let caps = form_primary_capsules(&mut tape, h, 6).unwrap();
        assert_eq!(tape.value(caps).shape(), &[1, 6]);
    }

    #[test]
    fn non_divisible_width_is_a_config_error() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[4, 6]));
        assert!(form_primary_capsules(&mut tape, h, 7).is_err());
    }

    #[test]
    fn identity_weights_copy_the_input_capsule() {
        let (n_in, n_out, d) = (3, 2, 2);
        let mut w = Tensor::zeros(&[n_in, n_out, d, d]);
        for i in 0..n_in {
            for j in 0..n_out {
                for k in 0..d {
                    let base = ((i * n_out + j) * d + k) * d + k;
                    w.data_mut()[base] = 1.0;
                }
            }
        }
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let wv = tape.constant(w);
        let preds = affine_predict(&mut tape, u, wv).unwrap();
        for i in 0..n_in {
            for j in 0..n_out {
                let vote = tape.value(preds.votes[i][j]);
                assert_eq!(vote.data(), &tape.value(u).data()[i * d..(i + 1) * d]);
            }
        }
    }

    #[test]
    fn zero_capsules_produce_zero_votes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = init_affine_weights(2, 2, 3, 4, false, &mut rng);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::zeros(&[2, 4]));
        let wv = tape.constant(w);
        let preds = affine_predict(&mut tape, u, wv).unwrap();
        for row in &preds.votes {
            for &v in row {
                assert_eq!(tape.value(v).data(), &[0.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn votes_match_hand_matrix_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = init_affine_weights(2, 2, 2, 2, false, &mut rng);
        let u = Tensor::uniform(&[2, 2], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let uv = tape.constant(u.clone());
        let wv = tape.constant(w.clone());
        let preds = affine_predict(&mut tape, uv, wv).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for r in 0..2 {
                    let mut expect = 0.0;
                    for c in 0..2 {
                        let widx = ((i * 2 + j) * 2 + r) * 2 + c;
                        expect += w.data()[widx] * u.get2(i, c);
                    }
                    let got = tape.value(preds.votes[i][j]).data()[r];
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shared_weights_accept_any_capsule_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = init_affine_weights(5, 2, 3, 4, true, &mut rng);
        assert_eq!(w.shape(), &[1, 2, 3, 4]);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng));
        let wv = tape.constant(w);
        let preds = affine_predict(&mut tape, u, wv).unwrap();
        assert_eq!(preds.n_in, 5);
        // same weights: identical capsules produce identical votes
        let mut tape = Tape::new();
        let row = vec![0.1, -0.2, 0.3, 0.4];
        let data: Vec<f64> = row.iter().cycle().take(8).copied().collect();
        let u = tape.constant(Tensor::new(vec![2, 4], data).unwrap());
        let mut wrng = ChaCha8Rng::seed_from_u64(1);
        let wv = tape.constant(init_affine_weights(2, 2, 3, 4, true, &mut wrng));
        let preds = affine_predict(&mut tape, u, wv).unwrap();
        for j in 0..2 {
            assert_eq!(tape.value(preds.votes[0][j]).data(), tape.value(preds.votes[1][j]).data());
        }
    }

    fn random_predictions(
        tape: &mut Tape,
        n_in: usize,
        n_out: usize,
        d_in: usize,
        d_out: usize,
        seed: u64,
    ) -> Predictions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = tape.constant(Tensor::uniform(&[n_in, d_in], -1.0, 1.0, &mut rng));
        let w = tape.constant(init_affine_weights(n_in, n_out, d_out, d_in, false, &mut rng));
        affine_predict(tape, u, w).unwrap()
    }

    #[test]
    fn routing_requires_at_least_one_iteration() {
        let mut tape = Tape::new();
        let preds = random_predictions(&mut tape, 3, 2, 2, 2, 0);
        assert!(dynamic_routing(&mut tape, &preds, 0).is_err());
    }

    #[test]
    fn first_iteration_couplings_are_uniform() {
        let mut tape = Tape::new();
        let preds = random_predictions(&mut tape, 3, 4, 2, 2, 7);
        let out = dynamic_routing(&mut tape, &preds, 3).unwrap();
        for &c in out.couplings[0].data() {
            assert!((c - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn couplings_are_a_distribution_at_every_iteration() {
        for seed in 0..10u64 {
            let mut tape = Tape::new();
            let preds = random_predictions(&mut tape, 4, 3, 3, 2, seed);
            let out = dynamic_routing(&mut tape, &preds, 4).unwrap();
            for c in &out.couplings {
                for i in 0..4 {
                    let row = &c.data()[i * 3..(i + 1) * 3];
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|&x| x >= 0.0));
                }
            }
            for v in &out.capsules {
                let norm = tape.value(*v).squared_norm().sqrt();
                assert!((0.0..1.0).contains(&norm), "norm {norm}");
            }
        }
    }

    #[test]
    fn single_output_capsule_gets_full_coupling() {
        let mut tape = Tape::new();
        let preds = random_predictions(&mut tape, 3, 1, 2, 2, 3);
        let out = dynamic_routing(&mut tape, &preds, 3).unwrap();
        // softmax over one class is always 1: v = squash(sum of votes)
        let mut s = Tensor::zeros(&[2]);
        for i in 0..3 {
            s.add_assign_scaled(tape.value(preds.votes[i][0]), 1.0);
        }
        let sv = tape.constant(s);
        let expect = tape.squash(sv).unwrap();
        for (a, b) in tape.value(out.capsules[0]).data().iter().zip(tape.value(expect).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for c in &out.couplings {
            assert!(c.data().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn one_iteration_equals_uniform_weighted_sum() {
        let mut tape = Tape::new();
        let preds = random_predictions(&mut tape, 3, 2, 2, 2, 11);
        let out = dynamic_routing(&mut tape, &preds, 1).unwrap();
        for j in 0..2 {
            let mut s = Tensor::zeros(&[2]);
            for i in 0..3 {
                s.add_assign_scaled(tape.value(preds.votes[i][j]), 0.5);
            }
            let sv = tape.constant(s);
            let expect = tape.squash(sv).unwrap();
            for (a, b) in tape.value(out.capsules[j]).data().iter().zip(tape.value(expect).data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agreement_shifts_coupling_toward_clustered_votes() {
        // all inputs vote strongly and consistently for output 0, and
        // incoherently near zero for output 1
        let n_in = 3;
        let mut tape = Tape::new();
        let mut votes = Vec::new();
        for i in 0..n_in {
            let strong = tape.constant(Tensor::vector(vec![2.0, 2.0]));
            let weak = tape.constant(Tensor::vector(vec![0.01 * (i as f64 - 1.0), -0.005]));
            votes.push(vec![strong, weak]);
        }
        let preds = Predictions { votes, n_in, n_out: 2, d_out: 2 };
        let out = dynamic_routing(&mut tape, &preds, 3).unwrap();
        let last = out.couplings.last().unwrap();
        for i in 0..n_in {
            let c0 = last.get2(i, 0);
            let c1 = last.get2(i, 1);
            assert!(c0 > c1, "capsule {i}: {c0} <= {c1}");
            assert!(c0 > 0.6);
        }
    }

    #[test]
    fn output_is_invariant_to_input_capsule_permutation() {
        let (n_in, n_out, d) = (4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = Tensor::uniform(&[n_in, d], -1.0, 1.0, &mut rng);
        let w = init_affine_weights(n_in, n_out, d, d, false, &mut rng);

        let run = |u: &Tensor, w: &Tensor| {
            let mut tape = Tape::new();
            let uv = tape.constant(u.clone());
            let wv = tape.constant(w.clone());
            let preds = affine_predict(&mut tape, uv, wv).unwrap();
            let out = dynamic_routing(&mut tape, &preds, 3).unwrap();
            out.capsules.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
        };
        let base = run(&u, &w);

        // rotate input capsules and weight rows by one position together
        let perm = [1usize, 2, 3, 0];
        let mut u2 = Tensor::zeros(&[n_in, d]);
        let mut w2 = Tensor::zeros(w.shape());
        let wrow = n_out * d * d;
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..d {
                u2.set2(dst, c, u.get2(src, c));
            }
            w2.data_mut()[dst * wrow..(dst + 1) * wrow]
                .copy_from_slice(&w.data()[src * wrow..(src + 1) * wrow]);
        }
        let permuted = run(&u2, &w2);
        for (a, b) in base.iter().zip(&permuted) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn routing_gradient_passes_finite_differences() {
        let (n_in, n_out, d) = (3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let u0 = Tensor::uniform(&[n_in, d], -1.0, 1.0, &mut rng);
        let w0 = init_affine_weights(n_in, n_out, d, d, false, &mut rng);

        let forward = |ps: &[Tensor], tape: &mut Tape| -> Result<(Var, Vec<Var>)> {
            let u = tape.param(ps[0].clone());
            let w = tape.param(ps[1].clone());
            let preds = affine_predict(tape, u, w)?;
            let out = dynamic_routing(tape, &preds, 3)?;
            let flat = flatten_capsules(tape, &out.capsules)?;
            let mut wrng = ChaCha8Rng::seed_from_u64(77);
            let probe = tape.constant(Tensor::uniform(&[n_out * d], -1.0, 1.0, &mut wrng));
            let prod = tape.mul(flat, probe)?;
            Ok((tape.sum(prod), vec![u, w]))
        };
        let check = ClosureDiffFn {
            value: |ps: &[Tensor]| {
                let mut tape = Tape::new();
                let (loss, _) = forward(ps, &mut tape)?;
                Ok(tape.value(loss).item())
            },
            grads: |ps: &[Tensor]| {
                let mut tape = Tape::new();
                let (loss, vars) = forward(ps, &mut tape)?;
                let g = tape.backward(loss)?;
                Ok(vars.iter().zip(ps).map(|(&v, t)| g.wrt(v, t.shape())).collect())
            },
        };
        let report = finite_difference_check(&check, &[u0, w0], 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {} at {:?}", report.max_rel_err, report.worst);
    }
}
