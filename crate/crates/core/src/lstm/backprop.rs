//! Forward pass with recorded activations and exact backpropagation
//! through time over full sequences.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::parallel::parallel_map;

use super::{gemv_acc, sigmoid, FeatureVector, LstmCellState, LstmModel, RollTarget, OUTPUT_SIZE};

/// One training sequence: a whole insertion, in temporal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub inputs: Vec<FeatureVector>,
    pub targets: Vec<RollTarget>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Activations of one timestep needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepRecord {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Gate activations `[i | f | g | o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    /// FC activations before dropout.
    pub a: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    pub y: [f64; OUTPUT_SIZE],
}

pub(crate) fn step_forward(
    model: &LstmModel,
    state: &LstmCellState,
    x: &[f64],
    mask: Option<Vec<f64>>,
) -> StepRecord {
    let l = &model.layout;
    let hs = l.hidden;
    let p = &model.params;

    let mut z = p[l.b_gates()].to_vec();
    gemv_acc(&p[l.w_ih()], l.input, x, &mut z);
    gemv_acc(&p[l.w_hh()], hs, &state.hidden, &mut z);

    let mut gates = z;
    for (k, v) in gates.iter_mut().enumerate() {
        *v = if (2 * hs..3 * hs).contains(&k) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
    let mut c = vec![0.0; hs];
    let mut tanh_c = vec![0.0; hs];
    let mut h = vec![0.0; hs];
    for j in 0..hs {
        let (i, f, g, o) = (gates[j], gates[hs + j], gates[2 * hs + j], gates[3 * hs + j]);
        c[j] = f * state.cell[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }

    let mut a = p[l.b_fc()].to_vec();
    gemv_acc(&p[l.w_fc()], hs, &h, &mut a);
    a.iter_mut().for_each(|v| *v = v.tanh());

    let dropped: Vec<f64> = match &mask {
        Some(m) => a.iter().zip(m).map(|(v, k)| v * k).collect(),
        None => a.clone(),
    };
    let mut y = [0.0; OUTPUT_SIZE];
    let b_out = &p[l.b_out()];
    y.copy_from_slice(b_out);
    gemv_acc(&p[l.w_out()], l.fc, &dropped, &mut y);

    StepRecord {
        x: x.to_vec(),
        h_prev: state.hidden.clone(),
        c_prev: state.cell.clone(),
        gates,
        c,
        tanh_c,
        h,
        a,
        mask,
        y,
    }
}

/// Recorded forward pass over one sequence.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    pub(crate) steps: Vec<StepRecord>,
}

impl SequenceCache {
    pub fn outputs(&self) -> Vec<[f64; OUTPUT_SIZE]> {
        self.steps.iter().map(|s| s.y).collect()
    }
}

/// Forward pass from a zero state, recording activations. Dropout masks are
/// drawn from `dropout_rng` when given.
pub fn forward_sequence(
    model: &LstmModel,
    inputs: &[FeatureVector],
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> SequenceCache {
    let mut state = model.initial_state();
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mask = match dropout_rng.as_deref_mut() {
            Some(rng) if model.dropout > 0.0 => Some(model.dropout_mask(rng)),
            _ => None,
        };
        let rec = step_forward(model, &state, &x.0, mask);
        state = LstmCellState {
            hidden: rec.h.clone(),
            cell: rec.c.clone(),
        };
        steps.push(rec);
    }
    SequenceCache { steps }
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// loss gradient `dy` at each output.
pub fn backward_sequence(model: &LstmModel, cache: &SequenceCache, dy: &[[f64; OUTPUT_SIZE]]) -> Vec<f64> {
    assert_eq!(cache.steps.len(), dy.len());
    let l = &model.layout;
    let (hs, fs, is) = (l.hidden, l.fc, l.input);
    let p = &model.params;
    let w_hh = &p[l.w_hh()];
    let w_fc = &p[l.w_fc()];
    let w_out = &p[l.w_out()];

    let mut grad = vec![0.0; l.len()];
    let mut dh_next = vec![0.0; hs];
    let mut dc_next = vec![0.0; hs];
    let mut dz = vec![0.0; 4 * hs];
    let mut da = vec![0.0; fs];
    let mut dh = vec![0.0; hs];

    let (r_wih, r_whh, r_b) = (l.w_ih(), l.w_hh(), l.b_gates());
    let (r_wfc, r_bfc, r_wout, r_bout) = (l.w_fc(), l.b_fc(), l.w_out(), l.b_out());

    for (rec, g_y) in cache.steps.iter().zip(dy).rev() {
        // output layer
        for k in 0..OUTPUT_SIZE {
            grad[r_bout.start + k] += g_y[k];
            let row = r_wout.start + k * fs;
            for j in 0..fs {
                let act = match &rec.mask {
                    Some(m) => rec.a[j] * m[j],
                    None => rec.a[j],
                };
                grad[row + j] += g_y[k] * act;
            }
        }
        // FC layer
        for j in 0..fs {
            let mut g = 0.0;
            for k in 0..OUTPUT_SIZE {
                g += w_out[k * fs + j] * g_y[k];
            }
            if let Some(m) = &rec.mask {
                g *= m[j];
            }
            da[j] = g * (1.0 - rec.a[j] * rec.a[j]);
        }
        dh.copy_from_slice(&dh_next);
        for j in 0..fs {
            let g = da[j];
            grad[r_bfc.start + j] += g;
            if g == 0.0 {
                continue;
            }
            let row = j * hs;
            for m in 0..hs {
                grad[r_wfc.start + row + m] += g * rec.h[m];
                dh[m] += w_fc[row + m] * g;
            }
        }
        // LSTM cell
        for j in 0..hs {
            let (i, f, g, o) = (
                rec.gates[j],
                rec.gates[hs + j],
                rec.gates[2 * hs + j],
                rec.gates[3 * hs + j],
            );
            let d_o = dh[j] * rec.tanh_c[j];
            let dc = dh[j] * o * (1.0 - rec.tanh_c[j] * rec.tanh_c[j]) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[hs + j] = dc * rec.c_prev[j] * f * (1.0 - f);
            dz[2 * hs + j] = dc * i * (1.0 - g * g);
            dz[3 * hs + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &g) in dz.iter().enumerate() {
            grad[r_b.start + r] += g;
            let row_i = r_wih.start + r * is;
            for m in 0..is {
                grad[row_i + m] += g * rec.x[m];
            }
            let row_h = r * hs;
            for m in 0..hs {
                grad[r_whh.start + row_h + m] += g * rec.h_prev[m];
                dh_next[m] += w_hh[row_h + m] * g;
            }
        }
    }
    grad
}

/// Dropout stream for sequence `index` of a batch drawn under `seed`.
pub(crate) fn dropout_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// RMSE over every output component of every sequence in `batch`, and its
/// exact gradient. With `dropout_seed` set, training-mode dropout is used.
///
/// Sequences are processed on up to `jobs` threads; partial gradients are
/// summed in batch order so the result does not depend on `jobs`.
pub fn batch_gradient(
    model: &LstmModel,
    batch: &[&Sequence],
    dropout_seed: Option<u64>,
    jobs: usize,
) -> (f64, Vec<f64>) {
    let forward = |idx: usize, seq: &Sequence| {
        let mut rng = dropout_seed.map(|s| dropout_stream(s, idx as u64));
        let cache = forward_sequence(model, &seq.inputs, rng.as_mut().map(|r| r as &mut dyn RngCore));
        let sse: f64 = cache
            .steps
            .iter()
            .zip(&seq.targets)
            .map(|(s, t)| (s.y[0] - t.0[0]).powi(2) + (s.y[1] - t.0[1]).powi(2))
            .sum();
        (cache, sse)
    };
    let caches: Vec<(SequenceCache, f64)> = parallel_map(batch, jobs, |i, s| forward(i, s));

    let count: usize = batch.iter().map(|s| s.len() * OUTPUT_SIZE).sum();
    let sse: f64 = caches.iter().map(|(_, e)| *e).sum();
    let loss = (sse / count as f64).sqrt();
    if loss == 0.0 || !loss.is_finite() {
        return (loss, vec![0.0; model.layout.len()]);
    }
    let scale = 1.0 / (count as f64 * loss);

    let pairs: Vec<(&SequenceCache, &Sequence)> =
        caches.iter().map(|(c, _)| c).zip(batch.iter().copied()).collect();
    let grads: Vec<Vec<f64>> = parallel_map(&pairs, jobs, |_, (cache, seq)| {
        let dy: Vec<[f64; OUTPUT_SIZE]> = cache
            .steps
            .iter()
            .zip(&seq.targets)
            .map(|(s, t)| [(s.y[0] - t.0[0]) * scale, (s.y[1] - t.0[1]) * scale])
            .collect();
        backward_sequence(model, cache, &dy)
    });

    let mut total = vec![0.0; model.layout.len()];
    for g in &grads {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    (loss, total)
}
