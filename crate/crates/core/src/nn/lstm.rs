use rand::Rng;

use super::init_uniform;
use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Axis, Tape, Tensor, Var};

/// Gate order used for the weight and bias arrays.
pub const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// Standard four-gate LSTM cell. Each gate weight is
/// `hidden × (input + hidden)` and multiplies `[x_t ; h_{t−1}]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_size: usize,
    pub hidden_size: usize,
    pub weights: [ParamId; 4],
    pub biases: [ParamId; 4],
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input_size + hidden_size;
        let weights = GATES.map(|g| store.add(&format!("{name}.{g}.weight"), init_uniform(&[hidden_size, fan_in], fan_in, rng)));
        let biases = GATES.map(|g| {
            let init = if g == "forget" { 1.0 } else { 0.0 };
            store.add(&format!("{name}.{g}.bias"), Tensor::full(&[hidden_size], init))
        });
        Lstm {
            input_size,
            hidden_size,
            weights,
            biases,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    /// Runs the cell over the rows of `xs` (`T × input`), optionally in
    /// reverse time order. Returns `h_t` for each step in processing order.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, xs: Var, reverse: bool) -> Result<Vec<Var>> {
        let steps = tape.value(xs).rows();
        let mut h = tape.leaf(Tensor::zeros(&[1, self.hidden_size]))?;
        let mut c = h;
        let mut out = Vec::with_capacity(steps);
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            let x_t = tape.row(xs, t)?;
            (h, c) = lstm_cell_step(self, tape, store, x_t, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// One LSTM update:
/// `i, f, o = σ(W·[x;h] + b)`, `g = tanh(W_g·[x;h] + b_g)`,
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_step(params: &Lstm, tape: &mut Tape, store: &ParamStore, x_t: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let (xs, hs, cs) = (tape.shape(x_t), tape.shape(h_prev), tape.shape(c_prev));
    let row = |s: &[usize], n: usize| s.iter().product::<usize>() == n && *s.last().unwrap() == n;
    if !row(xs, params.input_size) || !row(hs, params.hidden_size) || !row(cs, params.hidden_size) {
        bail!(
            Dimension,
            "lstm cell ({} → {}) got x {:?}, h {:?}, c {:?}",
            params.input_size,
            params.hidden_size,
            xs,
            hs,
            cs
        );
    }
    let z = tape.concat(&[x_t, h_prev], Axis::Cols)?;
    let mut pre = [z; 4];
    for (g, slot) in pre.iter_mut().enumerate() {
        let w = tape.param(store, params.weights[g]);
        let b = tape.param(store, params.biases[g]);
        *slot = tape.linear(z, w, Some(b))?;
    }
    let i = tape.sigmoid(pre[0])?;
    let f = tape.sigmoid(pre[1])?;
    let o = tape.sigmoid(pre[2])?;
    let g = tape.tanh(pre[3])?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward: Lstm::new(store, &format!("{name}.fwd"), input_size, hidden_size, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), input_size, hidden_size, rng),
        }
    }

    pub fn output_width(&self) -> usize {
        self.forward.hidden_size + self.backward.hidden_size
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, xs: Var) -> Result<Var> {
        bilstm_encode(&self.forward, &self.backward, tape, store, xs)
    }
}

/// Encodes `xs` (`T × input`) into `T × 2·hidden`: row `t` is the forward
/// state after step `t` next to the backward state after consuming `x_t`
/// in reversed order.
pub fn bilstm_encode(fwd: &Lstm, bwd: &Lstm, tape: &mut Tape, store: &ParamStore, xs: Var) -> Result<Var> {
    if tape.value(xs).numel() == 0 || tape.value(xs).ndim() != 2 {
        bail!(Contract, "bi-lstm needs a nonempty T × features sequence");
    }
    let f = fwd.run(tape, store, xs, false)?;
    let mut b = bwd.run(tape, store, xs, true)?;
    b.reverse();
    let f = tape.concat(&f, Axis::Rows)?;
    let b = tape.concat(&b, Axis::Rows)?;
    tape.concat(&[f, b], Axis::Cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::param_grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        for id in lstm.param_ids() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.5, -2.0, 3.0]).unwrap()).unwrap();
        let h0 = tape.leaf(Tensor::zeros(&[1, 4])).unwrap();
        let (h, _) = lstm_cell_step(&lstm, &mut tape, &store, x, h0, h0).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 4]);
    }

    #[test]
    fn single_unit_hand_computation() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        // weights over [x, h]
        let w = [[0.5, -0.3], [0.2, 0.4], [-0.7, 0.1], [0.9, -0.6]];
        let b = [0.1, 1.0, -0.2, 0.05];
        for g in 0..4 {
            store.set(lstm.weights[g], Tensor::matrix(1, 2, w[g].to_vec()).unwrap()).unwrap();
            store.set(lstm.biases[g], Tensor::vector(vec![b[g]]).unwrap()).unwrap();
        }
        let (x, h_prev, c_prev) = (0.8, -0.4, 0.3);
        let pre = |g: usize| w[g][0] * x + w[g][1] * h_prev + b[g];
        let (i, f, o, gg) = (sig(pre(0)), sig(pre(1)), sig(pre(2)), pre(3).tanh());
        let c = f * c_prev + i * gg;
        let h = o * c.tanh();

        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::row(vec![x]).unwrap()).unwrap();
        let hv = tape.leaf(Tensor::row(vec![h_prev]).unwrap()).unwrap();
        let cv = tape.leaf(Tensor::row(vec![c_prev]).unwrap()).unwrap();
        let (h_out, c_out) = lstm_cell_step(&lstm, &mut tape, &store, xv, hv, cv).unwrap();
        assert!((tape.value(h_out).data()[0] - h).abs() < 1e-15);
        assert!((tape.value(c_out).data()[0] - c).abs() < 1e-15);
    }

    #[test]
    fn cell_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 2, &mut rng);
        let x = init_uniform(&[1, 3], 1, &mut rng);
        let h = init_uniform(&[1, 2], 1, &mut rng);
        let c = init_uniform(&[1, 2], 1, &mut rng);
        let report = param_grad_check(
            &store,
            &lstm.param_ids(),
            |tape, s| {
                let xv = tape.leaf(x.clone())?;
                let hv = tape.leaf(h.clone())?;
                let cv = tape.leaf(c.clone())?;
                let (h, _) = lstm_cell_step(&lstm, tape, s, xv, hv, cv)?;
                tape.sum(h)
            },
            1e-5,
            None,
        )
        .unwrap();
        assert!(report.max_error < 1e-4, "{report:?}");
    }

    #[test]
    fn length_one_sequence() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "b", 2, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.1, 0.2]).unwrap()).unwrap();
        let before = tape.len();
        let y = bi.encode(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 6]);
        assert!(tape.len() > before);
    }

    #[test]
    fn palindrome_symmetry_with_shared_params() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bi = BiLstm::new(&mut store, "b", 2, 3, &mut rng);
        for (f, b) in bi.forward.param_ids().into_iter().zip(bi.backward.param_ids()) {
            let v = store.get(f).clone();
            store.set(b, v).unwrap();
        }
        let rows = [[0.1, 0.5], [-0.3, 0.2], [0.7, -0.1], [-0.3, 0.2], [0.1, 0.5]];
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&rows.map(|r| r.to_vec())).unwrap()).unwrap();
        let y = bi.encode(&mut tape, &store, x).unwrap();
        let out = tape.value(y);
        for t in 0..5 {
            for j in 0..3 {
                assert!((out.at(t, j) - out.at(4 - t, 3 + j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equals_two_unidirectional_runs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bi = BiLstm::new(&mut store, "b", 2, 2, &mut rng);
        let xs = init_uniform(&[3, 2], 1, &mut rng);

        // oracle: scalar re-implementation of each direction
        let step = |lstm: &Lstm, x: &[f64], h: &[f64], c: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let z: Vec<f64> = x.iter().chain(h).copied().collect();
            let gate = |g: usize, k: usize| {
                let w = store.get(lstm.weights[g]);
                w.row_slice(k).iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + store.get(lstm.biases[g]).data()[k]
            };
            let mut hn = vec![0.0; 2];
            let mut cn = vec![0.0; 2];
            for k in 0..2 {
                let (i, f, o, g) = (sig(gate(0, k)), sig(gate(1, k)), sig(gate(2, k)), gate(3, k).tanh());
                cn[k] = f * c[k] + i * g;
                hn[k] = o * cn[k].tanh();
            }
            (hn, cn)
        };
        let mut fwd = Vec::new();
        let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 0..3 {
            (h, c) = step(&bi.forward, xs.row_slice(t), &h, &c);
            fwd.push(h.clone());
        }
        let mut bwd = vec![Vec::new(); 3];
        let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
        for t in (0..3).rev() {
            (h, c) = step(&bi.backward, xs.row_slice(t), &h, &c);
            bwd[t] = h.clone();
        }

        let mut tape = Tape::new();
        let x = tape.leaf(xs.clone()).unwrap();
        let y = bi.encode(&mut tape, &store, x).unwrap();
        let out = tape.value(y);
        for t in 0..3 {
            let expect: Vec<f64> = fwd[t].iter().chain(&bwd[t]).copied().collect();
            for (j, e) in expect.iter().enumerate() {
                assert!((out.at(t, j) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn default_width_is_400() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "b", 4, 200, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(bi.output_width(), 400);
    }
}
