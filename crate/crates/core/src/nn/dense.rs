use rand::Rng;

use super::init_uniform;
use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Fully connected layer `Wx + b`, weight shaped `out × in`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
    pub relu: bool,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_width: usize, out_width: usize, relu: bool, rng: &mut impl Rng) -> Self {
        let weight = store.add(&format!("{name}.weight"), init_uniform(&[out_width, in_width], in_width, rng));
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_width]));
        Dense {
            weight,
            bias,
            in_width,
            out_width,
            relu,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        dense_forward(self, tape, store, x)
    }
}

/// Applies the layer to every row of `x` (`rows × in_width`).
pub fn dense_forward(layer: &Dense, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
    let width = tape.value(x).cols();
    if width != layer.in_width {
        bail!(
            Dimension,
            "dense layer expects width {}, got input {:?}",
            layer.in_width,
            tape.shape(x)
        );
    }
    let w = tape.param(store, layer.weight);
    let b = tape.param(store, layer.bias);
    let y = tape.linear(x, w, Some(b))?;
    if layer.relu {
        tape.relu(y)
    } else {
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(store: &mut ParamStore, i: usize, o: usize) -> Dense {
        Dense::new(store, "d", i, o, false, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn identity_and_bias_only() {
        let mut store = ParamStore::new();
        let d = layer(&mut store, 2, 2);
        store.set(d.weight, Tensor::identity(2)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![3.0, -4.0]).unwrap()).unwrap();
        let y = d.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -4.0]);

        store.set(d.weight, Tensor::zeros(&[2, 2])).unwrap();
        store.set(d.bias, Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![9.0, 7.0]).unwrap()).unwrap();
        let y = d.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let d = layer(&mut store, 5, 3);
        store
            .set(d.bias, Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .unwrap();
        let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::matrix(2, 5, x.clone()).unwrap()).unwrap();
        let y = d.forward(&mut tape, &store, xv).unwrap();
        let (w, b) = (store.get(d.weight), store.get(d.bias));
        for i in 0..2 {
            for o in 0..3 {
                let mut acc = b.data()[o];
                for k in 0..5 {
                    acc += w.at(o, k) * x[i * 5 + k];
                }
                assert!((tape.value(y).at(i, o) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch() {
        let mut store = ParamStore::new();
        let d = layer(&mut store, 4, 2);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0; 3]).unwrap()).unwrap();
        assert_eq!(d.forward(&mut tape, &store, x).unwrap_err().kind(), "dimension");
    }
}
