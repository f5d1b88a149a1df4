use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Per-dimension mean and standard deviation, fitted once on the training
/// split and then frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dimensions whose spread falls below this are only centered.
const MIN_STD: f64 = 1e-8;

impl Standardizer {
    pub fn identity(dims: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    /// Pools every frame of every sequence.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut dims = None;
        let mut count = 0usize;
        let mut sum = Vec::new();
        let mut sq = Vec::new();
        for t in sequences {
            let d = *dims.get_or_insert_with(|| {
                sum = vec![0.0; t.cols()];
                sq = vec![0.0; t.cols()];
                t.cols()
            });
            if t.cols() != d {
                bail!(Dimension, "cannot pool {}-dim and {d}-dim features", t.cols());
            }
            for r in 0..t.rows() {
                for (j, v) in t.row_slice(r).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            count += t.rows();
        }
        if count == 0 {
            bail!(Contract, "no frames to fit standardization statistics on");
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.dims() {
            bail!(Dimension, "standardizer fitted on {} dims applied to {:?}", self.dims(), x.shape());
        }
        let d = self.dims();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(out)
    }

    /// Registers the statistics as non-trainable buffers so they travel
    /// with checkpoints.
    pub fn register(&self, store: &mut ParamStore, prefix: &str) -> (ParamId, ParamId) {
        (
            store.add_buffer(&format!("{prefix}.mean"), Tensor::vector(self.mean.clone()).expect("nonempty")),
            store.add_buffer(&format!("{prefix}.std"), Tensor::vector(self.std.clone()).expect("nonempty")),
        )
    }

    pub fn from_store(store: &ParamStore, ids: (ParamId, ParamId)) -> Self {
        Standardizer {
            mean: store.get(ids.0).data().to_vec(),
            std: store.get(ids.1).data().to_vec(),
        }
    }

    pub fn write_to(&self, store: &mut ParamStore, ids: (ParamId, ParamId)) -> Result<()> {
        store.set(ids.0, Tensor::vector(self.mean.clone())?)?;
        store.set(ids.1, Tensor::vector(self.std.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_data_becomes_zero_mean_unit_variance() {
        let a = Tensor::matrix(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![4.0, 40.0]).unwrap();
        let s = Standardizer::fit([&a, &b]).unwrap();
        assert_eq!(s.mean, vec![2.5, 25.0]);
        let z: Vec<Tensor> = [&a, &b].iter().map(|t| s.apply(t).unwrap()).collect();
        for j in 0..2 {
            let col: Vec<f64> = z.iter().flat_map(|t| (0..t.rows()).map(move |r| t.at(r, j))).collect();
            let m = col.iter().sum::<f64>() / 4.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_dimension_is_only_centered() {
        let a = Tensor::matrix(2, 1, vec![5.0, 5.0]).unwrap();
        let s = Standardizer::fit([&a]).unwrap();
        assert_eq!(s.apply(&a).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn roundtrip_through_store() {
        let s = Standardizer {
            mean: vec![1.0, 2.0],
            std: vec![3.0, 4.0],
        };
        let mut store = ParamStore::new();
        let ids = Standardizer::identity(2).register(&mut store, "std");
        s.write_to(&mut store, ids).unwrap();
        assert_eq!(Standardizer::from_store(&store, ids), s);
        assert!(store.trainable_ids().is_empty());
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert_eq!(Standardizer::fit(std::iter::empty::<&Tensor>()).unwrap_err().kind(), "contract");
        let s = Standardizer::identity(3);
        assert_eq!(s.apply(&Tensor::zeros(&[2, 2])).unwrap_err().kind(), "dimension");
    }
}
