//! Reproducible parameter initialization.

use std::sync::Mutex;

use candle_core::{DType, Device, Shape, Tensor};
use candle_nn::init::NormalOrUniform;
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Variable-map backend that draws initial values from a seeded generator
/// instead of the device RNG.
struct SeededVarMap {
    vars: VarMap,
    rng: Mutex<ChaCha8Rng>,
}

impl SeededVarMap {
    fn sample(&self, shape: &Shape, init: Init) -> Vec<f64> {
        let n = shape.elem_count();
        let mut rng = self.rng.lock().expect("rng poisoned");
        let uniform = |rng: &mut ChaCha8Rng, lo: f64, up: f64| (0..n).map(|_| rng.gen_range(lo..up)).collect();
        let normal = |rng: &mut ChaCha8Rng, mean: f64, std: f64| {
            (0..n).map(|_| mean + std * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        match init {
            Init::Const(v) => vec![v; n],
            Init::Uniform { lo, up } => uniform(&mut rng, lo, up),
            Init::Randn { mean, stdev } => normal(&mut rng, mean, stdev),
            Init::Kaiming { dist, fan, non_linearity } => {
                let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
                match dist {
                    NormalOrUniform::Uniform => {
                        let bound = 3f64.sqrt() * std;
                        uniform(&mut rng, -bound, bound)
                    }
                    NormalOrUniform::Normal => normal(&mut rng, 0.0, std),
                }
            }
        }
    }
}

impl SimpleBackend for SeededVarMap {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        if SimpleBackend::contains_tensor(&self.vars, name) {
            return self.vars.get(s, name, h, dtype, dev);
        }
        let values = Tensor::from_vec(self.sample(&s, h), s.clone(), dev)?.to_dtype(dtype)?;
        let tensor = self.vars.get(s, name, Init::Const(0.0), dtype, dev)?;
        let data = self.vars.data().lock().expect("var map poisoned");
        data[name].set(&values)?;
        Ok(tensor)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        self.vars.get_unchecked(name, dtype, dev)
    }

    fn contains_tensor(&self, name: &str) -> bool {
        SimpleBackend::contains_tensor(&self.vars, name)
    }
}

/// A builder that registers new variables in `vars` with values determined by
/// `seed` and the order of creation.
pub fn seeded_var_builder(vars: &VarMap, seed: u64, dtype: DType, device: &Device) -> VarBuilder<'static> {
    let backend = SeededVarMap { vars: vars.clone(), rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) };
    VarBuilder::from_backend(Box::new(backend), dtype, device.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use crate::model::UnicModel;

    fn snapshot(vars: &VarMap) -> Vec<(String, Vec<f32>)> {
        let data = vars.data().lock().unwrap();
        let mut v: Vec<_> = data
            .iter()
            .map(|(k, t)| (k.clone(), t.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            let vm = VarMap::new();
            UnicModel::new(&tiny_config(), seeded_var_builder(&vm, seed, DType::F32, &Device::Cpu)).unwrap();
            snapshot(&vm)
        };
        assert_eq!(build(1), build(1));
        assert_ne!(build(1), build(2));
    }

    #[test]
    fn variables_share_storage_with_the_map() {
        let mut vm = VarMap::new();
        let vb = seeded_var_builder(&vm, 0, DType::F32, &Device::Cpu);
        let t = vb.get_with_hints(3, "w", Init::Randn { mean: 0.0, stdev: 1.0 }).unwrap();
        vm.set_one("w", Tensor::new(&[1f32, 2.0, 3.0], &Device::Cpu).unwrap()).unwrap();
        assert_eq!(t.to_vec1::<f32>().unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
