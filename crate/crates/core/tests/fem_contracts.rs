use candle_core::{DType, Device, IndexOp, Tensor};
use candle_nn::VarMap;
use unic_core::dataset::make_synthetic_scene;
use unic_core::model::{seeded_var_builder, ModelConfig, UnicModel};
use unic_core::training::teacher::ema_update;
use unic_core::training::{LabelMode, Sample, TrainConfig, Trainer};

fn config(margin: usize) -> ModelConfig {
    ModelConfig {
        input_h: 48,
        input_w: 64,
        backbone_channels: vec![8, 8, 16, 16],
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        fem_layers: 2,
        anchors: 4,
        margin: Some(margin),
        pe_temperature: 10000.0,
    }
}

fn model(cfg: &ModelConfig, seed: u64) -> (UnicModel, VarMap) {
    let vars = VarMap::new();
    let m = UnicModel::new(cfg, seeded_var_builder(&vars, seed, DType::F64, &Device::Cpu)).unwrap();
    (m, vars)
}

fn images(cfg: &ModelConfig, b: usize) -> Tensor {
    let n = b * 3 * cfg.input_h * cfg.input_w;
    let v: Vec<f64> = (0..n).map(|i| ((i * 7919) % 255) as f64 / 255.0 - 0.5).collect();
    Tensor::from_vec(v, (b, 3, cfg.input_h, cfg.input_w), &Device::Cpu).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn margin_zero_is_identity() {
    let cfg = config(0);
    let (m, _) = model(&cfg, 1);
    let x = images(&cfg, 2);
    let z = m.encode(&x).unwrap();
    let same = m.extrapolate(&z, 0).unwrap();
    assert_eq!(max_abs_diff(&z.tokens, &same.tokens), 0.0);
    let (_, through) = m.forward_with_tokens(&x).unwrap();
    assert_eq!((through.rows, through.cols, through.margin), (z.rows, z.cols, 0));
    assert_eq!(max_abs_diff(&z.tokens, &through.tokens), 0.0);
    assert!(through.visible.iter().all(|v| *v));
}

#[test]
fn token_bookkeeping() {
    for margin in [1, 2, 3] {
        let cfg = config(margin);
        let (m, _) = model(&cfg, 2);
        let (rows, cols) = cfg.grid();
        let z = m.encode(&images(&cfg, 2)).unwrap();
        let ext = m.extrapolate(&z, margin).unwrap();
        let total = (rows + 2 * margin) * (cols + 2 * margin);
        assert_eq!(ext.tokens.dims(), &[2, total, cfg.d_model]);
        assert_eq!(ext.visible_count(), rows * cols);
        assert_eq!(ext.padded_count(), total - rows * cols);
        assert_eq!(ext.base_shape(), (rows, cols));
        // Visible tokens pass through untouched, in row-major place.
        let mut next = 0;
        for (cell, &v) in ext.visible.iter().enumerate() {
            let (r, c) = (cell / ext.cols, cell % ext.cols);
            let inner = r >= margin && r < rows + margin && c >= margin && c < cols + margin;
            assert_eq!(v, inner);
            if v {
                let a = ext.tokens.i((.., cell, ..)).unwrap();
                let b = z.tokens.i((.., next, ..)).unwrap();
                assert_eq!(max_abs_diff(&a, &b), 0.0);
                next += 1;
            }
        }
        // Padded cell centers lie outside the unit frame.
        for (c, v) in ext.coords.iter().zip(&ext.visible) {
            let inside = (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1]);
            assert_eq!(inside, *v);
        }
    }
}

#[test]
fn visible_perturbation_reaches_every_padded_token() {
    let cfg = config(2);
    let (m, _) = model(&cfg, 3);
    let z = m.encode(&images(&cfg, 1)).unwrap();
    let base = m.extrapolate(&z, 2).unwrap();
    let mut bumped = z.clone();
    let mut delta = vec![0.0f64; z.tokens.elem_count()];
    delta[5 * cfg.d_model..6 * cfg.d_model].iter_mut().for_each(|d| *d = 0.5);
    let delta = Tensor::from_vec(delta, z.tokens.dims(), &Device::Cpu).unwrap();
    bumped.tokens = (&z.tokens + delta).unwrap();
    let moved = m.extrapolate(&bumped, 2).unwrap();
    for (cell, v) in base.visible.iter().enumerate() {
        let d = max_abs_diff(&base.tokens.i((.., cell, ..)).unwrap(), &moved.tokens.i((.., cell, ..)).unwrap());
        if !v {
            assert!(d > 1e-9, "padded cell {cell} unaffected");
        }
    }
}

#[test]
fn teacher_receives_no_gradient() {
    let mut cfg = TrainConfig::default();
    cfg.model = config(1);
    cfg.model.input_h = 48;
    let trainer = Trainer::with_dtype(cfg.clone(), DType::F64).unwrap();
    let samples: Vec<Sample> = (0..2)
        .map(|i| {
            let s = make_synthetic_scene(i).unwrap();
            Sample::new(&cfg.model, &s.scene, &s.image).unwrap()
        })
        .collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    let inputs: Vec<_> = samples.iter().map(|s| s.input(&cfg.model).unwrap()).collect();
    let (loss, parts) = trainer.batch_loss(&batch, &inputs, LabelMode::Quality).unwrap();
    assert!(parts.extra > 0.0, "no extrapolation targets in this batch");
    let grads = loss.backward().unwrap();
    let teacher = trainer.teacher().vars.all_vars();
    assert!(!teacher.is_empty());
    let mut norm = 0.0;
    for v in &teacher {
        if let Some(g) = grads.get(v.as_tensor()) {
            norm += g.sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        }
    }
    assert_eq!(norm, 0.0);
    // The student, in contrast, is trained.
    let student_norm: f64 = trainer
        .vars()
        .all_vars()
        .iter()
        .filter_map(|v| grads.get(v.as_tensor()))
        .map(|g| g.sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap())
        .sum();
    assert!(student_norm > 0.0);
}

#[test]
fn ema_follows_geometric_law_for_constant_student() {
    let cfg = config(1);
    let (_, student) = model(&cfg, 10);
    let (_, teacher) = model(&cfg, 11);
    let snapshot = |vm: &VarMap| -> Vec<(String, Vec<f64>)> {
        let mut v: Vec<_> = vm
            .data()
            .lock()
            .unwrap()
            .iter()
            .map(|(k, t)| (k.clone(), t.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    };
    let (s, t0) = (snapshot(&student), snapshot(&teacher));
    let mu: f64 = 0.97;
    for k in 1..=50 {
        ema_update(&teacher, &student, mu).unwrap();
        if k % 10 == 0 {
            let w = mu.powi(k);
            for ((name, tk), ((_, a), (_, b))) in snapshot(&teacher).iter().zip(t0.iter().zip(&s)) {
                for ((x, a), b) in tk.iter().zip(a).zip(b) {
                    let expected = w * a + (1.0 - w) * b;
                    assert!((x - expected).abs() <= 1e-10, "{name} after {k}: {x} vs {expected}");
                }
            }
        }
    }
}
