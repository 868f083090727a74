use super::*;
use crate::geometry::{BoundingBox, PoseParams, ShapeParams};
use crate::tensor::gradcheck;
use crate::tensor::{Graph, RngStream, Tensor};
use nalgebra::Vector3;

fn toy_config() -> ModelConfig {
    ModelConfig {
        width: 8,
        heads: 2,
        blocks: 2,
        group_dims: vec![9, 3, 3, 4],
        cond_width: 6,
        max_frames: 16,
        mlp_ratio: 4,
        temporal_embedding: true,
        group_embedding: true,
    }
}

fn randomize<T: crate::tensor::Real>(m: &mut SabrDit<T>, seed: u64, scale: f64) {
    let mut rng = RngStream::new(seed);
    for t in m.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = T::of(scale * rng.normal());
        }
    }
}

fn permute_rows(x: &Tensor<f64>, axis0_perm: &[usize]) -> Tensor<f64> {
    let row: usize = x.shape()[1..].iter().product();
    let mut out = Vec::with_capacity(x.len());
    for &p in axis0_perm {
        out.extend_from_slice(&x.data()[p * row..(p + 1) * row]);
    }
    Tensor::new(x.shape(), out).unwrap()
}

#[test]
fn fresh_model_predicts_exact_zero() {
    let mut rng = RngStream::new(1);
    let m: SabrDit<f32> = SabrDit::new(
        ModelConfig::preset("desk", motion_groups(9, 10), 32).unwrap(),
        &mut rng,
    )
    .unwrap();
    for name in m.zero_init_names() {
        let i = m.params().index_of(name).unwrap();
        assert!(
            m.params().tensors()[i].data().iter().all(|v| *v == 0.0),
            "{name}"
        );
    }
    let x: Tensor<f32> = rng.sample_normal(&[5, 98]);
    let c: Tensor<f32> = rng.sample_normal(&[7, 32]);
    for t in [1.0, 500.0, 1000.0] {
        let out = m.predict(&x, t, &c).unwrap();
        assert_eq!(out.shape(), &[5, 98]);
        assert!(out.data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn parameter_count_matches_layout_and_hand_count() {
    let cfg = ModelConfig::preset("desk", motion_groups(9, 10), 32).unwrap();
    let m: SabrDit<f32> = SabrDit::new(cfg.clone(), &mut RngStream::new(0)).unwrap();
    assert_eq!(m.params().scalar_count(), cfg.param_count());
    // embed 6784 + time 8320 + cond norm 64 + 4 × 99712 + final 14690
    assert_eq!(cfg.param_count(), 428_706);
    let c = ModelConfig::preset("desk-small", motion_groups(9, 10), 32).unwrap();
    let m: SabrDit<f32> = SabrDit::new(c.clone(), &mut RngStream::new(0)).unwrap();
    assert_eq!(m.params().scalar_count(), c.param_count());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = toy_config();
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = toy_config();
    c.blocks = 3;
    assert!(c.validate().is_err());
    assert!(ModelConfig::preset("huge", vec![1], 4).is_err());
}

#[test]
fn zero_gates_make_every_block_the_identity() {
    let cfg = toy_config();
    let mut m: SabrDit<f64> = SabrDit::new(cfg, &mut RngStream::new(2)).unwrap();
    randomize(&mut m, 3, 0.5);
    for name in m
        .zero_init_names()
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    {
        if name.starts_with("blocks.") {
            let i = m.params().index_of(&name).unwrap();
            m.params_mut().tensors_mut()[i].data_mut().fill(0.0);
        }
    }
    let mut rng = RngStream::new(4);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let x = g.constant(rng.sample_normal(&[3, 4, 8]));
    let c = g.constant(rng.sample_normal(&[5, 6]));
    let temb = m.time_embedding(&mut g, &p, 17.0).unwrap();
    let cn = m.cond_tokens(&mut g, &p, c).unwrap();
    for i in 0..2 {
        let y = m.block(&mut g, &p, i, x, temb, cn, None).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }
}

fn block_out(m: &SabrDit<f64>, index: usize, x: &Tensor<f64>, c: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let cv = g.constant(c.clone());
    let temb = m.time_embedding(&mut g, &p, 40.0).unwrap();
    let cn = m.cond_tokens(&mut g, &p, cv).unwrap();
    let y = m.block(&mut g, &p, index, xv, temb, cn, None).unwrap();
    g.value(y).clone()
}

#[test]
fn spatial_block_commutes_with_frame_permutation() {
    let mut m: SabrDit<f64> = SabrDit::new(toy_config(), &mut RngStream::new(5)).unwrap();
    randomize(&mut m, 6, 0.4);
    let mut rng = RngStream::new(7);
    let x = rng.sample_normal(&[4, 4, 8]);
    let c = rng.sample_normal(&[5, 6]);
    let perm = [2, 0, 3, 1];
    let a = permute_rows(&block_out(&m, 0, &x, &c), &perm);
    let b = block_out(&m, 0, &permute_rows(&x, &perm), &c);
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn temporal_block_commutes_with_group_permutation() {
    let mut m: SabrDit<f64> = SabrDit::new(toy_config(), &mut RngStream::new(8)).unwrap();
    randomize(&mut m, 9, 0.4);
    let mut rng = RngStream::new(10);
    let x = rng.sample_normal(&[3, 4, 8]);
    let c = rng.sample_normal(&[5, 6]);
    let perm = [3, 1, 0, 2];
    let swap = |t: &Tensor<f64>| {
        let (p, _) = crate::tensor::kernels::permute(t.data(), t.shape(), &[1, 0, 2]);
        Tensor::new(&[4, 3, 8], p).unwrap()
    };
    let unswap = |t: &Tensor<f64>| {
        let (p, _) = crate::tensor::kernels::permute(t.data(), t.shape(), &[1, 0, 2]);
        Tensor::new(&[3, 4, 8], p).unwrap()
    };
    let a = unswap(&permute_rows(&swap(&block_out(&m, 1, &x, &c)), &perm));
    let b = block_out(&m, 1, &unswap(&permute_rows(&swap(&x), &perm)), &c);
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn forward_without_frame_embedding_is_frame_equivariant() {
    let mut cfg = toy_config();
    cfg.temporal_embedding = false;
    let mut m: SabrDit<f64> = SabrDit::new(cfg, &mut RngStream::new(11)).unwrap();
    randomize(&mut m, 12, 0.3);
    let mut rng = RngStream::new(13);
    let x = rng.sample_normal(&[5, 19]);
    let c = rng.sample_normal(&[4, 6]);
    let perm = [4, 2, 0, 1, 3];
    let a = permute_rows(&m.predict(&x, 300.0, &c).unwrap(), &perm);
    let b = m.predict(&permute_rows(&x, &perm), 300.0, &c).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

fn identity_attention(g: &mut Graph<f64>, d: usize, rng: &mut RngStream) -> AttentionVars {
    let eye = Tensor::from_fn(&[d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
    let mut rand_lin = |g: &mut Graph<f64>| LinearVars {
        w: g.constant(rng.sample_normal(&[d, d])),
        b: g.constant(rng.sample_normal(&[d])),
    };
    let q = rand_lin(g);
    let k = rand_lin(g);
    let v = LinearVars {
        w: g.constant(eye.clone()),
        b: g.constant(Tensor::zeros(&[d])),
    };
    let o = LinearVars {
        w: g.constant(eye),
        b: g.constant(Tensor::zeros(&[d])),
    };
    AttentionVars { q, k, v, o }
}

#[test]
fn single_key_attention_returns_that_value() {
    let mut rng = RngStream::new(14);
    let mut g = Graph::new();
    let p = identity_attention(&mut g, 6, &mut rng);
    let xq = g.constant(rng.sample_normal(&[1, 7, 6]));
    let key: Tensor<f64> = rng.sample_normal(&[1, 1, 6]);
    let xkv = g.constant(key.clone());
    let y = attention(&mut g, xq, xkv, &p, 2, None).unwrap();
    for row in g.value(y).data().chunks(6) {
        for (a, b) in row.iter().zip(key.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    let single: Tensor<f64> = rng.sample_normal(&[3, 1, 6]);
    let x = g.constant(single.clone());
    let y = attention(&mut g, x, x, &p, 3, None).unwrap();
    assert!(g.value(y).max_abs_diff(&single) < 1e-12);
}

#[test]
fn attention_rows_sum_to_one() {
    let mut m: SabrDit<f32> = SabrDit::new(toy_config(), &mut RngStream::new(15)).unwrap();
    randomize(&mut m, 16, 1.0);
    let mut rng = RngStream::new(17);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let x = g.constant(rng.sample_normal(&[6, 19]));
    let c = g.constant(rng.sample_normal(&[9, 6]));
    let mut trace = AttentionTrace::default();
    m.forward(&mut g, &p, x, 800.0, c, Some(&mut trace))
        .unwrap();
    assert_eq!(trace.weights.len(), 4);
    for w in trace.weights {
        let t = g.value(w);
        let n = *t.shape().last().unwrap();
        for row in t.data().chunks(n) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn capacity_and_shape_errors() {
    let m: SabrDit<f32> = SabrDit::new(toy_config(), &mut RngStream::new(18)).unwrap();
    let c = Tensor::zeros(&[2, 6]);
    assert!(matches!(
        m.predict(&Tensor::zeros(&[17, 19]), 1.0, &c),
        Err(crate::SabrError::Capacity(_))
    ));
    assert!(m.predict(&Tensor::zeros(&[3, 18]), 1.0, &c).is_err());
    assert!(m
        .predict(&Tensor::zeros(&[3, 19]), 1.0, &Tensor::zeros(&[2, 5]))
        .is_err());
}

#[test]
fn embedding_shapes_and_identity_round_trip() {
    let cfg = ModelConfig {
        group_dims: vec![8, 8, 8, 8],
        temporal_embedding: false,
        group_embedding: false,
        ..toy_config()
    };
    let mut m: SabrDit<f64> = SabrDit::new(cfg, &mut RngStream::new(19)).unwrap();
    let names: Vec<String> = m.params().names().to_vec();
    for (i, n) in names.iter().enumerate() {
        let t = &mut m.params_mut().tensors_mut()[i];
        if (n.starts_with("embed.") || n.starts_with("final.head.")) && n.ends_with(".w") {
            for (k, v) in t.data_mut().iter_mut().enumerate() {
                *v = if k / 8 == k % 8 { 1.0 } else { 0.0 };
            }
        }
    }
    let mut rng = RngStream::new(20);
    let x: Tensor<f64> = rng.sample_normal(&[3, 32]);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let tok = m.embed_motion(&mut g, &p, xv).unwrap();
    assert_eq!(g.shape(tok), &[3, 4, 8]);
    let mut outs = Vec::new();
    for gi in 0..4 {
        let s = g.slice(tok, 1, gi, 1).unwrap();
        let s = g.reshape(s, &[3, 8]).unwrap();
        let w = p.vars[m.params().index_of(&format!("final.head.{gi}.w")).unwrap()];
        outs.push(g.linear(s, w, None).unwrap());
    }
    let back = g.concat(&outs, 1).unwrap();
    assert!(g.value(back).max_abs_diff(&x) < 1e-6);

    let one = g.constant(Tensor::zeros(&[1, 32]));
    let t1 = m.embed_motion(&mut g, &p, one).unwrap();
    assert_eq!(g.shape(t1), &[1, 4, 8]);
}

#[test]
fn zero_input_with_zero_embedders_leaves_positional_terms() {
    let mut m: SabrDit<f64> = SabrDit::new(toy_config(), &mut RngStream::new(21)).unwrap();
    for (i, n) in m.params().names().to_vec().iter().enumerate() {
        if n.starts_with("embed.") {
            m.params_mut().tensors_mut()[i].data_mut().fill(0.0);
        }
    }
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(&[2, 19]));
    let tok = m.embed_motion(&mut g, &p, x).unwrap();
    let ge = m.params().tensors()[m.params().index_of("group_emb").unwrap()].clone();
    let v = g.value(tok);
    for f in 0..2 {
        let pe = crate::diffusion::timestep_embedding(f as f64, 8).unwrap();
        for gi in 0..4 {
            for k in 0..8 {
                let want = ge.data()[gi * 8 + k] + pe[k];
                assert!((v.get(&[f, gi, k]).unwrap() - want).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn toy_model_loss_matches_finite_differences() {
    let mut m: SabrDit<f64> = SabrDit::new(toy_config(), &mut RngStream::new(22)).unwrap();
    randomize(&mut m, 23, 0.3);
    let mut rng = RngStream::new(24);
    let x: Tensor<f64> = rng.sample_normal(&[3, 19]);
    let target: Tensor<f64> = rng.sample_normal(&[3, 19]);
    let c: Tensor<f64> = rng.sample_normal(&[4, 6]);
    let inputs: Vec<Tensor<f64>> = m.params().tensors().to_vec();
    let rep = gradcheck::check(
        &inputs,
        |g, vars| {
            let p = Bound {
                vars: vars.to_vec(),
            };
            let xv = g.constant(x.clone());
            let cv = g.constant(c.clone());
            let tv = g.constant(target.clone());
            let y = m.forward(g, &p, xv, 250.0, cv, None)?;
            g.mse(y, tv)
        },
        16,
        &mut rng,
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

#[test]
fn motion_codec_round_trip_and_repair() {
    let mut rng = RngStream::new(25);
    let frames: Vec<MotionFrame> = (0..4)
        .map(|i| {
            let mut pose = PoseParams::identity(9);
            for r in &mut pose.rotations {
                *r = crate::geometry::rot_z(rng.uniform_range(-1.0, 1.0));
            }
            MotionFrame {
                pose,
                shape: ShapeParams((0..10).map(|_| rng.uniform_range(-1.0, 1.0)).collect()),
                cam: Vector3::new(0.1 * i as f64, -0.2, 1.2),
                bbox: BoundingBox {
                    x: 0.2,
                    y: 0.1 + 0.01 * i as f64,
                    w: 0.4,
                    h: 0.5,
                },
            }
        })
        .collect();
    let raw = encode_motion(&frames).unwrap();
    let stats = NormStats::fit([&raw]).unwrap();
    let z = stats.normalize(&raw).unwrap();
    let back = decode_motion(&z, &stats, 9, 10).unwrap();
    assert!(back.flagged.is_empty());
    let again = encode_motion(&back.frames).unwrap();
    assert!(again.max_abs_diff(&raw) < 1e-5);

    let zero = decode_motion(&Tensor::zeros(&[1, 98]), &stats, 9, 10).unwrap();
    for r in &zero.frames[0].pose.rotations {
        assert!(crate::geometry::is_rotation(r, 1e-10));
    }
    let mean_shape = &stats.mean[81..91];
    assert!(zero.frames[0]
        .shape
        .0
        .iter()
        .zip(mean_shape)
        .all(|(a, b)| (a - b).abs() < 1e-12));

    let mut raw2 = raw.clone();
    raw2.data_mut()[94] = -0.2;
    let d = decode_motion(&stats.normalize(&raw2).unwrap(), &stats, 9, 10).unwrap();
    assert_eq!(d.frames[0].bbox.x, 0.0);

    let mut degenerate = raw.clone();
    degenerate.data_mut()[..9].fill(0.0);
    let d = decode_motion(&stats.normalize(&degenerate).unwrap(), &stats, 9, 10).unwrap();
    assert_eq!(d.flagged, vec![0]);
}
