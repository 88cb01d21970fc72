use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{PointCloud, Source};
use crate::tensor::gradcheck::check_model;

fn store_with<T>(seed: u64, build: impl FnOnce(&mut Init<'_>) -> Result<T>) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = build(&mut Init::new(&mut store, &mut rng)).unwrap();
    (store, block)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(-0.5..0.5)))
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum so that every output entry has a distinct sensitivity.
fn reduce(y: Var<'_>) -> Result<Var<'_>> {
    let w = y.tape().constant(
        Tensor::new(y.shape(), (0..y.value().len()).map(|i| 0.2 + 0.13 * (i % 5) as f64).collect()).unwrap(),
    );
    y.mul(w)?.sum()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
    }
}

#[test]
fn linear_matches_hand_computation() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let b = store.add("b", Tensor::new(vec![2], vec![0.5, -0.5]).unwrap()).unwrap();
    let lin = Linear {
        w,
        b: Some(b),
        fan_in: 2,
        fan_out: 2,
    };
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let y = lin.forward(&ctx, x).unwrap();
    assert_eq!(y.value().data(), &[4.5, 5.5]);
}

#[test]
fn identity_single_layer_mlp_keeps_features() {
    let (mut store, mlp) = store_with(0, |i| Mlp::new(i, "m", &[3, 3], Unary::Relu, false));
    *store.value_mut(mlp.layers[0].w) = Tensor::eye(3);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let x = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, -1.0, 2.0, 0.0]).unwrap();
    let y = mlp.forward(&ctx, tape.constant(x.clone())).unwrap();
    assert_eq!(y.value().data(), x.data());
}

#[test]
fn frozen_context_yields_no_parameter_gradients() {
    let (store, lin) = store_with(1, |i| Linear::new(i, "l", 2, 2, true));
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
    let y = lin.forward(&Ctx::frozen(&tape, &store), x).unwrap().sum().unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.params().count(), 0);
    assert!(g.wrt(x).is_some());
}

#[test]
fn attention_onto_single_guide_returns_its_value_projection() {
    let (store, att) = store_with(2, |i| CrossAttention::new(i, "a", 4, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random_tensor(&mut rng, 5, 4);
    let g = random_tensor(&mut rng, 1, 4);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let gv = tape.constant(g);
    let y = att.forward(&ctx, tape.constant(q), gv).unwrap();
    let expect = att.out.forward(&ctx, att.v.forward(&ctx, gv).unwrap()).unwrap();
    for r in 0..5 {
        assert_close(y.value().row(r), expect.value().row(0), 1e-12);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let (store, att) = store_with(4, |i| CrossAttention::new(i, "a", 6, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let (_, ws) = att
        .forward_with_weights(
            &ctx,
            tape.constant(random_tensor(&mut rng, 4, 6)),
            tape.constant(random_tensor(&mut rng, 7, 6)),
        )
        .unwrap();
    assert_eq!(ws.len(), 3);
    for w in ws {
        let w = w.value();
        for r in 0..4 {
            let s: f64 = w.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(w.row(r).iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        CrossAttention::new(&mut Init::new(&mut store, &mut rng), "a", 5, 2),
        Err(Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_is_guide_invariant_and_query_equivariant(seed in 0u64..1000, nq in 1usize..6, ng in 1usize..8) {
        let (store, att) = store_with(seed, |i| CrossAttention::new(i, "a", 4, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let q = random_tensor(&mut rng, nq, 4);
        let g = random_tensor(&mut rng, ng, 4);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let qv = tape.constant(q);
        let gv = tape.constant(g);
        let base = att.forward(&ctx, qv, gv).unwrap().value();

        let gperm: Vec<usize> = (0..ng).rev().collect();
        let shuffled = att.forward(&ctx, qv, gv.gather_rows(gperm).unwrap()).unwrap().value();
        for (a, b) in base.data().iter().zip(shuffled.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }

        let qperm: Vec<usize> = (0..nq).map(|i| (i + 1) % nq).collect();
        let permuted = att.forward(&ctx, qv.gather_rows(qperm.clone()).unwrap(), gv).unwrap().value();
        for (r, &src) in qperm.iter().enumerate() {
            for (a, b) in permuted.row(r).iter().zip(base.row(src)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&mut rng, 5, 4);
    let g = random_tensor(&mut rng, 3, 4);

    let (mut store, att) = store_with(12, |i| CrossAttention::new(i, "a", 4, 2));
    let r = check_model(&mut store, &[x.clone(), g.clone()], 1e-6, 1e-3, |tape, store, v| {
        reduce(att.forward(&Ctx::new(tape, store), v[0], v[1])?)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "attention {r:?}");

    let (mut store, sa) = store_with(13, |i| SelfAttentionBlock::new(i, "s", 4, 2));
    let r = check_model(&mut store, &[x.clone()], 1e-6, 1e-3, |tape, store, v| {
        reduce(sa.forward(&Ctx::new(tape, store), v[0])?)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "self-attention {r:?}");

    let (mut store, ssm) = store_with(14, |i| SsmBlock::new(i, "m", 4, 3));
    let r = check_model(&mut store, &[x.clone()], 1e-6, 1e-3, |tape, store, v| {
        reduce(ssm.forward(&Ctx::new(tape, store), v[0])?)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "ssm {r:?}");

    let (mut store, mlp) = store_with(15, |i| Mlp::new(i, "p", &[4, 6, 2], Unary::Gelu, false));
    let r = check_model(&mut store, &[x], 1e-6, 1e-3, |tape, store, v| {
        reduce(mlp.forward(&Ctx::new(tape, store), v[0])?)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "mlp {r:?}");
}

/// Compares two points along the Z-order curve without building codes:
/// the axis whose quantized coordinates differ in the highest bit decides,
/// x before y before z within a bit level.
fn z_less(p: Point, q: Point) -> std::cmp::Ordering {
    let quant = |c: f64| ((c + 0.5) * 1024.0).floor().clamp(0.0, 1023.0) as u32;
    let (a, b) = (p.map(quant), q.map(quant));
    let mut best = 0;
    let mut best_x = 0u32;
    for k in 0..3 {
        let x = a[k] ^ b[k];
        // Strictly greater msb wins; equal msb keeps the earlier axis.
        if best_x < x && (best_x ^ x) > best_x {
            best = k;
            best_x = x;
        }
    }
    a[best].cmp(&b[best])
}

#[test]
fn morton_code_corners_and_octants() {
    assert_eq!(morton_code([-0.5, -0.5, -0.5]), 0);
    assert_eq!(morton_code([0.5, 0.5, 0.5]), (1 << 30) - 1);
    assert_eq!(morton_code([0.0, -0.5, -0.5]), 1 << 29);
    assert_eq!(morton_code([-0.5, 0.0, -0.5]), 1 << 28);
    assert_eq!(morton_code([-0.5, -0.5, 0.0]), 1 << 27);
    assert!(morton_code([-0.4, -0.4, -0.4]) < morton_code([0.4, 0.4, 0.4]));
}

#[test]
fn morton_order_matches_bitwise_comparison_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pts = random_points(&mut rng, 300);
    let cloud = PointCloud::new_normalized(pts.clone(), Source::Other).unwrap();
    let order = serialize_points(&cloud, SerializationOrder::Morton).unwrap();
    let mut oracle: Vec<usize> = (0..pts.len()).collect();
    oracle.sort_by(|&i, &j| z_less(pts[i], pts[j]).then(i.cmp(&j)));
    assert_eq!(order, oracle);
}

#[test]
fn serialization_ties_and_contracts() {
    let pts = vec![[0.1, 0.1, 0.1], [-0.2, 0.0, 0.0], [0.1, 0.1, 0.1]];
    let cloud = PointCloud::new_normalized(pts.clone(), Source::Other).unwrap();
    assert_eq!(serialize_points(&cloud, SerializationOrder::Morton).unwrap(), vec![1, 0, 2]);
    assert_eq!(serialize_points(&cloud, SerializationOrder::Axis).unwrap(), vec![1, 0, 2]);
    let raw = PointCloud::new(vec![[3.0, 0.0, 0.0], [0.0, 0.0, 0.0]], Source::Other).unwrap();
    assert!(matches!(
        serialize_points(&raw, SerializationOrder::Morton),
        Err(Error::Contract(_))
    ));
    assert_eq!(
        serialization_order(&[[3.0, 0.0, 0.0], [0.0, 0.0, 0.0]], SerializationOrder::Morton).unwrap(),
        vec![1, 0]
    );
}

#[test]
fn interleaving_alternates_then_appends() {
    let base = vec![[-0.4, 0.0, 0.0], [0.1, 0.0, 0.0], [0.4, 0.0, 0.0]];
    let guide = vec![[0.3, 0.0, 0.0]];
    let seq = interleave_order(&base, &guide, SerializationOrder::Axis).unwrap();
    assert_eq!(seq, vec![0, 3, 1, 2]);

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let base = random_points(&mut rng, 6);
    let guide = random_points(&mut rng, 6);
    let seq = interleave_order(&base, &guide, SerializationOrder::Morton).unwrap();
    assert_eq!(seq.len(), 12);
    for (slot, &i) in seq.iter().enumerate() {
        assert_eq!(i < 6, slot % 2 == 0, "slot {slot}");
    }
}

fn feature_set<'t>(tape: &'t Tape, rng: &mut ChaCha8Rng, n: usize, dim: usize) -> FeatureSet<'t> {
    FeatureSet::new(tape.constant(random_tensor(rng, n, dim)), random_points(rng, n)).unwrap()
}

#[test]
fn every_fusion_kind_produces_one_row_per_base_point() {
    for kind in [FusionKind::Ca, FusionKind::MFusion, FusionKind::Mlp] {
        let (store, fusion) = store_with(30, |i| Fusion::new(i, "f", kind, 4, 2, 3, SerializationOrder::Morton));
        assert_eq!(fusion.kind(), kind);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let base = feature_set(&tape, &mut rng, 7, 4);
        let kp = feature_set(&tape, &mut rng, 3, 4);
        let sym = feature_set(&tape, &mut rng, 5, 4);
        let y = fusion.forward(&ctx, &base, &kp, &sym).unwrap();
        assert_eq!(y.shape(), vec![7, 4], "{kind}");
        assert!(y.value().all_finite());
        let empty = FeatureSet::new(tape.constant(Tensor::zeros(vec![0, 4])), vec![]);
        if let Ok(empty) = empty {
            assert!(fusion.forward(&ctx, &base, &empty, &sym).is_err());
        }
    }
}

#[test]
fn attention_fusion_with_zero_guidance_is_psi_of_zeros() {
    let (store, fusion) = store_with(32, |i| Fusion::new(i, "f", FusionKind::Ca, 4, 2, 3, SerializationOrder::Morton));
    let Fusion::Ca { psi, .. } = &fusion else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let base = feature_set(&tape, &mut rng, 4, 4);
    let zero = FeatureSet::new(tape.constant(Tensor::zeros(vec![3, 4])), random_points(&mut rng, 3)).unwrap();
    let y = fusion.forward(&ctx, &base, &zero, &zero).unwrap();
    let expect = psi.forward(&ctx, tape.constant(Tensor::zeros(vec![4, 8]))).unwrap();
    assert_close(y.value().data(), expect.value().data(), 1e-12);
}

#[test]
fn fusion_gradients_match_finite_differences() {
    for kind in [FusionKind::Ca, FusionKind::MFusion, FusionKind::Mlp] {
        let (mut store, fusion) = store_with(40, |i| Fusion::new(i, "f", kind, 4, 2, 2, SerializationOrder::Morton));
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let inputs = [random_tensor(&mut rng, 4, 4), random_tensor(&mut rng, 3, 4), random_tensor(&mut rng, 2, 4)];
        let coords = [random_points(&mut rng, 4), random_points(&mut rng, 3), random_points(&mut rng, 2)];
        let r = check_model(&mut store, &inputs, 1e-6, 1e-3, |tape, store, v| {
            let sets: Vec<FeatureSet<'_>> = v
                .iter()
                .zip(&coords)
                .map(|(&f, c)| FeatureSet::new(f, c.clone()))
                .collect::<Result<_>>()?;
            reduce(fusion.forward(&Ctx::new(tape, store), &sets[0], &sets[1], &sets[2])?)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{kind}: {r:?}");
    }
}

#[test]
fn zero_offset_head_replicates_parents() {
    let (mut store, up) = store_with(50, |i| MambaForward::new(i, "u", 4, 3, 3, 0.1, SerializationOrder::Morton));
    store.value_mut(up.offset.w).data_mut().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let parents = random_points(&mut rng, 5);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let out = up
        .forward(&ctx, ctx.points(&parents), tape.constant(random_tensor(&mut rng, 5, 4)))
        .unwrap();
    let children = out.coords.value().to_points();
    assert_eq!(children.len(), 15);
    for (r, c) in children.iter().enumerate() {
        assert_eq!(*c, parents[r / 3]);
    }
    assert_eq!(out.features.shape(), vec![5, 4]);
}

#[test]
fn upsampling_gradients_match_finite_differences() {
    let (mut store, up) = store_with(52, |i| MambaForward::new(i, "u", 4, 2, 2, 0.2, SerializationOrder::Morton));
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let inputs = [
        Tensor::from_points(&random_points(&mut rng, 3)),
        random_tensor(&mut rng, 3, 4),
    ];
    let r = check_model(&mut store, &inputs, 1e-6, 1e-3, |tape, store, v| {
        reduce(up.forward(&Ctx::new(tape, store), v[0], v[1])?.coords)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn children_stay_within_offset_radius(seed in 0u64..1000, gain in 1.0f64..200.0, radius in 0.01f64..0.5) {
        let (mut store, up) = store_with(seed, |i| MambaForward::new(i, "u", 4, 2, 4, radius, SerializationOrder::Morton));
        for v in store.value_mut(up.offset.w).data_mut() {
            *v *= gain;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parents = random_points(&mut rng, 6);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let feats = tape.constant(random_tensor(&mut rng, 6, 4));
        let out = up.forward(&ctx, ctx.points(&parents), feats).unwrap();
        for (r, c) in out.coords.value().to_points().iter().enumerate() {
            let p = parents[r / 4];
            let d = ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2)).sqrt();
            prop_assert!(d <= radius * (1.0 + 1e-12), "displacement {d} > {radius}");
        }
    }
}

#[test]
fn extractor_features_sit_on_farthest_point_anchors() {
    let (store, ex) = store_with(60, |i| Extractor::new(i, "e", 8, 2, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let pts = random_points(&mut rng, 40);
    let tape = Tape::new();
    let fs = ex.forward(&Ctx::new(&tape, &store), &pts, 10).unwrap();
    assert_eq!(fs.features.shape(), vec![10, 8]);
    let anchors = crate::geometry::farthest_point_indices(&pts, 10, 0).unwrap();
    let expect: Vec<Point> = anchors.iter().map(|&i| pts[i]).collect();
    assert_eq!(fs.coords, expect);

    let few = &pts[..3];
    let g = ex.group(few, 2).unwrap();
    assert_eq!(g.k, 3);
    assert!(matches!(ex.group(few, 4), Err(Error::Cardinality { .. })));
}

#[test]
fn extractor_gradients_match_finite_differences() {
    let (mut store, ex) = store_with(62, |i| Extractor::new(i, "e", 4, 2, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let pts = random_points(&mut rng, 12);
    let g = ex.group(&pts, 4).unwrap();
    // The anchor's own offset is exactly zero; with zero biases its ReLU
    // inputs would sit on the kink where finite differences are meaningless.
    let biases: Vec<ParamId> = store.iter().filter(|(_, n, _)| n.ends_with(".b")).map(|(id, _, _)| id).collect();
    for id in biases {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(0.05..0.3);
        }
    }
    let r = check_model(&mut store, &[], 1e-6, 1e-3, |tape, store, _| {
        reduce(ex.forward_grouped(&Ctx::new(tape, store), &pts, &g)?.features)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}
