//! Worked values checked against oracles computed here, independently of the
//! library's own kernels.

use mgic::autograd::{finite_difference_check, Tape};
use mgic::cost::{closed_form_bound, closed_form_mgic_params, cost_report, count_params, hierarchy_ratio};
use mgic::kernels::{PoolKind, PoolSpec};
use mgic::mgic::{
    build_mgic_block, effective_group_size, init_transfer, num_levels, BlockTemplate, ChannelShortcut, MgicConfig,
};
use mgic::nn::{infer, BatchNorm2d, Conv2d, ConvSpec, Ctx, Linear, Mode, Module};
use mgic::params::ParamStore;
use mgic::train::{
    lr_at, sgd_update, surface, synth_feature_maps, synth_feature_maps_with_rank, train_loop, Dataset, IdxArray,
    Schedule, SgdConfig, Targets,
};
use mgic::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::{add, jitter_norms, naive_bn, naive_conv, simple_conv_oracle, sub};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- tensors and autograd -------------------------------------------------

#[test]
fn matmul_hand_product() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::from_vec([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let b = t.leaf(Tensor::from_vec([2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap(), false);
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);

    let mut t = Tape::<f64>::new();
    let eye = t.leaf(Tensor::from_vec([3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), false);
    let bv = Tensor::randn([3, 4], &mut rng(0)).unwrap();
    let b = t.leaf(bv.clone(), false);
    let c = t.matmul(eye, b).unwrap();
    assert!(t.value(c).bit_eq(&bv));
}

#[test]
fn matmul_gradient_matches_differences() {
    let b = Tensor::<f64>::randn([3, 2], &mut rng(1)).unwrap();
    let a = Tensor::<f64>::randn([4, 3], &mut rng(2)).unwrap();
    let check = finite_difference_check(
        |t, x| {
            let bv = t.leaf(b.clone(), false);
            let y = t.matmul(x, bv)?;
            t.sum(y)
        },
        &a,
        1e-6,
    )
    .unwrap();
    assert!(check.max_rel_err < 1e-6, "{}", check.max_rel_err);
}

#[test]
fn square_sum_gradient_is_twice_x() {
    let xv = Tensor::<f64>::randn([5], &mut rng(3)).unwrap();
    let mut t = Tape::new();
    let x = t.leaf(xv.clone(), true);
    let sq = t.mul(x, x).unwrap();
    let loss = t.sum(sq).unwrap();
    let g = t.backward(loss).unwrap();
    let grad = g.wrt(x).unwrap();
    for (gv, xv) in grad.data().iter().zip(xv.data()) {
        assert!((gv - 2.0 * xv).abs() < 1e-12);
    }
}

#[test]
fn disconnected_leaf_has_zero_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_vec([2], vec![1.0, 2.0]).unwrap(), true);
    let p = t.leaf(Tensor::from_vec([2], vec![3.0, 4.0]).unwrap(), true);
    let loss = t.sum(x).unwrap();
    let g = t.backward(loss).unwrap();
    let zero = g.wrt(p).map_or(true, |gp| gp.data().iter().all(|&v| v == 0.0));
    assert!(zero);
}

#[test]
fn relu_matmul_chain_matches_differences() {
    let w = Tensor::<f64>::randn([3, 3], &mut rng(4)).unwrap();
    let x = Tensor::<f64>::randn([4, 3], &mut rng(5)).unwrap();
    let check = finite_difference_check(
        |t, x| {
            let wv = t.leaf(w.clone(), false);
            let h = t.matmul(x, wv)?;
            let h = t.relu(h)?;
            t.sum(h)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(check.relu_margin > 1e-4, "point too close to a kink");
    assert!(check.max_rel_err < 1e-4, "{}", check.max_rel_err);
}

#[test]
fn checker_on_smooth_and_linear_maps() {
    let x = Tensor::<f64>::randn([6], &mut rng(6)).unwrap();
    let quad = finite_difference_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            t.sum(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(quad.max_rel_err < 1e-7);
    for eps in [1e-2, 1e-4, 1e-7] {
        let lin = finite_difference_check(|t, x| t.sum(x), &x, eps).unwrap();
        assert!(lin.max_rel_err < 1e-6, "eps {eps}: {}", lin.max_rel_err);
    }
}

// ---- layers ----------------------------------------------------------------

#[test]
fn identity_pointwise_conv() {
    let mut store = ParamStore::<f64>::new();
    let conv =
        Conv2d::with_weight(&mut store, "c", ConvSpec::pointwise(4, 4, 1), mgic::params::ParamKind::Weight, |s| {
            let mut w = Tensor::zeros(s)?;
            for i in 0..4 {
                w.data_mut()[i * 4 + i] = 1.0;
            }
            Ok(w)
        })
        .unwrap();
    let x = Tensor::randn([2, 4, 3, 3], &mut rng(7)).unwrap();
    assert!(infer(&conv, &store, &x).unwrap().bit_eq(&x));
}

#[test]
fn depthwise_all_ones_sums_nine() {
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::with_weight(&mut store, "c", ConvSpec::same(3, 3, 3, 3), mgic::params::ParamKind::Weight, |s| {
        Tensor::full(s, 1.0)
    })
    .unwrap();
    let y = infer(&conv, &store, &Tensor::full([1, 3, 5, 5], 1.0).unwrap()).unwrap();
    for c in 0..3 {
        for i in 1..4 {
            for j in 1..4 {
                assert_eq!(y.data()[(c * 5 + i) * 5 + j], 9.0);
            }
        }
    }
    assert_eq!(y.data()[0], 4.0);
}

#[test]
fn grouped_conv_matches_nested_loops() {
    let mut r = rng(8);
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::new(&mut store, "c", ConvSpec::same(4, 6, 3, 2), &mut r).unwrap();
    let x = Tensor::randn([2, 4, 5, 5], &mut r).unwrap();
    let y = infer(&conv, &store, &x).unwrap();
    let oracle = naive_conv(&x, store.value(conv.weight), 1, 1, 2);
    assert!(y.max_abs_diff(&oracle) < 1e-6);
}

#[test]
fn conv_parameter_counts() {
    assert_eq!(ConvSpec::same(64, 64, 3, 8).param_count(), 4608);
    assert_eq!(ConvSpec::same(64, 64, 3, 64).param_count(), 576);
    assert_eq!(ConvSpec::pointwise(64, 64, 1).param_count(), 4096);
}

#[test]
fn batchnorm_vectors() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
    let train = |x: Tensor<f64>| {
        let mut cx = Ctx::new(&store, Mode::Train);
        let v = cx.input(x);
        let y = bn.forward(&mut cx, v).unwrap();
        cx.value(y).clone()
    };
    assert!(train(Tensor::zeros([3, 2, 2, 2]).unwrap()).data().iter().all(|&v| v == 0.0));

    let y = train(Tensor::randn([4, 2, 3, 3], &mut rng(9)).unwrap());
    for c in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|n| y.data()[(n * 2 + c) * 9..(n * 2 + c + 1) * 9].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-4);
    }

    let mut store1 = ParamStore::<f64>::new();
    let bn1 = BatchNorm2d::new(&mut store1, "bn", 1).unwrap();
    let mut cx = Ctx::new(&store1, Mode::Train);
    let v = cx.input(Tensor::from_vec([2, 1, 1, 1], vec![1.0, 3.0]).unwrap());
    let y = bn1.forward(&mut cx, v).unwrap();
    // biased variance 1, so the values are ±1/√(1+1e-5)
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((cx.value(y).data()[0] + expect).abs() < 1e-12);
    assert!((cx.value(y).data()[1] - expect).abs() < 1e-12);
    assert!((expect - 0.99999).abs() < 1e-5);
}

#[test]
fn relu_pool_and_mse_vectors() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_vec([2], vec![-2.0, 3.0]).unwrap(), false);
    let y = t.relu(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.0, 3.0]);

    let c = t.leaf(Tensor::full([1, 2, 4, 4], 2.5).unwrap(), false);
    let p = t.pool(c, PoolSpec { kind: PoolKind::Avg, window: 2, stride: 2 }).unwrap();
    assert!(t.value(p).data().iter().all(|&v| v == 2.5));

    let a = t.leaf(Tensor::from_vec([2], vec![1.0, 2.0]).unwrap(), false);
    let b = t.leaf(Tensor::from_vec([2], vec![1.0, 2.0]).unwrap(), false);
    let m = t.mse(a, b).unwrap();
    assert_eq!(t.value(m).item(), 0.0);
}

// ---- hierarchy -------------------------------------------------------------

#[test]
fn level_and_group_vectors() {
    assert_eq!(num_levels(16, 4).unwrap(), 2);
    assert_eq!(num_levels(64, 64).unwrap(), 0);
    assert_eq!(num_levels(48, 8).unwrap(), 2);
    assert_eq!(effective_group_size(64, &[120, 40]), 40);
    assert_eq!(effective_group_size(8, &[64]), 8);
    assert_eq!(effective_group_size(16, &[24]), 12);
}

#[test]
fn transfers_are_row_stochastic_and_keep_constants() {
    let mut r = rng(10);
    let mut store = ParamStore::<f64>::new();
    let t = init_transfer(&mut store, "t", 0, 16, 8, &mut r).unwrap();
    for conv in [&t.restrict, &t.prolong] {
        let w = store.value(conv.weight);
        let row = w.shape()[1];
        for chunk in w.data().chunks(row) {
            assert!(chunk.iter().all(|&v| v > 0.0));
            assert!((chunk.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
    let k = Tensor::full([2, 16, 3, 3], 1.7).unwrap();
    let down = infer(&t.restrict, &store, &k).unwrap();
    assert!(down.data().iter().all(|&v| (v - 1.7).abs() < 1e-12));
    let up = infer(&t.prolong, &store, &down).unwrap();
    assert!(up.data().iter().all(|&v| (v - 1.7).abs() < 1e-12));
}

#[test]
fn sixteen_channel_block_layout() {
    let mut store = ParamStore::<f64>::new();
    let b =
        build_mgic_block(&mut store, "b", 16, &MgicConfig::new(4, 4, BlockTemplate::SimpleConv { d: 3 }), &mut rng(11))
            .unwrap();
    assert_eq!(b.levels.len(), 2);
    assert_eq!(b.levels.iter().map(|l| l.width).collect::<Vec<_>>(), vec![16, 8]);
    assert_eq!(b.coarse_width, 4);
    let coarse = b.coarse.convs()[0];
    assert_eq!(coarse.spec.groups, 1);
}

#[test]
fn block_weight_total_by_enumeration() {
    let mut store = ParamStore::<f32>::new();
    build_mgic_block(&mut store, "b", 64, &MgicConfig::new(8, 8, BlockTemplate::SimpleConv { d: 3 }), &mut rng(12))
        .unwrap();
    let mut total = 0;
    for p in store.params() {
        if p.kind.is_conv_weight() {
            total += p.value.numel();
        }
    }
    assert_eq!(total, 9536);
}

#[test]
fn dense_template_matches_transcription() {
    let mut r = rng(13);
    let mut store = ParamStore::<f64>::new();
    let inst = BlockTemplate::SimpleConv { d: 3 }.instantiate(&mut store, "t", 6, 6, &mut r).unwrap();
    jitter_norms(&mut store, &mut r);
    let x = Tensor::randn([2, 6, 4, 4], &mut r).unwrap();
    let y = infer(&inst, &store, &x).unwrap();
    assert!(y.max_abs_diff(&simple_conv_oracle(&inst, &store, &x)) < 1e-6);
}

#[test]
fn half_grouped_template_is_block_diagonal() {
    let mut r = rng(14);
    let mut store = ParamStore::<f64>::new();
    let inst = BlockTemplate::SimpleConv { d: 3 }.instantiate(&mut store, "t", 8, 4, &mut r).unwrap();
    let x = Tensor::randn([1, 8, 3, 3], &mut r).unwrap();
    let base = sub(&infer(&inst, &store, &x).unwrap(), &x);
    for ci in 0..8 {
        let mut xp = x.clone();
        for v in &mut xp.data_mut()[ci * 9..(ci + 1) * 9] {
            *v += 0.5;
        }
        let diff = sub(&sub(&infer(&inst, &store, &xp).unwrap(), &xp), &base);
        for co in 0..8 {
            let moved = diff.data()[co * 9..(co + 1) * 9].iter().any(|v| v.abs() > 1e-12);
            assert_eq!(moved, co / 4 == ci / 4, "input {ci} → output {co}");
        }
    }
}

#[test]
fn two_level_block_matches_transcription() {
    let mut r = rng(15);
    for _ in 0..3 {
        let mut store = ParamStore::<f64>::new();
        let b =
            build_mgic_block(&mut store, "b", 8, &MgicConfig::new(4, 4, BlockTemplate::SimpleConv { d: 3 }), &mut r)
                .unwrap();
        assert_eq!(b.num_levels(), 1);
        jitter_norms(&mut store, &mut r);
        let x = Tensor::randn([2, 8, 3, 3], &mut r).unwrap();
        let l = &b.levels[0];
        let g = l.group_size;
        let xc = naive_conv(&x, store.value(l.transfer.restrict.weight), 1, 0, 8 / g);
        let xc_new = simple_conv_oracle(&b.coarse, &store, &xc);
        let up = naive_conv(&sub(&xc_new, &xc), store.value(l.transfer.prolong.weight), 1, 0, 8 / g);
        let corrected = add(&x, &naive_bn(&up, &l.correction, &store));
        let oracle = simple_conv_oracle(&l.relax, &store, &corrected);
        assert!(infer(&b, &store, &x).unwrap().max_abs_diff(&oracle) < 1e-6);
    }
}

#[test]
fn shortcut_vectors() {
    let mut r = rng(16);
    let mut store = ParamStore::<f64>::new();
    let sc = ChannelShortcut::new(&mut store, "s", 16, 32, 2, &mut r).unwrap();
    assert_eq!(sc.param_count(), 288);
    let y = infer(&sc, &store, &Tensor::randn([3, 16, 8, 8], &mut r).unwrap()).unwrap();
    assert_eq!(y.shape(), &[3, 32, 4, 4]);

    let mut store = ParamStore::<f64>::new();
    let sc = ChannelShortcut::new(&mut store, "s", 4, 4, 1, &mut r).unwrap();
    let mut w = Tensor::zeros([4, 1, 3, 3]).unwrap();
    for c in 0..4 {
        w.data_mut()[c * 9 + 4] = 1.0;
    }
    store.set_value(sc.conv.weight, w).unwrap();
    let x = Tensor::randn([2, 4, 5, 5], &mut r).unwrap();
    assert!(infer(&sc, &store, &x).unwrap().max_abs_diff(&x) < 1e-15);
}

// ---- cost model ------------------------------------------------------------

#[test]
fn parameter_and_mac_vectors() {
    let mut r = rng(17);
    let mut store = ParamStore::<f32>::new();
    let dense = Conv2d::new(&mut store, "c", ConvSpec::same(64, 64, 3, 1), &mut r).unwrap();
    assert_eq!(cost_report(&dense, &store, &[1, 64, 4, 4]).unwrap().params, 36864);
    assert_eq!(count_params(&ParamStore::<f32>::new()), 0);

    let mut store = ParamStore::<f32>::new();
    let pw = Conv2d::new(&mut store, "c", ConvSpec::pointwise(64, 64, 1), &mut r).unwrap();
    assert_eq!(cost_report(&pw, &store, &[1, 64, 7, 7]).unwrap().macs, 200_704);

    let mut store = ParamStore::<f32>::new();
    let dw = Conv2d::new(&mut store, "c", ConvSpec::same(16, 16, 3, 16), &mut r).unwrap();
    assert_eq!(cost_report(&dw, &store, &[1, 16, 8, 8]).unwrap().macs, 9216);

    let macs = |g: usize| {
        let mut store = ParamStore::<f32>::new();
        let c = Conv2d::new(&mut store, "c", ConvSpec::same(32, 32, 3, g), &mut rng(0)).unwrap();
        cost_report(&c, &store, &[1, 32, 6, 6]).unwrap().macs
    };
    assert_eq!(macs(2) * 2, macs(1));
    assert_eq!(macs(8) * 2, macs(4));
}

#[test]
fn closed_form_vectors() {
    let terms = [8 * 64 * 10, 8 * 32 * 10, 8 * 16 * 10, 8 * 8 * 9];
    assert_eq!(terms, [5120, 2560, 1280, 576]);
    let total: u64 = terms.iter().sum();
    assert_eq!(closed_form_mgic_params(64, 8, 8, 3).unwrap(), total);
    assert!(total < closed_form_bound(64, 8, 8, 3));
    assert_eq!(closed_form_bound(64, 8, 8, 3), 2 * 5120 + 576);
    assert_eq!(closed_form_mgic_params(8, 8, 8, 3).unwrap(), 8 * 8 * 9);
    assert_eq!(8 * 64 * 9, 4608);
    assert_eq!(hierarchy_ratio(&[16, 8, 4]), 1.75);
}

// ---- training --------------------------------------------------------------

#[test]
fn sgd_update_vectors() {
    let (mut w, mut v) = ([1.0f64], [0.0f64]);
    sgd_update(&mut w, &[0.5], &mut v, 0.1, 0.0, 0.0);
    assert!((w[0] - 0.95).abs() < 1e-15);

    let (mut w, mut v) = ([0.0f64], [0.0f64]);
    sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0);
    assert!((v[0] - 1.0).abs() < 1e-15 && (w[0] + 0.1).abs() < 1e-15);
    sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0);
    assert!((v[0] - 1.9).abs() < 1e-12 && (w[0] + 0.29).abs() < 1e-12);

    let (mut w, mut v) = ([1.0f64], [0.0f64]);
    sgd_update(&mut w, &[0.0], &mut v, 0.1, 0.0, 1e-4);
    assert!((w[0] - 0.99999).abs() < 1e-15);
}

#[test]
fn schedule_vectors() {
    let step = |lr| SgdConfig { schedule: Schedule::Step { every: 30, divisor: 10.0 }, ..SgdConfig::new(lr, 90, 1) };
    let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
    assert!(close(lr_at(0, &step(0.1)), 0.1));
    assert!(close(lr_at(30, &step(0.1)), 0.01));
    assert!(close(lr_at(65, &step(0.1)), 0.001));
    assert!(close(lr_at(29, &step(0.001)), 0.001));
    let constant = SgdConfig::new(1e-4, 10, 1);
    assert!(close(lr_at(7, &constant), 1e-4));
}

#[test]
fn surface_vectors() {
    assert_eq!(surface(0.0, 0.0), 0.0);
    assert!((surface(0.5, 0.25) - 0.5f64.cos() * 5.0f64.sin()).abs() < 1e-12);
    assert!((surface(0.5, 0.25) + 0.84153).abs() < 1e-5);
    assert!((surface(1.0, std::f64::consts::PI / 40.0) - 0.54030).abs() < 1e-5);
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

#[test]
fn idx_vectors() {
    let img = IdxArray::parse(&idx_bytes(0x0803, &[2, 2, 3], &[0, 255, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6])).unwrap();
    let t = img.images().unwrap();
    assert_eq!(t.shape(), &[2, 1, 2, 3]);
    assert!((t.data()[1] - 1.0).abs() < 1e-6);

    let lab = IdxArray::parse(&idx_bytes(0x0801, &[3], &[7, 0, 9])).unwrap();
    assert_eq!(lab.labels().unwrap(), vec![7, 0, 9]);

    let empty = IdxArray::parse(&idx_bytes(0x0803, &[0, 28, 28], &[])).unwrap();
    assert!(empty.is_empty());
    assert_eq!(empty.dims, vec![0, 28, 28]);

    assert!(IdxArray::parse(&idx_bytes(0x0803, &[2, 2, 2], &[1, 2, 3])).is_err());
}

#[test]
fn rank_one_corpus_is_proportional() {
    let t = synth_feature_maps_with_rank(3, 5, 4, 4, 1, 2).unwrap();
    for s in 0..3 {
        let base = &t.data()[s * 80..s * 80 + 16];
        for c in 1..5 {
            let ch = &t.data()[s * 80 + c * 16..s * 80 + (c + 1) * 16];
            let k = ch[0] / base[0];
            for (a, b) in ch.iter().zip(base) {
                assert!((a - k * b).abs() < 1e-4 * (1.0 + a.abs()));
            }
        }
    }
}

/// Numerical rank by Gaussian elimination with partial pivoting.
fn numerical_rank(mut m: Vec<Vec<f64>>, tol: f64) -> usize {
    let n = m.len();
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut rank = 0;
    for col in 0..n {
        let Some(p) = (rank..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())) else { break };
        if m[p][col].abs() <= tol * scale {
            continue;
        }
        m.swap(rank, p);
        for r in rank + 1..n {
            let f = m[r][col] / m[rank][col];
            for k in col..n {
                m[r][k] -= f * m[rank][k];
            }
        }
        rank += 1;
    }
    rank
}

#[test]
fn corpus_covariance_rank_is_a_quarter() {
    let c = 16;
    let t = synth_feature_maps(40, c, 4, 4, 3).unwrap();
    let hw = 16;
    let mut cov = vec![vec![0.0; c]; c];
    for s in 0..40 {
        for p in 0..hw {
            for i in 0..c {
                let xi = t.data()[(s * c + i) * hw + p] as f64;
                for j in 0..c {
                    cov[i][j] += xi * t.data()[(s * c + j) * hw + p] as f64;
                }
            }
        }
    }
    assert!(numerical_rank(cov, 1e-4) <= c / 4);
    assert!(synth_feature_maps(2, 8, 3, 3, 5).unwrap().bit_eq(&synth_feature_maps(2, 8, 3, 3, 5).unwrap()));
}

fn linear_problem() -> (Linear, ParamStore<f32>, Dataset) {
    let mut r = rng(18);
    let mut store = ParamStore::<f32>::new();
    let lin = Linear::new(&mut store, "fc", 3, 1, &mut r).unwrap();
    let x = Tensor::<f32>::randn([64, 3], &mut r).unwrap();
    let y: Vec<f32> = x.data().chunks(3).map(|v| 0.5 * v[0] - 1.5 * v[1] + 2.0 * v[2] + 0.25).collect();
    let data = Dataset::new(x, Targets::Values(Tensor::from_vec([64, 1], y).unwrap())).unwrap();
    (lin, store, data)
}

#[test]
fn linear_regression_descends_monotonically() {
    let (lin, mut store, data) = linear_problem();
    let cfg = SgdConfig { momentum: 0.0, weight_decay: 0.0, ..SgdConfig::new(0.01, 5, 64) };
    let hist = train_loop(&lin, &mut store, &data, &data, &cfg, &mut rng(1), |_| {}).unwrap();
    for w in hist.windows(2) {
        assert!(w[1].eval_metric < w[0].eval_metric, "{hist:?}");
    }
}

#[test]
fn zero_rate_leaves_parameters_and_seeds_repeat() {
    let (lin, mut store, data) = linear_problem();
    let before = store.clone();
    let cfg = SgdConfig { lr: 0.0, ..SgdConfig::new(0.0, 3, 16) };
    train_loop(&lin, &mut store, &data, &data, &cfg, &mut rng(2), |_| {}).unwrap();
    for (a, b) in before.params().iter().zip(store.params()) {
        assert!(a.value.bit_eq(&b.value));
    }

    let run = || {
        let (lin, mut store, data) = linear_problem();
        let cfg = SgdConfig::new(0.05, 4, 8);
        train_loop(&lin, &mut store, &data, &data, &cfg, &mut rng(3), |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.eval_metric.to_bits(), y.eval_metric.to_bits());
    }
}
