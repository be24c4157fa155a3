use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somnet_core::autodiff::gradcheck::{check, STEP};
use somnet_core::autodiff::{BatchNormState, Conv2dSpec, GruDirection, Mode};
use somnet_core::{Tape, Tensor};

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn projection(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn([n], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn conv2d_reference_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[1, 2, 4, 8]);
    let w = rand_tensor(&mut rng, &[3, 2, 1, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let proj = projection(&mut rng, 3 * 4 * 6);
    let r = check(&[x, w, b], STEP, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::default())?;
        t.weighted_sum(y, &proj)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn conv2d_padded_and_strided() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3, 3, 7]);
        let w = rand_tensor(&mut rng, &[2, 3, 2, 3]);
        let spec = Conv2dSpec { stride: (1, 2), padding: (1, 1) };
        let mut probe = Tape::new();
        let (xv, wv) = (probe.constant(x.clone()), probe.constant(w.clone()));
        let y = probe.conv2d(xv, wv, None, spec).unwrap();
        assert_eq!(probe.shape(y), &[2, 2, 4, 4]);
        let proj = projection(&mut rng, 64);
        let r = check(&[x, w], STEP, |t, v| {
            let y = t.conv2d(v[0], v[1], None, spec)?;
            t.weighted_sum(y, &proj)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn batchnorm_both_modes() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = rand_tensor(&mut rng, &[3, 2, 1, 5]);
        let g = rand_tensor(&mut rng, &[2]);
        let b = rand_tensor(&mut rng, &[2]);
        let proj = projection(&mut rng, 30);
        for mode in [Mode::Train, Mode::Eval] {
            let mut base = BatchNormState::new(2);
            base.running_mean = vec![0.3, -0.2];
            base.running_var = vec![0.7, 1.4];
            let r = check(&[x.clone(), g.clone(), b.clone()], STEP, |t, v| {
                let mut st = base.clone();
                let y = t.batch_norm(v[0], v[1], v[2], &mut st, mode)?;
                t.weighted_sum(y, &proj)
            })
            .unwrap();
            assert!(r.max_rel_error < TOL, "seed {seed} {mode:?}: {r:?}");
        }
    }
}

#[test]
fn relu_pool_softmax() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = rand_tensor(&mut rng, &[2, 3, 9]);
        let proj = projection(&mut rng, 2 * 3 * 5);
        let r = check(&[x], STEP, |t, v| {
            let y = t.relu(v[0]);
            let y = t.max_pool_time(y)?;
            let y = t.softmax(y)?;
            t.weighted_sum(y, &proj)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn gru_full_parameter_set() {
    let (f, h, steps) = (3, 4, 5);
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut inputs = vec![rand_tensor(&mut rng, &[2, f, steps])];
        for _ in 0..2 {
            inputs.push(rand_tensor(&mut rng, &[3 * h, f]));
            inputs.push(rand_tensor(&mut rng, &[3 * h, h]));
            inputs.push(rand_tensor(&mut rng, &[3 * h]));
        }
        let proj = projection(&mut rng, 2 * 2 * h * steps);
        let r = check(&inputs, STEP, |t, v| {
            let fw = GruDirection { w_input: v[1], w_hidden: v[2], bias: v[3] };
            let bw = GruDirection { w_input: v[4], w_hidden: v[5], bias: v[6] };
            let y = t.gru_bidirectional(v[0], fw, bw)?;
            t.weighted_sum(y, &proj)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn averaged_cross_entropy() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let logits = rand_tensor(&mut rng, &[2, 5, 10]);
        let targets: Vec<Option<usize>> =
            (0..4).map(|i| if i == 1 { None } else { Some(rng.random_range(0..5)) }).collect();
        let r = check(&[logits], STEP, |t, v| {
            let y = t.softmax(v[0])?;
            let y = t.time_average(y, 5)?;
            t.cross_entropy(y, &targets, 0.5)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}
