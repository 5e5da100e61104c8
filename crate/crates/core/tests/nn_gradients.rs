use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reputa::nn::{
    check_network, conv_output_len, gradient_check, mse_loss, LayerSpec, LossFn, Network, Optimizer,
    Params, Tensor,
};

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dense(inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec::Dense {
        inputs,
        outputs,
        bias: true,
    }
}

fn check(input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(input_shape.clone(), specs, &mut rng).unwrap();
    let x = random_tensor(input_shape, &mut rng);
    let target = random_tensor(net.output_shape(), &mut rng);
    check_network(&mut net, LossFn::Mse, &x, &target, 1e-5).unwrap()
}

#[test]
fn single_linear_layer_is_exact() {
    let err = check(vec![4], vec![dense(4, 3)], 42);
    assert!(err < 1e-7, "relative error {err}");
}

#[test]
fn dense_tanh_two_layer() {
    let err = check(vec![5], vec![dense(5, 8), LayerSpec::Tanh, dense(8, 2)], 42);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn every_layer_kind_in_isolation() {
    let conv = LayerSpec::Conv1d {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride: 2,
        padding: 1,
    };
    let cases: Vec<(Vec<usize>, Vec<LayerSpec>)> = vec![
        (vec![3], vec![dense(3, 3), LayerSpec::Relu]),
        (vec![3], vec![dense(3, 3), LayerSpec::Sigmoid]),
        (vec![3], vec![dense(3, 3), LayerSpec::Tanh]),
        (vec![2, 7], vec![conv.clone()]),
        (vec![2, 7], vec![conv.clone(), LayerSpec::Flatten, dense(12, 2)]),
        (
            vec![2, 3],
            vec![LayerSpec::Upsample1d { factor: 2 }, conv.clone()],
        ),
        (
            vec![6],
            vec![LayerSpec::Reshape { shape: vec![2, 3] }, conv],
        ),
    ];
    for (seed, (shape, specs)) in cases.into_iter().enumerate() {
        let err = check(shape, specs.clone(), seed as u64);
        assert!(err < 1e-4, "{specs:?}: relative error {err}");
    }
}

#[test]
fn composed_conv_autoencoder() {
    let specs = vec![
        LayerSpec::Conv1d {
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        dense(16, 4),
        dense(4, 16),
        LayerSpec::Tanh,
        LayerSpec::Reshape { shape: vec![4, 4] },
        LayerSpec::Upsample1d { factor: 2 },
        LayerSpec::Conv1d {
            in_channels: 4,
            out_channels: 3,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
    ];
    let err = check(vec![3, 8], specs, 9);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn bce_with_sigmoid_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Network::new(vec![4], vec![dense(4, 3), LayerSpec::Sigmoid], &mut rng).unwrap();
    let x = random_tensor(vec![4], &mut rng);
    let t = Tensor::vector(vec![1.0, 0.0, 1.0]);
    let err = check_network(&mut net, LossFn::BinaryCrossEntropy, &x, &t, 1e-5).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn corrupted_gradient_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut net = Network::new(vec![5], vec![dense(5, 8), LayerSpec::Tanh, dense(8, 2)], &mut rng).unwrap();
    let x = random_tensor(vec![5], &mut rng);
    let t = random_tensor(vec![2], &mut rng);
    let err = gradient_check(&mut net, 1e-5, |net, accumulate| {
        if accumulate {
            let out = net.forward(&x)?;
            let l = LossFn::Mse.value(&out, &t)?;
            net.backward(&LossFn::Mse.grad(&out, &t)?)?;
            // Flip the sign of one weight gradient.
            let g = &mut net.layers_mut()[0].grad_weight[3];
            *g = -*g;
            Ok(l)
        } else {
            LossFn::Mse.value(&net.predict(&x)?, &t)
        }
    })
    .unwrap();
    assert!(err > 1e-2, "harness missed the bug: {err}");
}

#[test]
fn linear_model_closed_form_gradient() {
    // y = w x with MSE against t: dL/dw = 2 x (w x − t)
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::new(
        vec![1],
        vec![LayerSpec::Dense {
            inputs: 1,
            outputs: 1,
            bias: false,
        }],
        &mut rng,
    )
    .unwrap();
    net.layers_mut()[0].weight[0] = 0.7;
    let (x, t) = (1.5, 2.0);
    let out = net.forward(&Tensor::vector(vec![x])).unwrap();
    net.backward(&LossFn::Mse.grad(&out, &Tensor::vector(vec![t])).unwrap())
        .unwrap();
    let expected = 2.0 * x * (0.7 * x - t);
    assert!((net.layers()[0].grad_weight[0] - expected).abs() < 1e-15);
}

fn train_trajectory(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(vec![3], vec![dense(3, 4), LayerSpec::Relu, dense(4, 1)], &mut rng).unwrap();
    let data: Vec<(Tensor, Tensor)> = (0..8)
        .map(|_| (random_tensor(vec![3], &mut rng), random_tensor(vec![1], &mut rng)))
        .collect();
    let mut opt = Optimizer::adam(1e-2);
    let mut traj = Vec::new();
    for _ in 0..20 {
        reputa::nn::zero_grads(&mut net);
        for (x, t) in &data {
            let out = net.forward(x).unwrap();
            net.backward(&LossFn::Mse.grad(&out, t).unwrap()).unwrap();
        }
        opt.step(&mut net);
        traj.push(net.flat_params());
    }
    traj
}

#[test]
fn fixed_seed_gives_bit_identical_trajectories() {
    let a = train_trajectory(11);
    let b = train_trajectory(11);
    let bits = |t: &Vec<Vec<f64>>| -> Vec<u64> { t.iter().flatten().map(|v| v.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&train_trajectory(12)));
}

#[test]
fn zero_lr_step_keeps_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = Network::new(vec![2], vec![dense(2, 2)], &mut rng).unwrap();
    let before = net.flat_params();
    let out = net.forward(&Tensor::vector(vec![1.0, 2.0])).unwrap();
    net.backward(&out).unwrap();
    Optimizer::adam(0.0).step(&mut net);
    Optimizer::sgd(0.0).step(&mut net);
    assert_eq!(before, net.flat_params());
    // gradients were populated
    let mut nonzero = false;
    net.visit_params(&mut |_, g| nonzero |= g.iter().any(|v| *v != 0.0));
    assert!(nonzero);
}

proptest! {
    #[test]
    fn conv_output_length_formula(
        len in 1usize..40,
        kernel in 1usize..7,
        stride in 1usize..4,
        padding in 0usize..3,
        in_ch in 1usize..3,
    ) {
        prop_assume!(len + 2 * padding >= kernel);
        let spec = LayerSpec::Conv1d { in_channels: in_ch, out_channels: 2, kernel, stride, padding };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(vec![in_ch, len], vec![spec], &mut rng).unwrap();
        let x = Tensor::zeros(vec![in_ch, len]);
        let y = net.predict(&x).unwrap();
        let expected = (len + 2 * padding - kernel) / stride + 1;
        prop_assert_eq!(y.shape(), &[2, expected]);
        prop_assert_eq!(conv_output_len(len, kernel, stride, padding), Some(expected));
    }

    #[test]
    fn mse_symmetric_nonnegative(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
        let a = Tensor::vector(pairs.iter().map(|p| p.0).collect());
        let b = Tensor::vector(pairs.iter().map(|p| p.1).collect());
        let ab = mse_loss(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, mse_loss(&b, &a).unwrap());
    }
}
