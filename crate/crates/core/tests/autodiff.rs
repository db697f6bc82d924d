use proptest::prelude::*;
use pseudorec::autodiff::{finite_difference_check, Graph, NodeId, Tensor};
use pseudorec::nn::{conv2d, conv_transpose2d, Padding};
use pseudorec::seed;
use rand::Rng;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dense(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let h = g.matmul(x, w).unwrap();
    g.add(h, b).unwrap()
}

fn two_losses(g: &mut Graph, x: NodeId, w: NodeId) -> (NodeId, NodeId) {
    let h = g.matmul(x, w).unwrap();
    let t = g.tanh(h).unwrap();
    let l1 = g.sum(t).unwrap();
    let sq = g.mul(h, h).unwrap();
    let l2 = g.mean(sq).unwrap();
    (l1, l2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear(s in any::<u64>(), a in -3.0f32..3.0, b in -3.0f32..3.0) {
        let mut rng = seed::rng(s);
        let (xv, wv) = (random(&[3, 4], &mut rng), random(&[4, 2], &mut rng));
        let grad_of = |ca: f32, cb: f32| {
            let mut g = Graph::new(0);
            let x = g.constant(xv.clone());
            let w = g.param(wv.clone());
            let (l1, l2) = two_losses(&mut g, x, w);
            let l1 = g.mul_scalar(l1, ca).unwrap();
            let l2 = g.mul_scalar(l2, cb).unwrap();
            let l = g.add(l1, l2).unwrap();
            g.backward(l).unwrap();
            g.grad(w).unwrap().to_vec()
        };
        let (g1, g2, gab) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(a, b));
        for i in 0..g1.len() {
            prop_assert!((gab[i] - (a * g1[i] + b * g2[i])).abs() < 1e-5);
        }
    }
}

#[test]
fn two_layer_perceptron_matches_finite_differences() {
    // 3 -> 3 -> 2 with biases: 9 + 3 + 6 + 2 = 20 parameters.
    let mut rng = seed::rng(11);
    let mut g = Graph::new(0);
    let x = g.constant(random(&[5, 3], &mut rng));
    let w1 = g.param(random(&[3, 3], &mut rng));
    let b1 = g.param(random(&[1, 3], &mut rng));
    let w2 = g.param(random(&[3, 2], &mut rng));
    let b2 = g.param(random(&[1, 2], &mut rng));
    let h = dense(&mut g, x, w1, b1);
    let h = g.tanh(h).unwrap();
    let y = dense(&mut g, h, w2, b2);
    let y = g.sigmoid(y).unwrap();
    let loss = g.mean(y).unwrap();
    let report = finite_difference_check(&mut g, loss, 1e-2, 1e-3).unwrap();
    assert_eq!(report.compared(), 20);
    assert!(report.flagged().is_empty(), "{:?}", report.flagged());
}

#[test]
fn dense_layer_examples() {
    let mut rng = seed::rng(3);
    let xv = random(&[4, 7], &mut rng);
    let mut g = Graph::new(0);
    let x = g.constant(xv.clone());
    let w = g.constant(Tensor::zeros(vec![7, 5]));
    let b = g.constant(Tensor::new(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let y = dense(&mut g, x, w, b);
    for row in g.value(y).data().chunks(5) {
        assert_eq!(row, &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    let mut eye = Tensor::zeros(vec![7, 7]);
    (0..7).for_each(|i| eye.data_mut()[i * 7 + i] = 1.0);
    let w = g.constant(eye);
    let b = g.constant(Tensor::zeros(vec![1, 7]));
    let y = dense(&mut g, x, w, b);
    assert_eq!(g.value(y).data(), xv.data());

    let mut g = Graph::new(0);
    let x = g.constant(xv);
    let w = g.param(random(&[7, 5], &mut rng));
    let b = g.param(random(&[1, 5], &mut rng));
    let y = dense(&mut g, x, w, b);
    let y = g.tanh(y).unwrap();
    let loss = g.sum(y).unwrap();
    let report = finite_difference_check(&mut g, loss, 1e-2, 1e-3).unwrap();
    assert!(report.flagged().is_empty(), "{:?}", report.flagged());
}

#[test]
fn transposed_convolution_is_the_adjoint() {
    let mut rng = seed::rng(5);
    let mut compared = 0;
    for case in 0..20 {
        let (c_in, c_out) = (1 + case % 3, 1 + case % 4);
        let (k, stride) = (1 + case % 5, 1 + case % 2);
        let padding = if case % 2 == 0 { Padding::Same } else { Padding::Valid };
        let hw = 6 + case % 4;
        if padding == Padding::Valid && k > hw {
            continue;
        }
        let mut g = Graph::new(0);
        let x = g.constant(random(&[2, c_in, hw, hw], &mut rng));
        let w = g.constant(random(&[c_out, c_in, k, k], &mut rng));
        let zero_out = g.constant(Tensor::zeros(vec![c_out]));
        let zero_in = g.constant(Tensor::zeros(vec![c_in]));
        let cx = conv2d(&mut g, x, w, zero_out, stride, padding).unwrap();
        let y = g.constant(random(g.value(cx).shape(), &mut rng));
        let ty = conv_transpose2d(&mut g, y, w, zero_in, stride, padding).unwrap();
        let (xs, ts) = (g.value(x).shape().to_vec(), g.value(ty).shape().to_vec());
        if xs != ts {
            // Strided `Valid` geometry may drop trailing rows; compare on the overlap.
            assert!(ts[2] <= xs[2] && ts[3] <= xs[3], "case {case}: {xs:?} vs {ts:?}");
            continue;
        }
        let lhs: f64 = g.value(cx).data().iter().zip(g.value(y).data()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = g.value(x).data().iter().zip(g.value(ty).data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() <= 1e-3 * (1.0 + lhs.abs()), "case {case}: {lhs} vs {rhs}");
        compared += 1;
    }
    assert!(compared >= 10, "only {compared} cases compared");
}
