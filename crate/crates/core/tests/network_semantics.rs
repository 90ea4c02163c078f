use nalgebra::DMatrix;
use proptest::prelude::*;
use splinenet::relunet::{compose, pad_depth, parallel, Layer, ReluNetwork};

/// Plain-loop reference evaluation of `W_out σ(… σ(W₁x − v₁))`.
fn reference(net: &ReluNetwork, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in net.layers() {
        let w = &layer.weights;
        h = (0..w.nrows())
            .map(|r| {
                let s: f64 = (0..w.ncols()).map(|c| w[(r, c)] * h[c]).sum();
                (s - layer.shift[r]).max(0.0)
            })
            .collect();
    }
    let w = net.output_weights();
    (0..w.nrows())
        .map(|r| (0..w.ncols()).map(|c| w[(r, c)] * h[c]).sum())
        .collect()
}

fn net_strategy(input: usize, output: usize) -> impl Strategy<Value = ReluNetwork> {
    (1usize..4, prop::collection::vec(1usize..5, 3)).prop_flat_map(move |(depth, widths)| {
        let mut dims = vec![input];
        dims.extend(widths.iter().take(depth).copied());
        let shapes: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[1], w[0])).collect();
        let last = *dims.last().unwrap();
        let layers = shapes
            .into_iter()
            .map(|(r, c)| {
                (
                    prop::collection::vec(-2.0f64..2.0, r * c),
                    prop::collection::vec(-1.0f64..1.0, r),
                )
                    .prop_map(move |(w, v)| {
                        Layer::new(DMatrix::from_row_slice(r, c, &w), v).unwrap()
                    })
            })
            .collect::<Vec<_>>();
        (layers, prop::collection::vec(-2.0f64..2.0, output * last)).prop_map(move |(layers, w)| {
            ReluNetwork::new(input, layers, DMatrix::from_row_slice(output, last, &w)).unwrap()
        })
    })
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-10 * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn evaluation_matches_reference(net in net_strategy(2, 2), x in prop::collection::vec(0.0f64..1.0, 2)) {
        prop_assert!(close(&net.evaluate(&x).unwrap(), &reference(&net, &x)));
    }

    #[test]
    fn compose_is_function_composition(
        inner in net_strategy(2, 3),
        outer in net_strategy(3, 1),
        x in prop::collection::vec(0.0f64..1.0, 2),
    ) {
        let c = compose(&outer, &inner).unwrap();
        prop_assert_eq!(c.depth(), outer.depth() + inner.depth());
        let want = reference(&outer, &reference(&inner, &x));
        prop_assert!(close(&c.evaluate(&x).unwrap(), &want));
    }

    #[test]
    fn parallel_stacks_outputs(
        a in net_strategy(1, 2),
        b in net_strategy(1, 1),
        x in prop::collection::vec(0.0f64..1.0, 2),
    ) {
        let depth = a.depth().max(b.depth()) + 1;
        let (pa, pb) = (pad_depth(&relu_out(&a), depth).unwrap(), pad_depth(&relu_out(&b), depth).unwrap());
        let split = parallel(&[pa.clone(), pb.clone()], false).unwrap();
        let mut want = reference(&pa, &x[..1]);
        want.extend(reference(&pb, &x[1..]));
        prop_assert!(close(&split.evaluate(&x).unwrap(), &want));
        let shared = parallel(&[pa.clone(), pb.clone()], true).unwrap();
        let mut want = reference(&pa, &x[..1]);
        want.extend(reference(&pb, &x[..1]));
        prop_assert!(close(&shared.evaluate(&x[..1]).unwrap(), &want));
    }

    #[test]
    fn batched_matches_single(net in net_strategy(3, 2), xs in prop::collection::vec(0.0f64..1.0, 3 * 70)) {
        let flat = net.evaluate_flat(&xs).unwrap();
        for (x, got) in xs.chunks(3).zip(flat.chunks(2)) {
            let want = net.evaluate_dense(x).unwrap();
            prop_assert_eq!(got, want.as_slice());
        }
    }

    #[test]
    fn json_roundtrip_is_bitwise(net in net_strategy(2, 2), x in prop::collection::vec(0.0f64..1.0, 2)) {
        let back = ReluNetwork::from_json(&net.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(back.evaluate(&x).unwrap(), net.evaluate(&x).unwrap());
    }

    #[test]
    fn prune_and_bias_preserve_function(net in net_strategy(2, 1), x in prop::collection::vec(0.0f64..1.0, 2)) {
        let base = net.evaluate(&x).unwrap()[0];
        prop_assert!((net.prune().evaluate(&x).unwrap()[0] - base).abs() < 1e-12);
        let biased = net.with_output_bias(&[0.75]).unwrap();
        prop_assert!((biased.evaluate(&x).unwrap()[0] - base - 0.75).abs() < 1e-12);
    }
}

/// Appends a ReLU on every output so that depth padding is exact.
fn relu_out(net: &ReluNetwork) -> ReluNetwork {
    let o = net.output_dim();
    let act = ReluNetwork::new(
        o,
        vec![Layer::new(DMatrix::identity(o, o), vec![0.0; o]).unwrap()],
        DMatrix::identity(o, o),
    )
    .unwrap();
    compose(&act, net).unwrap()
}

#[test]
fn architecture_reports_widths() {
    let layers = vec![
        Layer::new(DMatrix::from_element(3, 1, 1.0), vec![0.0; 3]).unwrap(),
        Layer::new(DMatrix::from_element(5, 3, 1.0), vec![0.0; 5]).unwrap(),
    ];
    let net = ReluNetwork::new(1, layers, DMatrix::from_element(2, 5, 1.0)).unwrap();
    let a = net.architecture();
    assert_eq!(a.depth, 2);
    assert_eq!(a.widths, vec![3, 5]);
    assert_eq!(a.max_width, 5);
}
