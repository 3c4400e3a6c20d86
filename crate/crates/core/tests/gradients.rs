use distest::coverage::NeuronId;
use distest::gradcheck::{finite_difference_gradient, max_relative_error, random_case_error, OpKind, GRADIENT_FLOOR};
use distest::nn::{Activation, LayerSpec, Network};
use distest::testgen::{obj1_differential, GenerationConfig};
use distest::vae::{Vae, VaeArchitecture};
use distest::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_matches_finite_differences(seed in any::<u64>(), which in 0usize..OpKind::ALL.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = OpKind::ALL[which];
        let err = random_case_error(kind, &mut rng).unwrap();
        prop_assert!(err <= 1e-4, "{:?}: {}", kind, err);
    }

    #[test]
    fn backward_is_linear_in_the_root(
        xs in prop::collection::vec(-2.0f64..2.0, 1..6),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let n = xs.len();
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(xs).unwrap());
        let f = { let s = g.sigmoid(x).unwrap(); g.sum(s).unwrap() };
        let h = { let s = g.square(x).unwrap(); g.sum(s).unwrap() };
        let fa = g.scale(f, a).unwrap();
        let hb = g.scale(h, b).unwrap();
        let root = g.add(fa, hb).unwrap();
        let gr = g.backward(root, x).unwrap();
        let gf = g.backward(f, x).unwrap();
        let gh = g.backward(h, x).unwrap();
        for i in 0..n {
            let want = a * gf.data()[i] + b * gh.data()[i];
            prop_assert!((gr.data()[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

fn input_gradient_error<F>(x: &Tensor, build: F) -> f64
where
    F: Fn(&mut Graph, distest::NodeId) -> distest::NodeId,
{
    let mut g = Graph::new();
    let xn = g.variable(x.clone());
    let root = build(&mut g, xn);
    let analytic = g.backward(root, xn).unwrap();
    let numeric = finite_difference_gradient(
        |t| {
            let mut g = Graph::new();
            let xn = g.variable(t.clone());
            let root = build(&mut g, xn);
            g.forward(root)
        },
        x,
        1e-5,
    )
    .unwrap();
    max_relative_error(&analytic, &numeric, GRADIENT_FLOOR)
}

#[test]
fn obj1_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let arch = [LayerSpec::new(5, Activation::Sigmoid), LayerSpec::new(3, Activation::Softmax)];
    let models = [
        Network::init(4, &arch, &mut rng).unwrap(),
        Network::init(4, &arch, &mut rng).unwrap(),
        Network::init(4, &arch, &mut rng).unwrap(),
    ];
    let cfg = GenerationConfig::default();
    let x = Tensor::matrix(1, 4, vec![0.2, 0.9, 0.4, 0.6]).unwrap();
    for (neuron, label) in [(NeuronId { layer: 0, unit: 2 }, 1), (NeuronId { layer: 1, unit: 0 }, 2)] {
        let err = input_gradient_error(&x, |g, xn| obj1_differential(g, &models, xn, 0, neuron, label, &cfg).unwrap());
        assert!(err <= 1e-4, "{err}");
    }
}

#[test]
fn vae_log_density_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vae = Vae::init(6, &VaeArchitecture { hidden: vec![5], latent_dim: 2 }, &mut rng).unwrap();
    let x = Tensor::matrix(1, 6, vec![0.1, 0.5, 0.3, 0.8, 0.0, 1.0]).unwrap();
    let eps = Tensor::matrix(1, 2, vec![0.4, -1.2]).unwrap();
    let err = input_gradient_error(&x, |g, xn| {
        let tr = vae.trace(g, xn, eps.clone(), false).unwrap();
        g.sum(tr.log_density).unwrap()
    });
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn training_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let arch = [
        LayerSpec::new(4, Activation::Sigmoid),
        LayerSpec::new(3, Activation::Softmax),
    ];
    let net = Network::init(3, &arch, &mut rng).unwrap();
    let w0 = net.layers()[0].weights().clone();
    let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.7]).unwrap();
    let labels = [2, 0];
    let loss = |g: &mut Graph, w: distest::NodeId| {
        let xn = g.constant(x.clone());
        let l0 = &net.layers()[0];
        let b0 = g.constant(l0.bias().clone());
        let h = g.linear(xn, w, b0).unwrap();
        let h = g.sigmoid(h).unwrap();
        let l1 = &net.layers()[1];
        let w1 = g.constant(l1.weights().clone());
        let b1 = g.constant(l1.bias().clone());
        let o = g.linear(h, w1, b1).unwrap();
        g.softmax_cross_entropy(o, &labels).unwrap()
    };
    let err = input_gradient_error(&w0, loss);
    assert!(err <= 1e-4, "{err}");
}
