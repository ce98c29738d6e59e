mod support;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::gradcheck::{gradients, random_case, relative_error, SIDE};
use wwbl_model::losses::loss_total_tensor;
use wwbl_model::{LossWeights, MockBackend, MockOptions, MockWorldSpec};

fn backend() -> MockBackend {
    MockBackend::new(MockWorldSpec::default(), MockOptions::default()).unwrap()
}

#[test]
fn mask_gradient_matches_central_differences() {
    let be = backend();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..4 {
        let c = random_case(&mut rng, &be);
        let (a, n) = gradients(&be, &c, &LossWeights::default(), 1e-6);
        let err = relative_error(&a, &n);
        assert!(err < 1e-3, "case {k}: relative error {err:e}");
        assert!(a.iter().any(|g| g.abs() > 1e-6), "case {k}: gradient vanished");
    }
}

#[test]
fn each_term_gradient_is_checked_alone() {
    let be = backend();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let c = random_case(&mut rng, &be);
    for i in 0..4 {
        let mut w = [0.0; 4];
        w[i] = 1.0;
        let w = LossWeights {
            lambda1: w[0],
            lambda2: w[1],
            lambda3: w[2],
            lambda4: w[3],
        };
        let (a, n) = gradients(&be, &c, &w, 1e-6);
        assert!(relative_error(&a, &n) < 1e-3, "term {i}");
    }
}

#[test]
fn zero_weights_give_zero_gradient() {
    let be = backend();
    let c = random_case(&mut ChaCha8Rng::seed_from_u64(23), &be);
    let var = Var::from_tensor(&Tensor::from_vec(c.mask.clone(), (1, 1, SIDE, SIDE), &Device::Cpu).unwrap()).unwrap();
    let loss = loss_total_tensor(
        &be,
        &c.image,
        var.as_tensor(),
        &c.phrase,
        &c.relevancy,
        &LossWeights::ZERO,
    )
    .unwrap();
    assert_eq!(loss.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap(), 0.0);
    let g = loss.backward().unwrap();
    if let Some(g) = g.get(var.as_tensor()) {
        assert!(g
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }
}
