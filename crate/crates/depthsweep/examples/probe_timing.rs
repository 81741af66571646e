//! Rough timing probe for the two depth networks at inference and
//! training batch sizes; used to size default hyperparameters.

use std::time::Instant;

use depthsweep::depthnets::{JointNetConfig, Model, PersonNetConfig};
use depthsweep::nn::tape::Tape;
use depthsweep::nn::tensor::Tensor;

fn main() {
    for (hidden, blocks, dils) in [
        (64usize, 2usize, vec![1usize, 2, 4, 8]),
        (32, 2, vec![1, 2, 4, 8]),
        (32, 1, vec![1, 2, 4, 8]),
        (24, 1, vec![1, 2, 4, 8]),
        (16, 1, vec![1, 2, 4, 8]),
    ] {
        let person_cfg = PersonNetConfig { hidden, blocks, ..PersonNetConfig::default() };
        let joint_cfg = JointNetConfig { hidden, dilations: dils.clone(), ..JointNetConfig::default() };
        let model = Model::new(15, 64, 64, person_cfg, joint_cfg, 7).unwrap();

        // Inference: 20 poses (5 views x 4 persons) in one batch.
        let x = Tensor::from_vec(20, 15, 64, vec![0.3; 20 * 15 * 64]);
        let iters = 50;
        let t0 = Instant::now();
        for _ in 0..iters {
            let mut tape = Tape::new(&model.params);
            let xi = tape.input(x.clone()).unwrap();
            let p = model.person.forward_eval(&mut tape, xi).unwrap();
            let j = model.joint.forward_eval(&mut tape, xi).unwrap();
            std::hint::black_box((tape.value(p).data()[0], tape.value(j).data()[0]));
        }
        let eval_ms = t0.elapsed().as_secs_f64() * 1000.0 / iters as f64;

        // One training step: batch 16 forward + backward through both nets.
        let xt = Tensor::from_vec(16, 15, 64, vec![0.3; 16 * 15 * 64]);
        let depths: Vec<f64> = (0..64).map(|i| 500.0 + 200.0 * i as f64).collect();
        let target_p = Tensor::from_vec(16, 1, 1, vec![3000.0; 16]);
        let target_j = Tensor::from_vec(16, 15, 1, vec![100.0; 16 * 15]);
        let mut grads = depthsweep::nn::layers::Grads::new(&model.params);
        let t0 = Instant::now();
        let train_iters = 10;
        for _ in 0..train_iters {
            let mut tape = Tape::new(&model.params);
            let xi = tape.input(xt.clone()).unwrap();
            let (p, _) = model.person.forward_train(&mut tape, xi).unwrap();
            let dp = tape.soft_argmax_window(p, &depths, 16).unwrap();
            let lp = tape.l1_sum(dp, &target_p).unwrap();
            let (j, _) = model.joint.forward_train(&mut tape, xi).unwrap();
            let dj = tape.soft_argmax_window(j, &depths, 64).unwrap();
            let lj = tape.l1_sum(dj, &target_j).unwrap();
            let loss = tape.add(lp, lj).unwrap();
            grads.zero();
            tape.backward(loss, &mut grads).unwrap();
            std::hint::black_box(grads.all_finite());
        }
        let step_ms = t0.elapsed().as_secs_f64() * 1000.0 / train_iters as f64;

        println!(
            "hidden {hidden:2} blocks {blocks} dils {:?}: eval20 {eval_ms:7.2} ms, train-step(B=16) {step_ms:7.2} ms",
            dils
        );
    }
}
