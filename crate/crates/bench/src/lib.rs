//! Criterion benchmarks for the hot paths of `deskbot-core`: a training
//! step, single-frame inference, camera rendering, one collection tick and
//! serial parsing. Run with `cargo bench -p deskbot-bench`.

use deskbot_core::nn::{Network, PolicyArchitecture, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random image batch and one-hot commands sized for `arch`.
pub fn random_batch(arch: &PolicyArchitecture, n: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = arch.width * arch.height * 3;
    let images = Tensor {
        shape: vec![n, arch.height, arch.width, 3],
        data: (0..n * per).map(|_| rng.gen()).collect(),
    };
    let mut commands = vec![0.0f32; n * 3];
    for i in 0..n {
        commands[i * 3 + rng.gen_range(0..3)] = 1.0;
    }
    let targets = (0..n * 2).map(|_| rng.gen()).collect();
    (
        images,
        Tensor {
            shape: vec![n, 3],
            data: commands,
        },
        targets,
    )
}

pub fn network(width: usize, height: usize) -> Network<f32> {
    Network::init(PolicyArchitecture::default().with_input(width, height), 0).expect("default architecture is valid")
}
