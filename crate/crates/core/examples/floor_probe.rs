use alda_lab::factorworld::env;
use alda_lab::factorworld::factors::{FactorVector, IMG_LEN};
use alda_lab::factorworld::render;
use alda_lab::factorworld::Task;
use alda_lab::numcore::Rng;

fn main() {
    let mut rng = Rng::new(2);
    let base = FactorVector::training_default();
    let n = 300;
    let mut frames = Vec::with_capacity(n * IMG_LEN);
    for _ in 0..n {
        let mut st = env::reset(Task::ReachGrasp, &mut rng);
        st.gripper_pos = [rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.02, 0.5)];
        let f = env::factors_for_state(&base, &st);
        frames.extend(render::render(&f, &st).unwrap());
    }
    let mut mean = vec![0.0f32; IMG_LEN];
    for f in 0..n { for j in 0..IMG_LEN { mean[j] += frames[f*IMG_LEN+j] / n as f32; } }
    let mut mse = 0.0f64;
    for f in 0..n { for j in 0..IMG_LEN { let d = frames[f*IMG_LEN+j] - mean[j]; mse += (d*d) as f64; } }
    println!("random-scene mean-image floor: {:.5}", mse / (n*IMG_LEN) as f64);
}
