//! Block-coordinate gradients of the split model against central differences
//! of the full-model loss.

use daovfl::numkit::{DenseNet, Mat};
use daovfl::streams::{Labels, Task};
use daovfl::vflcore::{assemble_representation, head_gradient, sensor_gradient, GlobalModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn setup(seed: u64, task: Task) -> (GlobalModel, Vec<Mat>, Labels) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = [3, 5, 2];
    let mut model = GlobalModel::init(&ModelConfig::default(), &widths, task, &mut rng).unwrap();
    let p: Vec<f64> = model.params().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    model.set_params(&p).unwrap();
    let n = 6;
    let blocks = widths
        .iter()
        .map(|&w| Mat::from_vec(n, w, (0..n * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let labels = match task {
        Task::Classification { classes } => Labels::Class((0..n).map(|_| rng.random_range(0..classes)).collect()),
        Task::Regression => Labels::Real((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
    };
    (model, blocks, labels)
}

fn check_net(net: &DenseNet, analytic: &[f64], mut loss: impl FnMut(&DenseNet) -> f64) -> f64 {
    let mut p = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let o = p[i];
        p[i] = o + H;
        probe.set_params(&p).unwrap();
        let up = loss(&probe);
        p[i] = o - H;
        probe.set_params(&p).unwrap();
        let down = loss(&probe);
        p[i] = o;
        worst = worst.max(rel(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

#[test]
fn sensor_and_head_gradients_match_finite_differences() {
    for seed in 0..20 {
        for task in [Task::Classification { classes: 3 }, Task::Regression] {
            let (model, blocks, labels) = setup(seed, task);
            let embeddings = model.embeddings(&blocks).unwrap();
            let rep = assemble_representation(&model.head, embeddings.clone(), model.sensors()).unwrap();
            for k in 1..=model.sensors() {
                let view = rep.without(k).unwrap();
                let (loss, g) = sensor_gradient(&view, &model.features[k - 1], &blocks[k - 1], &labels).unwrap();
                assert!((loss - model.loss(&blocks, &labels).unwrap()).abs() < 1e-12);
                let worst = check_net(&model.features[k - 1], &g.to_vec(), |net| {
                    let mut m = model.clone();
                    m.features[k - 1] = net.clone();
                    m.loss(&blocks, &labels).unwrap()
                });
                assert!(worst < 1e-5, "seed {seed} {task:?} sensor {k}: rel err {worst}");
            }
            let (_, g0) = head_gradient(&model.head, &embeddings, &labels).unwrap();
            let worst = check_net(&model.head, &g0.to_vec(), |head| {
                let mut m = model.clone();
                m.head = head.clone();
                m.loss(&blocks, &labels).unwrap()
            });
            assert!(worst < 1e-5, "seed {seed} {task:?} head: rel err {worst}");
        }
    }
}
