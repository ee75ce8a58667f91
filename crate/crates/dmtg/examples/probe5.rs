// small-case recovery: the primitives the big suite builds on
use dmtg::autodiff::AdamHyper;
use dmtg::grouping::{extract_partition, pretrain_naive, train_one_shot, Arch, TemperatureSchedule, TrainBudget};
use dmtg::tasksuite::{generate, PlantedSpec, SampleCounts, TaskKind};
use dmtg::Partition;

fn run_case(name: &str, labels: Vec<usize>, k: usize, lr: f64, epochs: usize, tau: f64, width: usize, beta2: f64, anneal_every: usize, pretrain: usize) {
    let n = labels.len();
    let mut spec = PlantedSpec::default();
    spec.n_tasks = n;
    spec.true_partition = Partition::from_labels(labels);
    spec.kinds = vec![TaskKind::Regression; n];
    spec.samples = SampleCounts { train: 2000, val: 500, test: 500 };
    let suite = generate(&spec).unwrap();
    let arch = Arch { input_dim: 16, depth: 2, width, shared_layers: 0 };
    let hyper = AdamHyper { lr, beta2, ..AdamHyper::default() };
    let sched = if anneal_every > 0 {
        TemperatureSchedule::Anneal { start: tau, end: 0.3, factor: 0.7, epochs_per_decay: anneal_every }
    } else {
        TemperatureSchedule::Fixed { tau }
    };
    let mut hits = 0;
    for seed in 1..=10u64 {
        let (naive, _) = pretrain_naive(&suite, arch, &TrainBudget::new(pretrain, 128, hyper), seed).unwrap();
        let mut budget = TrainBudget::new(epochs, 128, hyper);
        budget.plateau_min_lr = hyper.lr; // decay disabled for this sweep
        let out = train_one_shot(&suite, k, &naive, &sched, &budget, seed).unwrap();
        let part = extract_partition(out.assignment.unwrap().scores(&out.params));
        if part.is_equivalent(&spec.true_partition) { hits += 1; }
    }
    println!("{name}: {hits}/10 (lr {lr} ep {epochs} tau {tau} w {width} b2 {beta2} anneal {anneal_every} pre {pretrain})");
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);
    let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4.0);
    let width: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5);
    let beta2: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.9);
    let anneal_every: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0);
    let pretrain: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(30);
    run_case("4 tasks 2 groups K=2", vec![0, 0, 1, 1], 2, lr, epochs, tau, width, beta2, anneal_every, pretrain);
}
