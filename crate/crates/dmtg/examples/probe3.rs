// introspection: S matrix, val loss grid, assignment trajectory
use dmtg::autodiff::AdamHyper;
use dmtg::grouping::{extract_partition, pretrain_naive, train_one_shot, Arch, TemperatureSchedule, TrainBudget};
use dmtg::tasksuite::{generate, PlantedSpec, SplitKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let main_epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
    let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4.0);
    let width: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(3);
    let beta2: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.999);

    let spec = PlantedSpec::default();
    let suite = generate(&spec).unwrap();
    let arch = Arch { input_dim: 16, depth: 2, width, shared_layers: 0 };
    let hyper = AdamHyper { lr, beta2, ..AdamHyper::default() };
    let (naive, _) = pretrain_naive(&suite, arch, &TrainBudget::new(30, 128, hyper), seed).unwrap();
    let out = train_one_shot(&suite, 3, &naive, &TemperatureSchedule::Fixed { tau }, &TrainBudget::new(main_epochs, 128, hyper), seed).unwrap();

    for (e, rec) in out.history.iter().enumerate() {
        if e % 10 == 0 || e + 1 == out.history.len() {
            println!("epoch {e:3}: train {:.4} val {:.4} lr {:.5} tau {:?}", rec.train_loss, rec.val_total, rec.lr, rec.tau);
        }
    }
    let s = out.assignment.unwrap().scores(&out.params).clone();
    println!("planted: {}", spec.true_partition);
    println!("found:   {}", extract_partition(&s));
    println!("S matrix:");
    for i in 0..6 {
        let row: Vec<String> = s.row(i).iter().map(|v| format!("{v:7.2}")).collect();
        println!("  task {i}: {}", row.join(" "));
    }
    // full val loss grid: task i on branch k
    println!("val loss grid (rows tasks, cols branches):");
    let idx: Vec<usize> = (0..suite.split_len(SplitKind::Val)).collect();
    let (xv, yv) = suite.gather_batch(SplitKind::Val, &idx);
    for i in 0..6 {
        let mut row = String::new();
        for k in 0..3 {
            let branch_of_task: Vec<usize> = vec![k; 6];
            let losses = out.model.eval_task_losses(&out.params, &xv, &yv, &spec.kinds, &branch_of_task);
            row += &format!(" {:7.4}", losses[i]);
        }
        println!("  task {i}:{row}");
    }
}
