//! Ablation harness: compares fine-tuning arms on the shipped synthetic
//! task over several seeds and prints per-arm novel accuracy.
//!
//! ```text
//! cargo run --release --example ablation [-- seeds=5 iters=400]
//! ```

use fewshot::knowledge::{build_knowledge_matrix, Case, KnowledgeInputs, KnowledgeMatrix};
use fewshot::toymodel::{generate_dataset, Dataset, DatasetConfig};
use fewshot::trainer::{fine_tune, model_for_dataset, train_base, TrainConfig};

fn case2_zeta(dataset: &Dataset) -> KnowledgeMatrix {
    let mut inputs = KnowledgeInputs::new(dataset.category_names.clone());
    for label in &dataset.attribute_labels {
        inputs.labels[label.category_id] = Some(label.clone());
    }
    build_knowledge_matrix(Case::Label, &Default::default(), &inputs).unwrap()
}

struct Arm {
    name: &'static str,
    use_ccl: bool,
    use_knowledge_matrix: bool,
    use_counterfactual: bool,
    use_random_mask_baseline: bool,
}

fn main() {
    let mut seeds = 5u64;
    let mut iters = 400usize;
    let mut base_iters = 800usize;
    let mut lr = TrainConfig::default().learning_rate;
    for arg in std::env::args().skip(1) {
        if let Some(v) = arg.strip_prefix("seeds=") {
            seeds = v.parse().unwrap();
        }
        if let Some(v) = arg.strip_prefix("iters=") {
            iters = v.parse().unwrap();
        }
        if let Some(v) = arg.strip_prefix("base-iters=") {
            base_iters = v.parse().unwrap();
        }
        if let Some(v) = arg.strip_prefix("lr=") {
            lr = v.parse().unwrap();
        }
    }

    let arms = [
        Arm {
            name: "baseline (no ccl, no aug)",
            use_ccl: false,
            use_knowledge_matrix: false,
            use_counterfactual: false,
            use_random_mask_baseline: false,
        },
        Arm {
            name: "ccl, all-ones matrix",
            use_ccl: true,
            use_knowledge_matrix: false,
            use_counterfactual: false,
            use_random_mask_baseline: false,
        },
        Arm {
            name: "ccl + knowledge matrix",
            use_ccl: true,
            use_knowledge_matrix: true,
            use_counterfactual: false,
            use_random_mask_baseline: false,
        },
        Arm {
            name: "full (ccl + matrix + counterfactual)",
            use_ccl: true,
            use_knowledge_matrix: true,
            use_counterfactual: true,
            use_random_mask_baseline: false,
        },
        Arm {
            name: "ccl + matrix + random mask",
            use_ccl: true,
            use_knowledge_matrix: true,
            use_counterfactual: false,
            use_random_mask_baseline: true,
        },
    ];

    let mut results: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    let mut base_accs: Vec<f64> = Vec::new();
    for seed in 0..seeds {
        let data_config = DatasetConfig {
            seed,
            ..DatasetConfig::default()
        };
        let dataset = generate_dataset(&data_config, None).unwrap();
        let zeta = case2_zeta(&dataset);
        let model = model_for_dataset(&dataset);
        let base_config = TrainConfig {
            seed,
            iterations: base_iters,
            learning_rate: lr,
            ..TrainConfig::default()
        };
        let base = train_base(&base_config, &dataset).unwrap();
        let eval0 = fewshot::trainer::evaluate(&model, &base.params, &dataset, true).unwrap();
        base_accs.push(eval0.base_accuracy);

        for (i, arm) in arms.iter().enumerate() {
            let config = TrainConfig {
                seed,
                iterations: iters,
                learning_rate: lr,
                use_ccl: arm.use_ccl,
                use_knowledge_matrix: arm.use_knowledge_matrix,
                use_counterfactual: arm.use_counterfactual,
                use_random_mask_baseline: arm.use_random_mask_baseline,
                ..TrainConfig::default()
            };
            let run = fine_tune(&model, &base.params, &config, &dataset, &zeta).unwrap();
            results[i].push(run.metrics.eval.novel_accuracy);
            println!(
                "seed {seed} {:<38} novel {:.3} base {:.3} margin {:+.3}",
                arm.name,
                run.metrics.eval.novel_accuracy,
                run.metrics.eval.base_accuracy,
                run.metrics.eval.separability_margin,
            );
        }
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = |xs: &[f64]| {
        let m = mean(xs);
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    println!("\nbase-stage base-split accuracy: {:.3}", mean(&base_accs));
    println!("{:<40} {:>8} {:>8}", "arm", "mean", "sd");
    for (arm, accs) in arms.iter().zip(results.iter()) {
        println!("{:<40} {:>8.4} {:>8.4}", arm.name, mean(accs), sd(accs));
    }
    let pooled_se = ((sd(&results[0]).powi(2) + sd(&results[3]).powi(2)) / seeds as f64).sqrt();
    println!(
        "\nfull - baseline = {:+.4} (pooled se {:.4})",
        mean(&results[3]) - mean(&results[0]),
        pooled_se
    );
}
