//! Subcommand implementations.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use fewshot::bounds::{
    lemma1_bound, proposition1_bound, theorem1_approx, theorem2_compare, BoundInputs,
};
use fewshot::counterfactual::{erase_mask, gradcam_for_class, norm, upsample_bilinear};
use fewshot::error::Error;
use fewshot::io::{read_matrix_auto, write_matrix, write_matrix_csv, write_pgm, write_ppm, MatrixFile};
use fewshot::knowledge::{
    build_knowledge_matrix, read_attribute_labels_json, read_embedding_sets_dir,
    top_counter_categories, Case, KnowledgeInputs, KnowledgeMatrix, TextEmbeddingTable, WORD_DIM,
};
use fewshot::loss::LossBreakdown;
use fewshot::rng::{seeded_rng, stream_rng, Stream};
use fewshot::toymodel::{generate_dataset, Dataset, DatasetConfig, ToyImage, ToyModel, ToyModelParams};
use fewshot::trainer::{self, Stage, TrainConfig};
use fewshot::Result;

use crate::manifest::Manifest;
use crate::{
    BoundsAction, BoundsArgs, DatasetArgs, ExportArgs, FineTuneArgs, KnowledgeArgs, PreviewArgs,
    TrainArgs, TrainOverrides,
};

use rand::Rng;

pub fn knowledge(args: KnowledgeArgs) -> Result<()> {
    let case = Case::from_number(args.case)?;
    let (names, labels) = read_attribute_labels_json(&args.labels)?;
    let mut inputs = KnowledgeInputs::new(names.clone());
    for label in labels {
        let id = label.category_id;
        inputs.labels[id] = Some(label);
    }
    inputs.cluster_count = args.cluster_count;
    inputs.seed = args.seed;
    if let Some(dir) = &args.embeddings {
        inputs.embedding_sets = read_embedding_sets_dir(dir, &names)?;
    }
    if args.category_words.is_some() || args.attribute_words.is_some() {
        inputs.text = Some(read_text_table(
            args.category_words.as_deref(),
            args.attribute_words.as_deref(),
            args.null_word.as_deref(),
        )?);
    }
    if args.base_count > names.len() {
        return Err(Error::invalid(format!(
            "base count {} exceeds {} categories",
            args.base_count,
            names.len()
        )));
    }
    let base_set: BTreeSet<usize> = (0..args.base_count).collect();
    let matrix = build_knowledge_matrix(case, &base_set, &inputs)?;

    std::fs::create_dir_all(&args.out)?;
    matrix.write_csv(&args.out.join("zeta.csv"))?;
    Manifest::new(
        "knowledge",
        args.seed,
        json!({
            "case": args.case,
            "base_count": args.base_count,
            "cluster_count": args.cluster_count,
            "categories": names,
        }),
        json!({
            "labels": args.labels,
            "embeddings": args.embeddings,
            "category_words": args.category_words,
            "attribute_words": args.attribute_words,
            "null_word": args.null_word,
        }),
    )
    .write(&args.out)?;
    Ok(())
}

fn read_text_table(
    category_words: Option<&Path>,
    attribute_words: Option<&Path>,
    null_word: Option<&Path>,
) -> Result<TextEmbeddingTable> {
    let read_rows = |path: Option<&Path>| -> Result<Vec<Vec<f64>>> {
        match path {
            Some(p) => Ok(read_matrix_auto(p)?.to_rows()),
            None => Ok(Vec::new()),
        }
    };
    let null_vector = match null_word {
        Some(p) => {
            let m = read_matrix_auto(p)?;
            m.to_rows()
                .into_iter()
                .next()
                .ok_or_else(|| Error::invalid("null-word matrix is empty"))?
        }
        None => vec![0.0; WORD_DIM],
    };
    Ok(TextEmbeddingTable {
        category_words: read_rows(category_words)?,
        attribute_words: read_rows(attribute_words)?,
        null_vector,
    })
}

pub fn dataset(args: DatasetArgs) -> Result<()> {
    let mut config: DatasetConfig = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => DatasetConfig::default(),
    };
    if let Some(v) = args.base_categories {
        config.base_categories = v;
    }
    if let Some(v) = args.novel_categories {
        config.novel_categories = v;
    }
    if let Some(v) = args.k_shot {
        config.k_shot = v;
    }
    if let Some(v) = args.samples_per_base {
        config.samples_per_base = v;
    }
    if let Some(v) = args.test_per_category {
        config.test_per_category = v;
    }
    if let Some(v) = args.image_size {
        config.image_size = v;
    }
    if let Some(v) = args.attribute_count {
        config.attribute_count = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }

    let data = generate_dataset(&config, None)?;
    data.save(&args.out)?;
    fewshot::knowledge::write_attribute_labels_json(
        &args.out.join("labels.json"),
        &data.category_names,
        &data.attribute_labels,
    )?;
    write_side_information(&args.out, &data)?;
    if args.export_images {
        export_images(&args.out.join("images"), &data)?;
    }
    Manifest::new(
        "dataset",
        config.seed,
        serde_json::to_value(&config)?,
        json!({ "config": args.config }),
    )
    .write(&args.out)?;
    Ok(())
}

/// Synthetic stand-ins for the side-information sources: per-category
/// attribute-model embeddings (a fixed random linear image of the
/// attribute bits plus noise) and word vectors (random unit attribute
/// words, categories as noisy sums of their attribute words).
fn write_side_information(out: &Path, data: &Dataset) -> Result<()> {
    let n_attr = data.attribute_labels[0].bits.len();
    let embed_dim = 32usize;
    let per_category = 8usize;
    let mut rng = seeded_rng(data.config.seed.wrapping_add(0x51DE));

    let mixing: Vec<f64> = (0..embed_dim * n_attr)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let emb_dir = out.join("embeddings");
    std::fs::create_dir_all(&emb_dir)?;
    for (name, labels) in data.category_names.iter().zip(data.attribute_labels.iter()) {
        let mut rows = Vec::with_capacity(per_category);
        for _ in 0..per_category {
            let mut row = vec![0.0; embed_dim];
            for (o, r) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (a, bit) in labels.bits.iter().enumerate() {
                    if *bit == 1 {
                        acc += mixing[o * n_attr + a];
                    }
                }
                *r = acc + rng.gen_range(-0.05..0.05);
            }
            rows.push(row);
        }
        write_matrix(&emb_dir.join(format!("{name}.fsm")), &MatrixFile::from_rows(&rows)?)?;
    }

    let mut attribute_words = Vec::with_capacity(n_attr);
    for _ in 0..n_attr {
        let v: Vec<f64> = (0..WORD_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        attribute_words.push(v.into_iter().map(|x| x / norm).collect::<Vec<f64>>());
    }
    let mut category_words = Vec::with_capacity(data.category_names.len());
    for labels in &data.attribute_labels {
        let mut w = vec![0.0; WORD_DIM];
        for (a, bit) in labels.bits.iter().enumerate() {
            if *bit == 1 {
                for (x, y) in w.iter_mut().zip(attribute_words[a].iter()) {
                    *x += y;
                }
            }
        }
        for x in &mut w {
            *x += rng.gen_range(-0.02..0.02);
        }
        category_words.push(w);
    }
    let null_word: Vec<f64> = {
        let v: Vec<f64> = (0..WORD_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    };
    write_matrix(
        &out.join("category_words.fsm"),
        &MatrixFile::from_rows(&category_words)?,
    )?;
    write_matrix(
        &out.join("attribute_words.fsm"),
        &MatrixFile::from_rows(&attribute_words)?,
    )?;
    write_matrix(
        &out.join("null_word.fsm"),
        &MatrixFile::from_rows(&[null_word])?,
    )?;
    Ok(())
}

fn export_images(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dump = |prefix: &str, images: &[ToyImage]| -> Result<()> {
        for (i, img) in images.iter().enumerate() {
            write_ppm(
                &dir.join(format!("{prefix}_{i:04}_cat{}.ppm", img.label)),
                img.width,
                img.height,
                &img.pixels,
            )?;
        }
        Ok(())
    };
    dump("base", &data.base_train)?;
    dump("novel", &data.novel_shots)?;
    dump("test", &data.test)?;
    Ok(())
}

fn resolve_train_config(overrides: &TrainOverrides, stage: Stage) -> Result<TrainConfig> {
    let mut config: TrainConfig = match &overrides.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    config.stage = stage;
    if let Some(v) = overrides.k_shot {
        config.k_shot = v;
    }
    if let Some(v) = overrides.tau {
        config.tau = v;
    }
    if let Some(v) = overrides.lambda1 {
        config.lambda1 = v;
    }
    if let Some(v) = overrides.lambda2 {
        config.lambda2 = v;
    }
    if let Some(v) = overrides.lambda3 {
        config.lambda3 = v;
    }
    if let Some(v) = overrides.epsilon {
        config.epsilon = v;
    }
    if let Some(v) = overrides.erase_threshold {
        config.erase_threshold = v;
    }
    if let Some(v) = overrides.k_e {
        config.k_e = v;
    }
    if let Some(v) = overrides.n_cluster_centers {
        config.n_cluster_centers = v;
    }
    if let Some(v) = overrides.knowledge_case {
        config.knowledge_case = v;
    }
    if let Some(v) = overrides.cluster_count {
        config.cluster_count = v;
    }
    if let Some(v) = overrides.seed {
        config.seed = v;
    }
    if let Some(v) = overrides.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = overrides.iterations {
        config.iterations = v;
    }
    if let Some(v) = overrides.batch_size {
        config.batch_size = v;
    }
    if overrides.no_ccl {
        config.use_ccl = false;
    }
    if overrides.no_knowledge_matrix {
        config.use_knowledge_matrix = false;
    }
    if overrides.no_clustering {
        config.use_clustering = false;
    }
    if overrides.no_counterfactual {
        config.use_counterfactual = false;
    }
    if overrides.random_mask_baseline {
        config.use_random_mask_baseline = true;
        config.use_counterfactual = false;
    }
    if overrides.no_normalize {
        config.normalize_embeddings = false;
    }
    if overrides.freeze_all_conv {
        config.train_last_conv = false;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct IterationRecord<'a> {
    iteration: usize,
    #[serde(flatten)]
    loss: &'a LossBreakdown,
    augmented: usize,
    ccl_included: usize,
}

fn write_metrics(
    path: &Path,
    losses: &[LossBreakdown],
    augmented: Option<&[usize]>,
    included: Option<&[usize]>,
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, loss) in losses.iter().enumerate() {
        let record = IterationRecord {
            iteration: i,
            loss,
            augmented: augmented.map_or(0, |a| a[i]),
            ccl_included: included.map_or(0, |a| a[i]),
        };
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
    }
    file.flush()?;
    Ok(())
}

pub fn train_base(args: TrainArgs) -> Result<()> {
    let data = Dataset::load(&args.dataset)?;
    let config = resolve_train_config(&args.overrides, Stage::Base)?;
    let result = trainer::train_base(&config, &data)?;
    std::fs::create_dir_all(&args.out)?;
    let model = trainer::model_for_dataset(&data);
    result.params.save(&args.out.join("params"), &model.config)?;
    write_metrics(&args.out.join("metrics.jsonl"), &result.losses, None, None)?;
    Manifest::new(
        "train-base",
        config.seed,
        serde_json::to_value(&config)?,
        json!({ "dataset": args.dataset }),
    )
    .write(&args.out)?;
    Ok(())
}

/// Knowledge matrix for a run: an explicit CSV wins; otherwise the matrix
/// is built from the dataset directory's own side-information files using
/// the configured case (labels.json always; embeddings/ for cases 1 and
/// 3; the word-vector matrices for cases 4 and 5).
fn zeta_for(
    dataset_dir: &Path,
    data: &Dataset,
    case: u8,
    cluster_count: usize,
    seed: u64,
    path: Option<&Path>,
) -> Result<KnowledgeMatrix> {
    if let Some(p) = path {
        return KnowledgeMatrix::read_csv(p);
    }
    let case = Case::from_number(case)?;
    let mut inputs = KnowledgeInputs::new(data.category_names.clone());
    for label in &data.attribute_labels {
        inputs.labels[label.category_id] = Some(label.clone());
    }
    inputs.cluster_count = cluster_count;
    inputs.seed = seed;
    let mut base_set = BTreeSet::new();
    match case {
        Case::Embedding | Case::Mixed => {
            inputs.embedding_sets =
                read_embedding_sets_dir(&dataset_dir.join("embeddings"), &data.category_names)?;
            base_set = (0..data.config.base_categories).collect();
        }
        Case::CategoryWord | Case::AttributeWord => {
            inputs.text = Some(read_text_table(
                Some(&dataset_dir.join("category_words.fsm")),
                Some(&dataset_dir.join("attribute_words.fsm")),
                Some(&dataset_dir.join("null_word.fsm")),
            )?);
        }
        Case::Label => {}
    }
    build_knowledge_matrix(case, &base_set, &inputs)
}

pub fn fine_tune(args: FineTuneArgs) -> Result<()> {
    let data = Dataset::load(&args.dataset)?;
    let (params, model_config) = ToyModelParams::load(&args.params)?;
    let model = ToyModel::new(model_config);
    let config = resolve_train_config(&args.overrides, Stage::Finetune)?;
    let zeta = zeta_for(
        &args.dataset,
        &data,
        config.knowledge_case,
        config.cluster_count,
        config.seed,
        args.zeta.as_deref(),
    )?;
    let result = trainer::fine_tune(&model, &params, &config, &data, &zeta)?;
    std::fs::create_dir_all(&args.out)?;
    result.params.save(&args.out.join("params"), &model.config)?;
    write_metrics(
        &args.out.join("metrics.jsonl"),
        &result.metrics.losses,
        Some(&result.metrics.augmented),
        Some(&result.metrics.ccl_included),
    )?;
    let eval = serde_json::to_string_pretty(&result.metrics.eval)?;
    std::fs::write(args.out.join("eval.json"), eval + "\n")?;
    Manifest::new(
        "fine-tune",
        config.seed,
        serde_json::to_value(&config)?,
        json!({
            "dataset": args.dataset,
            "params": args.params,
            "zeta": args.zeta,
        }),
    )
    .write(&args.out)?;
    Ok(())
}

pub fn augment_preview(args: PreviewArgs) -> Result<()> {
    let data = Dataset::load(&args.dataset)?;
    let (params, model_config) = ToyModelParams::load(&args.params)?;
    let model = ToyModel::new(model_config);
    let zeta = zeta_for(&args.dataset, &data, 2, 5, args.seed, args.zeta.as_deref())?;
    let images = match args.split.as_str() {
        "base-train" => &data.base_train,
        "novel-shots" => &data.novel_shots,
        "test" => &data.test,
        other => {
            return Err(Error::invalid(format!(
                "unknown split {other}; use base-train, novel-shots, or test"
            )))
        }
    };
    let image = images.get(args.index).ok_or_else(|| {
        Error::invalid(format!(
            "index {} out of range; split holds {} images",
            args.index,
            images.len()
        ))
    })?;

    // Same draw order as the training-path augmentation: counter category
    // first, then mask fill.
    let mut rng = stream_rng(args.seed, Stream::Augment);
    let candidates = top_counter_categories(&zeta, image.label, args.k_e)?;
    let counter = candidates[rng.gen_range(0..candidates.len())];
    let a_class = gradcam_for_class(image, &params, &model, image.label)?;
    let a_counter = gradcam_for_class(image, &params, &model, counter)?;
    let combined = fewshot::counterfactual::counterfactual_map(&a_class, &a_counter)?;
    let upsampled = upsample_bilinear(&combined, image.width, image.height);
    let mask = erase_mask(&upsampled, args.threshold)?;
    let augmented = fewshot::counterfactual::apply_mask(image, &mask, &mut rng)?;

    std::fs::create_dir_all(&args.out)?;
    write_ppm(&args.out.join("original.ppm"), image.width, image.height, &image.pixels)?;
    write_ppm(
        &args.out.join("augmented.ppm"),
        augmented.width,
        augmented.height,
        &augmented.pixels,
    )?;
    let a_class_n = norm(&a_class);
    let a_counter_n = norm(&a_counter);
    write_pgm(
        &args.out.join("attribution_class.pgm"),
        a_class_n.width,
        a_class_n.height,
        &a_class_n.grid,
    )?;
    write_pgm(
        &args.out.join("attribution_counter.pgm"),
        a_counter_n.width,
        a_counter_n.height,
        &a_counter_n.grid,
    )?;
    write_pgm(
        &args.out.join("counterfactual.pgm"),
        upsampled.width,
        upsampled.height,
        &upsampled.grid,
    )?;
    let mask_gray: Vec<f64> = mask.grid.iter().map(|v| *v as f64).collect();
    write_pgm(&args.out.join("mask.pgm"), mask.width, mask.height, &mask_gray)?;

    let sidecar = json!({
        "split": args.split,
        "index": args.index,
        "category": image.label,
        "category_name": data.category_names[image.label],
        "counter_category": counter,
        "counter_name": data.category_names[counter],
        "threshold": args.threshold,
        "k_e": args.k_e,
        "seed": args.seed,
        "erased_fraction": mask.erased_fraction(),
    });
    std::fs::write(
        args.out.join("preview.json"),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    Manifest::new(
        "augment-preview",
        args.seed,
        json!({
            "split": args.split,
            "index": args.index,
            "k_e": args.k_e,
            "threshold": args.threshold,
        }),
        json!({
            "dataset": args.dataset,
            "params": args.params,
            "zeta": args.zeta,
        }),
    )
    .write(&args.out)?;
    Ok(())
}

fn eval_formula(formula: &str, inputs: &BoundInputs) -> Result<serde_json::Value> {
    Ok(match formula {
        "lemma1" => json!({ "formula": "lemma1", "value": lemma1_bound(inputs)? }),
        "thm1" => json!({ "formula": "thm1", "value": theorem1_approx(inputs)? }),
        "prop1" => json!({ "formula": "prop1", "value": proposition1_bound(inputs)? }),
        "thm2" => {
            let cmp = theorem2_compare(inputs)?;
            json!({
                "formula": "thm2",
                "sup_with": cmp.sup_with,
                "sup_without": cmp.sup_without,
                "holds": cmp.holds,
            })
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown formula {other}; use lemma1, thm1, prop1, or thm2"
            )))
        }
    })
}

fn set_varied(inputs: &mut BoundInputs, field: &str, value: f64) -> Result<()> {
    match field {
        "lambda_c" => inputs.lambda_c = value,
        "lambda_g" => inputs.lambda_g = value,
        "delta" => inputs.delta = value,
        "gamma_gap" => inputs.gamma_gap = value,
        "n_base" => inputs.n_base = value.round() as u64,
        "n_novel" => inputs.n_novel = value.round() as u64,
        "n_real" => inputs.n_real = value.round() as u64,
        "k_e" => inputs.k_e = value.round() as u64,
        other => {
            return Err(Error::invalid(format!("unknown sweep field {other}")));
        }
    }
    Ok(())
}

pub fn bounds(args: BoundsArgs) -> Result<()> {
    match args.action {
        BoundsAction::Eval { formula, params } => {
            let inputs: BoundInputs = serde_json::from_str(&std::fs::read_to_string(&params)?)?;
            let value = eval_formula(&formula, &inputs)?;
            println!("{value}");
            Ok(())
        }
        BoundsAction::Sweep {
            formula,
            params,
            vary,
            from,
            to,
            steps,
            out,
        } => {
            if steps < 2 {
                return Err(Error::invalid("sweep needs at least 2 steps"));
            }
            let base: BoundInputs = serde_json::from_str(&std::fs::read_to_string(&params)?)?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
            if formula == "thm2" {
                writeln!(file, "{vary},sup_with,sup_without,holds")?;
            } else {
                writeln!(file, "{vary},value")?;
            }
            for i in 0..steps {
                let x = from + (to - from) * i as f64 / (steps - 1) as f64;
                let mut inputs = base;
                set_varied(&mut inputs, &vary, x)?;
                let row = eval_formula(&formula, &inputs)?;
                if formula == "thm2" {
                    writeln!(
                        file,
                        "{x},{},{},{}",
                        row["sup_with"], row["sup_without"], row["holds"]
                    )?;
                } else {
                    writeln!(file, "{x},{}", row["value"])?;
                }
            }
            file.flush()?;
            Ok(())
        }
    }
}

pub fn export(args: ExportArgs) -> Result<()> {
    let matrix = read_matrix_auto(&args.input)?;
    match args.output.extension().and_then(|e| e.to_str()) {
        Some("csv") => write_matrix_csv(&args.output, &matrix)?,
        _ => write_matrix(&args.output, &matrix)?,
    }
    Ok(())
}
