//! Subcommand implementations: thin wrappers over the library with JSON
//! and CSV plumbing.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;

use fstripe_core::attention::{
    self, exact_rpe_logits, fstripe_attention, softmax_attend, AttentionConfig, AttentionInputs,
    FeatureMapKind, PeKind,
};
use fstripe_core::bench::{run_bench, BenchConfig, BenchMethod};
use fstripe_core::features::{
    closed_form_pd, positional_product, rff_features, sample_gaussian, sff_features, sub_seed,
    FourierParams, Side,
};
use fstripe_core::grid::{linear_grid, structural_grid, StructuralGrid};
use fstripe_core::io::{
    read_json, write_json, AttendRequest, AttendResponse, FourierParamsJson, GridJson, MatrixJson,
    PianorollJson,
};
use fstripe_core::metrics;
use fstripe_core::net::{self, BinarizeStrategy, Model, ModelConfig, TrainConfig};

use crate::config::Config;
use crate::{
    ApproxErrorArgs, AttendArgs, BenchArgs, BinarizeArg, EvalArgs, FeatureMapArg, FeaturesArgs,
    PeArg, SideArg, TaskArg, TrainArgs,
};

impl From<PeArg> for PeKind {
    fn from(value: PeArg) -> Self {
        match value {
            PeArg::None => PeKind::None,
            PeArg::Sff => PeKind::Sff,
            PeArg::Rff => PeKind::Rff,
        }
    }
}

impl From<FeatureMapArg> for FeatureMapKind {
    fn from(value: FeatureMapArg) -> Self {
        match value {
            FeatureMapArg::Elu => FeatureMapKind::EluPlusOne,
            FeatureMapArg::Prf => FeatureMapKind::PositiveRandomFeatures,
        }
    }
}

impl From<BinarizeArg> for BinarizeStrategy {
    fn from(value: BinarizeArg) -> Self {
        match value {
            BinarizeArg::Threshold => BinarizeStrategy::Threshold,
            BinarizeArg::ThresholdWithMerge => BinarizeStrategy::ThresholdWithMerge,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_grid(args: &FeaturesArgs, config: &Config) -> Result<StructuralGrid> {
    if let Some(path) = &args.grid {
        let json: GridJson = read_json(path)?;
        return Ok(json.to_grid()?);
    }
    if let Some(path) = &args.labels {
        let sequences = fstripe_core::grid::load_labels(path)?;
        let mask: Vec<usize> = match &args.mask {
            Some(mask) => mask.clone(),
            None => (0..sequences.len()).collect(),
        };
        return Ok(structural_grid(&sequences, &mask)?);
    }
    let length = config.resolve(args.length, "length", 16usize)?;
    Ok(linear_grid(length)?)
}

pub fn features(args: FeaturesArgs) -> Result<()> {
    let config = Config::load(args.config.as_deref())?;
    let grid = load_grid(&args, &config)?;
    let seed = config.resolve(args.seed, "seed", 0u64)?;
    let params = match &args.params {
        Some(path) => {
            let json: FourierParamsJson = read_json(path)?;
            json.to_params()?
        }
        None => {
            let n_f = config.resolve(args.n_f, "n_f", 8usize)?;
            let r = config.resolve(args.r, "r", 64usize)?;
            FourierParams::init(n_f, grid.levels(), r, seed)?
        }
    };
    let side = match args.side {
        SideArg::Q => Side::Query,
        SideArg::K => Side::Key,
    };
    let matrix = match args.pe {
        PeArg::Rff => rff_features(&grid, &params, side)?.matrix().clone(),
        PeArg::Sff => {
            let z = sample_gaussian(params.seed(), 2 * params.n_f(), params.realizations())?;
            sff_features(&grid, &params, side, &z)?.matrix().clone()
        }
        PeArg::None => bail!("feature dumps need --pe rff or --pe sff"),
    };
    write_json(&args.out, &MatrixJson::from_array(&matrix))?;
    Ok(())
}

pub fn attend(args: AttendArgs) -> Result<()> {
    let config = Config::load(args.config.as_deref())?;
    let seed = config.resolve(args.seed, "seed", 0u64)?;
    let request: AttendRequest = read_json(&args.input)?;
    let q = request.q.to_array()?;
    let k = request.k.to_array()?;
    let v = request.v.to_array()?;
    let grid_q = match &request.grid_q {
        Some(g) => g.to_grid()?,
        None => linear_grid(q.nrows())?,
    };
    let grid_k = match &request.grid_k {
        Some(g) => g.to_grid()?,
        None => linear_grid(k.nrows())?,
    };
    let pe: PeKind = args.pe.into();
    let head_dim = q.ncols();
    let n_f = config.resolve(args.n_f, "n_f", 8usize)?;
    let r = config.resolve(args.r, "r", 64usize)?;
    let inputs = AttentionInputs::new(q.clone(), k.clone(), v.clone())?
        .with_grids(grid_q.clone(), grid_k.clone())?;

    let params = attention::per_dimension_params(head_dim, n_f, grid_q.levels(), r, seed)?;

    let response = if args.exact {
        // Exact quadratic oracle over the closed-form positional matrices.
        let logits = match pe {
            PeKind::None => q.dot(&k.t()),
            _ => {
                let stack: Vec<Array2<f64>> = params
                    .iter()
                    .map(|p| closed_form_pd(&grid_q, &grid_k, p))
                    .collect::<fstripe_core::Result<_>>()?;
                exact_rpe_logits(&q, &k, &stack)?
            }
        };
        let output = softmax_attend(&logits, &v, head_dim, args.causal)?;
        AttendResponse {
            output: MatrixJson::from_array(&output),
            logits: Some(MatrixJson::from_array(&logits)),
        }
    } else {
        let output = match pe {
            PeKind::None => {
                let map: FeatureMapKind = args.feature_map.into();
                let phi_q = attention::feature_map(&q, map, sub_seed(seed, 0x00fe_a7fe))?;
                let phi_k = attention::feature_map(&k, map, sub_seed(seed, 0x00fe_a7fe))?;
                attention::linear_attention(&phi_q, &phi_k, &v, args.causal)?
            }
            _ => {
                let attn_config = AttentionConfig {
                    heads: 1,
                    head_dim,
                    causal: args.causal,
                    feature_map: args.feature_map.into(),
                    pe_kind: pe,
                    n_f,
                    realizations: r,
                };
                fstripe_attention(&inputs, &params, &attn_config)?
            }
        };
        AttendResponse { output: MatrixJson::from_array(&output), logits: None }
    };
    write_json(&args.out, &response)?;
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let config = Config::load(args.config.as_deref())?;
    let methods: Vec<BenchMethod> = args
        .methods
        .iter()
        .map(|name| BenchMethod::parse(name))
        .collect::<fstripe_core::Result<_>>()?;
    let bench_config = BenchConfig {
        head_dim: config.resolve(args.head_dim, "head_dim", 4usize)?,
        n_f: config.resolve(args.n_f, "n_f", 4usize)?,
        value_dim: config.resolve(args.value_dim, "value_dim", 8usize)?,
        reps: config.resolve(args.reps, "reps", 5usize)?,
        seed: config.resolve(args.seed, "seed", 0u64)?,
        threads: config.resolve(args.threads, "threads", 1usize)?,
        max_exact_bytes: config.resolve(args.max_exact_bytes, "max_exact_bytes", 4usize << 30)?,
    };
    let rows = run_bench(&methods, &args.lengths, &bench_config)?;
    let mut csv = String::from("method,t,wall_ns,peak_extra_bytes,status\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.method, row.len, row.wall_ns, row.peak_extra_bytes, row.status
        ));
    }
    write_text(&args.out, &csv)?;
    if rows.iter().any(|r| r.status != "ok") {
        eprintln!("warning: some runs were skipped; see status column");
    }
    Ok(())
}

pub fn approx_error(args: ApproxErrorArgs) -> Result<()> {
    let config = Config::load(args.config.as_deref())?;
    if args.r_list.is_empty() {
        bail!("empty realization list");
    }
    let seeds = config.resolve(args.seeds, "seeds", 20usize)?;
    if seeds == 0 {
        bail!("need at least one seed");
    }
    let length = config.resolve(args.length, "length", 32usize)?;
    let n_f = config.resolve(args.n_f, "n_f", 8usize)?;
    let levels = config.resolve(args.levels, "levels", 1usize)?;
    let seed = config.resolve(args.seed, "seed", 0u64)?;

    let grid = linear_grid(length)?;
    let mut csv = String::from("r,mean_err,std_err\n");
    for &r in &args.r_list {
        let params = FourierParams::init(n_f, levels, r, seed)?;
        let reference = closed_form_pd(&grid, &grid, &params)?;
        let reference_norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut errs = Vec::with_capacity(seeds);
        for s in 0..seeds {
            let z = sample_gaussian(sub_seed(seed, (r as u64) << 20 | s as u64), 2 * n_f, r)?;
            let pq = sff_features(&grid, &params, Side::Query, &z)?;
            let pk = sff_features(&grid, &params, Side::Key, &z)?;
            let product = positional_product(&pq, &pk)?;
            let err = (&product - &reference).iter().map(|v| v * v).sum::<f64>().sqrt()
                / reference_norm;
            errs.push(err);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / errs.len() as f64;
        csv.push_str(&format!("{r},{mean},{}\n", var.sqrt()));
    }
    write_text(&args.out, &csv)?;
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = Config::load(args.config.as_deref())?;
    let seed = config.resolve(args.seed, "seed", 0u64)?;
    let samples = config.resolve(args.samples, "samples", 16usize)?;
    let length = config.resolve(args.length, "length", 64usize)?;
    let chords = config.resolve(args.chords, "chords", 6usize)?;

    let dataset = match args.task {
        TaskArg::Copy => net::copy_task(samples, length, sub_seed(seed, 1))?,
        TaskArg::ChordCue => net::chord_cue_task(samples, length, chords, sub_seed(seed, 1))?,
    };
    let pe: PeKind = args.pe.into();
    let level_mask = match (&args.level, pe) {
        (_, PeKind::None) => None,
        (Some(mask), _) => Some(mask.clone()),
        // the synthetic grids carry two levels; default to the chord level
        (None, _) => Some(vec![0]),
    };
    let model_config = ModelConfig {
        layers: config.resolve(args.layers, "layers", 2usize)?,
        heads: config.resolve(args.heads, "heads", 4usize)?,
        model_dim: config.resolve(args.model_dim, "model_dim", 64usize)?,
        ff_dim: config.resolve(args.ff_dim, "ff_dim", 128usize)?,
        pe_kind: pe,
        feature_map: args.feature_map.into(),
        n_f: config.resolve(args.n_f, "n_f", 2usize)?,
        realizations: config.resolve(args.r, "r", 16usize)?,
        levels: level_mask.as_ref().map_or(1, |m| m.len()),
        level_mask,
        dropout: 0.0,
        seed,
    };
    let train_config = TrainConfig {
        epochs: config.resolve(args.epochs, "epochs", 10usize)?,
        batch_size: config.resolve(args.batch_size, "batch_size", 2usize)?,
        learning_rate: config.resolve(args.lr, "lr", 1e-3)?,
        warmup_steps: config.resolve(args.warmup, "warmup", 20usize)?,
        epoch_decay: config.resolve(args.decay, "decay", 0.95)?,
        curriculum: !args.no_curriculum,
        grad_clip: config.resolve(args.clip, "clip", 1.0)?,
        binarize_strategy: args.binarize.into(),
        binarize_threshold: config.resolve(args.binarize_threshold, "binarize_threshold", 0.5)?,
        binarize_merge_gap: config.resolve(args.merge_gap, "merge_gap", 1usize)?,
        seed,
    };
    train_config.validate()?;

    let mut model = Model::new(model_config)?;
    if let Some(path) = &args.init_checkpoint {
        net::checkpoint::save(&model, path)?;
    }
    let logs = net::train(&mut model, &dataset, &train_config)?;
    net::checkpoint::save(&model, &args.out_checkpoint)?;

    let mut csv = String::from("epoch,lr,loss,grad_norm\n");
    for row in &logs {
        csv.push_str(&format!("{},{},{},{}\n", row.epoch, row.lr, row.loss, row.grad_norm));
    }
    write_text(&args.out_log, &csv)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let _config = Config::load(args.config.as_deref())?;
    let target: PianorollJson = read_json(&args.target)?;
    let prediction: PianorollJson = read_json(&args.prediction)?;
    let target = target.to_roll()?;
    let prediction = prediction.to_roll()?;

    let cs = metrics::chroma_similarity(&target, &prediction)?;
    let ssmd = metrics::ssmd(&target, &prediction)?;
    let gs = metrics::grooving_similarity(&target, &prediction)?;
    let ndd = metrics::note_density_distance(&target, &prediction)?;

    let csv = format!("piece_id,cs,ssmd,gs,ndd\n{},{cs},{ssmd},{gs},{ndd}\n", args.piece_id);
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
