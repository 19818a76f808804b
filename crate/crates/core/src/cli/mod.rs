pub mod args;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use care::dataset::{SyntheticBVSpec, SyntheticDetectorSpec};
use care::ensemble::{run, EnsembleConfig};
use care::evaluation::{
    aggregation_study, bias_variance_all, estimation_gap_study, precision_recall_curve, BVConfig,
    Procedure,
};
use care::{load_csv, CareError, CsvOptions, Dataset};

use self::args::{DetectArgs, EvalArgs, InputArgs, Study, SynthBvArgs, SynthErrorArgs};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(err: &CareError) -> i32 {
    match err {
        CareError::Parameter(_) => EXIT_USAGE,
        CareError::EmptyUnion | CareError::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CareError {
    CareError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CareError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CareError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn load(input: &InputArgs) -> Result<Dataset, CareError> {
    if !input.delimiter.is_ascii() {
        return Err(CareError::Parameter("delimiter must be an ASCII character".into()));
    }
    let options = CsvOptions {
        delimiter: input.delimiter as u8,
        label_column: input.label_column.clone(),
        outlier_label: input.outlier_label.clone(),
    };
    load_csv(&input.input, &options)
}

fn fingerprint(path: &Path) -> Result<String, CareError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct Outputs {
    scores: &'static str,
    ranks: &'static str,
    diagnostics: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_estimates: Option<&'static str>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    config: &'a EnsembleConfig,
    input: String,
    label_column: String,
    dataset_sha256: String,
    points: usize,
    features: usize,
    outputs: Outputs,
}

pub fn cmd_detect(args: &DetectArgs, verbose: bool) -> Result<(), CareError> {
    let data = load(&args.input)?;
    let config = EnsembleConfig {
        k: args.k,
        b: args.bags,
        max_iter: args.max_iter,
        confidence: args.confidence,
        detector_kind: args.detector,
        prune_threshold: args.prune_threshold,
        seed: args.seed,
        mode: args.mode,
        ..EnsembleConfig::default()
    };
    let det = run(&data, &config)?;
    for r in &det.diagnostics.iterations {
        log::info!(
            "iteration {}: auc {:?}, |U| {}, pruned {}, |S| {}, T {:?}, {:.3}s",
            r.iteration,
            r.auc,
            r.union_size,
            r.pruned,
            r.sample_size,
            r.filtered,
            r.wall_seconds
        );
    }

    let out = &args.out_dir;
    create_dir(out)?;
    let mut scores = String::from("index,score\n");
    for (i, s) in det.scores.iter().enumerate() {
        writeln!(scores, "{i},{s:.16e}").unwrap();
    }
    let mut ranks = String::from("rank,index,score\n");
    for (r, &i) in det.rank.iter().enumerate() {
        writeln!(ranks, "{r},{i},{:.16e}", det.scores[i]).unwrap();
    }
    let mut diagnostics = String::new();
    for r in &det.diagnostics.iterations {
        diagnostics.push_str(&json(r));
        diagnostics.push('\n');
    }
    diagnostics.push_str(&json(&serde_json::json!({ "stop_reason": det.diagnostics.stop_reason })));
    diagnostics.push('\n');
    write_file(&out.join("scores.csv"), &scores)?;
    write_file(&out.join("ranks.csv"), &ranks)?;
    write_file(&out.join("diagnostics.jsonl"), &diagnostics)?;

    if verbose {
        let mut dump = String::new();
        for e in &det.diagnostics.estimates {
            dump.push_str(&json(e));
            dump.push('\n');
        }
        write_file(&out.join("error_estimates.jsonl"), &dump)?;
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        config: &config,
        input: args.input.input.display().to_string(),
        label_column: format!("{:?}", args.input.label_column),
        dataset_sha256: fingerprint(&args.input.input)?,
        points: data.n(),
        features: data.d(),
        outputs: Outputs {
            scores: "scores.csv",
            ranks: "ranks.csv",
            diagnostics: "diagnostics.jsonl",
            error_estimates: verbose.then_some("error_estimates.jsonl"),
        },
    };
    let text = serde_json::to_string_pretty(&manifest).expect("plain data serializes");
    write_file(&out.join("manifest.json"), &(text + "\n"))?;
    println!("{}", out.join("scores.csv").display());
    Ok(())
}

/// Reads `index,score` rows (header optional) into a dense vector.
fn read_scores(path: &Path, n: usize) -> Result<Vec<f64>, CareError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut scores = vec![f64::NAN; n];
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (line_no == 0 && line.starts_with("index")) {
            continue;
        }
        let parse_err = |column: usize, message: String| CareError::Parse {
            row: line_no + 1,
            column,
            message,
        };
        let mut cells = line.split(',');
        let (Some(idx), Some(score)) = (cells.next(), cells.next()) else {
            return Err(CareError::Structure(format!(
                "line {} of {} needs index and score",
                line_no + 1,
                path.display()
            )));
        };
        let idx: usize = idx.trim().parse().map_err(|e| parse_err(1, format!("{e}")))?;
        let score: f64 = score.trim().parse().map_err(|e| parse_err(2, format!("{e}")))?;
        let slot = scores
            .get_mut(idx)
            .ok_or_else(|| CareError::Validation(format!("score index {idx} out of range")))?;
        *slot = score;
    }
    if let Some(missing) = scores.iter().position(|s| s.is_nan()) {
        return Err(CareError::Validation(format!("no score for point {missing}")));
    }
    Ok(scores)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CareError> {
    let data = load(&args.input)?;
    let labels = data
        .labels()
        .ok_or_else(|| CareError::Parameter("eval needs --label-column".into()))?;
    let scores = read_scores(&args.scores, data.n())?;
    let curve = precision_recall_curve(&scores, labels)?;
    println!("AP {}", curve.ap);
    if let Some(out) = &args.out_dir {
        create_dir(out)?;
        let mut text = String::from("threshold,precision,recall\n");
        for i in 0..curve.thresholds.len() {
            writeln!(
                text,
                "{:.16e},{:.16e},{:.16e}",
                curve.thresholds[i], curve.precision[i], curve.recall[i]
            )
            .unwrap();
        }
        write_file(&out.join("pr_curve.csv"), &text)?;
        write_file(
            &out.join("summary.json"),
            &(json(&serde_json::json!({ "ap": curve.ap, "points": data.n() })) + "\n"),
        )?;
    }
    Ok(())
}

pub fn cmd_synth_bv(args: &SynthBvArgs) -> Result<(), CareError> {
    let spec: SyntheticBVSpec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CareError::Validation(format!("{}: {e}", path.display())))?
        }
        None => {
            let mut s = SyntheticBVSpec::with_defaults(
                args.dim,
                args.components,
                args.outliers.into(),
                args.seed,
            );
            s.num_train_sets = args.train_sets;
            s
        }
    };
    let procedures: Vec<Procedure> = if args.procedures.is_empty() {
        Procedure::ALL.to_vec()
    } else {
        args.procedures.clone()
    };
    let config = BVConfig {
        detector_kind: args.detector,
        k_values: args.k_values.clone(),
        rounds: args.rounds,
        ..BVConfig::default()
    };
    let results = bias_variance_all(&spec, &procedures, &config)?;

    create_dir(&args.out_dir)?;
    let mut csv = String::from("procedure,k,bias,variance,mse\n");
    for r in &results {
        for (i, k) in r.k_values.iter().enumerate() {
            writeln!(
                csv,
                "{},{k},{:.16e},{:.16e},{:.16e}",
                r.procedure.name(),
                r.bias[i],
                r.variance[i],
                r.mse[i]
            )
            .unwrap();
        }
        println!(
            "{:<30} mean bias {:.6}  mean variance {:.6}",
            r.procedure.name(),
            r.mean_bias(),
            r.mean_variance()
        );
    }
    write_file(&args.out_dir.join("bias_variance.csv"), &csv)?;
    let summary = serde_json::json!({ "spec": spec, "config": config, "results": results });
    write_file(
        &args.out_dir.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("plain data serializes") + "\n"),
    )?;
    Ok(())
}

pub fn cmd_synth_error(args: &SynthErrorArgs) -> Result<(), CareError> {
    let spec = SyntheticDetectorSpec {
        n: args.points,
        outlier_fraction: args.outlier_fraction,
        true_errors: args.errors.clone(),
        trials: args.trials,
        seed: args.seed,
    };
    create_dir(&args.out_dir)?;
    match args.study {
        Study::Gap => {
            let report = estimation_gap_study(&spec)?;
            let mut csv = String::from("detector,true_error,mean_gap,max_gap\n");
            for i in 0..report.true_errors.len() {
                writeln!(
                    csv,
                    "{i},{},{:.16e},{:.16e}",
                    report.true_errors[i], report.mean_gap[i], report.max_gap[i]
                )
                .unwrap();
            }
            println!("mean gap {:.6}", report.overall_mean_gap);
            write_file(&args.out_dir.join("estimation_gaps.csv"), &csv)?;
            write_file(&args.out_dir.join("summary.json"), &(json(&report) + "\n"))?;
        }
        Study::Aggregation => {
            let report = aggregation_study(&spec, args.prune_threshold)?;
            let mut csv = String::from("trial,average,weighted,pruned_weighted\n");
            for t in 0..report.average.len() {
                writeln!(
                    csv,
                    "{t},{:.16e},{:.16e},{:.16e}",
                    report.average[t], report.weighted[t], report.pruned_weighted[t]
                )
                .unwrap();
            }
            let [a, w, p] = report.mean_accuracies();
            println!("mean accuracy: average {a:.6}, weighted {w:.6}, pruned-weighted {p:.6}");
            write_file(&args.out_dir.join("accuracies.csv"), &csv)?;
            write_file(&args.out_dir.join("summary.json"), &(json(&report) + "\n"))?;
        }
    }
    Ok(())
}
