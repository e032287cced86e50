use std::path::{Path, PathBuf};

use taskmerge_core::merge::{TaskEntry, TiesScope};
use taskmerge_core::{
    compute_stats, cosine_matrix, metagpt_coefficients, open_checkpoint, run_recipe, write_checkpoint, Dtype, Error,
    KeyPolicy, MergeMethod, MergeRecipe, OutputDtype, StatsOptions, StatsReport, TensorBuffer, Transform,
};

fn write(dir: &Path, file: &str, tensors: &[(&str, Vec<f64>)], dtype: Dtype) -> PathBuf {
    let p = dir.join(file);
    let bufs: Vec<TensorBuffer> = tensors
        .iter()
        .map(|(n, v)| TensorBuffer::new(*n, vec![v.len()], v.clone()).unwrap())
        .collect();
    write_checkpoint(&p, &bufs, dtype, None).unwrap();
    p
}

fn entries(paths: &[PathBuf]) -> Vec<TaskEntry> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| TaskEntry {
            id: format!("t{i}"),
            path: p.clone(),
        })
        .collect()
}

#[test]
fn stats_feed_coefficients_and_merge() {
    let d = tempfile::tempdir().unwrap();
    let base = write(d.path(), "base", &[("a", vec![0.0, 0.0]), ("b", vec![1.0])], Dtype::F32);
    let m1 = write(d.path(), "m1", &[("a", vec![1.0, 0.0]), ("b", vec![1.0])], Dtype::F32);
    let m2 = write(d.path(), "m2", &[("a", vec![0.0, 1.0]), ("b", vec![2.0])], Dtype::F32);
    let hb = open_checkpoint(&base).unwrap();
    let (h1, h2) = (open_checkpoint(&m1).unwrap(), open_checkpoint(&m2).unwrap());
    let ids = vec!["t0".to_string(), "t1".to_string()];
    let opts = StatsOptions {
        want_gram: true,
        ..Default::default()
    };
    let (stats, _) = compute_stats(&hb, &[&h1, &h2], &ids, &opts).unwrap();
    assert_eq!(stats.sq_norms, vec![1.0, 2.0]);
    let cos = cosine_matrix(&stats).unwrap();
    assert_eq!(cos.values[0][1], 0.0);

    let json = serde_json::to_string(&StatsReport::new(&stats, Some(&cos))).unwrap();
    let back: StatsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.to_stats().unwrap().sq_norms, stats.sq_norms);

    let lambdas = metagpt_coefficients(&stats).unwrap().lambdas;
    assert_eq!(lambdas, vec![1.0 / 3.0, 2.0 / 3.0]);

    let recipe = MergeRecipe::new(&base, entries(&[m1, m2]), MergeMethod::MetaGpt, d.path().join("out"));
    let report = run_recipe(&recipe).unwrap();
    assert_eq!(report.coefficients.lambdas, lambdas);
    let out = open_checkpoint(&recipe.output).unwrap();
    let a = out.read_tensor("a").unwrap().values;
    assert!((a[0] - 1.0 / 3.0).abs() < 1e-7 && (a[1] - 2.0 / 3.0).abs() < 1e-7);
    assert!((out.read_tensor("b").unwrap().values[0] - (1.0 + 2.0 / 3.0)).abs() < 1e-7);
    let md = out.metadata().unwrap();
    assert_eq!(md["merge_method"], "metagpt");
    assert_eq!(md["transform"], "none");
}

#[test]
fn recipe_file_with_defaults() {
    let d = tempfile::tempdir().unwrap();
    let base = write(d.path(), "base", &[("w", vec![1.0; 4])], Dtype::BF16);
    let m = write(d.path(), "m", &[("w", vec![2.0; 4])], Dtype::BF16);
    let text = serde_json::json!({
        "base": base,
        "tasks": [{"id": "only", "path": m}],
        "method": "task_arithmetic_fixed",
        "output": d.path().join("o"),
        "output_dtype": "f32",
    });
    let recipe_path = d.path().join("r.json");
    std::fs::write(&recipe_path, text.to_string()).unwrap();
    let recipe = MergeRecipe::from_file(&recipe_path).unwrap();
    assert_eq!(recipe.fixed_lambda, 0.3);
    assert_eq!(recipe.output_dtype, OutputDtype::F32);
    run_recipe(&recipe).unwrap();
    let out = open_checkpoint(&recipe.output).unwrap();
    assert_eq!(out.meta("w").unwrap().dtype, Dtype::F32);
    assert!((out.read_tensor("w").unwrap().values[0] - 1.3).abs() < 1e-6);
}

#[test]
fn bad_recipes_are_usage_errors() {
    for text in [
        r#"{"base": "b", "tasks": [], "method": "metagpt", "output": "o"}"#,
        r#"{"base": "b", "tasks": [{"id": "x", "path": "m"}], "method": "nope", "output": "o"}"#,
        r#"{"base": "b", "tasks": [{"id": "x", "path": "m"}], "method": "metagpt", "output": "o", "ties_density": 0}"#,
        r#"{"base": "b", "tasks": [{"id": "x", "path": "m"}], "method": "metagpt", "output": "o", "typo": 1}"#,
    ] {
        let err = MergeRecipe::from_json(text)
            .and_then(|r| r.validate().map(|_| r))
            .unwrap_err();
        assert!(err.is_usage(), "{text}: {err}");
    }
}

#[test]
fn lenient_merge_fills_missing_tensors_with_the_base() {
    let d = tempfile::tempdir().unwrap();
    let base = write(
        d.path(),
        "base",
        &[("body", vec![0.0; 3]), ("lm_head", vec![5.0])],
        Dtype::F32,
    );
    let full = write(
        d.path(),
        "full",
        &[("body", vec![1.0; 3]), ("lm_head", vec![6.0])],
        Dtype::F32,
    );
    let partial = write(d.path(), "partial", &[("body", vec![2.0; 3])], Dtype::F32);
    let mut recipe = MergeRecipe::new(
        &base,
        entries(&[full, partial]),
        MergeMethod::WeightAverage,
        d.path().join("o"),
    );

    assert!(matches!(run_recipe(&recipe), Err(Error::MissingTensor { .. })));
    recipe.strict_keys = false;
    let report = run_recipe(&recipe).unwrap();
    assert_eq!(report.missing["lm_head"], vec!["t1".to_string()]);
    let out = open_checkpoint(&recipe.output).unwrap();
    assert_eq!(out.read_tensor("lm_head").unwrap().values, vec![5.5]);
    assert_eq!(out.read_tensor("body").unwrap().values, vec![1.5; 3]);
}

#[test]
fn transformed_norms_drive_metagpt_by_default() {
    let d = tempfile::tempdir().unwrap();
    let base = write(d.path(), "base", &[("w", vec![0.0; 4])], Dtype::F32);
    let m1 = write(d.path(), "m1", &[("w", vec![4.0, 1.0, 1.0, 1.0])], Dtype::F32);
    let m2 = write(d.path(), "m2", &[("w", vec![2.0, 2.0, 2.0, 2.0])], Dtype::F32);
    let mut recipe = MergeRecipe::new(&base, entries(&[m1, m2]), MergeMethod::MetaGpt, d.path().join("o"));
    recipe.transform = Transform::Ties;
    recipe.ties_density = 0.25;
    let report = run_recipe(&recipe).unwrap();
    assert_eq!(report.raw_sq_norms, vec![19.0, 16.0]);
    assert_eq!(report.transformed_sq_norms, Some(vec![16.0, 4.0]));
    assert_eq!(report.coefficients.lambdas, vec![0.8, 0.2]);

    recipe.norm_source = taskmerge_core::NormSource::Raw;
    let report = run_recipe(&recipe).unwrap();
    assert_eq!(report.coefficients.lambdas, vec![19.0 / 35.0, 16.0 / 35.0]);
}

#[test]
fn lenient_stats_policy_is_selectable() {
    let d = tempfile::tempdir().unwrap();
    let base = write(d.path(), "base", &[("a", vec![0.0]), ("b", vec![0.0])], Dtype::F32);
    let m = write(d.path(), "m", &[("a", vec![3.0])], Dtype::F32);
    let (hb, hm) = (open_checkpoint(&base).unwrap(), open_checkpoint(&m).unwrap());
    let ids = vec!["m".to_string()];
    let strict = StatsOptions::default();
    assert!(compute_stats(&hb, &[&hm], &ids, &strict).is_err());
    let lenient = StatsOptions {
        policy: KeyPolicy::Lenient,
        ..Default::default()
    };
    let (stats, cov) = compute_stats(&hb, &[&hm], &ids, &lenient).unwrap();
    assert_eq!(stats.sq_norms, vec![9.0]);
    assert_eq!(cov.missing["b"], vec!["m".to_string()]);
}

#[test]
fn ties_scope_selects_the_ranking_population() {
    let d = tempfile::tempdir().unwrap();
    let base = write(
        d.path(),
        "base",
        &[("a", vec![0.0; 2]), ("b", vec![0.0; 2])],
        Dtype::F32,
    );
    let m = write(
        d.path(),
        "m",
        &[("a", vec![5.0, -4.0]), ("b", vec![1.0, 0.5])],
        Dtype::F32,
    );
    let other = write(
        d.path(),
        "o",
        &[("a", vec![0.0, 0.0]), ("b", vec![0.0, 2.0])],
        Dtype::F32,
    );
    let mut recipe = MergeRecipe::new(
        &base,
        entries(&[m, other]),
        MergeMethod::TaskArithmeticFixed,
        d.path().join("x"),
    );
    recipe.fixed_lambda = 1.0;
    recipe.transform = Transform::Ties;
    recipe.ties_density = 0.5;

    let read = |r: &MergeRecipe| {
        let h = open_checkpoint(&r.output).unwrap();
        [h.read_tensor("a").unwrap().values, h.read_tensor("b").unwrap().values].concat()
    };
    let report = run_recipe(&recipe).unwrap();
    assert_eq!(read(&recipe), vec![5.0, 0.0, 1.0, 2.0]);
    assert_eq!(report.transformed_sq_norms, Some(vec![26.0, 4.0]));

    recipe.ties_scope = TiesScope::Global;
    let report = run_recipe(&recipe).unwrap();
    assert_eq!(read(&recipe), vec![5.0, -4.0, 0.0, 2.0]);
    assert_eq!(report.transformed_sq_norms, Some(vec![41.0, 4.0]));
    assert!(report.peak_live_buffers <= 2 + 2);
}
