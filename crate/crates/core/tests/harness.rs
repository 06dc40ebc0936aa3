use blockguide::harness::{
    emit_tradeoff_data, emit_tradeoff_series, run_grid, to_csv_string, write_csv, ExperimentConfig, ResultTable,
    CSV_HEADER,
};
use blockguide::Error;

fn config(body: &str) -> ExperimentConfig {
    let text = format!(
        r#"
        seeds = [2024]
        batch = 16
        [prior]
        components = [{{ weight = 1.0, mean = [1.0], variance = 1.0 }}]
        [reward]
        kind = "linear"
        a = [1.0]
        [schedule]
        steps = 40
        {body}
        "#
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

#[test]
fn minimal_config_gets_defaults() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
        [prior]
        components = [{ weight = 1.0, mean = [0.0], variance = 1.0 }]
        [reward]
        kind = "linear"
        a = [1.0]
        "#,
    )
    .unwrap();
    assert_eq!(cfg.schedule.steps, 500);
    assert_eq!(cfg.guidance.n_particles, 4);
    assert_eq!(cfg.guidance.block_sample, 5);
    assert_eq!(cfg.guidance.guidance_scale, 0.2);
    assert_eq!(cfg.seeds, vec![2024]);
}

#[test]
fn negative_temperature_names_the_field() {
    let err = ExperimentConfig::from_toml_str(
        r#"
        [prior]
        components = [{ weight = 1.0, mean = [0.0], variance = 1.0 }]
        [reward]
        kind = "linear"
        a = [1.0]
        [guidance]
        temperature = -1.0
        "#,
    )
    .unwrap_err();
    assert!(err.to_string().contains("temperature"), "{err}");
}

#[test]
fn n_sweep_gives_four_cells_per_seed() {
    let cfg = config("[sweep]\nn_particles = [1, 4, 16, 40]");
    assert_eq!(cfg.grid_size(), 4);
    assert_eq!(cfg.cells().unwrap().len(), 4);
    let mut cfg = cfg;
    cfg.seeds = vec![1, 2, 3];
    cfg.replicates = 2;
    assert_eq!(cfg.grid_size(), 4 * 3 * 2);
}

#[test]
fn grid_is_complete_and_sorted() {
    let mut cfg = config("[sweep]\nsampler = [\"unicode\", \"bon\"]\nn_particles = [2, 1]");
    cfg.seeds = vec![7, 3];
    cfg.replicates = 2;
    let table = run_grid(&cfg).unwrap();
    assert!(table.failures.is_empty());
    assert_eq!(table.rows.len(), cfg.grid_size());
    assert_eq!(table.rows.len(), 2 * 2 * 2 * 2);
    let order: Vec<_> = table
        .rows
        .iter()
        .map(|r| (r.key.method.clone(), r.key.n, r.seed, r.replicate))
        .collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
}

#[test]
fn single_particle_bon_matches_baseline() {
    let cfg = config("[guidance]\nsampler = \"bon\"\nn_particles = 1");
    let table = run_grid(&cfg).unwrap();
    let row = &table.rows[0];
    assert_eq!(row.reward_norm.ratio(), Some(1.0));
    assert_eq!(row.reward_mean, row.baseline_reward_mean);
    assert_eq!(row.mmd2, 0.0);
}

#[test]
fn unguided_cell_normalizes_to_one() {
    let cfg = config("[guidance]\nsampler = \"unguided\"\nn_particles = 3");
    let row = &run_grid(&cfg).unwrap().rows[0];
    // three trajectories per run: the first matches the baseline's only one
    assert!(row.reward_norm.ratio().unwrap().is_finite());
    let cfg = config("[guidance]\nsampler = \"unguided\"\nn_particles = 1");
    let row = &run_grid(&cfg).unwrap().rows[0];
    assert_eq!(row.reward_norm.ratio(), Some(1.0));
}

#[test]
fn guidance_scale_sweep_is_monotone() {
    let mut cfg =
        config("[guidance]\nsampler = \"grad_only\"\nn_particles = 1\n[sweep]\nguidance_scale = [0.0, 0.1, 0.2, 0.4]");
    cfg.batch = 64;
    let table = run_grid(&cfg).unwrap();
    let r: Vec<f64> = table.rows.iter().map(|r| r.reward_mean).collect();
    assert_eq!(r.len(), 4);
    assert!(r.windows(2).all(|w| w[1] >= w[0]), "{r:?}");
}

#[test]
fn smaller_sampling_blocks_give_more_reward() {
    let mut cfg = config("[guidance]\nsampler = \"code\"\n[sweep]\nblock_sample = [2, 5, 10]");
    cfg.batch = 64;
    cfg.seeds = vec![2024, 2025];
    let table = run_grid(&cfg).unwrap();
    let by_block = |b: usize| {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.key.block_sample == b).collect();
        rows.iter().map(|r| r.reward_mean).sum::<f64>() / rows.len() as f64
    };
    let (r2, r5, r10) = (by_block(2), by_block(5), by_block(10));
    assert!(r2 >= r5 && r5 >= r10, "{r2} {r5} {r10}");
}

#[test]
fn failing_cells_are_recorded_and_others_run() {
    // block_grad = 0 is invalid for that cell only
    let cfg = config("[sweep]\nblock_grad = [0, 5]");
    let table = run_grid(&cfg).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.failures.len(), 1);
    assert_eq!(table.rows.len() + table.failures.len(), cfg.grid_size());
    assert!(
        table.failures[0].message.contains("block_grad"),
        "{}",
        table.failures[0].message
    );
}

#[test]
fn csv_has_exact_header_and_one_line_per_row() {
    let cfg = config("");
    let table = run_grid(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    write_csv(&table, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "method,N,B_s,B_g,tau,gamma,schedule,cluster_k,seed,reward_mean,reward_norm,mmd2,tilt_mean_error,nfe_denoiser,nfe_reward,nfe_grad,wall_ms"
    );
    assert_eq!(lines[0].split(',').count(), CSV_HEADER.len());
    let fields: Vec<_> = lines[1].split(',').collect();
    assert_eq!(fields[0], "unicode");
    assert_eq!(fields[8], "2024");
    // full-precision round trip
    assert_eq!(fields[9].parse::<f64>().unwrap(), table.rows[0].reward_mean);
    assert_eq!(fields[16], "");
}

#[test]
fn empty_table_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("none.csv");
    assert!(write_csv(&ResultTable::default(), &path).is_err());
    assert!(!path.exists());
}

#[test]
fn unwritable_path_names_the_path() {
    let table = run_grid(&config("")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("deeper").join("out.csv");
    let err = write_csv(&table, &path).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("deeper"), "{err}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let mut cfg = config("[guidance]\nselection = \"multinomial\"\ntemperature = 0.5\n[sweep]\nsampler = [\"code\", \"unicode\"]\ncluster_k = [0, 2]");
    cfg.seeds = vec![2024, 1];
    let a = to_csv_string(&run_grid(&cfg).unwrap()).unwrap();
    let b = to_csv_string(&run_grid(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tradeoff_series_per_method() {
    let mut cfg = config("[sweep]\nsampler = [\"code\", \"unicode\"]\nguidance_scale = [0.0, 0.2, 0.4]");
    cfg.seeds = vec![1, 2];
    let table = run_grid(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let series = emit_tradeoff_data(&table, "gamma", "reward_mean", dir.path()).unwrap();
    assert_eq!(series.len(), 2);
    for s in &series {
        assert_eq!(s.points.len(), 3);
        assert!(s.points.windows(2).all(|w| w[0].0 <= w[1].0));
        let text = std::fs::read_to_string(dir.path().join(format!("{}.dat", s.name))).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
    }
    let unicode = series.iter().find(|s| s.name == "unicode").unwrap();
    assert!(unicode.is_non_decreasing());
}

#[test]
fn one_row_gives_single_point_series() {
    let table = run_grid(&config("")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let series = emit_tradeoff_data(&table, "mmd2", "reward_mean", dir.path()).unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(series[0].points.len(), 1);
}

#[test]
fn unknown_series_field_is_diagnosed() {
    let table = run_grid(&config("")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = emit_tradeoff_data(&table, "nope", "reward_mean", dir.path()).unwrap_err();
    assert!(err.to_string().contains("nope"));
    let err = emit_tradeoff_series(&table, "mmd2", "reward_mean", &["colour"], dir.path()).unwrap_err();
    assert!(err.to_string().contains("colour"));
}
