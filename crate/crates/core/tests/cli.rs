use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sinr::data::{encode_inputs, write_observations, ObservationSet};
use sinr::eval::EvalGrid;
use sinr::geo::{GeoCoord, GridSpec, InputMode};
use sinr::net::SinrModel;
use sinr::synthetic::DiskTask;
use sinr::{NetConfig, NetParams};

fn sinr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinr"))
        .args(args)
        .env("SINR_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_disk_obs(dir: &Path) -> PathBuf {
    let path = dir.join("obs.csv");
    write_observations(&DiskTask::default().observations(300, 5), &path).unwrap();
    path
}

fn train_small(obs: &Path, out: &Path) -> Output {
    sinr(&[
        "train",
        "--obs",
        s(obs),
        "--epochs",
        "2",
        "--batch-size",
        "64",
        "--hidden",
        "8",
        "--layers",
        "1",
        "--seed",
        "3",
        "--out",
        s(out),
    ])
}

fn manifest(path: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_owned(), v.to_owned())
        })
        .collect()
}

fn get<'a>(m: &'a [(String, String)], key: &str) -> &'a str {
    &m.iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no {key}"))
        .1
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sinr(&[]).status.code(), Some(2));
    assert_eq!(sinr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sinr(&["train", "--obs", "x.csv"]).status.code(), Some(2));
    assert_eq!(sinr(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let obs = write_disk_obs(dir.path());
    let out = dir.path().join("m.sinr");
    let env_without_raster = sinr(&[
        "train",
        "--obs",
        s(&obs),
        "--input",
        "env",
        "--out",
        s(&out),
    ]);
    assert_eq!(env_without_raster.status.code(), Some(2));
    let bad_loss = sinr(&[
        "train",
        "--obs",
        s(&obs),
        "--loss",
        "an-best",
        "--out",
        s(&out),
    ]);
    assert_eq!(bad_loss.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("m.sinr");
    let r = sinr(&["train", "--obs", s(&missing), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());

    let garbage = dir.path().join("garbage.sinr");
    std::fs::write(&garbage, b"not a model").unwrap();
    let r = sinr(&[
        "predict",
        "--model",
        s(&garbage),
        "--lon",
        "0",
        "--lat",
        "0",
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn train_writes_model_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_disk_obs(dir.path());
    let a = dir.path().join("a.sinr");
    let b = dir.path().join("b.sinr");
    let r = train_small(&obs, &a);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert_eq!(
        String::from_utf8_lossy(&r.stdout)
            .lines()
            .filter(|l| l.starts_with("epoch "))
            .count(),
        2
    );
    assert_eq!(train_small(&obs, &b).status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let m = manifest(&dir.path().join("a.sinr.manifest"));
    assert_eq!(get(&m, "obs_sha256"), sinr::cli::sha256_file(&obs).unwrap());
    assert_eq!(get(&m, "model_sha256"), sinr::cli::sha256_file(&a).unwrap());
    assert_eq!(get(&m, "loss"), "an-full");
    assert_eq!(get(&m, "master_seed"), "3");
    assert_eq!(get(&m, "n_records"), "300");
    assert!(get(&m, "epoch.1.mean_loss").parse::<f64>().is_ok());
    let mb = manifest(&dir.path().join("b.sinr.manifest"));
    assert_eq!(get(&m, "model_sha256"), get(&mb, "model_sha256"));
}

#[test]
fn resume_from_final_checkpoint_reproduces_model() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_disk_obs(dir.path());
    let straight = dir.path().join("straight.sinr");
    let ckpt = dir.path().join("run.ckpt");
    let common = [
        "--batch-size",
        "64",
        "--hidden",
        "8",
        "--layers",
        "1",
        "--seed",
        "9",
    ];
    let mut args = vec![
        "train",
        "--obs",
        s(&obs),
        "--epochs",
        "3",
        "--out",
        s(&straight),
    ];
    args.extend(common);
    assert_eq!(sinr(&args).status.code(), Some(0));

    // The checkpoint holds the finished run; resuming must rebuild the same
    // model file. Mid-run resume is covered by the library tests.
    let partial = dir.path().join("partial.sinr");
    let mut args = vec![
        "train",
        "--obs",
        s(&obs),
        "--epochs",
        "3",
        "--out",
        s(&partial),
    ];
    args.extend(common);
    args.extend(["--checkpoint", s(&ckpt)]);
    assert_eq!(sinr(&args).status.code(), Some(0));
    let resumed = dir.path().join("resumed.sinr");
    let mut args = vec![
        "train",
        "--obs",
        s(&obs),
        "--epochs",
        "3",
        "--out",
        s(&resumed),
    ];
    args.extend(common);
    args.extend(["--resume", s(&ckpt)]);
    assert_eq!(sinr(&args).status.code(), Some(0));
    assert_eq!(
        std::fs::read(&straight).unwrap(),
        std::fs::read(&resumed).unwrap()
    );
}

fn zero_model(dir: &Path) -> PathBuf {
    let cfg = NetConfig {
        hidden_dim: 4,
        n_residual_layers: 1,
        ..NetConfig::new(4, 2)
    };
    let m = SinrModel::new(
        cfg.clone(),
        NetParams::zeros(&cfg),
        InputMode::Coords,
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let path = dir.join("zero.sinr");
    m.save(&path).unwrap();
    path
}

#[test]
fn export_raster_of_zero_model_is_mid_grey() {
    let dir = tempfile::tempdir().unwrap();
    let model = zero_model(dir.path());
    let prefix = dir.path().join("range");
    let r = sinr(&[
        "export-raster",
        "--model",
        s(&model),
        "--species",
        "b",
        "--resolution",
        "3",
        "--out",
        s(&prefix),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let pgm = std::fs::read_to_string(dir.path().join("range.pgm")).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("6 3"));
    assert_eq!(lines.next(), Some("255"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row, "128 128 128 128 128 128");
    }
    let csv = std::fs::read_to_string(dir.path().join("range.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("cell,lon,lat,score"));
    assert_eq!(csv.lines().count(), 1 + 18);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,-150,-60,0.5"));

    let r = sinr(&[
        "export-raster",
        "--model",
        s(&model),
        "--species",
        "b",
        "--resolution",
        "3",
        "--out",
        s(&prefix),
        "--binary-threshold",
        "fixed:0.4",
    ]);
    assert_eq!(r.status.code(), Some(0));
    let pgm = std::fs::read_to_string(dir.path().join("range.pgm")).unwrap();
    assert!(pgm.lines().skip(3).all(|l| l == "255 255 255 255 255 255"));

    let r = sinr(&[
        "export-raster",
        "--model",
        s(&model),
        "--species",
        "zzz",
        "--resolution",
        "3",
        "--out",
        s(&prefix),
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn export_raster_rows_run_north_to_south() {
    // Logistic model whose only weight is on sin(pi * lat / 90): bright in
    // the north, dark in the south.
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetConfig::logistic_regression(4, 1);
    let mut params = NetParams::zeros(&cfg);
    params.head.weight[[0, 2]] = 10.0;
    let m = SinrModel::new(cfg, params, InputMode::Coords, vec!["n".into()]).unwrap();
    let model = dir.path().join("north.sinr");
    m.save(&model).unwrap();
    let prefix = dir.path().join("r");
    let r = sinr(&[
        "export-raster",
        "--model",
        s(&model),
        "--species",
        "n",
        "--resolution",
        "2",
        "--out",
        s(&prefix),
    ]);
    assert_eq!(r.status.code(), Some(0));
    let pgm = std::fs::read_to_string(dir.path().join("r.pgm")).unwrap();
    assert_eq!(pgm, "P2\n4 2\n255\n255 255 255 255\n0 0 0 0\n");
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lats: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(
        lats,
        vec![-45.0, -45.0, -45.0, -45.0, 45.0, 45.0, 45.0, 45.0]
    );
}

#[test]
fn predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_disk_obs(dir.path());
    let model_path = dir.path().join("m.sinr");
    assert_eq!(train_small(&obs, &model_path).status.code(), Some(0));
    let coords_path = dir.path().join("q.csv");
    std::fs::write(&coords_path, "lon,lat\n-100,40\n20.5,-3.25\n180,-90\n").unwrap();
    let r = sinr(&[
        "predict",
        "--model",
        s(&model_path),
        "--coords",
        s(&coords_path),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );

    let model = SinrModel::load(&model_path).unwrap();
    let coords: Vec<GeoCoord> = [(-100.0, 40.0), (20.5, -3.25), (180.0, -90.0)]
        .iter()
        .map(|&(a, b)| GeoCoord::new(a, b).unwrap())
        .collect();
    let y = model
        .predict(&encode_inputs(&coords, InputMode::Coords, None).unwrap())
        .unwrap();
    let mut expected = format!("lon,lat,{}\n", model.species.join(","));
    for (c, row) in coords.iter().zip(y.outer_iter()) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        expected += &format!("{},{},{}\n", c.lon(), c.lat(), vals.join(","));
    }
    assert_eq!(String::from_utf8(r.stdout).unwrap(), expected);

    let r = sinr(&[
        "predict",
        "--model",
        s(&model_path),
        "--lon",
        "-100",
        "--lat",
        "40",
        "--species",
        "disk_b",
    ]);
    assert_eq!(r.status.code(), Some(0));
    let out = String::from_utf8(r.stdout).unwrap();
    assert_eq!(out, format!("lon,lat,disk_b\n-100,40,{}\n", y[[0, 1]]));
}

/// Three records of `a` in cell 0, one in cell 5 and one of `b` in cell 7
/// of the 4x2 grid.
fn grid_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let pt = |lon, lat| GeoCoord::new(lon, lat).unwrap();
    let o = ObservationSet::from_pairs([
        ("a", pt(-170.0, -45.0)),
        ("a", pt(-100.0, -10.0)),
        ("a", pt(-91.0, -89.0)),
        ("a", pt(-45.0, 45.0)),
        ("b", pt(170.0, 80.0)),
    ]);
    let obs = dir.join("obs.csv");
    write_observations(&o, &obs).unwrap();
    let eg = EvalGrid::new(
        GridSpec::new(2).unwrap(),
        vec!["a".into(), "b".into(), "c".into()],
        vec![
            vec![(0, true), (5, true), (2, false)],
            vec![(7, true), (6, false), (0, false)],
            vec![(1, true), (3, false)],
        ],
    )
    .unwrap();
    let grid = dir.join("eval.txt");
    eg.write(&grid).unwrap();
    (obs, grid)
}

#[test]
fn eval_map_grid_baseline_dump() {
    let dir = tempfile::tempdir().unwrap();
    let (obs, grid) = grid_fixture(dir.path());
    let dump = dir.path().join("cells.csv");
    let report = dir.path().join("report.csv");
    let r = sinr(&[
        "eval",
        "map",
        "--grid",
        s(&grid),
        "--baseline",
        "grid:2",
        "--obs",
        s(&obs),
        "--dump-cells",
        s(&dump),
        "--report",
        s(&report),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert_eq!(
        std::fs::read_to_string(&dump).unwrap(),
        "species_id,cell,lon,lat,label,score\n\
         a,0,-135,-45,1,1\n\
         a,2,45,-45,0,0\n\
         a,5,-45,45,1,0.3333333333333333\n\
         b,0,-135,-45,0,0\n\
         b,6,45,45,0,0\n\
         b,7,135,45,1,1\n"
    );
    assert_eq!(
        std::fs::read_to_string(&report).unwrap(),
        "kind,id,value,detail\n\
         species,a,1,present=2;absent=1\n\
         species,b,1,present=1;absent=2\n\
         skipped,c,,not predicted by the model\n\
         summary,MAP,1,species=2\n"
    );
}

#[test]
fn eval_geoprior_with_grid_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (obs, _) = grid_fixture(dir.path());
    let scores = dir.path().join("scores.csv");
    // Image 1: the classifier prefers b, but only a was seen in its cell.
    // Image 2: already correct.
    std::fs::write(
        &scores,
        "image_id,true_species_id,lon,lat\n\
         1,a,-150,-40,a:0.4,b:0.6\n\
         2,b,160,70,a:0.1,b:0.9\n",
    )
    .unwrap();
    let r = sinr(&[
        "eval",
        "geoprior",
        "--scores",
        s(&scores),
        "--baseline",
        "grid:2",
        "--obs",
        s(&obs),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert_eq!(
        String::from_utf8(r.stdout).unwrap(),
        "kind,id,value,detail\n\
         summary,baseline_top1,50,images=2\n\
         summary,weighted_top1,100,images=2\n\
         summary,delta_top1,50,images=2\n"
    );
}

#[test]
fn eval_geofeature_runs_on_model() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_disk_obs(dir.path());
    let model = dir.path().join("m.sinr");
    assert_eq!(train_small(&obs, &model).status.code(), Some(0));
    let raster = dir.path().join("layer.envgrid");
    let n_rows = 9;
    let n_cols = 18;
    let values = (0..n_rows * n_cols)
        .map(|i| Some((i % n_cols) as f64 + (i / n_cols) as f64))
        .collect();
    sinr::data::EnvGrid::new(n_rows, n_cols, (-180.0, 180.0, -90.0, 90.0), values)
        .unwrap()
        .write(&raster)
        .unwrap();
    let r = sinr(&[
        "eval",
        "geofeature",
        "--model",
        s(&model),
        "--target-raster",
        s(&raster),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let out = String::from_utf8(r.stdout).unwrap();
    let last = out.lines().last().unwrap();
    assert!(last.starts_with("summary,mean_r2,"), "{out}");

    let r = sinr(&[
        "eval",
        "geofeature",
        "--baseline",
        "grid:2",
        "--obs",
        s(&obs),
        "--target-raster",
        s(&raster),
    ]);
    assert_eq!(r.status.code(), Some(1));
}
