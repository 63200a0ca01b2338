use std::fs;
use std::path::Path;

use kinirl_cli::{exit_code, run_command, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use kinirl_core::Error;
use tempfile::tempdir;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("kinirl").chain(args.iter().copied());
    let code = run_command(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, behavior: &str, count: usize, seed: u64) {
    let r = run(&[
        "gen",
        "--behavior",
        behavior,
        "--count",
        &count.to_string(),
        "--size",
        "32",
        "--seed",
        &seed.to_string(),
        "--out",
        p(dir),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn no_subcommand_is_a_usage_error() {
    let r = run(&[]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("Usage"));
    assert!(r.out.is_empty());
}

#[test]
fn help_exits_cleanly() {
    let r = run(&["--help"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("bench"));
}

#[test]
fn unknown_flag_and_bad_values_are_usage_errors() {
    assert_eq!(run(&["gen", "--behavior", "E9", "--count", "1", "--out", "x"]).code, EXIT_USAGE);
    assert_eq!(run(&["bench", "--engine", "gpu"]).code, EXIT_USAGE);
    assert_eq!(run(&["bench", "--frobnicate"]).code, EXIT_USAGE);
    let r = run(&["plan", "--model", "m", "--scene", "s", "--start", "1,2", "--goal", "1,2", "--out", "o"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("3 comma-separated"));
}

#[test]
fn gen_writes_scene_demo_meta_triples() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, "E2", 5, 1);
    let names: Vec<String> = snapshot(&d).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 15);
    for k in 0..5 {
        for stem in ["scene", "demo", "meta"] {
            assert!(names.iter().any(|n| n.starts_with(&format!("{stem}_{k:04}"))), "{stem} {k}");
        }
    }
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempdir().unwrap();
    gen(&tmp.path().join("a"), "E4", 3, 9);
    gen(&tmp.path().join("b"), "E4", 3, 9);
    assert_eq!(snapshot(&tmp.path().join("a")), snapshot(&tmp.path().join("b")));
}

#[test]
fn train_without_data_writes_nothing() {
    let tmp = tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = run(&["train", "--out", p(&out)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("--data"));
    assert!(!out.exists());
}

#[test]
fn train_rejects_bad_config() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, "E1", 1, 0);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "gamma = 1.5\n").unwrap();
    let out = tmp.path().join("o");
    let r = run(&["train", "--config", p(&cfg), "--data", p(&d), "--out", p(&out)]);
    assert_eq!(r.code, EXIT_DATA);
    assert!(r.err.contains("gamma"));
    assert!(!out.exists());
}

#[test]
fn train_plan_eval_round_trip() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, "E2", 3, 4);
    let before = snapshot(&d);
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "iterations = 4\nbatch_size = 2\nlr = 1e-3\ncheckpoint_every = 2\nseed = 5\n").unwrap();
    let out = tmp.path().join("o");
    let r = run(&["train", "--config", p(&cfg), "--data", p(&d), "--out", p(&out)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    for f in ["model_0002.fcn", "model_0004.fcn", "model_final.fcn", "report.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "iteration,l1_svf_gap,mean_nll,expert_reward,policy_reward");
    assert_eq!(report.lines().count(), 5);
    assert_eq!(fs::read(out.join("model_0004.fcn")).unwrap(), fs::read(out.join("model_final.fcn")).unwrap());
    assert_eq!(snapshot(&d), before, "training must not touch its inputs");

    let model = out.join("model_final.fcn");
    let traj = tmp.path().join("route.traj");
    let r = run(&[
        "plan",
        "--model",
        p(&model),
        "--scene",
        p(&d.join("scene_0000.grid")),
        "--start",
        "16,1,0",
        "--goal",
        "16,30",
        "--out",
        p(&traj),
        "--sample-seed",
        "3",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let text = fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("t,row,col,orientation,action\n1,16,1,0,"));
    let pgm = fs::read(traj.with_extension("pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 32 * 32);

    let csv = tmp.path().join("eval.csv");
    let r = run(&["eval", "--model", p(&model), "--data", p(&d), "--out", p(&csv), "--rollouts", "4"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("mean HD"));
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 4);
    assert!(rows.starts_with("sample,rollout,hd_m,hd_cells,completed,reward\n"));
}

#[test]
fn same_training_run_twice_gives_identical_models() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, "E4", 2, 2);
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "iterations = 2\nbatch_size = 2\nseed = 1\ncheckpoint_every = 0\n").unwrap();
    for o in ["o1", "o2"] {
        let out = tmp.path().join(o);
        assert_eq!(run(&["train", "--config", p(&cfg), "--data", p(&d), "--out", p(&out)]).code, EXIT_OK);
    }
    let a = fs::read(tmp.path().join("o1/model_final.fcn")).unwrap();
    let b = fs::read(tmp.path().join("o2/model_final.fcn")).unwrap();
    assert_eq!(a, b);
    assert!(!tmp.path().join("o1/model_0002.fcn").exists());
}

#[test]
fn plan_rejects_bad_inputs() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, "E1", 1, 0);
    let scene = d.join("scene_0000.grid");
    let bogus = d.join("meta_0000.txt");
    let traj = tmp.path().join("t.traj");
    let r = run(&[
        "plan", "--model", p(&bogus), "--scene", p(&scene), "--start", "16,1,0", "--goal", "16,30", "--out", p(&traj),
    ]);
    assert_eq!(r.code, EXIT_DATA);
    assert!(r.err.contains("magic"));

    let model = tmp.path().join("zero.fcn");
    kinirl_core::io_formats::write_model(&model, &kinirl_core::FcnParams::zeros()).unwrap();
    let r = run(&[
        "plan", "--model", p(&model), "--scene", p(&scene), "--start", "40,1,0", "--goal", "16,30", "--out", p(&traj),
    ]);
    assert_eq!(r.code, EXIT_USAGE);
    let r = run(&[
        "plan", "--model", p(&model), "--scene", p(&scene), "--start", "16,1,9", "--goal", "16,30", "--out", p(&traj),
    ]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(!traj.exists());
}

#[test]
fn eval_on_missing_dataset_is_a_data_error() {
    let tmp = tempdir().unwrap();
    let model = tmp.path().join("zero.fcn");
    kinirl_core::io_formats::write_model(&model, &kinirl_core::FcnParams::zeros()).unwrap();
    let r = run(&[
        "eval",
        "--model",
        p(&model),
        "--data",
        p(&tmp.path().join("nowhere")),
        "--out",
        p(&tmp.path().join("e.csv")),
    ]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn bench_emits_both_stages_for_each_engine() {
    for engine in ["conv", "naive"] {
        let r = run(&["bench", "--size", "16", "--iters", "5", "--svf-iters", "5", "--engine", engine]);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        let lines: Vec<&str> = r.out.lines().collect();
        assert_eq!(lines[0], "engine,stage,size,orientations,actions,iterations,seconds");
        assert!(lines[1].starts_with(&format!("{engine},RL,16,8,6,5,")));
        assert!(lines[2].starts_with(&format!("{engine},Svf,16,8,6,5,")));
    }
}

#[test]
fn bench_writes_csv_file() {
    let tmp = tempdir().unwrap();
    let f = tmp.path().join("bench.csv");
    let r = run(&["bench", "--size", "12", "--iters", "3", "--svf-iters", "3", "--actions", "3", "--out", p(&f)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let text = fs::read_to_string(f).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("conv,RL,12,8,3,3,"));
}

#[test]
fn bench_rejects_unsupported_shapes() {
    assert_eq!(run(&["bench", "--orients", "4", "--size", "8"]).code, EXIT_USAGE);
    assert_eq!(run(&["bench", "--actions", "5", "--size", "8"]).code, EXIT_USAGE);
}

#[test]
fn error_kinds_map_to_exit_codes() {
    assert_eq!(exit_code(&Error::Argument("x".into())), EXIT_USAGE);
    assert_eq!(exit_code(&Error::Numeric("x".into())), EXIT_NUMERIC);
    assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
    assert_eq!(exit_code(&Error::Planning("x".into())), EXIT_DATA);
    assert_eq!(
        exit_code(&Error::Format {
            offset: 3,
            message: "x".into()
        }),
        EXIT_DATA
    );
}
