//! On-disk formats.
//!
//! Grid file:
//!
//! ```text
//! KIRLGRD1\n
//! <rows> <cols> <channels>\n
//! channels * rows * cols little-endian f64, channel-major, row-major
//! ```
//!
//! Model file: `KIRLFCN1`, a little-endian `u32` layer count, then per layer
//! four `u32` (`out`, `in`, `kh`, `kw`) followed by the weights as
//! little-endian f64 in `[out][in][ky][kx]` order and the `out` biases.
//!
//! Trajectory file: CSV with header `t,row,col,orientation,action`; the
//! action is empty on the final record.
//!
//! Run config: `key = value` lines, `#` starts a comment.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridShape, Plane};
use crate::grid_mdp::{GoalSpec, TransitionKernelSet};
use crate::irl_trainer::{DemoSample, TrainConfig, TrainReport};
use crate::planner_eval::{Pose, TrajRecord, Trajectory};
use crate::reward_net::{FcnParams, LayerShape, SceneMap};
use crate::scene_synth::{Behavior, SyntheticSample};

pub const GRID_MAGIC: &[u8; 9] = b"KIRLGRD1\n";
pub const MODEL_MAGIC: &[u8; 8] = b"KIRLFCN1";

/// Header longer than this is rejected rather than scanned forever.
const MAX_HEADER_LINE: usize = 64;

/// Serialises a grid to bytes.
pub fn encode_grid(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + grid.data().len() * 8);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(format!("{} {} {}\n", grid.rows(), grid.cols(), grid.channels()).as_bytes());
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a grid, rejecting anything malformed or non-finite.
pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < GRID_MAGIC.len() || &bytes[..GRID_MAGIC.len()] != GRID_MAGIC {
        let at = bytes
            .iter()
            .zip(GRID_MAGIC.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(bytes.len().min(GRID_MAGIC.len()));
        return Err(Error::format(at as u64, "bad grid magic, expected KIRLGRD1"));
    }
    let start = GRID_MAGIC.len();
    let rest = &bytes[start..];
    let nl = rest
        .iter()
        .take(MAX_HEADER_LINE)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(start as u64, "grid header line is missing or too long"))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::format(start as u64, "grid header is not ASCII"))?;
    let dims: Vec<usize> = line
        .split(' ')
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(start as u64, format!("bad grid header `{line}`")))?;
    let [rows, cols, channels] = dims[..] else {
        return Err(Error::format(start as u64, format!("grid header needs 3 numbers, got `{line}`")));
    };
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(Error::format(start as u64, "grid dimensions must be positive"));
    }
    let payload_at = start + nl + 1;
    let expected = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(channels))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::format(start as u64, "grid dimensions overflow"))?;
    let actual = bytes.len() - payload_at;
    if actual != expected {
        return Err(Error::format(
            (payload_at + actual.min(expected)) as u64,
            format!("payload is {actual} bytes, expected {expected}"),
        ));
    }
    let mut data = Vec::with_capacity(expected / 8);
    for (k, chunk) in bytes[payload_at..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        if !v.is_finite() {
            return Err(Error::format((payload_at + 8 * k) as u64, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    Grid::new(rows, cols, channels, data)
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<()> {
    fs::write(path, encode_grid(grid))?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    decode_grid(&fs::read(path)?)
}

/// Writes a binary (P5) PGM, mapping `[min, max]` linearly onto `0..=255`.
pub fn encode_pgm(plane: &Plane, min: f64, max: f64) -> Result<Vec<u8>> {
    if !min.is_finite() || !max.is_finite() || min >= max {
        return Err(Error::arg(format!("PGM range needs min < max, got {min}..{max}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", plane.cols(), plane.rows()).into_bytes();
    for &v in plane.data() {
        let x = ((v - min) / (max - min) * 255.0).round().clamp(0.0, 255.0);
        out.push(x as u8);
    }
    Ok(out)
}

pub fn export_pgm(plane: &Plane, path: &Path, min: f64, max: f64) -> Result<()> {
    fs::write(path, encode_pgm(plane, min, max)?)?;
    Ok(())
}

/// PGM over the plane's own value range; constant planes map to mid-grey.
pub fn export_pgm_auto(plane: &Plane, path: &Path) -> Result<()> {
    let (lo, hi) = plane.min_max();
    if lo < hi {
        export_pgm(plane, path, lo, hi)
    } else {
        export_pgm(plane, path, lo - 1.0, lo + 1.0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajRow {
    t: usize,
    row: usize,
    col: usize,
    orientation: usize,
    action: Option<usize>,
}

pub fn write_traj<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if traj.is_empty() {
        w.write_record(["t", "row", "col", "orientation", "action"])?;
    }
    for r in traj.records() {
        w.serialize(TrajRow {
            t: r.t,
            row: r.row,
            col: r.col,
            orientation: r.orientation,
            action: r.action,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traj<R: Read>(input: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "row", "col", "orientation", "action"] {
        return Err(Error::data(format!(
            "trajectory header must be t,row,col,orientation,action, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for row in rd.deserialize() {
        let r: TrajRow = row?;
        records.push(TrajRecord {
            t: r.t,
            row: r.row,
            col: r.col,
            orientation: r.orientation,
            action: r.action,
        });
    }
    Trajectory::new(records)
}

pub fn write_traj_file(path: &Path, traj: &Trajectory) -> Result<()> {
    write_traj(fs::File::create(path)?, traj)
}

pub fn read_traj_file(path: &Path) -> Result<Trajectory> {
    read_traj(fs::File::open(path)?)
}

pub fn encode_model(params: &FcnParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.len() * 8);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for (l, shape) in params.layers().iter().enumerate() {
        for d in [shape.outputs, shape.inputs, shape.kernel, shape.kernel] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let (w, b) = params.layer(l);
        for v in w.iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Little-endian cursor that reports byte offsets in errors.
struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format(
                self.at as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.at),
            ));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.at;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::format(at as u64, format!("non-finite {what}")));
        }
        Ok(v)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<FcnParams> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(MODEL_MAGIC.len(), "magic")? != MODEL_MAGIC {
        return Err(Error::format(0, "bad model magic, expected KIRLFCN1"));
    }
    let n_layers = cur.u32("layer count")?;
    if n_layers > 64 {
        return Err(Error::format(8, format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut data = Vec::new();
    for _ in 0..n_layers {
        let at = cur.at;
        let (outputs, inputs, kh, kw) = (cur.u32("dims")?, cur.u32("dims")?, cur.u32("dims")?, cur.u32("dims")?);
        if kh != kw {
            return Err(Error::format(at as u64, format!("non-square kernel {kh}x{kw}")));
        }
        let shape = LayerShape {
            inputs,
            outputs,
            kernel: kh,
        };
        let count = outputs
            .checked_mul(inputs)
            .and_then(|v| v.checked_mul(kh * kh))
            .and_then(|v| v.checked_add(outputs))
            .filter(|&v| v <= (bytes.len() - cur.at) / 8)
            .ok_or_else(|| Error::format(at as u64, "layer is larger than the file"))?;
        for _ in 0..count {
            data.push(cur.f64("weight")?);
        }
        layers.push(shape);
    }
    if cur.at != bytes.len() {
        return Err(Error::format(cur.at as u64, "trailing bytes after the last layer"));
    }
    FcnParams::from_parts(layers, data)
}

pub fn write_model(path: &Path, params: &FcnParams) -> Result<()> {
    fs::write(path, encode_model(params))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<FcnParams> {
    decode_model(&fs::read(path)?)
}

/// Everything a run config file can set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub rows: usize,
    pub cols: usize,
    pub resolution: f64,
    pub behavior: Option<Behavior>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub rollouts: usize,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            rows: crate::scene_synth::DEFAULT_SCENE_SIZE,
            cols: crate::scene_synth::DEFAULT_SCENE_SIZE,
            resolution: GridShape::DEFAULT_RESOLUTION_M,
            behavior: None,
            data_dir: None,
            out_dir: None,
            rollouts: crate::planner_eval::DEFAULT_EVAL_SAMPLES,
            checkpoint_every: 50,
        }
    }
}

const CONFIG_KEYS: [&str; 16] = [
    "rows",
    "cols",
    "resolution",
    "value_iters",
    "svf_iters",
    "gamma",
    "lr",
    "lr_decay",
    "batch_size",
    "iterations",
    "behavior",
    "seed",
    "data_dir",
    "out_dir",
    "rollouts",
    "checkpoint_every",
];

fn config_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| config_err(line, key, format!("cannot parse `{v}`")))
}

/// Parses config text; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| config_err(line, body, "expected key = value"))?;
        let (key, v) = (key.trim(), value.trim());
        if !CONFIG_KEYS.contains(&key) {
            return Err(config_err(line, key, "unknown key"));
        }
        if !seen.insert(key.to_string()) {
            return Err(config_err(line, key, "duplicate key"));
        }
        match key {
            "rows" => cfg.rows = parse_value(line, key, v)?,
            "cols" => cfg.cols = parse_value(line, key, v)?,
            "resolution" => cfg.resolution = parse_value(line, key, v)?,
            "value_iters" => cfg.train.value_iters = parse_value(line, key, v)?,
            "svf_iters" => cfg.train.svf_iters = parse_value(line, key, v)?,
            "gamma" => {
                let g: f64 = parse_value(line, key, v)?;
                if !(g > 0.0 && g < 1.0) {
                    return Err(config_err(line, key, format!("gamma must be in (0, 1), got {g}")));
                }
                cfg.train.gamma = g;
            }
            "lr" => cfg.train.lr = parse_value(line, key, v)?,
            "lr_decay" => cfg.train.lr_decay = parse_value(line, key, v)?,
            "batch_size" => cfg.train.batch_size = parse_value(line, key, v)?,
            "iterations" => cfg.train.iterations = parse_value(line, key, v)?,
            "behavior" => {
                cfg.behavior = Some(v.parse().map_err(|_| config_err(line, key, format!("unknown behavior `{v}`")))?)
            }
            "seed" => cfg.train.seed = parse_value(line, key, v)?,
            "data_dir" => cfg.data_dir = Some(PathBuf::from(v)),
            "out_dir" => cfg.out_dir = Some(PathBuf::from(v)),
            "rollouts" => cfg.rollouts = parse_value(line, key, v)?,
            "checkpoint_every" => cfg.checkpoint_every = parse_value(line, key, v)?,
            _ => unreachable!("key list checked above"),
        }
        check_value(&cfg, line, key)?;
    }
    Ok(cfg)
}

fn check_value(cfg: &RunConfig, line: usize, key: &str) -> Result<()> {
    let bad = |m: &str| Err(config_err(line, key, m));
    match key {
        "rows" | "cols" if cfg.rows < 3 || cfg.cols < 3 => bad("grid sides must be at least 3"),
        "resolution" if !(cfg.resolution > 0.0 && cfg.resolution.is_finite()) => bad("resolution must be positive"),
        "value_iters" if cfg.train.value_iters < 1 => bad("must be at least 1"),
        "svf_iters" if cfg.train.svf_iters < 1 => bad("must be at least 1"),
        "lr" if !(cfg.train.lr > 0.0 && cfg.train.lr.is_finite()) => bad("lr must be positive"),
        "lr_decay" if !(cfg.train.lr_decay > 0.0 && cfg.train.lr_decay <= 1.0) => bad("lr_decay must be in (0, 1]"),
        "batch_size" if cfg.train.batch_size < 1 => bad("batch_size must be at least 1"),
        "rollouts" if cfg.rollouts < 1 => bad("rollouts must be at least 1"),
        _ => Ok(()),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// Provenance of one dataset sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeta {
    pub start: Pose,
    pub goal: GoalSpec,
    pub behavior: Behavior,
    pub seed: u64,
    pub resolution: f64,
}

impl SampleMeta {
    pub fn encode(&self) -> String {
        let ((r, c), k) = self.start;
        format!(
            "start={r},{c},{k}\ngoal={},{}\nbehavior={}\nseed={}\nresolution={}\n",
            self.goal.cell.0, self.goal.cell.1, self.behavior, self.seed, self.resolution
        )
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for (k, raw) in text.lines().enumerate() {
            let body = raw.trim();
            if body.is_empty() {
                continue;
            }
            let (key, v) = body
                .split_once('=')
                .ok_or_else(|| config_err(k + 1, body, "expected key=value"))?;
            if fields.insert(key.trim().to_string(), (k + 1, v.trim().to_string())).is_some() {
                return Err(config_err(k + 1, key.trim(), "duplicate key"));
            }
        }
        let get = |key: &str| {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| config_err(0, key, "missing key"))
        };
        let nums = |key: &str, n: usize| -> Result<Vec<usize>> {
            let (line, v) = get(key)?;
            let parts: Vec<usize> = v
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| config_err(line, key, format!("cannot parse `{v}`")))?;
            if parts.len() != n {
                return Err(config_err(line, key, format!("expected {n} comma-separated values")));
            }
            Ok(parts)
        };
        let s = nums("start", 3)?;
        let g = nums("goal", 2)?;
        let (bl, b) = get("behavior")?;
        let (sl, seed) = get("seed")?;
        let resolution = match fields.get("resolution") {
            Some((line, v)) => parse_value(*line, "resolution", v)?,
            None => GridShape::DEFAULT_RESOLUTION_M,
        };
        Ok(Self {
            start: ((s[0], s[1]), s[2]),
            goal: GoalSpec { cell: (g[0], g[1]) },
            behavior: b.parse().map_err(|_| config_err(bl, "behavior", format!("unknown behavior `{b}`")))?,
            seed: parse_value(sl, "seed", &seed)?,
            resolution,
        })
    }
}

fn dataset_paths(dir: &Path, k: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("scene_{k:04}.grid")),
        dir.join(format!("demo_{k:04}.traj")),
        dir.join(format!("meta_{k:04}.txt")),
    )
}

/// Writes `scene_%04d.grid`, `demo_%04d.traj` and `meta_%04d.txt` per sample.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, s) in samples.iter().enumerate() {
        let (scene, demo, meta) = dataset_paths(dir, k);
        write_grid(&scene, &s.demo.scene.to_grid())?;
        write_traj_file(&demo, &s.demo.trajectory)?;
        let m = SampleMeta {
            start: s.demo.start,
            goal: s.demo.goal,
            behavior: s.behavior,
            seed: s.seed,
            resolution: s.demo.scene.shape().resolution_m,
        };
        fs::write(meta, m.encode())?;
    }
    Ok(())
}

/// Reads a dataset directory, validating every sample against `kernels`.
pub fn read_dataset(dir: &Path, kernels: &TransitionKernelSet) -> Result<Vec<(DemoSample, SampleMeta)>> {
    let mut out = Vec::new();
    for k in 0.. {
        let (scene_p, demo_p, meta_p) = dataset_paths(dir, k);
        if !scene_p.exists() {
            break;
        }
        let ctx = |e: Error| match e {
            Error::Data(m) => Error::Data(format!("sample {k}: {m}")),
            other => other,
        };
        if !demo_p.exists() || !meta_p.exists() {
            return Err(Error::data(format!("sample {k}: demo or meta file is missing")));
        }
        let meta = SampleMeta::decode(&fs::read_to_string(&meta_p)?)?;
        let scene = SceneMap::from_grid(&read_grid(&scene_p)?, meta.resolution).map_err(ctx)?;
        let traj = read_traj_file(&demo_p).map_err(ctx)?;
        let demo = DemoSample {
            scene,
            trajectory: traj,
            start: meta.start,
            goal: meta.goal,
        };
        demo.validate(kernels).map_err(ctx)?;
        out.push((demo, meta));
    }
    if out.is_empty() {
        return Err(Error::data(format!("no samples found in {}", dir.display())));
    }
    Ok(out)
}

pub fn write_report(path: &Path, report: &TrainReport) -> Result<()> {
    write_csv_rows(path, &report.rows)
}

/// One row of the evaluation CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRow {
    pub sample: usize,
    pub rollout: usize,
    pub hd_m: f64,
    pub hd_cells: f64,
    pub completed: bool,
    pub reward: f64,
}

/// Wall time of one benchmark stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub engine: String,
    pub stage: String,
    pub size: usize,
    pub orientations: usize,
    pub actions: usize,
    pub iterations: usize,
    pub seconds: f64,
}

/// Like [`write_csv_rows`] but to any writer.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Serialises rows with a header derived from the field names.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv(fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward_net::init_params;

    #[test]
    fn grid_layout_and_roundtrip() {
        let g = Grid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_grid(&g);
        assert_eq!(&bytes[..15], b"KIRLGRD1\n2 2 1\n");
        assert_eq!(bytes.len(), 15 + 32);
        assert_eq!(&bytes[15 + 8..15 + 16], &1.0f64.to_le_bytes());
        let back = decode_grid(&bytes).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn grid_errors_carry_offsets() {
        let g = Grid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_grid(&g);
        match decode_grid(&bytes[..40]) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 40);
                assert!(message.contains("25") && message.contains("32"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let mut nan = bytes.clone();
        nan[15 + 16..15 + 24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_grid(&nan), Err(Error::Format { offset: 31, .. })));
        assert!(matches!(decode_grid(b"KIRLGRX1\n"), Err(Error::Format { offset: 6, .. })));
        let mut big = b"KIRLGRD1\n".to_vec();
        big.extend_from_slice(format!("{} {} 2\n", usize::MAX / 2, 3).as_bytes());
        assert!(matches!(decode_grid(&big), Err(Error::Format { offset: 9, .. })));
        assert!(decode_grid(b"KIRLGRD1\n2 2\n").is_err());
    }

    #[test]
    fn pgm_ramp() {
        let p = Plane::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        let bytes = encode_pgm(&p, 0.0, 8.0).unwrap();
        let header = b"P5\n3 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 32, 64, 96, 128, 159, 191, 223, 255]);
        let flat = encode_pgm(&Plane::filled(2, 2, 5.0), 0.0, 10.0).unwrap();
        assert!(flat[flat.len() - 4..].iter().all(|&v| v == 128));
        assert!(encode_pgm(&p, 1.0, 1.0).is_err());
    }

    #[test]
    fn traj_roundtrip() {
        let recs = vec![
            TrajRecord {
                t: 1,
                row: 2,
                col: 0,
                orientation: 0,
                action: Some(0),
            },
            TrajRecord {
                t: 2,
                row: 2,
                col: 1,
                orientation: 0,
                action: None,
            },
        ];
        let t = Trajectory::new(recs).unwrap();
        let mut buf = Vec::new();
        write_traj(&mut buf, &t).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "t,row,col,orientation,action\n1,2,0,0,0\n2,2,1,0,\n");
        assert_eq!(read_traj(&buf[..]).unwrap(), t);
        assert!(read_traj(&b"t,row,col,orientation,action\n1,2,0,0,0\n"[..]).is_err());
        assert!(read_traj(&b"a,b\n1,2\n"[..]).is_err());
    }

    #[test]
    fn model_roundtrip_and_truncation() {
        let p = init_params(3);
        let bytes = encode_model(&p);
        assert_eq!(&bytes[..8], MODEL_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 12 + 5 * 16 + p.len() * 8);
        assert_eq!(decode_model(&bytes).unwrap(), p);
        assert!(matches!(decode_model(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        assert!(matches!(decode_model(b"KIRLFCN2"), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = parse_config("").unwrap();
        assert_eq!(c.train.value_iters, 150);
        assert_eq!(c.train.svf_iters, 120);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.batch_size, 5);
        let c = parse_config("# comment\nlr = 0.01  # fast\nbehavior=E4\n\nseed=9\n").unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.behavior, Some(Behavior::E4));
        assert_eq!(c.train.seed, 9);
        match parse_config("seed=1\ngamma=1.5\n") {
            Err(Error::Config { line, key, .. }) => assert_eq!((line, key.as_str()), (2, "gamma")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("lr=1\nlr=2\n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(parse_config("colour=red\n"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("batch_size=x\n"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("batch_size=0\n"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("just text\n"), Err(Error::Config { .. })));
    }

    #[test]
    fn meta_roundtrip() {
        let m = SampleMeta {
            start: ((3, 1), 0),
            goal: GoalSpec { cell: (3, 30) },
            behavior: Behavior::E3,
            seed: 17,
            resolution: 0.25,
        };
        assert_eq!(SampleMeta::decode(&m.encode()).unwrap(), m);
        assert!(SampleMeta::decode("start=1,2\n").is_err());
    }
}
