use kinirl_core::io_formats::{
    decode_grid, decode_model, encode_grid, encode_model, read_traj, write_traj, SampleMeta,
};
use kinirl_core::reward_net::init_params;
use kinirl_core::{Behavior, Error, GoalSpec, Grid, Trajectory, TransitionKernelSet};
use proptest::prelude::*;

// struct.pack('<6d', 1.0, -2.5, 0.0, 3.25, 1e-3, -7.0) behind the 2x3x1 header
const GOLDEN_GRID: &str = "4b49524c475244310a32203320310a000000000000f03f00000000000004c0\
                           00000000000000000000000000000a40fca9f1d24d62503f0000000000001cc0";

fn unhex(s: &str) -> Vec<u8> {
    let s: String = s.split_whitespace().collect();
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

#[test]
fn grid_matches_golden_bytes() {
    let g = Grid::new(2, 3, 1, vec![1.0, -2.5, 0.0, 3.25, 1e-3, -7.0]).unwrap();
    let golden = unhex(GOLDEN_GRID);
    assert_eq!(golden.len(), 63);
    assert_eq!(encode_grid(&g), golden);
    assert_eq!(decode_grid(&golden).unwrap(), g);
}

#[test]
fn grid_nan_payload_reports_its_offset() {
    let mut bytes = unhex(GOLDEN_GRID);
    // fourth value starts at 15 + 3 * 8
    bytes[39..47].copy_from_slice(&f64::NAN.to_le_bytes());
    match decode_grid(&bytes) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 39),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn model_header_layout() {
    let bytes = encode_model(&init_params(0));
    assert_eq!(&bytes[..8], b"KIRLFCN1");
    let layers = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    assert_eq!(layers as usize, init_params(0).layers().len());
    let first: Vec<u32> = (0..4)
        .map(|k| u32::from_le_bytes(bytes[12 + 4 * k..16 + 4 * k].try_into().unwrap()))
        .collect();
    let l0 = init_params(0).layers()[0];
    assert_eq!(first, [l0.outputs as u32, l0.inputs as u32, l0.kernel as u32, l0.kernel as u32]);
}

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(r, c, ch)| {
        prop::collection::vec(-1e6f64..1e6, r * c * ch).prop_map(move |d| Grid::new(r, c, ch, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_roundtrip(g in grid_strategy()) {
        prop_assert_eq!(decode_grid(&encode_grid(&g)).unwrap(), g);
    }

    #[test]
    fn truncated_grid_is_a_format_error(g in grid_strategy(), cut in 0.0f64..1.0) {
        let bytes = encode_grid(&g);
        let n = (cut * bytes.len() as f64) as usize;
        let is_format = matches!(decode_grid(&bytes[..n]), Err(Error::Format { .. }));
        prop_assert!(is_format);
    }

    #[test]
    fn grid_decoder_survives_garbage(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = decode_grid(&bytes);
    }

    #[test]
    fn model_roundtrip_and_truncation(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let p = init_params(seed);
        let bytes = encode_model(&p);
        prop_assert_eq!(&decode_model(&bytes).unwrap(), &p);
        let n = (cut * bytes.len() as f64) as usize;
        prop_assert!(decode_model(&bytes[..n]).is_err());
    }

    #[test]
    fn trajectory_roundtrip(
        start_r in 0usize..10,
        start_c in 0usize..10,
        heading in 0usize..8,
        actions in prop::collection::vec(0usize..6, 0..30),
    ) {
        let kernels = TransitionKernelSet::standard(0.95).unwrap();
        let mut poses = vec![((start_r, start_c), heading)];
        for a in actions {
            let (cell, j) = *poses.last().unwrap();
            if let Some(next) = kernels.step(10, 10, cell, j, a) {
                poses.push(next);
            }
        }
        let traj = Trajectory::from_poses(&poses, &kernels).unwrap();
        let mut buf = Vec::new();
        write_traj(&mut buf, &traj).unwrap();
        prop_assert_eq!(read_traj(buf.as_slice()).unwrap(), traj);
    }

    #[test]
    fn meta_roundtrip(r in 0usize..64, c in 0usize..64, k in 0usize..8, seed in any::<u64>(), b in 0usize..4) {
        let meta = SampleMeta {
            start: ((r, c), k),
            goal: GoalSpec::new((c, r), 64, 64).unwrap(),
            behavior: Behavior::ALL[b],
            seed,
            resolution: 0.25,
        };
        prop_assert_eq!(SampleMeta::decode(&meta.encode()).unwrap(), meta);
    }
}
