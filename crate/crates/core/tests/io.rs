use proptest::prelude::*;

use phi4_core::io::{load_field, read_field, read_stream, save_field, write_field, write_stream, StreamManifest};
use phi4_core::sampler::{run_chain, shared_lattice, ChainConfig};
use phi4_core::action::Couplings;
use phi4_core::{ActionModel, FieldConfig, Grid};

fn finite() -> impl Strategy<Value = f64> {
    any::<u64>().prop_map(f64::from_bits).prop_filter("finite", |v| v.is_finite())
}

proptest! {
    #[test]
    fn field_round_trip_is_bit_exact(
        dim in 1usize..=3,
        n in 2usize..=5,
        l in 0.1f64..10.0,
        seed in prop::collection::vec(finite(), 125),
    ) {
        let grid = Grid::new(dim, n, l).unwrap();
        let values = seed[..grid.num_sites()].to_vec();
        let field = FieldConfig::new(grid, values).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &field).unwrap();
        let back = read_field(&buf[..]).unwrap();
        prop_assert_eq!(back.grid(), field.grid());
        for (a, b) in back.values().iter().zip(field.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_records_never_parse(cut in 0usize..100) {
        let grid = Grid::new(2, 3, 1.0).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &FieldConfig::constant(grid, 0.5)).unwrap();
        prop_assume!(cut < buf.len());
        prop_assert!(read_field(&buf[..cut]).is_err());
    }
}

#[test]
fn save_and_load_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(2, 4, 1.5).unwrap();
    let field = FieldConfig::from_fn(grid, |x| x[0] - 2.0 * x[1]).unwrap();
    let path = dir.path().join("phi.bin");
    save_field(&path, &field).unwrap();
    assert_eq!(load_field(&path).unwrap(), field);
}

#[test]
fn stream_round_trip_keeps_manifest_and_records() {
    let dir = tempfile::tempdir().unwrap();
    let lat = shared_lattice(Grid::new(2, 4, 1.0).unwrap());
    let model = ActionModel::with_couplings(lat, Couplings { g: 0.2, m: 0.0, a: 0.0 }, 2).unwrap();
    let mut cfg = ChainConfig::new(140, 100, 3);
    cfg.thinning = 4;
    let s = run_chain(&model, &cfg).unwrap();
    let manifest = StreamManifest {
        grid: *model.grid(),
        schedule: "g=0.2".into(),
        chain: s.summary.clone(),
        records: s.len(),
    };
    let path = dir.path().join("stream.bin");
    write_stream(&path, &manifest, &s.samples).unwrap();
    let (m, samples) = read_stream(&path).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(samples, s.samples);
    assert_eq!(samples.len(), 10);

    let short = StreamManifest { records: 3, ..manifest };
    assert!(write_stream(&path, &short, &s.samples).is_err());
}
