//! Checkpoint container round-trips through the normative byte layout.

use proptest::prelude::*;
use skimba_tensor::checkpoint::{read_entries, save_params, load_params, write_entries, Entry};
use skimba_tensor::{Param, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roundtrip_random_entry_sets(
        specs in prop::collection::vec(
            ("[a-z]{1,12}/[a-z]{1,12}", prop::collection::vec(1usize..5, 0..4)),
            1..6,
        ),
        salt in any::<u32>(),
    ) {
        // make names unique by suffixing the index
        let entries: Vec<Entry> = specs
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let volume: usize = shape.iter().product();
                Entry {
                    name: format!("{name}#{i}"),
                    shape,
                    values: (0..volume)
                        .map(|j| ((j as u32).wrapping_mul(salt) as f32) * 1e-3 - 1.0)
                        .collect(),
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_entries(&mut buf, &entries).unwrap();
        let back = read_entries(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for e in &entries {
            let r = back.iter().find(|x| x.name == e.name).unwrap();
            prop_assert_eq!(&r.shape, &e.shape);
            for (x, y) in r.values.iter().zip(&e.values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

#[test]
fn param_roundtrip_preserves_name_shape_values() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.skba");

    let params = vec![
        Param::new("net/layer0/weight", Tensor::<f32>::randn(&[4, 3], &mut rng)),
        Param::new("net/layer0/bias", Tensor::<f32>::randn(&[4], &mut rng)),
        Param::new("net/head/weight", Tensor::<f32>::randn(&[2, 4], &mut rng)),
    ];
    let before: Vec<Vec<f32>> = params.iter().map(|p| p.value().to_vec()).collect();
    save_params(&path, &params).unwrap();

    for p in &params {
        p.set_data(vec![0.0; p.value().len()]);
    }
    load_params(&path, &params).unwrap();
    for (p, want) in params.iter().zip(&before) {
        let got = p.value().to_vec();
        for (a, b) in got.iter().zip(want) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn identical_param_sets_serialize_identically() {
    use rand::SeedableRng;
    let dir = tempfile::tempdir().unwrap();
    let mk = |path: &std::path::Path| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let params = vec![
            Param::new("b", Tensor::<f32>::randn(&[3], &mut rng)),
            Param::new("a", Tensor::<f32>::randn(&[2, 2], &mut rng)),
        ];
        save_params(path, &params).unwrap();
    };
    let p1 = dir.path().join("one.skba");
    let p2 = dir.path().join("two.skba");
    mk(&p1);
    mk(&p2);
    assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
}

#[test]
fn load_rejects_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.skba");
    let saved = vec![Param::new("w", Tensor::<f32>::zeros(&[2, 2]))];
    save_params(&path, &saved).unwrap();
    let other = vec![Param::new("w", Tensor::<f32>::zeros(&[3]))];
    assert!(load_params(&path, &other).is_err());
}
