mod common;

use std::path::PathBuf;

use gridpg_core::arch::{
    count_parameters, decode_architecture, encode_architecture, parse_architecture,
    propagate_shapes, render_architecture, ArchDescriptor, Shape,
};
use gridpg_core::search_space::{default_space, DimensionKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{expert_parameter_table, symbolic_conv_inputs};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/all_min_arch.json")
}

#[test]
fn all_minimum_rendering_matches_golden() {
    let space = default_space();
    let arch = decode_architecture(&space, &space.min_policy(), 4).unwrap();
    let text = render_architecture(&arch);
    if std::env::var_os("GRIDPG_BLESS").is_some() {
        std::fs::write(golden_path(), &text).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    assert_eq!(text, golden);
    assert_eq!(parse_architecture(&golden).unwrap(), arch);
}

#[test]
fn expert_parameter_count_matches_table() {
    let expert = ArchDescriptor::expert_dense_cnn(4);
    assert_eq!(count_parameters(&expert, 1), expert_parameter_table(4, 1));
    assert_eq!(count_parameters(&expert, 3), expert_parameter_table(4, 3));
}

#[test]
fn two_hundred_pixel_input() {
    let space = default_space();
    let expert = ArchDescriptor::expert_dense_cnn(4);
    let table = propagate_shapes(&expert, 200, 200, 1).unwrap();
    assert_eq!(
        table.bottleneck(),
        Shape {
            h: 50,
            w: 50,
            c: 64
        }
    );
    assert_eq!(
        table.output(),
        Shape {
            h: 200,
            w: 200,
            c: 4
        }
    );
    assert_eq!(
        table.conv_input_channels(),
        symbolic_conv_inputs(&expert, 1)
    );
    let policy = encode_architecture(&space, &expert).unwrap();
    assert_eq!(policy.coords[0], 1); // 32 filters
    assert_eq!(policy.coords[1], 1); // 3 high
}

#[test]
fn random_policies_decode_and_conserve_shape() {
    let space = default_space();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..300 {
        let policy = space.random_policy(&mut rng);
        let arch = decode_architecture(&space, &policy, 4).unwrap();
        assert_eq!(encode_architecture(&space, &arch).unwrap(), policy);
        let table = propagate_shapes(&arch, 64, 96, 3).unwrap();
        assert_eq!((table.output().h, table.output().w), (64, 96));
        assert_eq!(table.conv_input_channels(), symbolic_conv_inputs(&arch, 3));
        let text = render_architecture(&arch);
        assert_eq!(parse_architecture(&text).unwrap(), arch);
    }
}

proptest! {
    #[test]
    fn parameters_increase_with_every_filter_count(seed in any::<u64>(), pick in 0usize..24) {
        let space = default_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = space.random_policy(&mut rng);
        let nf_dims: Vec<usize> = space
            .dimensions()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == DimensionKind::NumFilters)
            .map(|(i, _)| i)
            .collect();
        let d = nf_dims[pick];
        policy.coords[d] = 1;
        let mut last = count_parameters(&decode_architecture(&space, &policy, 4).unwrap(), 1);
        for x in 2..=12 {
            policy.coords[d] = x;
            let now = count_parameters(&decode_architecture(&space, &policy, 4).unwrap(), 1);
            prop_assert!(now > last);
            last = now;
        }
    }
}
