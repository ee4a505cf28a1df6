use std::collections::{BTreeMap, HashSet};

use compgen::concept_space::{full_grid, NuisanceDim};
use compgen::experiments::{ExperimentConfig, ExperimentKind};
use compgen::synth_data::{generate, render_glyph, DatasetSpec, Family, Placement, SplitTag};
use compgen::{select_value_indices, Execution};

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn nuisance_is_independent_of_the_concepts() {
    let n = 3;
    let spec = DatasetSpec::standard(Family::SpriteGlyph, 16, 100, 21);
    let set = generate(&spec, n, &full_grid(n), SplitTag::Train, Execution::Parallel).unwrap();
    let dims = &spec.concept_spec.nuisance_dims;
    for (d, dim) in dims.iter().enumerate() {
        let mut overall = vec![0usize; dim.cardinality];
        let mut by_c1: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut by_c2: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for r in 0..set.len() {
            let v = set.nuisance[r][d];
            overall[v] += 1;
            by_c1.entry(set.labels_c1[r]).or_insert_with(|| vec![0; dim.cardinality])[v] += 1;
            by_c2.entry(set.labels_c2[r]).or_insert_with(|| vec![0; dim.cardinality])[v] += 1;
        }
        let uniform = 1.0 / dim.cardinality as f64;
        for (v, &c) in overall.iter().enumerate() {
            let p = c as f64 / set.len() as f64;
            assert!((p - uniform).abs() <= 0.02, "{} = {v}: {p}", dim.name);
        }
        for groups in [&by_c1, &by_c2] {
            for counts in groups.values() {
                let total: usize = counts.iter().sum();
                for (v, &c) in counts.iter().enumerate() {
                    let cond = c as f64 / total as f64;
                    let marg = overall[v] as f64 / set.len() as f64;
                    assert!((cond - marg).abs() <= 0.02, "{} = {v}: {cond} vs {marg}", dim.name);
                }
            }
        }
    }
}

fn assert_injective(spec: &DatasetSpec, n: usize, placement: Placement) {
    let cs = &spec.concept_spec;
    let shapes = select_value_indices(cs.cardinality_c1, n).unwrap();
    let colors = select_value_indices(cs.cardinality_c2, n).unwrap();
    let mut seen = HashSet::new();
    for &s in &shapes {
        for &c in &colors {
            let img = render_glyph(spec.family, s, c, cs.cardinality_c2, placement, spec.image_size);
            assert!(seen.insert(bits(&img)), "n = {n}: shape {s} color {c} collides");
        }
    }
}

#[test]
fn rendering_is_injective_up_to_fourteen_values() {
    for family in [Family::SpriteGlyph, Family::ColoredGlyph] {
        let spec = DatasetSpec::standard(family, 32, 1, 0);
        let dims = &spec.concept_spec.nuisance_dims;
        for n in 1..=14 {
            assert_injective(&spec, n, Placement::default());
        }
        for flat in 0..spec.concept_spec.nuisance_space_size() {
            let values = spec.concept_spec.decode_nuisance(flat);
            assert_injective(&spec, 14, Placement::from_nuisance(dims, &values).unwrap());
        }
    }
}

#[test]
fn desk_scale_images_are_injective() {
    let spec = ExperimentConfig::desk_scale(ExperimentKind::ThreePhase).dataset;
    let dims = &spec.concept_spec.nuisance_dims;
    for n in 1..=10 {
        for p in 0..dims[0].cardinality {
            assert_injective(&spec, n, Placement::from_nuisance(dims, &[p]).unwrap());
        }
    }
}

#[test]
fn generation_is_identical_across_modes_and_seeds_matter() {
    let mut spec = DatasetSpec::standard(Family::ColoredGlyph, 16, 5, 4);
    spec.concept_spec.nuisance_dims = vec![NuisanceDim::new("rotation", 8)];
    let combos = full_grid(4);
    let a = generate(&spec, 4, &combos, SplitTag::Probe, Execution::Parallel).unwrap();
    let b = generate(&spec, 4, &combos, SplitTag::Probe, Execution::Sequential).unwrap();
    assert_eq!(bits(a.pixels.as_slice().unwrap()), bits(b.pixels.as_slice().unwrap()));
    assert_eq!(a, b);
    spec.seed += 1;
    let c = generate(&spec, 4, &combos, SplitTag::Probe, Execution::Parallel).unwrap();
    assert_ne!(a.nuisance, c.nuisance);
    let d = generate(&spec, 4, &combos, SplitTag::Test, Execution::Parallel).unwrap();
    assert_ne!(c.nuisance, d.nuisance);
}

#[test]
fn sample_counts_follow_n_cell() {
    let spec = DatasetSpec::standard(Family::SpriteGlyph, 8, 7, 0);
    for (n, k) in [(3, 1), (4, 2), (5, 5)] {
        let split = compgen::build_nk_split(n, k).unwrap();
        let set = generate(&spec, n, &split.train_combos, SplitTag::Train, Execution::Parallel).unwrap();
        assert_eq!(set.len(), n * k * 7);
        assert_eq!(set.pixels.dim(), (n * k * 7, 8 * 8 * 3));
        assert!(set.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
