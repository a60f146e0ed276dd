mod common;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfid_core::*;

fn build(controls: &[Vec<f64>], motions: &[Vec<f64>]) -> Dataset {
    let mut ds = Dataset::new(controls[0].len());
    for (u, z) in controls.iter().zip(motions) {
        ds.push(Control::new(u.clone()), Vector3::new(z[0], z[1], z[2])).unwrap();
    }
    ds
}

fn samples() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (2..=40usize, 1..=3usize).prop_flat_map(|(n, c)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, c), n),
            // A coarse grid makes exact duplicate motions common.
            prop::collection::vec(prop::collection::vec((-3i32..=3).prop_map(|v| v as f64 * 0.5), 3), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn density_and_selection_match_brute_force((controls, motions) in samples()) {
        let ds = build(&controls, &motions);
        let rho = common::density(&motions);
        for (i, want) in rho.iter().enumerate() {
            prop_assert_eq!(local_density(&ds, i).unwrap(), *want);
        }
        let got = match select_exploratory_control(&ds).unwrap() {
            Selection::Midpoint { lowest, neighbor, control } => Some((lowest, neighbor, control.as_slice().to_vec())),
            Selection::AllDuplicates => None,
        };
        prop_assert_eq!(got, common::select(&controls, &motions));
    }

    #[test]
    fn selected_controls_stay_in_range((controls, motions) in samples()) {
        let ds = build(&controls, &motions);
        if let Selection::Midpoint { control, .. } = select_exploratory_control(&ds).unwrap() {
            prop_assert!(control.as_slice().iter().all(|v| v.abs() <= 1.0));
        }
    }
}

#[test]
fn density_guided_actions_even_out_spacing() {
    let preset = builtin_preset("preset-4").unwrap().idealized();
    let mut better = 0;
    for seed in 100..110u64 {
        let mut plant = SyntheticPlant::reset(preset.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ExplorationConfig {
            random_actions: 10,
            selected_actions: 0,
            adapting_actions: 20,
            ..ExplorationConfig::default()
        };
        let initial = self_identify(&mut plant, &config, Dataset::new(2), IdentifyMode::Initial, &mut rng).unwrap();
        let motions = |ds: &Dataset| -> Vec<Vec<f64>> { ds.pairs().map(|(_, z)| z.iter().copied().collect()).collect() };
        let before = common::coefficient_of_variation(&common::nn_distances(&motions(&initial.dataset)));
        let filled = self_identify(&mut plant, &config, initial.dataset, IdentifyMode::Adapt, &mut rng).unwrap();
        let after = common::coefficient_of_variation(&common::nn_distances(&motions(&filled.dataset)));
        better += usize::from(after < before);
    }
    assert!(better >= 9, "spacing evened out on {better}/10 seeds");
}

#[test]
fn identification_counts_and_accounting() {
    let preset = builtin_preset("preset-2").unwrap();
    let mut plant = SyntheticPlant::reset(preset, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ExplorationConfig::default().with_initial_actions(15);
    let id = self_identify(&mut plant, &config, Dataset::new(2), IdentifyMode::Initial, &mut rng).unwrap();
    assert_eq!(id.actions.len(), 15);
    assert_eq!(id.dataset.len(), 15);
    assert_eq!(plant.executions(), 15);
    let adapt = self_identify(&mut plant, &config, id.dataset, IdentifyMode::Adapt, &mut rng).unwrap();
    assert_eq!(adapt.actions.len(), config.adapting_actions);
    assert_eq!(adapt.dataset.len(), 15 + config.adapting_actions);
    assert_eq!(adapt.models.source_dataset_size, adapt.dataset.len());
}
