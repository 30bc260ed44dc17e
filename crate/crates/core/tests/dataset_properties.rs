use eqsae::dataset::{
    compose_image, enumerate_tasks, expand_orbits, generate_dataset, orbit_count, rotate_image, rotate_position, Augment,
    ImageSpec, Placement, ShapeId, TaskFamily, GROUP_ORDER, IMAGE_SIDE, N_SHAPES,
};
use eqsae_numerics::Tensor;
use proptest::prelude::*;

fn placement() -> impl Strategy<Value = Placement> {
    (0..N_SHAPES as u8, 0u8..4).prop_map(|(s, o)| {
        let shape = ShapeId::new(s).unwrap();
        Placement { shape, orientation: o % shape.period() }
    })
}

fn spec() -> impl Strategy<Value = ImageSpec> {
    (prop::array::uniform4(placement()), 0u8..4).prop_map(|(quadrants, power)| ImageSpec { quadrants, power })
}

fn image() -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(prop::bool::ANY, IMAGE_SIDE * IMAGE_SIDE).prop_map(|bits| {
        Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], bits.into_iter().map(|b| b as u8 as f32).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn four_turns_are_the_identity(img in image()) {
        prop_assert_eq!(rotate_image(&img, 4), img.clone());
        prop_assert_eq!(rotate_image(&img, 0), img);
    }

    #[test]
    fn turns_compose_additively(img in image(), a in 0usize..8, b in 0usize..8) {
        prop_assert_eq!(rotate_image(&rotate_image(&img, a), b), rotate_image(&img, a + b));
    }

    #[test]
    fn a_turn_preserves_pixel_mass(img in image(), p in 1usize..4) {
        prop_assert_eq!(rotate_image(&img, p).sum(), img.sum());
    }

    #[test]
    fn composing_then_rotating_matches_rotated_spec(s in spec(), p in 0u8..4) {
        let rendered = compose_image(&s).unwrap();
        let turned = compose_image(&s.with_power((s.power + p) % 4)).unwrap();
        prop_assert_eq!(rotate_image(&rendered.pixels, p as usize), turned.pixels);
    }

    #[test]
    fn labels_follow_the_rotated_task(s in spec(), p in 0usize..4) {
        let turned = s.with_power(((s.power as usize + p) % GROUP_ORDER) as u8);
        for task in enumerate_tasks() {
            prop_assert_eq!(task.label(&s), task.rotated(p).label(&turned), "{:?}", task);
            if task.family == TaskFamily::S {
                prop_assert_eq!(task.label(&s), task.label(&turned));
            }
        }
    }

    #[test]
    fn observed_contents_are_a_permutation(s in spec()) {
        let mut before: Vec<u8> = s.quadrants.iter().map(|q| q.shape.id()).collect();
        let mut after: Vec<u8> = s.observed().iter().map(|q| q.shape.id()).collect();
        before.sort_unstable();
        after.sort_unstable();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn quadrant_moves_have_order_four(q in 0u8..4, p in 1usize..4) {
        prop_assert_ne!(rotate_position(q, p), q);
        prop_assert_eq!(rotate_position(rotate_position(q, p), 4 - p), q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generation_is_prefix_stable(seed in any::<u64>(), n in 1usize..6, extra in 1usize..4) {
        let short = generate_dataset(n, seed, Augment::RandomRotation).unwrap();
        let long = generate_dataset(n + extra, seed, Augment::RandomRotation).unwrap();
        prop_assert_eq!(&long[..n], &short[..]);
    }

    #[test]
    fn orbits_hold_every_rotation(seed in any::<u64>(), n in 1usize..5) {
        let canon = generate_dataset(n, seed, Augment::None).unwrap();
        let orbits = expand_orbits(&canon).unwrap();
        prop_assert_eq!(orbit_count(&orbits).unwrap(), n);
        prop_assert_eq!(&orbits, &generate_dataset(n, seed, Augment::AllRotations).unwrap());
        for (i, img) in orbits.iter().enumerate() {
            prop_assert_eq!(img.spec.power as usize, i % GROUP_ORDER);
            prop_assert_eq!(&img.pixels, &rotate_image(&canon[i / GROUP_ORDER].pixels, i % GROUP_ORDER));
        }
    }
}
