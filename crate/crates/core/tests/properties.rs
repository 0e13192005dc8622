use proptest::prelude::*;

use collinear_nbody::action::{action_evaluate, graded_mesh, DiscretePath};
use collinear_nbody::gamma::{feasibility_check, symmetrize, AdmissibleSpace};
use collinear_nbody::SystemSpec;

fn masses_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..5.0, n)
}

fn mirror(masses: &[f64]) -> Vec<f64> {
    let n = masses.len();
    (0..n).map(|i| masses[i.min(n - 1 - i)]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoded_paths_are_admissible(
        n in 3usize..=6,
        cells in prop::sample::select(vec![8usize, 16, 24]),
        symmetric in any::<bool>(),
        raw in masses_strategy(6),
        seed in any::<u64>(),
    ) {
        let masses = if symmetric { mirror(&raw[..n]) } else { raw[..n].to_vec() };
        let space = AdmissibleSpace::from_sorted(masses.clone(), graded_mesh(cells, 1.3).unwrap(), symmetric).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let vars: Vec<f64> = (0..space.dim()).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
        let path = space.decode(&vars).unwrap();
        prop_assert!(feasibility_check(&path, 1e-12).all_pass());
        let total: f64 = masses.iter().sum();
        let scale = path.extent().max(1.0);
        for k in 0..=cells {
            let com: f64 = path.node(k).iter().zip(&masses).map(|(x, m)| x * m).sum::<f64>() / total;
            prop_assert!(com.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn directional_derivative_matches_differences(
        n in 3usize..=5,
        masses in masses_strategy(5),
        seed in any::<u64>(),
    ) {
        let space = AdmissibleSpace::from_sorted(masses[..n].to_vec(), graded_mesh(16, 1.0).unwrap(), false).unwrap();
        let x = space.initial_guess(Some(seed)).0;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x5eed);
        let dir: Vec<f64> = (0..x.len()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let mut g = vec![0.0; x.len()];
        space.action_with_gradient(&x, &mut g).unwrap();
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let h = 1e-5;
        let at = |t: f64| {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let mut scratch = vec![0.0; y.len()];
            space.action_with_gradient(&y, &mut scratch).unwrap()
        };
        // fourth-order central difference
        let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        let scale = g.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((fd - slope).abs() <= 1e-6 * scale, "fd {fd} slope {slope}");
    }

    #[test]
    fn symmetrize_is_an_idempotent_projection(
        n in 3usize..=6,
        raw in masses_strategy(6),
        seed in any::<u64>(),
    ) {
        let masses = mirror(&raw[..n]);
        let spec = SystemSpec::new(masses.clone(), 1.0).unwrap().with_symmetric_mode(true).unwrap();
        let plain = AdmissibleSpace::from_sorted(masses.clone(), graded_mesh(16, 1.0).unwrap(), false).unwrap();
        let sym_space = AdmissibleSpace::from_sorted(masses, graded_mesh(16, 1.0).unwrap(), true).unwrap();
        let path = plain.decode(&plain.initial_guess(Some(seed)).0).unwrap();
        let once = symmetrize(&path, &spec).unwrap();
        let twice = symmetrize(&once, &spec).unwrap();
        for (a, b) in once.positions().iter().zip(twice.positions()) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
        // symmetric paths survive the round trip through the reduced variables
        let back = sym_space.decode(&sym_space.encode(&once).unwrap().0).unwrap();
        for (a, b) in once.positions().iter().zip(back.positions()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn action_scales_with_the_period(
        n in 3usize..=5,
        masses in masses_strategy(5),
        seed in any::<u64>(),
        lambda in 0.2f64..5.0,
    ) {
        // x -> λ^{2/3} x, t -> λ t multiplies the action by λ^{1/3}
        let masses = masses[..n].to_vec();
        let space = AdmissibleSpace::from_sorted(masses.clone(), graded_mesh(16, 1.0).unwrap(), false).unwrap();
        let path = space.decode(&space.initial_guess(Some(seed)).0).unwrap();
        let c = lambda.powf(2.0 / 3.0);
        let scaled = DiscretePath::new(
            graded_mesh(16, lambda).unwrap(),
            n,
            path.positions().iter().map(|x| c * x).collect(),
        ).unwrap();
        let a = action_evaluate(&path, &masses).unwrap().total;
        let b = action_evaluate(&scaled, &masses).unwrap().total;
        prop_assert!((b / a - lambda.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn action_is_translation_and_reversal_invariant(
        masses in masses_strategy(4),
        seed in any::<u64>(),
        shift in -10.0f64..10.0,
    ) {
        let space = AdmissibleSpace::from_sorted(masses.clone(), graded_mesh(16, 1.0).unwrap(), false).unwrap();
        let path = space.decode(&space.initial_guess(Some(seed)).0).unwrap();
        let a = action_evaluate(&path, &masses).unwrap().total;
        let moved = action_evaluate(&path.translated(shift), &masses).unwrap().total;
        let reversed = action_evaluate(&path.time_reversed(), &masses).unwrap().total;
        prop_assert!((moved - a).abs() <= 1e-12 * a);
        prop_assert!((reversed - a).abs() <= 1e-12 * a);
    }
}
