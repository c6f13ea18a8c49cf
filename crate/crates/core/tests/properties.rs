use num_bigint::BigUint;
use num_complex::Complex64;
use proptest::prelude::*;

use optistack_core::agent::{epsilon_schedule, greedy_index, ReplayMemory};
use optistack_core::analysis::{convexity_ratios, MaterialEstimate, WelfordStats};
use optistack_core::baseline::DiscreteDesign;
use optistack_core::env::{finalize_episode, state_space_size, Action, DesignEnv, EpisodeTrace};
use optistack_core::nn::{Activation, Mlp};
use optistack_core::objective::{objective_f, RewardParams, TaskSpec};
use optistack_core::optics::tmm::reflectance;
use optistack_core::optics::{design_dbr, Film, MaterialCatalog, Polarization};

const AIR: Complex64 = Complex64 { re: 1.0, im: 0.0 };

fn film() -> impl Strategy<Value = Film> {
    (1.0f64..3.0, 0.0f64..0.5, 0.0f64..300.0).prop_map(|(n, k, t)| Film {
        index: Complex64::new(n, k),
        thickness: t,
    })
}

fn lossless_film() -> impl Strategy<Value = Film> {
    (1.0f64..3.0, 0.0f64..300.0).prop_map(|(n, t)| Film {
        index: Complex64::new(n, 0.0),
        thickness: t,
    })
}

fn polarization() -> impl Strategy<Value = Polarization> {
    prop_oneof![Just(Polarization::S), Just(Polarization::P)]
}

fn substrate() -> impl Strategy<Value = Complex64> {
    (1.0f64..2.5, 0.0f64..0.1).prop_map(|(n, k)| Complex64::new(n, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reflectance_is_bounded(
        films in prop::collection::vec(film(), 0..10),
        sub in substrate(),
        wavelength in 300.0f64..1200.0,
        angle in 0.0f64..89.0,
        pol in polarization(),
    ) {
        let r = reflectance(AIR, &films, sub, wavelength, angle, pol);
        prop_assert!((0.0..=1.0).contains(&r), "R = {r}");
    }

    #[test]
    fn zero_thickness_layer_is_invisible(
        films in prop::collection::vec(lossless_film(), 0..8),
        at in 0usize..8,
        n in 1.0f64..3.0,
        sub in substrate(),
        wavelength in 300.0f64..1200.0,
        angle in 0.0f64..80.0,
        pol in polarization(),
    ) {
        let mut with = films.clone();
        with.insert(at.min(films.len()), Film { index: Complex64::new(n, 0.0), thickness: 0.0 });
        let a = reflectance(AIR, &films, sub, wavelength, angle, pol);
        let b = reflectance(AIR, &with, sub, wavelength, angle, pol);
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn adjacent_equal_layers_merge(
        films in prop::collection::vec(lossless_film(), 0..6),
        at in 0usize..6,
        n in 1.0f64..3.0,
        a in 0.0f64..200.0,
        b in 0.0f64..200.0,
        sub in substrate(),
        wavelength in 300.0f64..1200.0,
        angle in 0.0f64..80.0,
        pol in polarization(),
    ) {
        let index = Complex64::new(n, 0.0);
        let at = at.min(films.len());
        let mut split = films.clone();
        split.insert(at, Film { index, thickness: b });
        split.insert(at, Film { index, thickness: a });
        let mut merged = films.clone();
        merged.insert(at, Film { index, thickness: a + b });
        let rs = reflectance(AIR, &split, sub, wavelength, angle, pol);
        let rm = reflectance(AIR, &merged, sub, wavelength, angle, pol);
        prop_assert!((rs - rm).abs() <= 1e-12, "{rs} vs {rm}");
    }

    #[test]
    fn polarizations_agree_at_normal_incidence(
        films in prop::collection::vec(film(), 0..10),
        sub in substrate(),
        wavelength in 300.0f64..1200.0,
    ) {
        let s = reflectance(AIR, &films, sub, wavelength, 0.0, Polarization::S);
        let p = reflectance(AIR, &films, sub, wavelength, 0.0, Polarization::P);
        prop_assert!((s - p).abs() <= 1e-12, "{s} vs {p}");
    }

    #[test]
    fn dbr_layers_are_quarter_waves(
        n1 in 1.2f64..2.0,
        dn in 0.05f64..1.5,
        edge in 300.0f64..1500.0,
        periods in 1usize..10,
    ) {
        let d = design_dbr(n1, n1 + dn, edge, periods).unwrap();
        let quarter = d.center_wavelength / 4.0;
        prop_assert!((d.n1 * d.t1 - quarter).abs() <= 1e-12 * quarter);
        prop_assert!((d.n2 * d.t2 - quarter).abs() <= 1e-12 * quarter);
        prop_assert!((d.center_wavelength + d.stopband_width - edge).abs() <= 1e-9 * edge);
    }

    #[test]
    fn objective_is_never_positive(
        refl in prop::collection::vec(0.0f64..=1.0, 1..40),
        mu in 0.0f64..1.0,
        thick in prop::collection::vec(0.0f64..150.0, 0..8),
    ) {
        let mut task = TaskSpec::builtin("task2").unwrap();
        task.mu = mu;
        task.target = refl.iter().map(|r| 1.0 - r).collect();
        let f = objective_f(&refl, &task, &thick).unwrap();
        prop_assert!(f <= 0.0);
        task.target = refl.clone();
        let zero = objective_f(&refl, &task, &vec![0.0; thick.len()]).unwrap();
        prop_assert_eq!(zero, 0.0);
    }

    #[test]
    fn unconstrained_objective_ignores_grid_order(
        pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut task = TaskSpec::builtin("task2").unwrap();
        task.mu = 0.0;
        let (refl, target): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        task.target = target;
        let f = objective_f(&refl, &task, &[50.0]).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let (refl2, target2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        task.target = target2;
        let g = objective_f(&refl2, &task, &[50.0]).unwrap();
        prop_assert!((f - g).abs() <= 1e-12 * f.abs().max(1e-300));
    }

    #[test]
    fn reward_is_strictly_increasing(
        alpha in 0.5f64..50.0,
        a in -0.5f64..0.0,
        gap in 1e-6f64..0.5,
    ) {
        let p = RewardParams::from_alpha(alpha).unwrap();
        prop_assert!(p.reward(a - gap) < p.reward(a));
        prop_assert!(p.reward(a) <= 1.0);
    }

    #[test]
    fn backfilled_returns_never_decrease(
        placed in 0usize..8,
        reward in 1e-6f64..=1.0,
        gamma in 0.0f64..=1.0,
    ) {
        let task = TaskSpec::builtin("task2").unwrap();
        let cat = MaterialCatalog::default();
        let mut env = DesignEnv::new(&task, &cat, RewardParams::from_alpha(18.42).unwrap(), gamma).unwrap();
        env.reset();
        for k in 0..placed {
            env.step(Action::Place { material: task.material_ids[k % 4], thickness: 10.0 + k as f64 }).unwrap();
        }
        if placed < task.layer_budget {
            env.step(Action::Terminate).unwrap();
        }
        let trace: &EpisodeTrace = &env.finish().unwrap().trace;
        let r = finalize_episode(trace, reward, gamma).unwrap();
        prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*r.last().unwrap(), reward);
    }

    #[test]
    fn placed_layers_fill_leading_slots(
        actions in prop::collection::vec((0usize..4, 0.0f64..=150.0), 0..8),
    ) {
        let task = TaskSpec::builtin("task2").unwrap();
        let cat = MaterialCatalog::default();
        let mut env = DesignEnv::new(&task, &cat, RewardParams::from_alpha(18.42).unwrap(), 0.95).unwrap();
        env.reset();
        for (k, &(slot, t)) in actions.iter().enumerate() {
            let (state, _) = env
                .step(Action::Place { material: task.material_ids[slot], thickness: t.max(task.t_min) })
                .unwrap();
            for i in 0..task.layer_budget {
                prop_assert_eq!(state.index_vec[i] != 0.0, i <= k);
                prop_assert_eq!(state.thickness_vec[i] != 0.0, i <= k);
            }
        }
    }

    #[test]
    fn epsilon_decays_monotonically_to_floor(
        decay in 0.9f64..1.0,
        floor in 0.0f64..1.0,
        e in 0usize..20_000,
    ) {
        let a = epsilon_schedule(e, decay, floor);
        let b = epsilon_schedule(e + 1, decay, floor);
        prop_assert!(b <= a);
        prop_assert!(a >= floor && a <= 1.0);
    }

    #[test]
    fn replay_is_bounded_and_fifo(
        capacity in 1usize..50,
        pushes in 0usize..200,
    ) {
        let mut m = ReplayMemory::new(capacity, 0);
        for i in 0..pushes {
            m.push(i);
            prop_assert!(m.len() <= capacity);
        }
        let mut held = m.items().to_vec();
        held.sort();
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(held, expected);
    }

    #[test]
    fn argmax_ignores_constant_shift(
        q in prop::collection::vec(-10.0f64..10.0, 1..9),
        mask in prop::collection::vec(any::<bool>(), 9),
        shift in -1e3f64..1e3,
    ) {
        let allowed: Vec<bool> = mask[..q.len() - 1].to_vec();
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        // a shift can merge two values that differed by less than one ulp of the shift
        let distinct = {
            let mut s = q.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] > 1e-9)
        };
        prop_assume!(distinct);
        prop_assert_eq!(greedy_index(&q, &allowed), greedy_index(&shifted, &allowed));
    }

    #[test]
    fn polyak_moves_at_most_tau_of_the_gap(
        tau in 0.0f64..=1.0,
        s1 in any::<u64>(),
        s2 in any::<u64>(),
    ) {
        let online = Mlp::<f64>::new(&[3, 5, 2], Activation::Identity, s1).unwrap();
        let mut target = Mlp::<f64>::new(&[3, 5, 2], Activation::Identity, s2).unwrap();
        let before_online = online.params_flat();
        let old = target.params_flat();
        target.polyak_from(&online, tau).unwrap();
        prop_assert_eq!(online.params_flat(), before_online);
        for ((new, old), src) in target.params_flat().iter().zip(&old).zip(&online.params_flat()) {
            prop_assert!((new - old).abs() <= tau * (src - old).abs() + 1e-15);
        }
    }

    #[test]
    fn convexity_ratios_are_ordered(
        steps in prop::collection::vec(
            prop::collection::vec((-1.0f64..1.0, 1.3f64..2.5, 0.0f64..400.0), 4),
            1..50,
        ),
    ) {
        let steps: Vec<Vec<MaterialEstimate>> = steps
            .into_iter()
            .map(|s| s.into_iter().map(|(q, index, path_length)| MaterialEstimate { q, index, path_length }).collect())
            .collect();
        let r = convexity_ratios(&steps);
        for v in [r.ratio_n, r.ratio_p, r.ratio_both] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.ratio_both <= r.ratio_n.min(r.ratio_p));
    }

    #[test]
    fn welford_matches_two_pass(
        xs in prop::collection::vec(-1e3f64..1e3, 2..300),
    ) {
        let mut w = WelfordStats::default();
        for &x in &xs {
            w.update(x);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        prop_assert!((w.mean - mean).abs() <= 1e-10 * mean.abs().max(1.0));
        prop_assert!((w.variance() - var).abs() <= 1e-10 * var.max(1e-300));
    }

    #[test]
    fn baseline_moves_stay_on_grid(
        seed in any::<u64>(),
        actions in prop::collection::vec(0usize..40, 0..400),
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut d = DiscreteDesign::random(8, 4, 1501, &mut rng);
        for a in actions {
            d.apply(a, 4, 1501).unwrap();
            prop_assert!(d.thickness_idx.iter().all(|&i| i <= 1500));
            prop_assert!(d.slots.iter().all(|&s| s < 4));
        }
    }

    #[test]
    fn forward_is_pure(
        seed in any::<u64>(),
        x in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let net = Mlp::<f64>::new(&[4, 6, 3], Activation::Sigmoid, seed).unwrap();
        prop_assert_eq!(net.predict_one(&x).unwrap(), net.predict_one(&x).unwrap());
    }
}

/// Sequences of (material, thickness) with no two consecutive equal materials.
fn brute_force_count(layers: u32, thicknesses: u32, materials: u32) -> u64 {
    fn extend(depth: u32, prev: Option<u32>, layers: u32, t: u32, n: u32) -> u64 {
        if depth == layers {
            return 0;
        }
        let mut total = 0;
        for m in 0..n {
            if prev == Some(m) {
                continue;
            }
            // each design ending here, plus every longer continuation
            total += t as u64 * (1 + extend(depth + 1, Some(m), layers, t, n));
        }
        total
    }
    extend(0, None, layers, thicknesses, materials)
}

proptest! {
    #[test]
    fn state_count_matches_enumeration(l in 1u32..=2, t in 1u32..=3, n in 1u32..=3) {
        prop_assert_eq!(state_space_size(l, t, n), BigUint::from(brute_force_count(l, t, n)));
    }
}
