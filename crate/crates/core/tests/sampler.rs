use mixscale::divergence::{l1_mixed, DivergenceConfig};
use mixscale::gaussian::GaussianComponent;
use mixscale::mixture::LatentMixture;
use mixscale::rng::substream;
use mixscale::rounding::MixedDensity;
use mixscale::sampler::{
    initial_latent, predictive_density, predictive_from, run, run_keyed, DpConfig, NiwParams, PosteriorDraws,
};
use mixscale::schema::{ContinuousColumn, DiscreteColumn, MixedPoint, MixedSchema, MonotoneMap};
use nalgebra::dmatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_data(n: usize, seed: u64) -> Vec<MixedPoint> {
    let mut rng = substream(seed, &[]);
    (0..n)
        .map(|_| MixedPoint::continuous(vec![StandardNormal.sample(&mut rng)]))
        .collect()
}

fn short(seed: u64) -> DpConfig {
    DpConfig {
        iterations: 300,
        burn_in: 100,
        thin: 10,
        seed,
        ..DpConfig::default()
    }
}

fn mixed_data(n: usize, seed: u64) -> (Vec<MixedPoint>, MixedSchema) {
    let schema = MixedSchema::new(
        vec![ContinuousColumn {
            name: "x".into(),
            map: MonotoneMap::Identity,
        }],
        vec![DiscreteColumn::binary("b", 0.0), DiscreteColumn::count("n")],
    )
    .unwrap();
    let truth = MixedDensity::new(
        schema.clone(),
        LatentMixture::single(
            GaussianComponent::new(
                vec![0.0, 0.2, 1.0],
                dmatrix![1.0, 0.5, 0.2; 0.5, 1.0, 0.1; 0.2, 0.1, 1.0],
            )
            .unwrap(),
        ),
    )
    .unwrap();
    (truth.pushforward_sample(n, &mut substream(seed, &[1])), schema)
}

#[test]
fn single_cluster_mean_tracks_sample_mean() {
    let data = normal_data(500, 3);
    let schema = MixedSchema::all_continuous(1);
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    let cfg = DpConfig {
        k_max: 1,
        ..short(1)
    };
    let draws = run(&data, &schema, &niw, &cfg).unwrap();
    let post_mean = draws
        .draws
        .iter()
        .map(|d| d.components()[0].mean()[0])
        .sum::<f64>()
        / draws.draws.len() as f64;
    let sample_mean = data.iter().map(|y| y.y1[0]).sum::<f64>() / 500.0;
    assert!((post_mean - sample_mean).abs() < 3.0 / 500f64.sqrt());
}

#[test]
fn probit_single_binary_recovers_rate() {
    let schema = MixedSchema::new(vec![], vec![DiscreteColumn::binary("b", 0.0)]).unwrap();
    let data: Vec<MixedPoint> = (0..1000)
        .map(|i| MixedPoint::discrete(vec![u64::from(i < 700)]))
        .collect();
    let niw = NiwParams::new(vec![0.0], 1.0, 3.0, dmatrix![1.0]).unwrap();
    let cfg = DpConfig {
        k_max: 1,
        ..short(2)
    };
    let draws = run(&data, &schema, &niw, &cfg).unwrap();
    let p1 = predictive_density(&draws).unwrap().discrete_marginal(&[1]).unwrap();
    assert!((p1 - 0.7).abs() < 0.05, "{p1}");
}

#[test]
fn zero_iterations_give_no_draws() {
    let (data, schema) = mixed_data(20, 1);
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    let cfg = DpConfig {
        iterations: 0,
        burn_in: 0,
        ..DpConfig::default()
    };
    let draws = run(&data, &schema, &niw, &cfg).unwrap();
    assert!(draws.draws.is_empty());
    assert_eq!(draws.draws_text(), "");
    assert!(predictive_density(&draws).is_err());
}

#[test]
fn same_seed_same_bytes_across_thread_counts() {
    let (data, schema) = mixed_data(120, 2);
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    let cfg = short(9);
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run(&data, &schema, &niw, &cfg).unwrap().draws_text())
    };
    let a = in_pool(1);
    assert_eq!(a, in_pool(3));
    assert_eq!(a, run(&data, &schema, &niw, &cfg).unwrap().draws_text());
    assert_ne!(a, run(&data, &schema, &niw, &short(10)).unwrap().draws_text());
}

#[test]
fn row_order_does_not_matter_for_keyed_rows() {
    let (data, schema) = mixed_data(80, 4);
    let keys: Vec<u64> = (0..80).map(|i| 1000 + 7 * i).collect();
    let mut perm: Vec<usize> = (0..80).collect();
    let mut rng = substream(4, &[9]);
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let data2: Vec<MixedPoint> = perm.iter().map(|&i| data[i].clone()).collect();
    let keys2: Vec<u64> = perm.iter().map(|&i| keys[i]).collect();
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    let cfg = short(5);
    let a = run_keyed(&data, &keys, &schema, &niw, &cfg).unwrap().draws_text();
    let b = run_keyed(&data2, &keys2, &schema, &niw, &cfg).unwrap().draws_text();
    assert_eq!(a, b);
}

#[test]
fn duplicate_keys_are_rejected() {
    let (data, schema) = mixed_data(3, 4);
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    assert!(run_keyed(&data, &[1, 2, 1], &schema, &niw, &short(1)).is_err());
}

#[test]
fn draws_text_round_trips() {
    let (data, schema) = mixed_data(60, 6);
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    let draws = run(&data, &schema, &niw, &short(6)).unwrap();
    assert_eq!(draws.draws.len(), 20);
    let parsed = PosteriorDraws::parse_draws(&draws.draws_text()).unwrap();
    let lines = |ds: &[LatentMixture]| ds.iter().map(|d| d.to_line()).collect::<Vec<_>>();
    assert_eq!(lines(&parsed), lines(&draws.draws));
    let meta: serde_json::Value = serde_json::from_str(&draws.metadata_json()).unwrap();
    assert_eq!(meta["draws"], 20);
}

#[test]
fn initial_latents() {
    let schema = MixedSchema::new(
        vec![ContinuousColumn {
            name: "x".into(),
            map: MonotoneMap::LogExp,
        }],
        vec![DiscreteColumn::binary("b", 0.0)],
    )
    .unwrap();
    let x = initial_latent(&schema, &MixedPoint::new(vec![2.0], vec![1])).unwrap();
    assert_eq!(x[0], 2f64.ln());
    assert!((0.0..=6.0).contains(&x[1]));
    let x = initial_latent(&schema, &MixedPoint::new(vec![2.0], vec![0])).unwrap();
    assert!(x[1] < 0.0);
}

#[test]
fn predictive_of_one_or_repeated_draws() {
    let (data, schema) = mixed_data(40, 7);
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    let draw = run(&data, &schema, &niw, &short(7)).unwrap().draws.remove(0);
    let one = predictive_from(std::slice::from_ref(&draw), &schema).unwrap();
    assert_eq!(one.latent().to_line(), draw.to_line());
    let two = predictive_from(&[draw.clone(), draw.clone()], &schema).unwrap();
    for y in &data[..10] {
        let (a, b) = (one.log_density(y).unwrap(), two.log_density(y).unwrap());
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn occupancy_on_two_component_truth() {
    let schema = MixedSchema::all_continuous(1);
    let mut rng = substream(11, &[]);
    let data: Vec<MixedPoint> = (0..800)
        .map(|i| {
            let m = if i % 2 == 0 { -3.0 } else { 3.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            MixedPoint::continuous(vec![m + 0.7 * z])
        })
        .collect();
    let niw = NiwParams::from_data(&data, &schema).unwrap();
    let cfg = DpConfig {
        k_max: 20,
        ..short(11)
    };
    let draws = run(&data, &schema, &niw, &cfg).unwrap();
    let kept: Vec<usize> = draws.diagnostics[cfg.burn_in..].iter().map(|d| d.occupied).collect();
    let small = kept.iter().filter(|&&k| (1..=6).contains(&k)).count() as f64 / kept.len() as f64;
    println!("share of post-burn-in sweeps with 1 to 6 occupied clusters: {small:.3}");
    assert!(kept.iter().all(|&k| k >= 2));
}

#[test]
fn fit_beats_prior_draw_baseline() {
    let schema = MixedSchema::new(
        vec![ContinuousColumn {
            name: "x".into(),
            map: MonotoneMap::Identity,
        }],
        vec![DiscreteColumn::binary("b", 0.0)],
    )
    .unwrap();
    let truth = MixedDensity::new(
        schema.clone(),
        LatentMixture::single(GaussianComponent::new(vec![0.0, 0.2], dmatrix![1.0, 0.5; 0.5, 1.0]).unwrap()),
    )
    .unwrap();
    let cfg = DivergenceConfig {
        quad_rel_tol: 1e-6,
        quad_abs_tol: 1e-8,
        ..DivergenceConfig::default()
    };
    let mut wins = 0;
    for rep in 0..10u64 {
        let data = truth.pushforward_sample(300, &mut substream(rep, &[0x66]));
        let niw = NiwParams::from_data(&data, &schema).unwrap();
        let dp = DpConfig {
            iterations: 200,
            burn_in: 100,
            thin: 10,
            seed: rep,
            ..DpConfig::default()
        };
        let draws = run(&data, &schema, &niw, &dp).unwrap();
        let fit = MixedDensity::new(schema.clone(), predictive_density(&draws).unwrap().latent().compact(1e-4)).unwrap();
        let prior = run(&[], &schema, &niw, &DpConfig { iterations: 1, burn_in: 0, thin: 1, ..dp }).unwrap();
        let baseline = MixedDensity::new(schema.clone(), prior.draws[0].compact(1e-4)).unwrap();
        let a = l1_mixed(&fit, &truth, &cfg).unwrap().value;
        let b = l1_mixed(&baseline, &truth, &cfg).unwrap().value;
        wins += usize::from(a < b);
    }
    assert!(wins >= 9, "{wins}/10");
}
