use covadj::randomization::{assign_all, AssignmentState, RandomizationScheme, Unit, Variant};
use covadj::rng::{stream, Purpose};
use covadj::sim::{generate, ModelId, ModelSpec};

fn model_units(id: ModelId, n: usize, seed: u64) -> Vec<Unit> {
    let m = ModelSpec::new(id, ModelSpec::builtin(id).unwrap().base_count()).unwrap();
    generate(&m, n, &mut stream(seed, 0, Purpose::Data)).unwrap().units()
}

fn by_stratum(units: &[Unit], treated: &[bool]) -> Vec<(usize, usize)> {
    let k = units.iter().map(|u| u.stratum).max().unwrap() + 1;
    let mut c = vec![(0, 0); k];
    for (u, &t) in units.iter().zip(treated) {
        c[u.stratum].0 += usize::from(t);
        c[u.stratum].1 += 1;
    }
    c
}

#[test]
fn block_prefixes_stay_within_one_block_of_target() {
    for (size, pi) in [(4, 0.5), (6, 0.5), (6, 2.0 / 3.0), (3, 1.0 / 3.0)] {
        let s = RandomizationScheme::stratified_block(size, pi).unwrap();
        let units = model_units(ModelId::Model3, 2000, 4);
        let a = assign_all(&s, &units, 17).unwrap();
        let mut running = vec![(0usize, 0usize); 12];
        for (u, &t) in units.iter().zip(&a) {
            let c = &mut running[u.stratum];
            c.0 += usize::from(t);
            c.1 += 1;
            let deficit = c.0 as f64 - pi * c.1 as f64;
            assert!(deficit.abs() <= size as f64 * pi.max(1.0 - pi) + 1e-9);
            if c.1 % size == 0 {
                assert!(deficit.abs() < 1e-9, "complete blocks hit the target exactly");
            }
        }
    }
}

#[test]
fn every_scheme_hits_the_target_within_strata() {
    for pi in [0.5, 2.0 / 3.0] {
        let units = model_units(ModelId::Model1, 10_000, 8);
        let schemes = [
            RandomizationScheme::simple(pi).unwrap(),
            RandomizationScheme::stratified_block(6, pi).unwrap(),
            RandomizationScheme::biased_coin(0.75, pi).unwrap(),
            RandomizationScheme::new(Variant::WeiAdaptive, pi).unwrap(),
            RandomizationScheme::pocock_simon(0.75, vec![1.0], pi).unwrap(),
        ];
        for s in schemes {
            let a = assign_all(&s, &units, 21).unwrap();
            for (t, n) in by_stratum(&units, &a) {
                let frac = t as f64 / n as f64;
                assert!((frac - pi).abs() < 0.02, "{:?}: {frac} vs {pi}", s.variant);
            }
        }
    }
}

#[test]
fn minimization_balances_each_margin_level() {
    let pi = 0.5;
    let units = model_units(ModelId::Model3, 5000, 2);
    let s = RandomizationScheme::pocock_simon(0.75, vec![1.0, 1.0], pi).unwrap();
    let a = assign_all(&s, &units, 3).unwrap();
    for m in 0..2 {
        let levels = units.iter().map(|u| u.margins[m]).max().unwrap() + 1;
        for l in 0..levels {
            let (t, n) = units
                .iter()
                .zip(&a)
                .filter(|(u, _)| u.margins[m] == l)
                .fold((0, 0), |acc, (_, &t)| (acc.0 + usize::from(t), acc.1 + 1));
            let se = (pi * (1.0 - pi) / n as f64).sqrt();
            let frac = t as f64 / n as f64;
            assert!((frac - pi).abs() <= 3.0 * se, "margin {m} level {l}: {frac}");
        }
    }
}

#[test]
fn fresh_coin_is_fair_and_tilted_coin_is_not() {
    let s = RandomizationScheme::biased_coin(0.75, 0.5).unwrap();
    let st = AssignmentState::new(s).unwrap();
    let u = Unit { stratum: 0, margins: vec![] };
    assert_eq!(st.treatment_probability(&u).unwrap(), 0.5);

    // One prior treated unit sharing both levels: treat scores 8, control 0.
    let s = RandomizationScheme::pocock_simon(0.75, vec![1.0, 1.0], 0.5).unwrap();
    let mut st = AssignmentState::new(s).unwrap();
    let mut rng = stream(0, 0, Purpose::Assign);
    let u = Unit { stratum: 0, margins: vec![0, 1] };
    let first = st.assign_next(&u, &mut rng).unwrap();
    let p = st.treatment_probability(&u).unwrap();
    assert_eq!(p, if first { 0.25 } else { 0.75 });
}

#[test]
fn unequal_block_allocation_is_exact() {
    let s = RandomizationScheme::stratified_block(6, 2.0 / 3.0).unwrap();
    let units: Vec<Unit> = (0..600).map(|_| Unit { stratum: 0, margins: vec![] }).collect();
    let a = assign_all(&s, &units, 99).unwrap();
    assert_eq!(a.iter().filter(|&&t| t).count(), 400);
}
