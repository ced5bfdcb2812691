use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use parentsets::field::{Fe, FieldParams};
use parentsets::lattice::{brute_force_mps, maximal_parent_sets, FixedBackend, LatticeConfig};
use parentsets::mpc::simulate;
use parentsets::scoring::Variable;
use parentsets::session::{simulate_session, SessionConfig};
use parentsets::sharing::share;
use parentsets::wire::{Frame, MessageType, SessionId};
use parentsets::{DataTable, Schema};

#[derive(Debug, Clone)]
struct Instance {
    schema: Schema,
    rows: Vec<Vec<u32>>,
    target: usize,
}

fn instance(max_vars: usize, max_rows: usize) -> impl Strategy<Value = Instance> {
    (2..=max_vars)
        .prop_flat_map(move |n| (prop::collection::vec(2usize..=3, n), 0..n, 0..=max_rows))
        .prop_flat_map(|(arities, target, m)| {
            let row = arities.iter().map(|&r| 0..r as u32).collect::<Vec<_>>();
            (Just(arities), Just(target), prop::collection::vec(row, m))
        })
        .prop_map(|(arities, target, rows)| {
            let variables = arities
                .iter()
                .enumerate()
                .map(|(i, &arity)| Variable { name: format!("V{i}"), arity, states: None })
                .collect();
            Instance { schema: Schema::new(variables, 128).unwrap(), rows, target }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traversal_matches_enumeration(inst in instance(5, 80)) {
        let data = DataTable::new(inst.rows.clone());
        let params = FieldParams::default();
        let l_max = inst.schema.len() - 1;
        let mut backend = FixedBackend::new(&inst.schema, &data, inst.target, params).unwrap();
        let got = maximal_parent_sets(&mut backend, &LatticeConfig::new(inst.target, l_max)).unwrap();
        let expected = brute_force_mps(&inst.schema, &data, &params, inst.target, l_max, false).unwrap();
        prop_assert_eq!(&got.pg, &expected);
        prop_assert!(got.pg.dominance_violations().is_empty());
    }

    #[test]
    fn frames_round_trip(kind in 1u8..=11, session in any::<[u8; 16]>(), round in any::<u32>(), gadget in any::<u32>(),
                         payload in prop::collection::vec(any::<u8>(), 0..200)) {
        let frame = Frame { kind: MessageType::from_byte(kind).unwrap(), session: SessionId(session), round, gadget, payload };
        prop_assert_eq!(Frame::decode(&frame.encode()).unwrap(), frame);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn secure_session_matches_plaintext(inst in instance(4, 40), owners in 1usize..=3, csps in 2usize..=3, cut in any::<prop::sample::Index>()) {
        let params = FieldParams::default();
        let data = DataTable::new(inst.rows.clone());
        let mut backend = FixedBackend::new(&inst.schema, &data, inst.target, params).unwrap();
        let expected = maximal_parent_sets(&mut backend, &LatticeConfig::new(inst.target, inst.schema.len() - 1)).unwrap();

        // first owner takes a random prefix, the rest is dealt round robin
        let split = cut.index(inst.rows.len() + 1);
        let mut shards = vec![Vec::new(); owners];
        shards[0].extend_from_slice(&inst.rows[..split]);
        for (i, r) in inst.rows[split..].iter().enumerate() {
            shards[i % owners].push(r.clone());
        }
        let tables: Vec<DataTable> = shards.into_iter().map(DataTable::new).collect();
        let mut config = SessionConfig::new(inst.schema.clone(), inst.target, owners, csps);
        config.timeout = Duration::from_secs(30);
        let out = simulate_session(&config, &tables).unwrap();
        prop_assert_eq!(out.pg(), &expected.pg);
        prop_assert_eq!(&out.csps[0].trace, &expected.trace);
    }
}

#[test]
fn comparisons_agree_with_integers() {
    let params = FieldParams::default();
    let bound = params.magnitude_bound() / 2;
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let pairs: Vec<(i128, i128)> = (0..500)
        .map(|i| {
            let a = rng.gen_range(-bound..bound);
            match i % 3 {
                0 => (a, a),
                1 => (a, a + 1),
                _ => (a, rng.gen_range(-bound..bound)),
            }
        })
        .collect();
    let mut a_sh = vec![Vec::new(); 2];
    let mut b_sh = vec![Vec::new(); 2];
    for &(a, b) in &pairs {
        for s in share(Fe::from_i128(a), 2, &mut rng).unwrap() {
            a_sh[s.party].push(s.value);
        }
        for s in share(Fe::from_i128(b), 2, &mut rng).unwrap() {
            b_sh[s.party].push(s.value);
        }
    }
    let (out, _) = simulate(2, params, 3, move |csp| {
        let i = csp.index();
        csp.cmp_open_lt(&a_sh[i], &b_sh[i])
    })
    .unwrap();
    for party in &out {
        let expected: Vec<bool> = pairs.iter().map(|(a, b)| a < b).collect();
        assert_eq!(party.output, expected);
    }
}
