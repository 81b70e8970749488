use std::sync::Arc;
use std::time::Instant;

use peipsm_core::encoding::{CwcParams, PbhParams, Pei};
use peipsm_core::he::{HeContext, HeParams, PlainVec, Profile};
use peipsm_core::psm::*;
use peipsm_core::registry::{gen_disjoint_lists, DeviceList, EncodedList, ListKind};
use rand::{rngs::StdRng, SeedableRng};

fn run_profile(profile: Profile, list_size: usize) -> (Vec<Outcome>, Vec<Outcome>, u32) {
    let ctx = HeContext::new(HeParams::generate(profile, 8192).unwrap()).unwrap();
    let mut rng = StdRng::seed_from_u64(1);
    let keys = ctx.keygen(&mut rng);
    let pbh = PbhParams::for_pei(8192, [3; 16]).unwrap();
    let cwc = CwcParams::for_modulus(pbh.lambda_bar(), 8, ctx.plain_modulus()).unwrap();
    let (black, _, unlisted) = gen_disjoint_lists(list_size, 0, 2, 5);
    let enc = Arc::new(EncodedList::preprocess(&black, &pbh, &cwc).unwrap());
    let prepared = PreparedList::new(&ctx, ListKind::Blacklist, enc, DEFAULT_PREPARE_BUDGET).unwrap();
    let listed: Vec<Pei> = black.iter().take(2).copied().collect();
    let mut min_budget = u32::MAX;
    let mut query = |p: Pei| {
        let q = build_query(&ctx, &keys.secret, &pbh, &cwc, p, &mut rng).unwrap();
        let ms = sample_masks(ctx.plain_modulus(), 8192, MaskRange::Bounded, &mut rng);
        let start = Instant::now();
        let res = psi_sum(&ctx, &q, &prepared, &ms, &keys.relin, &keys.public).unwrap();
        let el = start.elapsed();
        let budget = ctx.noise_budget(&res.ct, &keys.secret).unwrap();
        min_budget = min_budget.min(budget);
        let y = ctx.decrypt(&res.ct, &keys.secret).unwrap();
        let o = demask(client_aggregate(&y, ctx.plain_modulus()), &ms);
        eprintln!("{profile} rows={} eval={el:?} budget={budget} outcome={o:?}", prepared.row_count());
        o
    };
    let hits: Vec<Outcome> = listed.into_iter().map(&mut query).collect();
    let misses: Vec<Outcome> = unlisted.iter().copied().map(&mut query).collect();
    (hits, misses, min_budget)
}

#[test]
fn default_profile_decides_correctly() {
    let (hits, misses, budget) = run_profile(Profile::DefaultSafe, 2000);
    assert!(hits.iter().all(|&o| o == Outcome::Match), "{hits:?}");
    assert!(misses.iter().all(|&o| o == Outcome::NoMatch), "{misses:?}");
    assert!(budget > 0);
}

#[test]
fn original_profile_runs_out_of_noise() {
    let (_, _, budget) = run_profile(Profile::PaperOriginal, 2000);
    assert_eq!(budget, 0);
}

#[test]
fn empty_list_yields_no_match() {
    let ctx = HeContext::new(HeParams::custom(8, 97, &[40, 40], 40, 0).unwrap()).unwrap();
    let mut rng = StdRng::seed_from_u64(2);
    let keys = ctx.keygen(&mut rng);
    let pbh = PbhParams::new(8, 5, [0; 16]).unwrap();
    let cwc = CwcParams::for_modulus(2, 2, 97).unwrap();
    let enc = Arc::new(EncodedList::preprocess(&DeviceList::new(ListKind::Blacklist), &pbh, &cwc).unwrap());
    let prepared = PreparedList::new(&ctx, ListKind::Blacklist, enc, DEFAULT_PREPARE_BUDGET).unwrap();
    let q = build_query(&ctx, &keys.secret, &pbh, &cwc, Pei::new(3).unwrap(), &mut rng).unwrap();
    let ms = sample_masks(97, 8, MaskRange::Bounded, &mut rng);
    let res = psi_sum(&ctx, &q, &prepared, &ms, &keys.relin, &keys.public).unwrap();
    let y = ctx.decrypt(&res.ct, &keys.secret).unwrap();
    assert_eq!(y, PlainVec(ms.r2().to_vec()));
}
