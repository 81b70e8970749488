//! Operator-side costs: list encoding and the per-query evaluation. Ids
//! carry the backend; compare with
//!
//!     cargo bench -p peipsm-core
//!     cargo bench -p peipsm-core --no-default-features

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use peipsm_core::encoding::{CwcParams, PbhParams};
use peipsm_core::he::{HeContext, HeParams, Profile};
use peipsm_core::is_parallel;
use peipsm_core::psm::{build_query, psi_sum, sample_masks, MaskRange, PreparedList, DEFAULT_PREPARE_BUDGET};
use peipsm_core::registry::{gen_disjoint_lists, EncodedList, ListKind};
use rand::rngs::ChaCha20Rng;
use rand::SeedableRng;

fn backend() -> &'static str {
    if is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn membership(c: &mut Criterion) {
    let ctx = HeContext::new(HeParams::generate(Profile::DefaultSafe, 8192).unwrap()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let keys = ctx.keygen(&mut rng);
    let pbh = PbhParams::for_pei(8192, [5; 16]).unwrap();
    let cwc = CwcParams::for_modulus(pbh.lambda_bar(), 8, ctx.plain_modulus()).unwrap();

    let mut g = c.benchmark_group(format!("membership/{}", backend()));
    g.sample_size(10);
    for n in [1 << 12, 1 << 14] {
        let (black, _, unlisted) = gen_disjoint_lists(n, 0, 1, 3);
        g.bench_with_input(BenchmarkId::new("preprocess", n), &black, |b, l| {
            b.iter(|| EncodedList::preprocess(l, &pbh, &cwc).unwrap())
        });
        let enc = Arc::new(EncodedList::preprocess(&black, &pbh, &cwc).unwrap());
        let list = PreparedList::new(&ctx, ListKind::Blacklist, enc, DEFAULT_PREPARE_BUDGET).unwrap();
        let q = build_query(&ctx, &keys.secret, &pbh, &cwc, unlisted[0], &mut rng).unwrap();
        let ms = sample_masks(ctx.plain_modulus(), 8192, MaskRange::Bounded, &mut rng);
        g.bench_with_input(BenchmarkId::new("psi_sum", n), &list, |b, l| {
            b.iter(|| psi_sum(&ctx, &q, l, &ms, &keys.relin, &keys.public).unwrap())
        });
    }
    g.bench_function("build_query", |b| {
        let (_, _, p) = gen_disjoint_lists(0, 0, 1, 4);
        b.iter(|| build_query(&ctx, &keys.secret, &pbh, &cwc, p[0], &mut rng).unwrap())
    });
    g.finish();
}

criterion_group!(benches, membership);
criterion_main!(benches);
