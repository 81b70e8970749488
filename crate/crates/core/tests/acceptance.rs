//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines show up in
//! `cargo test` output. `ACCEPTANCE_ONLY=1,7` restricts the run.
//!
//! Criterion 4 is a wall-clock target. Its line is printed like every other
//! but a FAIL there does not fail the target, since it measures the host
//! rather than the implementation; every other FAIL exits nonzero.

use std::collections::{BTreeSet, HashSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use peipsm_core::bench::{
    cmd_bench, cmd_forge_sim, measure_scaling, scaling_ratios, BenchConfig, BenchReport, ForgeStrategy, TestKind,
};
use peipsm_core::encoding::{CwcParams, PbhParams, Pei};
use peipsm_core::he::{HeContext, HeParams, PlainVec, Profile};
use peipsm_core::le_hook::{le_decrypt, le_keygen, AuditLog};
use peipsm_core::psm::*;
use peipsm_core::registry::{gen_disjoint_lists, DeviceList, EncodedList, ListKind, Registry};
use peipsm_core::transport::{run_local_session, Message, MnoServer, ServerConfig, UeClient, HEADER_LEN};
use rand::rngs::ChaCha20Rng;
use rand::{RngExt, SeedableRng};

/// Criteria whose FAIL is reported but not fatal.
const HOST_TIMING: &[u32] = &[4];

struct Outcomes {
    only: Option<BTreeSet<u32>>,
    fatal: Vec<u32>,
    soft: Vec<u32>,
}

impl Outcomes {
    fn wants(&self, id: u32) -> bool {
        self.only.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn record(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            if HOST_TIMING.contains(&id) {
                self.soft.push(id);
            } else {
                self.fatal.push(id);
            }
        }
    }
}

fn main() -> ExitCode {
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut out = Outcomes {
        only,
        fatal: Vec::new(),
        soft: Vec::new(),
    };

    // 1, 2, 3, 5 and the client half of 4 share the desk-scale run
    let desk = [1, 2, 3, 4, 5].iter().any(|&i| out.wants(i)).then(desk_run);
    if let Some(r) = &desk {
        if out.wants(1) {
            criterion_1(&mut out, r);
        }
        if out.wants(2) {
            criterion_2(&mut out, r);
        }
        if out.wants(3) {
            criterion_3(&mut out, r);
        }
    }
    if out.wants(4) {
        criterion_4(&mut out, desk.as_ref().unwrap());
    }
    if out.wants(5) {
        criterion_5(&mut out, desk.as_ref().unwrap());
    }
    let rest: [(u32, fn(&mut Outcomes)); 6] = [
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    for (id, f) in rest {
        if out.wants(id) {
            f(&mut out);
        }
    }

    if !out.soft.is_empty() {
        println!("host-dependent timing criteria not met: {:?}", out.soft);
    }
    if out.fatal.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {:?}", out.fatal);
        ExitCode::FAILURE
    }
}

fn secs(t: Instant) -> String {
    format!("{:.1} s", t.elapsed().as_secs_f64())
}

fn desk_run() -> BenchReport {
    let cfg = BenchConfig {
        list_size: 1 << 14,
        runs: 150,
        seed: 20,
        ..BenchConfig::default()
    };
    let start = Instant::now();
    let r = cmd_bench(&cfg).expect("desk-scale bench");
    println!("desk-scale run: {} rows per list, {}", r.rows_per_list, secs(start));
    r
}

fn criterion_1(out: &mut Outcomes, r: &BenchReport) {
    let total = r.runs.len();
    let correct = r.runs.iter().filter(|x| x.outcome == x.kind.expected()).count();
    let failures = r.runs.iter().filter(|x| x.outcome == Outcome::ProtocolDeviation).count();
    let min_budget = r.runs.iter().map(|x| x.noise_budget).min().unwrap_or(0);
    let per_kind = [TestKind::Blacklist, TestKind::Whitelist].map(|k| r.runs.iter().filter(|x| x.kind == k).count());
    let ok = per_kind == [150, 150] && correct == total && failures == 0 && min_budget > 0;
    out.record(
        1,
        "correctness",
        ok,
        format!("{correct}/{total} correct, {failures} decryption failures, min noise budget {min_budget} bits"),
    );
}

fn criterion_2(out: &mut Outcomes, r: &BenchReport) {
    let sizes: HashSet<usize> = r.runs.iter().map(|x| x.sum_bytes).collect();
    let frame = Message::SumReport {
        black: SlotSum(u64::MAX),
        grey: SlotSum(0),
    }
    .to_frame();
    let per_list = (frame.len() - HEADER_LEN) / 2;
    let ok = sizes == HashSet::from([8]) && per_list == 8 && r.rows.iter().all(|row| row.sum_report.sd == 0.0);
    out.record(2, "client response size", ok, format!("sum field sizes {sizes:?}, {per_list} B per list on the wire"));
}

fn criterion_3(out: &mut Outcomes, r: &BenchReport) {
    let sizes: BTreeSet<usize> = r.runs.iter().map(|x| x.request_bytes).collect();
    let lo = *sizes.first().unwrap();
    let hi = *sizes.last().unwrap();
    let ok = lo >= 8_000_000 && hi <= 33_000_000;
    out.record(3, "request size", ok, format!("{lo}..={hi} B"));
}

fn criterion_4(out: &mut Outcomes, desk: &BenchReport) {
    let start = Instant::now();
    let sizes = [1 << 14, 1 << 15, 1 << 16, 1 << 17];
    let points = measure_scaling(Profile::DefaultSafe, &sizes, 3, 40, DEFAULT_PREPARE_BUDGET).expect("scaling");
    let ratios = scaling_ratios(&points[..3]);
    let big = &points[3];
    let ue_max = desk.runs.iter().map(|x| x.ue_online_ms).fold(0.0, f64::max);
    let ok_big = big.mno_online.mean <= 1500.0;
    let ok_ratio = ratios.iter().all(|r| (1.5..=2.6).contains(r));
    let ok_ue = ue_max <= 50.0;
    let table: Vec<String> = points
        .iter()
        .map(|p| format!("n={} rows={} {:.0} ms", p.list_size, p.rows, p.mno_online.mean))
        .collect();
    out.record(
        4,
        "online latency",
        ok_big && ok_ratio && ok_ue,
        format!(
            "n=2^17 {:.0} ms (limit 1500), ratios {:.2?} (want 1.5..=2.6), UE online max {ue_max:.2} ms; [{}] {}",
            big.mno_online.mean,
            ratios,
            table.join(", "),
            secs(start)
        ),
    );
}

fn criterion_5(out: &mut Outcomes, desk: &BenchReport) {
    let safe_min = desk.runs.iter().map(|x| x.noise_budget).min().unwrap_or(0);
    let cfg = BenchConfig {
        profile: Profile::PaperOriginal,
        list_size: 1 << 14,
        runs: 5,
        seed: 50,
        ..BenchConfig::default()
    };
    let r = cmd_bench(&cfg).expect("original profile bench");
    let exhausted = r.runs.iter().all(|x| x.noise_budget == 0);
    let failures = r.runs.iter().filter(|x| x.outcome != x.kind.expected()).count();
    let ok = exhausted && failures > 0 && safe_min > 0;
    out.record(
        5,
        "noise budget dichotomy",
        ok,
        format!(
            "original chain: budget 0 on {}/{} runs, {failures} wrong outcomes; default chain min budget {safe_min} bits",
            r.runs.iter().filter(|x| x.noise_budget == 0).count(),
            r.runs.len()
        ),
    );
}

fn criterion_6(out: &mut Outcomes) {
    let trials = 1_000_000u64;
    let r = cmd_forge_sim(2045, trials, ForgeStrategy::UniformGuess, 60).expect("forge sim");
    let p = 1.0 / 1021.0;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    let rate = r.hits as f64 / trials as f64;
    let within = r.t_eff == 1021 && (rate - p).abs() <= 3.0 * sigma;

    let big = cmd_forge_sim(1_032_193, 0, ForgeStrategy::UniformGuess, 61).expect("forge sim");
    let exact = big.t_eff == 516_095 && big.bound == 1.0 / 516_095.0;
    let union = forgery_success_bound(1_032_193, 1825);
    let union_ok = union == 1825.0 / 516_095.0 && format!("{union:.2e}") == "3.54e-3";
    out.record(
        6,
        "forgery bound",
        within && exact && union_ok,
        format!(
            "rate {rate:.4e} vs {p:.4e} ({:+.2} sd); bound {:.3e}; 1825 attempts {union:.3e}",
            (rate - p) / sigma,
            big.bound
        ),
    );
}

/// All subsets of `0..n` with at most `k` elements.
fn small_subsets(n: u64, k: usize) -> Vec<Vec<u64>> {
    let mut all = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for s in &frontier {
            let from = s.last().map_or(0, |&x: &u64| x + 1);
            for x in from..n {
                let mut t = s.clone();
                t.push(x);
                next.push(t);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

fn criterion_7(out: &mut Outcomes) {
    let start = Instant::now();
    let t = 97;
    let ctx = HeContext::new(HeParams::custom(8, t, &[40, 40], 40, 0).unwrap()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(70);
    let keys = ctx.keygen(&mut rng);
    // 3 slot bits + 2 residual bits: a 32-identifier universe
    let pbh = PbhParams::new(8, 5, rng.random()).unwrap();
    let cwc = CwcParams::for_modulus(2, 2, t).unwrap();
    let universe: Vec<Pei> = (0..32).map(|v| Pei::new(v).unwrap()).collect();
    let queries: Vec<Query> = universe
        .iter()
        .map(|&p| build_query(&ctx, &keys.secret, &pbh, &cwc, p, &mut rng).unwrap())
        .collect();
    let subsets = small_subsets(32, 4);
    let (mut agree, mut total) = (0u64, 0u64);
    for s in &subsets {
        let list = DeviceList::from_entries(ListKind::Blacklist, s.iter().map(|&v| universe[v as usize])).unwrap();
        let enc = Arc::new(EncodedList::preprocess(&list, &pbh, &cwc).unwrap());
        let prepared = PreparedList::new(&ctx, ListKind::Blacklist, enc, DEFAULT_PREPARE_BUDGET).unwrap();
        for (p, q) in universe.iter().zip(&queries) {
            let ms = sample_masks(t, 8, MaskRange::Bounded, &mut rng);
            let res = psi_sum(&ctx, q, &prepared, &ms, &keys.relin, &keys.public).unwrap();
            let y = ctx.decrypt(&res.ct, &keys.secret).unwrap();
            let got = demask(client_aggregate(&y, t), &ms);
            let want = if s.contains(&p.value()) { Outcome::Match } else { Outcome::NoMatch };
            agree += (got == want) as u64;
            total += 1;
        }
    }
    out.record(
        7,
        "oracle equivalence",
        agree == total,
        format!("{agree}/{total} agree over {} lists x 32 identifiers, {}", subsets.len(), secs(start)),
    );
}

fn criterion_8(out: &mut Outcomes) {
    let mut rng = ChaCha20Rng::seed_from_u64(80);
    let moduli = [97u64, 2045, 65537, 1_032_193];
    let slots = 64;
    let trials = 100_000;
    let (mut honest_ok, mut tamper_ok, mut tampered, mut bounded_ok) = (0, 0, 0, true);
    for i in 0..trials {
        let t = moduli[i % moduli.len()];
        let ms = sample_masks(t, slots, MaskRange::Bounded, &mut rng);
        bounded_ok &= ms.r1() >= 1 && ms.r2().iter().all(|&r| ms.r1() + r < t);

        // honest client: at most one slot carries the indicator
        let hit = rng.random_bool(0.5);
        let at = rng.random_range(0..slots);
        let y: Vec<u64> = (0..slots)
            .map(|i| (ms.r2()[i] + if hit && i == at { ms.r1() } else { 0 }) % t)
            .collect();
        let want = if hit { Outcome::Match } else { Outcome::NoMatch };
        honest_ok += (demask(client_aggregate(&PlainVec(y), t), &ms) == want) as usize;

        // tampered sum: anything but R2 and R2 + r1
        let r2: u64 = ms.r2().iter().sum::<u64>() % t;
        let accepting = [r2, (r2 + ms.r1()) % t];
        let forged = if rng.random_bool(0.5) { rng.random_range(0..t) } else { rng.random::<u64>() };
        if !accepting.contains(&forged) {
            tampered += 1;
            tamper_ok += (demask(SlotSum(forged), &ms) == Outcome::ProtocolDeviation) as usize;
        }
    }
    out.record(
        8,
        "masking algebra",
        honest_ok == trials && tamper_ok == tampered && bounded_ok,
        format!("honest {honest_ok}/{trials}, tampered flagged {tamper_ok}/{tampered}, bounded masks in range: {bounded_ok}"),
    );
}

/// `C(n, k)` in u128; every intermediate is an exact binomial.
fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k as u128).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

fn criterion_9(out: &mut Outcomes) {
    let mut rng = ChaCha20Rng::seed_from_u64(90);
    let pbh = PbhParams::for_pei(8192, rng.random()).unwrap();
    let mut pbh_ok = 0;
    for _ in 0..100_000 {
        let x = rng.random_range(0..1u64 << 47);
        let (slot, res) = pbh.map(x).unwrap();
        pbh_ok += (slot < 8192 && res < 1 << 34 && pbh.invert(slot, res) == x) as usize;
    }

    let mut words = 0u64;
    let mut cwc_ok = true;
    for lb in 1..=8u32 {
        for h in 1..=10u32 {
            let p = CwcParams::minimal(lb, h).unwrap();
            let mut seen = HashSet::new();
            for r in 0..1u64 << lb {
                let cw = p.encode(r).unwrap();
                cwc_ok &= cw.len() as u64 == p.l && cw.weight() == h as usize;
                cwc_ok &= p.decode(&cw).unwrap() == r && seen.insert(cw.bits().to_vec());
                words += 1;
            }
        }
    }

    let mut minimal_ok = true;
    for h in 1..=10u32 {
        for lb in 1..=40u32 {
            let l = CwcParams::minimal(lb, h).unwrap().l;
            let need = 1u128 << lb;
            minimal_ok &= choose(l, h as u64) >= need && choose(l - 1, h as u64) < need;
        }
    }
    out.record(
        9,
        "encoding inverses",
        pbh_ok == 100_000 && cwc_ok && minimal_ok,
        format!("PBH {pbh_ok}/100000, CWC {words} words exhaustive: {cwc_ok}, minimal lengths (400 cases): {minimal_ok}"),
    );
}

fn criterion_10(out: &mut Outcomes) {
    let mut rng = ChaCha20Rng::seed_from_u64(100);
    let pbh = PbhParams::for_pei(8192, rng.random()).unwrap();
    let cwc = CwcParams::for_modulus(pbh.lambda_bar(), 8, 1_032_193).unwrap();
    let (black, grey, fresh) = gen_disjoint_lists(3000, 400, 200, 101);
    let mut reg = Registry::new(black, grey, &pbh, &cwc).unwrap();
    let mut fresh = fresh.into_iter();
    let (mut adds, mut removes) = (0, 0);
    for i in 0..100 {
        let kind = if rng.random_bool(0.5) { ListKind::Blacklist } else { ListKind::Greylist };
        if rng.random_bool(0.5) {
            reg.add_pei(kind, fresh.next().unwrap()).unwrap();
            adds += 1;
        } else {
            let entries: Vec<Pei> = reg.list(kind).iter().copied().collect();
            let victim = entries[rng.random_range(0..entries.len())];
            reg.remove_pei(kind, victim).unwrap();
            removes += 1;
        }
        if i % 17 == 0 {
            reg.refresh().unwrap();
        }
    }
    reg.refresh().unwrap();
    let same = [ListKind::Blacklist, ListKind::Greylist].map(|k| {
        let scratch = EncodedList::preprocess(reg.list(k), &pbh, &cwc).unwrap();
        *reg.encoded(k) == scratch && reg.encoded(k).raw_rows() == scratch.raw_rows()
    });
    out.record(
        10,
        "incremental preprocessing",
        same == [true, true],
        format!("{adds} adds, {removes} removes; blacklist identical: {}, greylist identical: {}", same[0], same[1]),
    );
}

fn criterion_11(out: &mut Outcomes) {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(110);
    let ctx = Arc::new(HeContext::new(HeParams::custom(8, 97, &[40, 40], 40, 0).unwrap()).unwrap());
    let pbh = PbhParams::new(8, 10, rng.random()).unwrap();
    let cwc = CwcParams::for_modulus(pbh.lambda_bar(), 2, 97).unwrap();
    let mut universe: Vec<u64> = (0..1 << 10).collect();
    for i in 0..universe.len() {
        let j = rng.random_range(i..universe.len());
        universe.swap(i, j);
    }
    let pei = |v: u64| Pei::new(v).unwrap();
    let black = DeviceList::from_entries(ListKind::Blacklist, universe[..40].iter().map(|&v| pei(v))).unwrap();
    let grey = DeviceList::from_entries(ListKind::Greylist, universe[40..80].iter().map(|&v| pei(v))).unwrap();
    let registry = Registry::new(black, grey, &pbh, &cwc).unwrap();
    let server =
        MnoServer::new(ctx.clone(), &registry, Arc::new(AuditLog::in_memory()), ServerConfig::default()).unwrap();
    let le = le_keygen(&mut rng);
    let client = UeClient::new(ctx.clone(), ctx.keygen(&mut rng), pbh, cwc, le.public);

    let sessions = 1000;
    let (mut consistent, mut greylisted, mut recovered) = (0, 0, 0);
    for _ in 0..sessions {
        let v = match rng.random_range(0..3) {
            0 => universe[rng.random_range(0..40)],
            1 => universe[rng.random_range(40..80)],
            _ => universe[rng.random_range(80..universe.len())],
        };
        let before = server.audit_log().len();
        let (decision, _) = run_local_session(&server, &client, pei(v), &mut rng).unwrap();
        let records = server.audit_log().records().unwrap();
        let emitted = records.len() - before;
        let truth = match registry.lookup(&pei(v)) {
            Some(k) => Decision::Listed(k),
            None => Decision::NotListed,
        };
        let grey_hit = decision == Decision::Listed(ListKind::Greylist);
        consistent += (decision == truth && emitted == grey_hit as usize) as usize;
        if grey_hit && emitted == 1 {
            greylisted += 1;
            let rec = records.last().unwrap();
            let session = server.finished_sessions().last().unwrap().session_id;
            recovered += (rec.session_id == session && le_decrypt(&rec.le_ct, &le.secret).ok() == Some(pei(v))) as usize;
        }
    }
    out.record(
        11,
        "escrow hook",
        consistent == sessions && recovered == greylisted && greylisted > 0,
        format!(
            "{consistent}/{sessions} sessions emit iff greylisted, {recovered}/{greylisted} escrows recover the identifier, {}",
            secs(start)
        ),
    );
}
