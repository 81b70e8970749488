//! Benchmark harness: per-list verification runs with the communication
//! and timing columns of the original evaluation, forgery Monte Carlo,
//! parameter search and list-size scaling.

use std::fmt::{self, Write as _};
use std::sync::Arc;
use std::time::Instant;

use peipsm_bfv::{HeContext, HeParams, KeyMaterial, PlainVec, Profile};
use rand::rngs::ChaCha20Rng;
use rand::{RngExt, SeedableRng};

use crate::encoding::{CwcParams, PbhParams, Pei, MAX_CODEWORD_LEN, PEI_BITS};
use crate::psm::{
    build_query, client_aggregate, demask, psi_sum, sample_masks, t_eff, MaskRange, MaskingState, Outcome,
    PreparedList, SlotSum, DEFAULT_PREPARE_BUDGET,
};
use crate::registry::{gen_disjoint_lists, EncodedList, ListKind};
use crate::{par, Error};

/// Weight used throughout unless a search says otherwise.
pub const DEFAULT_WEIGHT: u32 = 8;
pub const DEFAULT_DEGREE: usize = 8192;

/// Which identifiers a test queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TestKind {
    /// Identifiers drawn from the list; every run should match.
    Blacklist,
    /// Identifiers not on the list; every run should not match.
    Whitelist,
}

impl TestKind {
    pub fn expected(self) -> Outcome {
        match self {
            TestKind::Blacklist => Outcome::Match,
            TestKind::Whitelist => Outcome::NoMatch,
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::Blacklist => "Blacklist",
            TestKind::Whitelist => "Whitelist",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub profile: Profile,
    pub degree: usize,
    pub weight: u32,
    pub list_size: usize,
    /// Runs per test kind.
    pub runs: usize,
    pub seed: u64,
    pub mask_range: MaskRange,
    /// Evaluate runs concurrently instead of one after another.
    pub parallel: bool,
    pub kinds: Vec<TestKind>,
    pub prepare_budget: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            profile: Profile::DefaultSafe,
            degree: DEFAULT_DEGREE,
            weight: DEFAULT_WEIGHT,
            list_size: 1 << 14,
            runs: 150,
            seed: 1,
            mask_range: MaskRange::Bounded,
            parallel: false,
            kinds: vec![TestKind::Blacklist, TestKind::Whitelist],
            prepare_budget: DEFAULT_PREPARE_BUDGET,
        }
    }
}

/// One verification against one list.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub kind: TestKind,
    pub pei: Pei,
    pub outcome: Outcome,
    pub request_bytes: usize,
    pub response_bytes: usize,
    pub sum_bytes: usize,
    pub ue_offline_ms: f64,
    pub mno_offline_ms: f64,
    pub ue_online_ms: f64,
    pub mno_online_ms: f64,
    pub noise_budget: u32,
    /// Decrypted masked value in the queried slot.
    pub slot_value: u64,
}

impl RunRecord {
    pub fn correct(&self) -> bool {
        self.outcome == self.kind.expected()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
}

impl Summary {
    /// Mean, sample standard deviation and maximum.
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Summary::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary {
            mean,
            sd,
            max: xs.iter().cloned().fold(f64::MIN, f64::max),
        }
    }
}

/// Aggregates for one test kind.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kind: TestKind,
    pub runs: usize,
    pub correct: usize,
    /// Honest runs that demasked to a protocol deviation.
    pub decryption_failures: usize,
    pub min_noise_budget: u32,
    pub request: Summary,
    pub response: Summary,
    pub sum_report: Summary,
    pub ue_offline: Summary,
    pub mno_offline: Summary,
    pub ue_online: Summary,
    pub mno_online: Summary,
}

impl BenchRow {
    fn from_runs(kind: TestKind, runs: &[RunRecord]) -> Self {
        let f = |g: fn(&RunRecord) -> f64| Summary::of(runs.iter().map(g));
        BenchRow {
            kind,
            runs: runs.len(),
            correct: runs.iter().filter(|r| r.correct()).count(),
            decryption_failures: runs.iter().filter(|r| r.outcome == Outcome::ProtocolDeviation).count(),
            min_noise_budget: runs.iter().map(|r| r.noise_budget).min().unwrap_or(0),
            request: f(|r| r.request_bytes as f64),
            response: f(|r| r.response_bytes as f64),
            sum_report: f(|r| r.sum_bytes as f64),
            ue_offline: f(|r| r.ue_offline_ms),
            mno_offline: f(|r| r.mno_offline_ms),
            ue_online: f(|r| r.ue_online_ms),
            mno_online: f(|r| r.mno_online_ms),
        }
    }

    /// All runs correct and none ran out of noise.
    pub fn passed(&self) -> bool {
        self.correct == self.runs && self.min_noise_budget > 0
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub plain_modulus: u64,
    pub rows_per_list: usize,
    /// One-time list encoding and plaintext preparation.
    pub preprocess_ms: f64,
    pub rows: Vec<BenchRow>,
    pub runs: Vec<RunRecord>,
}

pub const CSV_HEADER: &str = "Test,Runs,Correct,Decryption failures,Min noise budget [bits],\
Client request [B],Client request SD [B],Server response [B],Server response SD [B],\
Client response [B],Client response SD [B],UE offline [ms],UE offline SD [ms],\
MNO offline [ms],MNO offline SD [ms],UE online [ms],UE online SD [ms],UE online max [ms],\
MNO online [ms],MNO online SD [ms],MNO online max [ms]";

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(BenchRow::passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.0},{:.0},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
                r.kind,
                r.runs,
                r.correct,
                r.decryption_failures,
                r.min_noise_budget,
                r.request.mean,
                r.request.sd,
                r.response.mean,
                r.response.sd,
                r.sum_report.mean,
                r.sum_report.sd,
                r.ue_offline.mean,
                r.ue_offline.sd,
                r.mno_offline.mean,
                r.mno_offline.sd,
                r.ue_online.mean,
                r.ue_online.sd,
                r.ue_online.max,
                r.mno_online.mean,
                r.mno_online.sd,
                r.mno_online.max,
            );
        }
        out
    }

    /// Masked values seen in the queried slot, per test kind.
    pub fn histogram(&self, kind: TestKind, bins: usize) -> Histogram {
        Histogram::of(
            self.runs.iter().filter(|r| r.kind == kind).map(|r| r.slot_value),
            self.plain_modulus,
            bins,
        )
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "profile {} | N = {} | h = {} | n = {} | {} rows | preprocessing {:.0} ms | {}",
            c.profile,
            c.degree,
            c.weight,
            c.list_size,
            self.rows_per_list,
            self.preprocess_ms,
            if c.parallel { "concurrent runs" } else { "sequential runs" }
        )?;
        writeln!(
            f,
            "{:<10} {:>9} {:>18} {:>16} {:>10} {:>14} {:>14} {:>14} {:>18} {:>7}",
            "Test", "correct", "request [B]", "response [B]", "sum [B]", "UE off [ms]", "MNO off [ms]", "UE on [ms]",
            "MNO on [ms]", "budget"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>4}/{:<4} {:>18} {:>16} {:>10} {:>14} {:>14} {:>14} {:>18} {:>7}",
                r.kind.to_string(),
                r.correct,
                r.runs,
                format!("{:.0}±{:.0}", r.request.mean, r.request.sd),
                format!("{:.0}±{:.0}", r.response.mean, r.response.sd),
                format!("{:.0}±{:.0}", r.sum_report.mean, r.sum_report.sd),
                format!("{:.2}±{:.2}", r.ue_offline.mean, r.ue_offline.sd),
                format!("{:.2}±{:.2}", r.mno_offline.mean, r.mno_offline.sd),
                format!("{:.2}±{:.2}", r.ue_online.mean, r.ue_online.sd),
                format!("{:.1}±{:.1} (max {:.1})", r.mno_online.mean, r.mno_online.sd, r.mno_online.max),
                r.min_noise_budget,
            )?;
        }
        Ok(())
    }
}

/// Equal-width histogram over `[0, t)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub upper: u64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: impl IntoIterator<Item = u64>, upper: u64, bins: usize) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        for v in values {
            let b = (v as u128 * bins as u128 / upper.max(1) as u128) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        Histogram { upper, counts }
    }
}

impl fmt::Display for Histogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let peak = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let width = self.upper.div_ceil(self.counts.len() as u64);
        for (i, &c) in self.counts.iter().enumerate() {
            let lo = i as u64 * width;
            writeln!(f, "{:>9}..{:<9} {:>5} {}", lo, (lo + width).min(self.upper), c, "#".repeat(c * 40 / peak))?;
        }
        Ok(())
    }
}

/// A client and a prepared list at one set of parameters.
pub struct Testbed {
    pub ctx: Arc<HeContext>,
    pub keys: KeyMaterial,
    pub pbh: PbhParams,
    pub cwc: CwcParams,
    pub list: PreparedList,
    pub listed: Vec<Pei>,
    pub unlisted: Vec<Pei>,
    pub preprocess_ms: f64,
}

impl Testbed {
    /// Generates a list of `list_size` identifiers plus `extra` unlisted
    /// ones, encodes it, and creates client keys.
    pub fn new(
        params: HeParams,
        weight: u32,
        list_size: usize,
        extra: usize,
        seed: u64,
        budget: usize,
    ) -> Result<Self, Error> {
        let ctx = Arc::new(HeContext::new(params)?);
        Self::with_context(ctx, weight, list_size, extra, seed, budget)
    }

    pub fn with_context(
        ctx: Arc<HeContext>,
        weight: u32,
        list_size: usize,
        extra: usize,
        seed: u64,
        budget: usize,
    ) -> Result<Self, Error> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keys = ctx.keygen(&mut rng);
        let pbh = PbhParams::for_pei(ctx.slot_count(), rng.random())?;
        let cwc = CwcParams::for_modulus(pbh.lambda_bar(), weight, ctx.plain_modulus())?;
        let (black, _, unlisted) = gen_disjoint_lists(list_size, 0, extra, seed);
        let start = Instant::now();
        let enc = Arc::new(EncodedList::preprocess(&black, &pbh, &cwc)?);
        let list = PreparedList::new(&ctx, ListKind::Blacklist, enc, budget)?;
        let preprocess_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Testbed {
            ctx,
            keys,
            pbh,
            cwc,
            list,
            listed: black.iter().copied().collect(),
            unlisted,
            preprocess_ms,
        })
    }

    /// One single-list verification, with timings split the way the
    /// protocol splits them: query building and mask sampling are offline,
    /// evaluation, decryption, aggregation and demasking are online.
    pub fn run(&self, kind: TestKind, pei: Pei, range: MaskRange, seed: u64) -> Result<RunRecord, Error> {
        let ctx = &self.ctx;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);

        let start = Instant::now();
        let query = build_query(ctx, &self.keys.secret, &self.pbh, &self.cwc, pei, &mut rng)?;
        let request_bytes = query.serialized_len();
        let ue_offline_ms = ms_since(start);

        let start = Instant::now();
        let ms = sample_masks(ctx.plain_modulus(), ctx.slot_count(), range, &mut rng);
        let mno_offline_ms = ms_since(start);

        let start = Instant::now();
        let res = psi_sum(ctx, &query, &self.list, &ms, &self.keys.relin, &self.keys.public)?;
        let mut mno_online_ms = ms_since(start);
        let response_bytes = res.ct.serialized_len();

        let start = Instant::now();
        let y = ctx.decrypt(&res.ct, &self.keys.secret)?;
        let sum = client_aggregate(&y, ctx.plain_modulus());
        let ue_online_ms = ms_since(start);

        let start = Instant::now();
        let outcome = demask(sum, &ms);
        mno_online_ms += ms_since(start);

        let noise_budget = ctx.noise_budget(&res.ct, &self.keys.secret)?;
        let (slot, _) = self.pbh.map(pei.value())?;
        Ok(RunRecord {
            kind,
            pei,
            outcome,
            request_bytes,
            response_bytes,
            sum_bytes: SlotSum::BYTES,
            ue_offline_ms,
            mno_offline_ms,
            ue_online_ms,
            mno_online_ms,
            noise_budget,
            slot_value: y.0[slot],
        })
    }

    /// `count` distinct identifiers of the given kind, sampled by `seed`.
    pub fn pick(&self, kind: TestKind, count: usize, seed: u64) -> Result<Vec<Pei>, Error> {
        let pool = match kind {
            TestKind::Blacklist => &self.listed,
            TestKind::Whitelist => &self.unlisted,
        };
        if count > pool.len() {
            return Err(Error::Params(format!("asked for {count} {kind} identifiers, only {} exist", pool.len())));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        for i in 0..count {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        Ok(idx[..count].iter().map(|&i| pool[i]).collect())
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs every configured test kind; each identifier is queried once.
pub fn cmd_bench(cfg: &BenchConfig) -> Result<BenchReport, Error> {
    let params = HeParams::generate(cfg.profile, cfg.degree)?;
    let bed = Testbed::new(params, cfg.weight, cfg.list_size, cfg.runs, cfg.seed, cfg.prepare_budget)?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (k, &kind) in cfg.kinds.iter().enumerate() {
        let peis = bed.pick(kind, cfg.runs, cfg.seed ^ (k as u64 + 1) << 32)?;
        let one = |i: usize| bed.run(kind, peis[i], cfg.mask_range, cfg.seed.wrapping_mul(1_000_003) + (k * cfg.runs + i) as u64);
        let runs: Vec<RunRecord> = if cfg.parallel {
            par::map_indices(peis.len(), one).into_iter().collect::<Result<_, _>>()?
        } else {
            (0..peis.len()).map(one).collect::<Result<_, _>>()?
        };
        rows.push(BenchRow::from_runs(kind, &runs));
        all.extend(runs);
    }
    Ok(BenchReport {
        config: cfg.clone(),
        plain_modulus: bed.ctx.plain_modulus(),
        rows_per_list: bed.list.row_count(),
        preprocess_ms: bed.preprocess_ms,
        rows,
        runs: all,
    })
}

// ---------------------------------------------------------------- forgery

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForgeStrategy {
    /// Guess `r1` uniformly from the bounded mask range.
    UniformGuess,
    /// Always subtract the same value.
    Fixed(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgeReport {
    pub t: u64,
    pub t_eff: u64,
    pub trials: u64,
    pub hits: u64,
    pub empirical_rate: f64,
    /// Single-attempt success probability, `1 / t_eff`.
    pub bound: f64,
    /// Binomial standard deviation of the hit rate under the bound.
    pub sd: f64,
    /// `(attempts, exact cumulative probability, union bound)`.
    pub curve: Vec<(u64, f64, f64)>,
}

impl ForgeReport {
    /// Distance of the empirical rate from the bound in standard deviations.
    pub fn z_score(&self) -> f64 {
        if self.sd == 0.0 {
            0.0
        } else {
            (self.empirical_rate - self.bound) / self.sd
        }
    }
}

/// A matched client tries to pass as unlisted by subtracting a guess of
/// `r1` from its honest sum. Each trial draws fresh masks and demasks the
/// forged sum with the operator's own check.
pub fn cmd_forge_sim(t: u64, trials: u64, strategy: ForgeStrategy, seed: u64) -> Result<ForgeReport, Error> {
    let te = t_eff(t);
    if te == 0 {
        return Err(Error::Params(format!("plain modulus {t} leaves no mask range")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        let ms = sample_masks(t, 1, MaskRange::Bounded, &mut rng);
        let honest = (ms.r1() + ms.big_r2()) % t;
        let guess = match strategy {
            ForgeStrategy::UniformGuess => 1 + rng.random_range(0..te),
            ForgeStrategy::Fixed(g) => g % t,
        };
        let forged = SlotSum((honest + t - guess) % t);
        if demask(forged, &ms) == Outcome::NoMatch {
            hits += 1;
        }
    }
    let bound = 1.0 / te as f64;
    let sd = if trials > 0 { (bound * (1.0 - bound) / trials as f64).sqrt() } else { 0.0 };
    Ok(ForgeReport {
        t,
        t_eff: te,
        trials,
        hits,
        empirical_rate: if trials > 0 { hits as f64 / trials as f64 } else { 0.0 },
        bound,
        sd,
        curve: forge_curve(te),
    })
}

/// Cumulative success of repeated independent guesses at a few attempt
/// counts up to `2 t_eff`.
pub fn forge_curve(t_eff: u64) -> Vec<(u64, f64, f64)> {
    let p = 1.0 / t_eff as f64;
    let mut points: Vec<u64> = (0..=20).map(|i| (t_eff * 2 * i / 20).max(1)).collect();
    points.dedup();
    points
        .into_iter()
        .map(|k| (k, 1.0 - (1.0 - p).powf(k as f64), (k as f64 * p).min(1.0)))
        .collect()
}

// ------------------------------------------------------------- parameters

#[derive(Clone, Debug)]
pub struct ParamSearchConfig {
    pub target_lambda: u32,
    pub weights: std::ops::RangeInclusive<u32>,
    pub degrees: Vec<usize>,
    pub profile: Profile,
    /// List size used for each probe.
    pub probe_list_size: usize,
    /// Candidates whose request would exceed this are not probed.
    pub max_request_bytes: usize,
    pub seed: u64,
}

impl Default for ParamSearchConfig {
    fn default() -> Self {
        ParamSearchConfig {
            target_lambda: PEI_BITS,
            weights: 2..=10,
            degrees: vec![4096, 8192, 16384],
            profile: Profile::DefaultSafe,
            probe_list_size: 256,
            max_request_bytes: 40 << 20,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCandidate {
    pub degree: usize,
    pub lambda_bar: u32,
    pub h: u32,
    pub l: Option<u64>,
    /// `lambda_bar + log2 N`
    pub lambda: u32,
    pub request_bytes: Option<usize>,
    pub runtime_ms: Option<f64>,
    pub decryptable: Option<bool>,
    /// Why the candidate was not probed.
    pub discarded: Option<String>,
    /// The configuration singled out in the original evaluation.
    pub reference_choice: bool,
}

impl ParamCandidate {
    fn ranked(&self) -> bool {
        self.decryptable == Some(true)
    }
}

impl fmt::Display for ParamCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        write!(
            f,
            "N={:<6} lbar={:<3} h={:<3} l={:<8} lambda={:<3} request={:<12} runtime={:<12} decryptable={:<6}",
            self.degree,
            self.lambda_bar,
            self.h,
            opt(self.l.map(|l| l.to_string())),
            self.lambda,
            opt(self.request_bytes.map(|b| b.to_string())),
            opt(self.runtime_ms.map(|t| format!("{t:.1}ms"))),
            opt(self.decryptable.map(|d| d.to_string())),
        )?;
        if let Some(why) = &self.discarded {
            write!(f, " discarded: {why}")?;
        }
        if self.reference_choice {
            write!(f, " [reference choice]")?;
        }
        Ok(())
    }
}

/// Enumerates `(N, lambda_bar, h)` around the target length, probes the
/// feasible ones on a small list and ranks decryptable candidates by
/// runtime. Discarded and undecryptable candidates follow, unranked.
pub fn cmd_param_search(cfg: &ParamSearchConfig) -> Result<Vec<ParamCandidate>, Error> {
    let mut out = Vec::new();
    for &degree in &cfg.degrees {
        let log_n = degree.trailing_zeros();
        let params = HeParams::generate(cfg.profile, degree)?;
        let ctx = Arc::new(HeContext::new(params)?);
        let t = ctx.plain_modulus();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let probe_keys = ctx.keygen(&mut rng);
        let seeded_ct = ctx
            .encrypt_symmetric(&PlainVec::zeros(ctx.slot_count()), &probe_keys.secret, &mut rng)?
            .serialized_len();
        let centre = cfg.target_lambda.saturating_sub(log_n);
        for lambda_bar in centre.saturating_sub(1)..=centre + 1 {
            for h in cfg.weights.clone() {
                let mut c = ParamCandidate {
                    degree,
                    lambda_bar,
                    h,
                    l: None,
                    lambda: lambda_bar + log_n,
                    request_bytes: None,
                    runtime_ms: None,
                    decryptable: None,
                    discarded: None,
                    reference_choice: degree == 8192 && lambda_bar == 34 && h == 8,
                };
                if c.lambda != cfg.target_lambda {
                    c.discarded = Some(format!("reconstructed length {} != {}", c.lambda, cfg.target_lambda));
                    out.push(c);
                    continue;
                }
                let cwc = match CwcParams::for_modulus(lambda_bar, h, t) {
                    Ok(cwc) => cwc,
                    Err(e) => {
                        c.discarded = Some(e.to_string());
                        out.push(c);
                        continue;
                    }
                };
                c.l = Some(cwc.l);
                let request = 4 + cwc.l as usize * seeded_ct;
                c.request_bytes = Some(request);
                if cwc.l > MAX_CODEWORD_LEN || request > cfg.max_request_bytes {
                    c.discarded = Some(format!("request of {request} B exceeds the {} B cap", cfg.max_request_bytes));
                    out.push(c);
                    continue;
                }
                let (ms, ok, bytes) = probe(&ctx, &probe_keys, cwc, cfg.probe_list_size, cfg.seed)?;
                c.runtime_ms = Some(ms);
                c.decryptable = Some(ok);
                c.request_bytes = Some(bytes);
                out.push(c);
            }
        }
    }
    out.sort_by(|a, b| {
        b.ranked()
            .cmp(&a.ranked())
            .then(a.runtime_ms.unwrap_or(f64::INFINITY).total_cmp(&b.runtime_ms.unwrap_or(f64::INFINITY)))
    });
    Ok(out)
}

/// Evaluates one listed and one unlisted query; returns evaluation time,
/// whether both decided correctly with budget left, and the request size.
fn probe(ctx: &Arc<HeContext>, keys: &KeyMaterial, cwc: CwcParams, list_size: usize, seed: u64) -> Result<(f64, bool, usize), Error> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pbh = PbhParams::for_pei(ctx.slot_count(), rng.random())?;
    let (black, _, unlisted) = gen_disjoint_lists(list_size, 0, 1, seed);
    let enc = Arc::new(EncodedList::preprocess(&black, &pbh, &cwc)?);
    let list = PreparedList::new(ctx, ListKind::Blacklist, enc, DEFAULT_PREPARE_BUDGET)?;
    let listed = *black.iter().next().ok_or_else(|| Error::Params("probe list is empty".into()))?;
    let mut total_ms = 0.0;
    let mut ok = true;
    let mut bytes = 0;
    for (pei, want) in [(listed, Outcome::Match), (unlisted[0], Outcome::NoMatch)] {
        let q = build_query(ctx, &keys.secret, &pbh, &cwc, pei, &mut rng)?;
        bytes = q.serialized_len();
        let ms: MaskingState = sample_masks(ctx.plain_modulus(), ctx.slot_count(), MaskRange::Bounded, &mut rng);
        let start = Instant::now();
        let res = psi_sum(ctx, &q, &list, &ms, &keys.relin, &keys.public)?;
        total_ms += ms_since(start);
        let budget = ctx.noise_budget(&res.ct, &keys.secret)?;
        let y = ctx.decrypt(&res.ct, &keys.secret)?;
        ok &= budget > 0 && demask(client_aggregate(&y, ctx.plain_modulus()), &ms) == want;
    }
    Ok((total_ms / 2.0, ok, bytes))
}

// ---------------------------------------------------------------- scaling

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub list_size: usize,
    pub rows: usize,
    pub mno_online: Summary,
}

/// Mean operator online time per list size, same keys and parameters
/// throughout.
pub fn measure_scaling(
    profile: Profile,
    sizes: &[usize],
    runs: usize,
    seed: u64,
    budget: usize,
) -> Result<Vec<ScalingPoint>, Error> {
    let ctx = Arc::new(HeContext::new(HeParams::generate(profile, DEFAULT_DEGREE)?)?);
    let mut out = Vec::new();
    for &n in sizes {
        let bed = Testbed::with_context(ctx.clone(), DEFAULT_WEIGHT, n, runs, seed, budget)?;
        let peis = bed.pick(TestKind::Whitelist, runs, seed)?;
        let times = peis
            .iter()
            .enumerate()
            .map(|(i, &p)| bed.run(TestKind::Whitelist, p, MaskRange::Bounded, seed + i as u64).map(|r| r.mno_online_ms))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ScalingPoint {
            list_size: n,
            rows: bed.list.row_count(),
            mno_online: Summary::of(times),
        });
    }
    Ok(out)
}

/// Online time ratios between consecutive sizes.
pub fn scaling_ratios(points: &[ScalingPoint]) -> Vec<f64> {
    points.windows(2).map(|w| w[1].mno_online.mean / w[0].mno_online.mean).collect()
}
