//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
//!
//! Runs without the libtest harness so the verdict lines always reach the console.

use std::panic;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use rankid::diagnostics::{empirical_snr, theoretical_snr, SnrQuery};
use rankid::estimators::{cp_rank_ratio, tr_ranks, tt_rank_ratio};
use rankid::identifiability::{
    analytic_value, design_matrix_for, design_moments, rank_identifiability, tucker_identity_check,
    tucker_identity_sides,
};
use rankid::latent::simulate;
use rankid::moments::{mobius_invert, population_moment_table, required_sharing_sets};
use rankid::oracle::oracle_batch;
use rankid::pipeline::run_pipeline;
use rankid::seed;
use rankid::{
    MomentId, MomentTable, ModelSpec, ObservationModel, PipelineConfig, Prior, SharingSet, Topology,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn random_prior<R: Rng>(rng: &mut R) -> Prior {
    let mean = rng.random_range(0.5..2.0);
    let cv: f64 = rng.random_range(0.3..1.0);
    Prior::new(mean, (mean * cv).powi(2))
}

fn random_spec<R: Rng>(rng: &mut R, top: Topology, m: usize, max_rank: usize, dims: usize) -> ModelSpec {
    let ranks: Vec<usize> = (0..top.n_ranks(m)).map(|_| rng.random_range(1..=max_rank)).collect();
    let mut s = ModelSpec::uniform(top, vec![dims; m], ranks, random_prior(rng));
    s.priors = (0..m).map(|_| random_prior(rng)).collect();
    if top == Topology::Tucker {
        s.core_prior = Some(random_prior(rng));
    }
    s
}

fn identifiability_verdicts() -> Outcome {
    let mut bad = Vec::new();
    let mut check = |top: Topology, m: usize, want_rank: usize, want_ident: bool| {
        let v = rank_identifiability(&design_matrix_for(top, m).unwrap());
        if v.reduced_rank != want_rank || v.identifiable != want_ident {
            bad.push(format!("{top} M={m}: reduced rank {} (want {want_rank})", v.reduced_rank));
        }
    };
    for m in 2..=6 {
        check(Topology::Tucker, m, 0, false);
    }
    for m in 3..=6 {
        check(Topology::CP, m, 1, true);
        check(Topology::TT, m, m - 1, true);
    }
    for m in 3..=8 {
        check(Topology::TR, m, m, true);
    }
    outcome(bad.is_empty(), if bad.is_empty() { "all verdicts match".into() } else { bad.join("; ") })
}

fn population_exactness() -> Outcome {
    let mut rng = seed::rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        for top in [Topology::CP, Topology::TT, Topology::TR] {
            let m = rng.random_range(3..=6);
            let mut s = random_spec(&mut rng, top, m, 8, 4);
            s.priors = (0..m)
                .map(|_| Prior::new(rng.random_range(0.1..5.0), rng.random_range(0.01..5.0)))
                .collect();
            let t = population_moment_table(&s, &required_sharing_sets(&s).unwrap(), false).unwrap();
            let est: Vec<f64> = match top {
                Topology::CP => vec![cp_rank_ratio(&t, 1, 2).unwrap().value()],
                Topology::TT => (1..m).map(|p| tt_rank_ratio(&t, p, m).unwrap().value()).collect(),
                _ => tr_ranks(&t, m).unwrap().ranks,
            };
            for (e, &r) in est.iter().zip(&s.ranks) {
                worst = worst.max(rel(*e, r as f64));
            }
        }
    }
    outcome(worst < 1e-9, format!("max relative error {worst:.2e} over 150 specs"))
}

fn oracle_agreement() -> Outcome {
    let mut rng = seed::rng(12);
    let mut worst: f64 = 0.0;
    let mut where_worst = String::new();
    let mut n = 0;
    for top in [Topology::CP, Topology::TT, Topology::TR, Topology::Tucker] {
        for i in 0..20 {
            let lo = if top == Topology::Tucker { 2 } else { 3 };
            let m = rng.random_range(lo..=4);
            let dims = rng.random_range(2..=8);
            let s = random_spec(&mut rng, top, m, 4, dims);
            let moments: Vec<MomentId> = if top == Topology::Tucker {
                design_moments(top, m)
            } else {
                required_sharing_sets(&s).unwrap().into_iter().map(MomentId::Pure).collect()
            };
            let est = oracle_batch(&s, &moments, 10_000, seed::derive(99, i)).unwrap();
            for (mid, e) in moments.iter().zip(est) {
                let z = (e.estimate - analytic_value(&s, *mid).unwrap()) / e.std_error;
                n += 1;
                if z.abs() > worst {
                    worst = z.abs();
                    where_worst = format!("{top} spec {i} {mid}");
                }
            }
        }
    }
    outcome(worst <= 4.0, format!("max |z| {worst:.2} ({where_worst}) over {n} terms"))
}

fn poisson_spec(top: Topology, n: usize, ranks: Vec<usize>, prior: Prior) -> ModelSpec {
    ModelSpec::uniform(top, vec![n; 3], ranks, prior).with_obs(ObservationModel::Poisson)
}

fn medians(spec: &ModelSpec, run: u64, cfg: &PipelineConfig) -> (Vec<Option<f64>>, Option<f64>) {
    let sim = simulate(spec, seed::derive(run, 1)).unwrap();
    let cfg = PipelineConfig { seed: seed::derive(run, 2), ..cfg.clone() };
    let rep = run_pipeline(&sim.observed, spec.topology, &cfg).unwrap();
    (rep.estimates.iter().map(|e| e.median).collect(), rep.max_circulant_residual)
}

fn cp_recovery() -> Outcome {
    let cfg = PipelineConfig { bootstrap: 50, n_pairs: 50_000, ..Default::default() };
    let mut parts = Vec::new();
    let mut pass = true;
    for r in [5usize, 10, 15, 20, 25] {
        let spec = poisson_spec(Topology::CP, 100, vec![r], Prior::gamma(1.5, 2.5));
        let mut hits = 0;
        let mut meds = Vec::new();
        for run in 0..20u64 {
            let med = medians(&spec, seed::derive(4_000 + r as u64, run), &cfg).0[0];
            meds.push(med.unwrap_or(f64::NAN));
            hits += usize::from(med.map(|m| m.round() as usize) == Some(r));
        }
        meds.sort_by(f64::total_cmp);
        pass &= hits >= 16;
        parts.push(format!("r={r}: {hits}/20 exact, medians {:.1}..{:.1}", meds[0], meds[19]));
    }
    outcome(pass, parts.join("; "))
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                out[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 - 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    let sy: f64 = ry.iter().map(|b| (b - mean).powi(2)).sum();
    cov / (sx * sy).sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn tt_recovery() -> Outcome {
    let cfg = PipelineConfig { bootstrap: 50, n_pairs: 50_000, ..Default::default() };
    let grid = [2usize, 3, 4, 6, 8];
    let mut per_bond: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let (mut close, mut total) = (0, 0);
    for &r in &grid {
        let spec = poisson_spec(Topology::TT, 25, vec![r, r], Prior::gamma(1.25, 1.5));
        let mut runs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for run in 0..20u64 {
            let meds = medians(&spec, seed::derive(5_000 + r as u64, run), &cfg).0;
            for (b, m) in meds.iter().enumerate() {
                let m = m.unwrap_or(f64::NAN);
                runs[b].push(m);
                total += 1;
                close += usize::from((m - r as f64).abs() <= 2.0);
            }
        }
        for b in 0..2 {
            per_bond[b].push(median(&mut runs[b]));
        }
    }
    let truth: Vec<f64> = grid.iter().map(|&r| r as f64).collect();
    let rho: Vec<f64> = per_bond.iter().map(|m| spearman(&truth, m)).collect();
    let frac = close as f64 / total as f64;
    let pass = rho.iter().all(|&r| r >= 0.8) && frac >= 0.7;
    outcome(
        pass,
        format!(
            "Spearman per bond {:.2}/{:.2}, within 2 in {:.0}% of bond estimates, medians r1 {:?} r2 {:?}",
            rho[0],
            rho[1],
            100.0 * frac,
            per_bond[0].iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>(),
            per_bond[1].iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>()
        ),
    )
}

fn tr_recovery() -> Outcome {
    let cfg = PipelineConfig { bootstrap: 50, n_pairs: 50_000, ..Default::default() };
    let mut pass = true;
    let mut parts = Vec::new();
    let mut worst_residual: f64 = 0.0;
    for (k, ranks) in [[2usize, 2, 2], [3, 3, 3], [4, 4, 4], [6, 6, 6], [2, 4, 6]].into_iter().enumerate() {
        let spec = poisson_spec(Topology::TR, 40, ranks.to_vec(), Prior::gamma(0.25, 4.0));
        let mut hits = 0;
        for run in 0..20u64 {
            let (meds, res) = medians(&spec, seed::derive(6_000 + k as u64, run), &cfg);
            worst_residual = worst_residual.max(res.unwrap_or(0.0));
            let ok = meds.iter().zip(ranks).all(|(m, r)| m.is_some_and(|m| (m - r as f64).abs() <= 2.0));
            hits += usize::from(ok);
        }
        pass &= hits >= 12;
        parts.push(format!("{ranks:?}: {hits}/20"));
    }
    pass &= worst_residual <= 1e-10;
    outcome(pass, format!("{}; max residual {worst_residual:.1e}", parts.join(", ")))
}

fn tucker_identity() -> Outcome {
    let mut rng = seed::rng(17);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.random_range(2..=6);
        let s = random_spec(&mut rng, Topology::Tucker, m, 6, 4);
        for p in 1..=m {
            let (lhs, rhs) = tucker_identity_sides(&s, p).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    let mut nonzero = Vec::new();
    for m in 2..=6 {
        let res = tucker_identity_check(&design_matrix_for(Topology::Tucker, m).unwrap()).unwrap();
        if res.iter().any(|r| r.iter().any(|&e| e != 0)) {
            nonzero.push(m);
        }
    }
    outcome(
        worst <= 1e-12 && nonzero.is_empty(),
        format!("max |log lhs - log rhs| {worst:.3}; nonzero symbolic residual for M in {nonzero:?}"),
    )
}

fn snr() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for cv in [0.5, 1.0, 2.0] {
        for k in [1usize, 2] {
            let spec = ModelSpec::uniform(Topology::TT, vec![2; 3], vec![1, 1], Prior::new(1.0, cv * cv))
                .with_obs(ObservationModel::Gaussian { variance: 0.0 });
            let s = SharingSet::new(&(1..=k).collect::<Vec<_>>());
            let th = theoretical_snr(&SnrQuery { order: 3, size_s: k, mu: 1.0, cv, n: 2000 }).unwrap();
            let base = seed::derive(80, (10.0 * cv) as u64 * 10 + k as u64);
            let e1 = empirical_snr(&spec, s, 2000, 300, base).unwrap().snr;
            let e2 = empirical_snr(&spec, s, 4000, 300, seed::derive(base, 1)).unwrap().snr;
            let err = rel(e1, th);
            let scale = e2 / e1 / 2f64.sqrt();
            let ok = err <= 0.25 && (scale - 1.0).abs() <= 0.15;
            pass &= ok;
            parts.push(format!("cv={cv} |S|={k}: rel err {err:.2}, doubling/sqrt2 {scale:.2}"));
        }
    }
    let mut unimodal = true;
    let cvs = rankid::diagnostics::logspace(0.01, 100.0, 400);
    for m in 3..=5 {
        for k in 1..=2 {
            let v: Vec<f64> = cvs
                .iter()
                .map(|&cv| theoretical_snr(&SnrQuery { order: m, size_s: k, mu: 1.0, cv, n: 1 }).unwrap())
                .collect();
            let peak = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            unimodal &= peak > 0 && peak + 1 < v.len();
            unimodal &= v[..=peak].windows(2).all(|w| w[0] <= w[1]) && v[peak..].windows(2).all(|w| w[0] >= w[1]);
        }
    }
    pass &= unimodal;
    outcome(pass, format!("{}; unimodal {unimodal}", parts.join(", ")))
}

fn mobius_round_trip() -> Outcome {
    let mut rng = seed::rng(19);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let s = SharingSet::from_bits(rng.random_range(1..8u32));
        let mut t = MomentTable::new(1.0);
        for u in s.nonempty_subsets() {
            t.cov.insert(u, rng.random_range(-10.0..10.0));
        }
        for u in s.nonempty_subsets() {
            mobius_invert(&mut t, u).unwrap();
        }
        let sum: f64 = s.nonempty_subsets().map(|u| t.pure(u).unwrap()).sum();
        worst = worst.max((sum - t.cov(s).unwrap()).abs());
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.1e} over 500 random tables"))
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_rankid");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("model.json");
    std::fs::write(
        &model,
        r#"{"topology":"TR","order":3,"dims":[12,12,12],"ranks":[2,3,2],"priors":[{"mean":2.0,"variance":1.5}],"obs":{"kind":"Poisson"}}"#,
    )
    .unwrap();
    let tucker = d.join("tucker.json");
    std::fs::write(
        &tucker,
        r#"{"topology":"Tucker","order":2,"dims":[4,4],"ranks":[2,2],"priors":[{"mean":1.0,"variance":1.0}],"core_prior":{"mean":1.0,"variance":1.0}}"#,
    )
    .unwrap();
    let run = |args: &[&str], threads: &str, out: &str| -> (Vec<u8>, Vec<u8>) {
        let o = Command::new(bin)
            .args(args)
            .args(["--threads", threads, "--seed", "42", "--out"])
            .arg(d.join(out))
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        (o.stdout, std::fs::read(d.join(out)).unwrap())
    };
    let m = model.to_str().unwrap();
    let t = tucker.to_str().unwrap();
    let y = d.join("y.tns");
    let yb = d.join("y.bin");
    let mut bad = Vec::new();
    let cases: Vec<(&str, Vec<&str>, &str)> = vec![
        ("simulate", vec!["simulate", "--model", m], "y.tns"),
        ("simulate-binary", vec!["simulate", "--model", m], "y.bin"),
        ("identify", vec!["identify", "--model", m], "id.txt"),
        ("identify-json", vec!["identify", "--model", t, "--format", "json"], "id.json"),
        ("oracle", vec!["oracle", "--model", t, "--mc", "2000"], "oracle.txt"),
        ("snr", vec!["snr"], "snr.csv"),
    ];
    for (name, args, out) in &cases {
        let a = run(args, "1", out);
        let b = run(args, "3", out);
        if a != b {
            bad.push(*name);
        }
    }
    assert!(y.exists() && yb.exists());
    let ys = y.to_str().unwrap();
    for fmt in ["json", "csv"] {
        let args = ["estimate", "--tensor", ys, "--topology", "TR", "--bootstrap", "8", "--pairs", "3000", "--samples", "--format", fmt];
        let a = run(&args, "1", "est");
        let b = run(&args, "3", "est");
        if a != b {
            bad.push(if fmt == "json" { "estimate-json" } else { "estimate-csv" });
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "11 command runs byte-identical across 1 and 3 threads".into() } else { format!("differs: {bad:?}") })
}

type Criterion = (usize, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "identifiability verdicts", identifiability_verdicts, Duration::from_secs(1)),
        (2, "population exactness", population_exactness, Duration::from_secs(1)),
        (3, "oracle agreement", oracle_agreement, Duration::from_secs(120)),
        (4, "CP recovery", cp_recovery, Duration::from_secs(600)),
        (5, "TT recovery", tt_recovery, Duration::from_secs(900)),
        (6, "TR recovery", tr_recovery, Duration::from_secs(900)),
        (7, "Tucker identity", tucker_identity, Duration::from_secs(1)),
        (8, "SNR", snr, Duration::from_secs(300)),
        (9, "Moebius round-trip", mobius_round_trip, Duration::from_secs(1)),
        (10, "CLI determinism", cli_determinism, Duration::from_secs(300)),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (id, name, f, budget) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let res = panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let pass = res.pass && took <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {}: {name} ({}; {:.1}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            res.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
