//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line even when it succeeds.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coalfed::bounds::{
    effective_union, incremental_benefit, precision_bound, recall_bound, sharing_benefit, CouponCollectorParams,
    PartnerDataStats,
};
use coalfed::curator::{dedup, CurationEnv, Curator, DataOffer, RejectionReason, DEFAULT_EPSILON};
use coalfed::datagen::{lexicon_perturb, synth_classification, synth_curve, ClassSkewSpec, CurveSpec};
use coalfed::dataset::{Dataset, LabelSpec, Schema};
use coalfed::fusion::{
    build_ensemble, cell_classes, partition_regions, round_robin_training, CellFusion, EnsembleConfig, Region,
};
use coalfed::infometrics::AnalysisTask;
use coalfed::models::{train, Model, ModelArch, Optimizer, OutputSpec, TrainConfig};
use coalfed::policy::{
    generate_policies, parse_policy, serialize_policy, Context, GuidancePackage, HelperService, PartnerDescriptor,
    PolicyAction, SynonymTable,
};
use coalfed::protocol::{
    run_session, FusionFlavor, MessageKind, PartnerSpec, SessionConfig, SessionMode, SessionSpec, SessionTranscript,
    SimulatedTransport, Transport,
};
use coalfed::scenario::{self, Scenario};

/// Frozen after one calibration run of the reference scenario.
const MSE_RATIO: f64 = 0.5;
const RUNTIME_LIMIT: Duration = Duration::from_secs(60);
const WORKED_EXAMPLE_TOL: f64 = 1e-9;
const CENTRALIZED_TOL: f64 = 1e-9;
const RR_TOL: f64 = 1e-6;
const RR_MAX_ROUNDS: usize = 50;
const QOI_THRESHOLD: f64 = 0.7;
const MC_POINTS: usize = 10_000;
const SLOW_FACTOR: u64 = 10;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn mse_ordering() -> Outcome {
    let started = Instant::now();
    let scenario = ok(Scenario::reference().resolved(None))?;
    let dir = ok(tempfile::tempdir())?;
    let summary = ok(scenario::run(&scenario, dir.path()))?;
    let elapsed = started.elapsed();
    let get = |m: &str| summary.value(m).ok_or_else(|| format!("metric `{m}` missing"));
    let (naive, ensemble, exchange) = (get("naive")?, get("ensemble")?, get("exchange")?);
    ensure(ensemble <= MSE_RATIO * naive, || {
        format!("ensemble {ensemble:.3e} > {MSE_RATIO} x naive {naive:.3e}")
    })?;
    ensure(exchange <= MSE_RATIO * naive, || {
        format!("exchange {exchange:.3e} > {MSE_RATIO} x naive {naive:.3e}")
    })?;
    let mut sites = Vec::new();
    for p in &scenario.partners {
        let site = get(&format!("site:{}", p.id))?;
        ensure(site > ensemble, || format!("site {} mse {site:.3e} <= ensemble {ensemble:.3e}", p.id))?;
        sites.push(format!("{}={site:.3e}", p.id));
    }
    ensure(elapsed < RUNTIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "naive={naive:.3e} ensemble={ensemble:.3e} exchange={exchange:.3e} sites[{}] in {:.1}s",
        sites.join(" "),
        elapsed.as_secs_f64()
    ))
}

fn bounds_suite() -> Outcome {
    let grid_q: Vec<u64> = (0..50).map(|i| i * 3).collect();
    let grid_nu: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    for (c0, c1) in [(1.0, 1.0), (0.3, 2.5)] {
        let params = ok(CouponCollectorParams::new(c0, c1, 1, 1))?;
        for bound in [precision_bound, recall_bound] {
            let table: Vec<Vec<f64>> = grid_q
                .iter()
                .map(|&q| grid_nu.iter().map(|&nu| bound(&params, q, nu)).collect::<Result<_, _>>())
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            for (i, row) in table.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    ensure((0.0..=1.0).contains(&v), || format!("bound {v} outside [0, 1]"))?;
                    if i > 0 {
                        ensure(v >= table[i - 1][j], || format!("decreasing in q at ({i}, {j})"))?;
                    }
                    if j > 0 {
                        ensure(v <= row[j - 1], || format!("increasing in nu at ({i}, {j})"))?;
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let n = rng.random_range(1..5);
        let mut all: Vec<PartnerDataStats> = (0..n)
            .map(|i| PartnerDataStats {
                partner_id: format!("p{i}"),
                q: rng.random_range(1..500),
                nu: rng.random_range(0.0..1.0),
            })
            .collect();
        let own = all[rng.random_range(0..n)].clone();
        let total: u64 = all.iter().map(|p| p.q).sum();
        let largest = all.iter().map(|p| p.q).max().unwrap_or(1);
        let dedup_count = rng.random_range(largest..=total);
        all.sort_by(|a, b| a.partner_id.cmp(&b.partner_id));
        let union = ok(effective_union(&all, dedup_count, &own.partner_id))?;
        let shared = sharing_benefit(&union, &own);
        let as_new = PartnerDataStats {
            partner_id: "union".into(),
            q: union.effective_q,
            nu: union.nu_agg,
        };
        let incremental = incremental_benefit(&as_new, &own);
        ensure(shared.beneficial == incremental.beneficial, || {
            format!("case {case}: sharing {shared:?} vs incremental {incremental:?}")
        })?;
    }

    let close = |a: f64, b: f64, what: &str| ensure((a - b).abs() <= WORKED_EXAMPLE_TOL, || format!("{what}: {a} != {b}"));
    let unit = ok(CouponCollectorParams::new(1.0, 1.0, 1, 1))?;
    let half = ok(CouponCollectorParams::new(1.0, 0.5, 1, 1))?;
    let e2 = 1.0 - (-2.0f64).exp();
    close(ok(precision_bound(&unit, 0, 0.0))?, 0.0, "precision q=0")?;
    close(ok(precision_bound(&unit, 1, 0.0))?, e2, "precision q=1")?;
    close(ok(precision_bound(&unit, 10, 1.0))?, 0.0, "precision nu=1")?;
    close(ok(recall_bound(&unit, 0, 0.0))?, 0.0, "recall q=0")?;
    close(ok(recall_bound(&unit, 2, 0.0))?, e2, "recall q=2")?;
    close(ok(recall_bound(&half, 1, 0.5))?, 1.0 - 0.5 * (-0.5f64).exp(), "recall c1=0.5")?;

    let stats = |id: &str, q: u64, nu: f64| PartnerDataStats::new(id, q, nu).map_err(|e| e.to_string());
    let u = ok(effective_union(&[stats("1", 100, 0.1)?, stats("2", 100, 0.1)?], 200, "1"))?;
    close(u.k, 2.0, "symmetric k")?;
    close(u.nu_agg, 0.1, "symmetric nu_agg")?;
    let u = ok(effective_union(&[stats("1", 100, 0.0)?, stats("2", 300, 0.2)?], 400, "1"))?;
    close(u.k, 4.0, "asymmetric k")?;
    close(u.nu_agg, 0.15, "asymmetric nu_agg")?;
    let s = sharing_benefit(&u, &stats("1", 100, 0.0)?);
    ensure(s.beneficial, || "k=4 sharing should be beneficial".into())?;
    close(s.margin, 2.4, "sharing margin k=4")?;
    let u = ok(effective_union(&[stats("1", 50, 0.3)?], 50, "1"))?;
    close(u.k, 1.0, "single k")?;
    close(u.nu_agg, 0.3, "single nu_agg")?;
    let s = sharing_benefit(&u, &stats("1", 50, 0.3)?);
    ensure(!s.beneficial, || "identity sharing should not be beneficial".into())?;
    close(s.margin, 0.0, "identity margin")?;
    let b = incremental_benefit(&stats("n", 150, 0.2)?, &stats("o", 100, 0.0)?);
    ensure(b.beneficial, || "150/0.2 vs 100/0 should be beneficial".into())?;
    close(b.margin, 20.0, "incremental margin 20")?;
    let b = incremental_benefit(&stats("n", 110, 0.5)?, &stats("o", 100, 0.0)?);
    ensure(!b.beneficial, || "110/0.5 vs 100/0 should not be beneficial".into())?;
    close(b.margin, -45.0, "incremental margin -45")?;
    Ok("2 x 2 bound grids monotone, 1000 sign agreements, worked examples within 1e-9".into())
}

fn curve_sites(n: usize, per_site: usize) -> (Vec<Dataset>, Schema) {
    let mut spec = CurveSpec::reference();
    spec.samples_per_site = per_site;
    spec.site_windows = (0..n).map(|i| (3.0 * i as f64 / n as f64, 3.0 * (i + 1) as f64 / n as f64)).collect();
    spec.site_ids = (1..=n).map(|i| i.to_string()).collect();
    let schema = spec.schema();
    (synth_curve(&spec).expect("reference curve").0, schema)
}

fn session_config(ids: &[&str], canonical: Schema, arch: ModelArch, train: TrainConfig) -> SessionConfig {
    SessionConfig {
        session_id: "acceptance".into(),
        mode: SessionMode::Synchronized,
        flavor: FusionFlavor::Synchronized,
        partners: ids
            .iter()
            .map(|id| PartnerSpec {
                id: id.to_string(),
                trustworthiness: 1.0,
            })
            .collect(),
        canonical,
        helper_services: vec![],
        synonyms: Default::default(),
        guidance: Default::default(),
        arch,
        train,
        rounds: 1,
        local_batches: 1,
        exchange_k: 0,
        exchange_seed: 0,
        tol: RR_TOL,
        max_rounds: RR_MAX_ROUNDS,
    }
}

fn session(cfg: SessionConfig, sites: Vec<Dataset>) -> SessionSpec {
    let data = cfg.partners.iter().map(|p| p.id.clone()).zip(sites).collect();
    SessionSpec {
        config: cfg,
        data,
        validation: None,
    }
}

fn degenerate_federation() -> Outcome {
    let sim = Transport::Simulated(SimulatedTransport::default());
    let (sites, schema) = curve_sites(1, 48);
    let sgd = TrainConfig {
        learning_rate: 0.3,
        epochs: 6,
        batch_size: 16,
        seed: 5,
        optimizer: Optimizer::MinibatchSgd,
        ..Default::default()
    };
    let arch = ModelArch::polynomial(3, 0.0, 3.0, 1, OutputSpec::Regression);
    let mut cfg = session_config(&["1"], schema.clone(), arch.clone(), sgd.clone());
    cfg.rounds = sgd.epochs;
    cfg.local_batches = 48usize.div_ceil(sgd.batch_size);
    let local = ok(train(&arch, &sites[0], &sgd, None))?;
    let t = ok(run_session(&session(cfg, sites.clone()), &sim))?;
    ensure(t.outcome.model.weights() == local.weights(), || {
        format!("single partner {:?} vs local {:?}", t.outcome.model.weights(), local.weights())
    })?;

    let full = TrainConfig {
        learning_rate: 0.3,
        epochs: 40,
        seed: 5,
        optimizer: Optimizer::FullBatchGd,
        ..Default::default()
    };
    let mut cfg = session_config(&["a", "b", "c", "d"], schema, arch.clone(), full.clone());
    cfg.rounds = full.epochs;
    let central = ok(train(&arch, &sites[0], &full, None))?;
    let t = ok(run_session(&session(cfg, vec![sites[0].clone(); 4]), &sim))?;
    let worst = t
        .outcome
        .model
        .weights()
        .iter()
        .zip(central.weights())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(worst <= CENTRALIZED_TOL, || format!("4 identical partners differ by {worst:e}"))?;
    Ok(format!("single partner bitwise equal, 4 partners max |dw| = {worst:.1e}"))
}

fn line(owner: &str, lo: f64, hi: f64, n: usize, slope: f64, intercept: f64) -> Dataset {
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    Dataset::from_rows(
        Schema {
            format: "canonical".into(),
            fields: vec!["x".into()],
            labels: LabelSpec::Range { lo: -10.0, hi: 10.0 },
        },
        xs.iter().map(|&x| vec![x]).collect(),
        xs.iter().map(|&x| slope * x + intercept).collect(),
        owner,
    )
    .expect("line data")
}

fn round_robin_convergence() -> Outcome {
    let partners = vec![
        line("1", 0.0, 2.0, 30, 1.0, 0.5),
        line("2", 1.0, 3.0, 30, 1.2, 0.3),
        line("3", 0.5, 2.5, 30, 0.9, 0.6),
    ];
    let arch = ModelArch::linear(1, OutputSpec::Regression);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 20,
        optimizer: Optimizer::FullBatchGd,
        ..Default::default()
    };
    let out = ok(round_robin_training(&partners, &arch, &cfg, RR_TOL, RR_MAX_ROUNDS, None))?;
    ensure(out.converged, || format!("not converged after {} rounds", out.rounds_used))?;
    ensure(out.rounds_used <= RR_MAX_ROUNDS, || format!("{} rounds", out.rounds_used))?;
    for (r, w) in out.deltas.windows(2).enumerate().skip(1) {
        ensure(w[1] <= w[0], || format!("delta rose after round {}: {:?}", r + 2, out.deltas))?;
    }

    let mut session_cfg = session_config(&["1", "2", "3"], partners[0].schema.clone(), arch, cfg);
    session_cfg.flavor = FusionFlavor::RoundRobin;
    let t = ok(run_session(
        &session(session_cfg, partners),
        &Transport::Simulated(SimulatedTransport::default()),
    ))?;
    ensure(t.outcome.converged && t.outcome.deltas == out.deltas, || {
        "session round robin differs from offline".into()
    })?;
    Ok(format!(
        "converged in {} rounds, final delta {:.2e}",
        out.rounds_used,
        out.deltas.last().copied().unwrap_or(f64::NAN)
    ))
}

/// Placeholders in the template texts are filled with concrete values; the
/// ordering predicates need numbers.
const TEMPLATES: [&str; 6] = [
    "if (source-name == UK) and (source-format = csv-v2) then invoke helper-service csv2canonical.",
    "if (source-name == XYZ) and (label == L1) then reject data.",
    "if (source trustworthiness $>$ 0.7) and (label == L1) then accept data.",
    "if (data QoI $>$ 0.7) and (data VoI $>$ 0) then accept data.",
    "if (source-name == UK) and (feature-name = colour) then change label to color.",
    "if (source-name == UK) and (field-name = kind) and (label-name = lorry) then change label to truck.",
];

const MORE_POLICIES: [&str; 15] = [
    "if (component1 $\\leq$ 1.5) and (component1 $\\geq$ -0.5) and (component2  $\\leq$   2) and (component2 $\\geq$ 0) then use model 4.",
    "if (source-name == US) and (source-format == xml) then invoke helper-service xml2canonical.",
    "if (source-name == XYZ) and (label == L2) then accept data.",
    "if (source-trustworthiness <= 0.5) then reject data.",
    "if (data-qoi < 0.2) then reject data.",
    "if (data-voi >= 0.05) and (data-qoi >= 0.9) then accept data.",
    "if (source-name == FR) and (label-name == camion) then change label to truck.",
    "if (source-name == FR) and (field-name == easting) then rename field to x0.",
    "if (component1 <= 0.99) and (component1 >= 0) then use model 1.",
    "if (component1 <= 2) and (component1 >= 1) then use model 1+2.",
    "if (source-name == UK) then accept data.",
    "if (data-qoi > 0.5) and (data-voi > 0.5) then accept data.",
    "IF (Source_Name == DE)   AND (label == L3) THEN Reject Data .",
    "if (sensor-count >= 3) and (sensor-count < 10) and (site == north) then accept data.",
    "if (source-name == UK) and (source-format == csv-v1) then invoke helper-service csv1 to canonical.",
];

fn class_spec() -> ClassSkewSpec {
    ClassSkewSpec {
        class_names: vec!["car".into(), "truck".into(), "van".into()],
        samples_per_site: 80,
        ..ClassSkewSpec::balanced(3, 2, 13)
    }
}

fn curation_env(partners: Vec<PartnerDescriptor>, guidance: GuidancePackage) -> Result<CurationEnv, String> {
    let s = class_spec();
    let context = Context {
        partners,
        canonical: s.schema(),
        helper_services: vec![HelperService {
            name: "csv2canonical".into(),
            from_format: "csv-v2".into(),
            to_format: "canonical".into(),
            affine: None,
        }],
        synonyms: SynonymTable {
            labels: BTreeMap::from([("lorry".into(), "truck".into())]),
            fields: BTreeMap::from([("easting".into(), "x0".into())]),
        },
        region_table: None,
    };
    let policies = ok(generate_policies(&guidance, &context))?;
    Ok(CurationEnv {
        context,
        policies,
        guidance,
        truth: Some(s.ground_truth()),
        task: AnalysisTask {
            arch: ModelArch::linear(2, OutputSpec::Classes(3)),
            train_config: TrainConfig {
                epochs: 30,
                ..Default::default()
            },
        },
        epsilon: DEFAULT_EPSILON,
    })
}

fn descriptor(id: &str, format: &str, labels: &[&str], fields: &[&str], trust: f64) -> PartnerDescriptor {
    PartnerDescriptor {
        id: id.into(),
        declared_format: format.into(),
        declared_labels: labels.iter().map(|s| s.to_string()).collect(),
        declared_fields: fields.iter().map(|s| s.to_string()).collect(),
        trustworthiness: trust,
    }
}

fn policy_round_trip() -> Outcome {
    let corpus: Vec<&str> = TEMPLATES.iter().chain(&MORE_POLICIES).copied().collect();
    ensure(corpus.len() >= 20, || format!("corpus has {} policies", corpus.len()))?;
    for text in &corpus {
        let p = parse_policy(text).map_err(|e| format!("`{text}`: {e}"))?;
        let canonical = serialize_policy(&p);
        let back = ok(parse_policy(&canonical))?;
        ensure(back == p, || format!("parse(serialize) changed `{text}`"))?;
        ensure(serialize_policy(&back) == canonical, || format!("serialize not stable for `{text}`"))?;
    }

    let sites = ok(synth_classification(&class_spec()))?;
    let foreign = lexicon_perturb(
        &sites[0],
        &BTreeMap::from([("truck".into(), "lorry".into())]),
        &BTreeMap::from([("x0".into(), "easting".into())]),
    );
    let env = curation_env(
        vec![descriptor("UK", "csv-v2", &["car", "lorry", "van"], &["easting", "x1"], 0.9)],
        GuidancePackage::default(),
    )?;
    let relabels = env
        .policies
        .policies
        .iter()
        .filter(|p| matches!(p.action, PolicyAction::Relabel { .. }))
        .count();
    ensure(relabels == 1, || format!("{relabels} relabel policies generated"))?;
    let canonical = env.context.canonical.clone();
    let mut curator = Curator::new(env);
    let r = ok(curator.offer(&ok(DataOffer::new("UK", "csv-v2", foreign, 0.0))?))?;
    let t = r.transformed.ok_or("no transformed data")?;
    ensure(t.schema == canonical, || format!("schema {:?}", t.schema))?;
    ensure(t.labels == sites[0].labels && t.features == sites[0].features, || {
        "relabelled rows differ from the original site".into()
    })?;
    ensure(r.accepted, || format!("lexicon offer rejected: {:?}", r.report.rejection_reason))?;
    Ok(format!("{} policies round-trip, lexicon offer reaches canonical schema", corpus.len()))
}

fn brute_force_duplicates(current: &Dataset, incoming: &Dataset, eps: f64) -> usize {
    incoming
        .features
        .iter()
        .zip(&incoming.labels)
        .filter(|(row, &l)| {
            current
                .features
                .iter()
                .zip(&current.labels)
                .any(|(c, &cl)| cl == l && c.iter().zip(row.iter()).all(|(a, b)| (a - b).abs() <= eps))
        })
        .count()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<f64>, f64)> {
    (0..n)
        .map(|_| {
            (
                vec![f64::from(rng.random_range(0..12u8)), f64::from(rng.random_range(0..12u8))],
                f64::from(rng.random_range(0..2u8)),
            )
        })
        .collect()
}

fn curator_gating() -> Outcome {
    let site = ok(synth_classification(&class_spec()))?.remove(0);
    let guidance = GuidancePackage {
        qoi_threshold: QOI_THRESHOLD,
        ..Default::default()
    };
    let env = curation_env(vec![descriptor("US", "canonical", &[], &[], 0.9)], guidance)?;

    let mut flipped = site.clone();
    for i in (0..flipped.len()).step_by(2) {
        flipped.labels[i] = (flipped.labels[i] + 1.0) % 3.0;
    }
    let r = ok(Curator::new(env.clone()).offer(&ok(DataOffer::new("US", "canonical", flipped, 0.5))?))?;
    let qoi = r.report.qoi.ok_or("no qoi")?;
    ensure(!r.accepted && r.report.rejection_reason == Some(RejectionReason::QoiBelowThreshold), || {
        format!("flipped offer: accepted={} {:?}", r.accepted, r.report.rejection_reason)
    })?;

    let mut curator = Curator::new(env);
    let offer = ok(DataOffer::new("US", "canonical", site, 0.0))?;
    ensure(ok(curator.offer(&offer))?.accepted, || "clean offer rejected".into())?;
    let again = ok(curator.offer(&offer))?;
    ensure(
        !again.accepted
            && again.report.voi == 0.0
            && again.report.dedup.duplicate_rows == again.report.dedup.incoming_rows,
        || format!("duplicate offer: {:?}", again.report),
    )?;

    let schema = Schema {
        format: "canonical".into(),
        fields: vec!["a".into(), "b".into()],
        labels: LabelSpec::Classes(vec!["p".into(), "q".into()]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..4 {
        let build = |rows: Vec<(Vec<f64>, f64)>, owner: &str| {
            let (xs, ys): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            Dataset::from_rows(schema.clone(), xs, ys, owner).map_err(|e| e.to_string())
        };
        let current = build(random_rows(&mut rng, 500), "c")?;
        let incoming = build(random_rows(&mut rng, 500), "i")?;
        let report = ok(dedup(&current, &incoming, DEFAULT_EPSILON))?;
        let oracle = brute_force_duplicates(&current, &incoming, DEFAULT_EPSILON);
        ensure(report.duplicate_rows == oracle, || format!("dedup {} vs oracle {oracle}", report.duplicate_rows))?;
        ensure(report.union_size_after == 500 + 500 - oracle, || "union size".into())?;
    }

    let sites = ok(synth_classification(&class_spec()))?;
    let env = curation_env(
        vec![
            descriptor("1", "canonical", &[], &[], 0.9),
            descriptor("2", "canonical", &[], &[], 0.9),
        ],
        GuidancePackage::default(),
    )?;
    let mut curator = Curator::new(env);
    let a = ok(DataOffer::new("1", "canonical", sites[0].clone(), 0.1))?;
    let b = ok(DataOffer::new("2", "canonical", sites[1].clone(), 0.05))?;
    ok(curator.offer(&a))?;
    let r = ok(curator.offer(&b))?;
    let expected = ok(effective_union(
        &[a.declared_stats.clone(), b.declared_stats.clone()],
        r.report.dedup.union_size_after as u64,
        "2",
    ))?;
    ensure(r.report.union.as_ref() == Some(&expected), || {
        format!("curator {:?} vs bounds {expected:?}", r.report.union)
    })?;
    Ok(format!(
        "flipped offer qoi {:.3} rejected, duplicate voi 0, 4 x 500-row dedup match oracle, union k={} nu_agg={}",
        qoi.score, expected.k, expected.nu_agg
    ))
}

fn fig4_boxes() -> Vec<Region> {
    [
        ("1", [(0.0, 4.0), (0.0, 4.0)]),
        ("2", [(2.0, 6.0), (0.0, 4.0)]),
        ("3", [(2.5, 3.5), (-2.0, 2.0)]),
    ]
    .into_iter()
    .map(|(owner, b)| Region {
        bounds: b.to_vec(),
        owner: owner.into(),
    })
    .collect()
}

fn block(owner: &str, [(x0, x1), (y0, y1)]: [(f64, f64); 2]) -> Result<Dataset, String> {
    let mut xs = Vec::new();
    for i in 0..=6 {
        for j in 0..=6 {
            xs.push(vec![x0 + (x1 - x0) * i as f64 / 6.0, y0 + (y1 - y0) * j as f64 / 6.0]);
        }
    }
    let ys = vec![0.0; xs.len()];
    let schema = Schema {
        format: "canonical".into(),
        fields: vec!["a".into(), "b".into()],
        labels: LabelSpec::Range { lo: -1.0, hi: 1.0 },
    };
    ok(Dataset::from_rows(schema, xs, ys, owner))
}

fn region_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for trial in 0..4 {
        let regions: Vec<Region> = if trial == 0 {
            fig4_boxes()
        } else {
            (0..rng.random_range(2..6))
                .map(|i| {
                    let bounds = (0..2)
                        .map(|_| {
                            let lo: f64 = rng.random_range(0.0..6.0);
                            (lo, lo + rng.random_range(0.5..4.0))
                        })
                        .collect();
                    Region {
                        bounds,
                        owner: i.to_string(),
                    }
                })
                .collect()
        };
        let cells = ok(partition_regions(&regions))?;
        for _ in 0..MC_POINTS {
            let z = [rng.random_range(-3.0..11.0), rng.random_range(-3.0..11.0)];
            let oracle: BTreeSet<String> = regions.iter().filter(|r| r.contains(&z)).map(|r| r.owner.clone()).collect();
            let hits: Vec<_> = cells.iter().filter(|c| c.contains(&z)).collect();
            if oracle.is_empty() {
                ensure(hits.is_empty(), || format!("{z:?} outside every box but inside a cell"))?;
            } else {
                ensure(hits.len() == 1 && hits[0].applicable == oracle, || {
                    format!("{z:?}: oracle {oracle:?}, {} cells hit", hits.len())
                })?;
            }
        }
    }

    let cells = ok(partition_regions(&fig4_boxes()))?;
    let classes = cell_classes(&cells);
    let table: BTreeMap<String, String> = [("1", "A"), ("2", "B"), ("3", "C"), ("1+2", "D"), ("1+2+3", "E")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    ensure(classes == table, || format!("classes {classes:?}"))?;

    let mut data = BTreeMap::new();
    let mut models = BTreeMap::new();
    for r in fig4_boxes() {
        data.insert(r.owner.clone(), block(&r.owner, [r.bounds[0], r.bounds[1]])?);
        models.insert(r.owner.clone(), ok(Model::zeros(ModelArch::linear(2, OutputSpec::Regression)))?);
    }
    let cfg = EnsembleConfig {
        fusion: CellFusion::Naive,
        ..Default::default()
    };
    let e = ok(build_ensemble(&models, &data, &cfg))?;
    ensure(e.members.len() == 5, || format!("{} members: {:?}", e.members.len(), e.members.keys()))?;
    Ok(format!("4 x {MC_POINTS} points match box cover, classes A-E exact, 5 ensemble members"))
}

fn jsonl(t: &SessionTranscript) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    ok(t.write_jsonl(&mut buf))?;
    Ok(buf)
}

fn protocol_liveness() -> Outcome {
    let (sites, schema) = curve_sites(3, 30);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 20,
        optimizer: Optimizer::FullBatchGd,
        ..Default::default()
    };
    let mut session_cfg = session_config(&["1", "2", "3"], schema, ModelArch::linear(1, OutputSpec::Regression), cfg);
    session_cfg.mode = SessionMode::Asynchronous;
    session_cfg.flavor = FusionFlavor::RoundRobin;
    let mut spec = session(session_cfg, sites.clone());
    spec.validation = Some(sites[1].clone());

    let jittered = Transport::Simulated(SimulatedTransport {
        jitter: 5,
        seed: 17,
        ..Default::default()
    });
    let a = ok(run_session(&spec, &jittered))?;
    let b = ok(run_session(&spec, &jittered))?;
    ensure(jsonl(&a)? == jsonl(&b)?, || "transcripts differ between identical runs".into())?;

    let base = SimulatedTransport::default();
    let slow = SimulatedTransport {
        node_latency: BTreeMap::from([("3".to_string(), base.base_latency * SLOW_FACTOR)]),
        ..base
    };
    let t = ok(run_session(&spec, &Transport::Simulated(slow)))?;
    let reports = t.count(MessageKind::ValidationReport);
    ensure(reports == 1, || format!("{reports} validation reports"))?;
    Ok(format!(
        "{} identical transcript lines, slow-partner session done in {} rounds with 1 ValidationReport",
        a.entries.len(),
        t.outcome.rounds_used
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("reference curve MSE ordering", mse_ordering),
        ("bounds suite", bounds_suite),
        ("degenerate federation equivalence", degenerate_federation),
        ("round-robin convergence", round_robin_convergence),
        ("policy round-trip and relabelling", policy_round_trip),
        ("curator gating", curator_gating),
        ("region partition", region_partition),
        ("protocol determinism and liveness", protocol_liveness),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
