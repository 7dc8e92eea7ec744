//! End-to-end acceptance checks. Runs without the libtest harness so the
//! report is never captured: one PASS/FAIL line per criterion, and a nonzero
//! exit if any criterion failed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use landval_core::data::{load_parcels, Split, SplitAssignment};
use landval_core::ensemble::{combine, EnsembleSpec, MEMBERS};
use landval_core::metrics::{auc, roc_curve, theta_grid};
use landval_core::nn::{gradient_check, Batch, GradCheck, NetConfig, SimilarityNet, TileBatch};
use landval_core::pipeline::{ScoreTable, ENSEMBLE_FILE, PARCELS_FILE, SCORES_FILE, SPLIT_FILE};
use landval_core::valuation::Candidates;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AUC_TOL: f64 = 1e-9;
const AUC_INSTANCES: usize = 1000;
const AUC_BUDGET: Duration = Duration::from_secs(10);
const GRAD_TOL: f64 = 1e-4;
const GRAD_SAMPLE: usize = 64;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const MIN_IMAGE_UPLIFT: f64 = 0.02;
const ENSEMBLE_TEST_SLACK: f64 = 0.01;
const THETA_POINTS: usize = 101;
const CONVEX_TOL: f64 = 1e-9;
const MIN_COVERAGE: f64 = 50.0;
const SPLIT_SLACK: f64 = 1.0;
const PIPELINE_BUDGET: Duration = Duration::from_secs(600);

struct Report {
    lines: Vec<String>,
    failed: usize,
}

impl Report {
    fn record(&mut self, n: usize, name: &str, ok: bool, detail: String) {
        let line = format!(
            "[{}] {n:>2}. {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        println!("{line}");
        self.lines.push(line);
        self.failed += usize::from(!ok);
    }
}

/// Quadratic pairwise count, independent of the rank-based implementation.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            den += 1.0;
            num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    num / den
}

fn auc_oracle(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut worst = 0.0f64;
    let mut tied_instances = 0;
    for _ in 0..AUC_INSTANCES {
        let n = rng.random_range(3..=200);
        let levels = rng.random_range(2..=n.max(3));
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        tied_instances += usize::from(sorted.len() < n);
        let truth = pairwise_auc(&scores, &labels);
        let ranked = auc(&scores, &labels).unwrap();
        let trapezoid = roc_curve(&scores, &labels).unwrap().auc;
        worst = worst
            .max((ranked - truth).abs())
            .max((trapezoid - truth).abs());
    }
    let t = start.elapsed();
    report.record(
        1,
        "AUC oracle",
        worst <= AUC_TOL && t < AUC_BUDGET,
        format!("max |diff| {worst:.2e} over {AUC_INSTANCES} instances ({tied_instances} with ties) in {t:.2?}"),
    );
}

fn gradcheck(report: &mut Report) {
    let start = Instant::now();
    let cfg = NetConfig {
        image_side: 16,
        widths: vec![4, 6, 8, 8],
        hidden: vec![12, 8],
        dropout: 0.0,
        frozen_blocks: 0,
        ..NetConfig::default()
    };
    let net = SimilarityNet::new(cfg, &[3, 5], 4, 101).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let n = 6;
    let len = net.tile_len();
    let cats = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        (0..n * net.n_fields())
            .map(|i| rng.random_range(0..=net.vocab_sizes[i % net.n_fields()] as u32))
            .collect()
    };
    let cat_primary = cats(&mut rng);
    let cat_neighbor = cats(&mut rng);
    let batch = Batch {
        n,
        tiles: TileBatch::Pixels {
            primary: (0..n * len).map(|_| rng.random()).collect(),
            neighbor: (0..n * len).map(|_| rng.random()).collect(),
        },
        cat_primary,
        cat_neighbor,
        cont: (0..n * net.n_cont)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
        labels: (0..n).map(|i| (i % 2) as f64).collect(),
    };
    let result = gradient_check(&net, &batch, GRAD_SAMPLE, &[], 103).unwrap();
    let t = start.elapsed();
    match result {
        GradCheck::Checked {
            max_rel_error,
            n_checked,
            n_kinks,
            per_kind,
        } => {
            let kinds: Vec<String> = per_kind.keys().map(|k| format!("{k:?}")).collect();
            report.record(
                2,
                "gradient check",
                max_rel_error < GRAD_TOL && n_checked + n_kinks == GRAD_SAMPLE && t < GRAD_BUDGET,
                format!(
                    "max rel error {max_rel_error:.2e} over {n_checked} params ({n_kinks} kinks skipped), kinds {} in {t:.2?}",
                    kinds.join("/")
                ),
            );
        }
        GradCheck::NonDeterministic => {
            report.record(2, "gradient check", false, "loss not deterministic".into())
        }
    }
}

struct PipelineRun {
    dir: PathBuf,
    elapsed: Duration,
}

fn run_pipeline(out_dir: &Path) -> PipelineRun {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_landval"))
        .arg("all")
        .arg("--set")
        .arg(format!("out_dir={:?}", out_dir.display().to_string()))
        .output()
        .expect("landval runs");
    let elapsed = start.elapsed();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = std::fs::read_dir(out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .expect("run directory");
    PipelineRun { dir, elapsed }
}

/// Validation and test AUC.
type AucPair = (Option<f64>, Option<f64>);
type AucTable = BTreeMap<String, AucPair>;

fn read_model_auc(run: &Path) -> AucTable {
    let mut rdr = csv::Reader::from_path(run.join("reports/model_auc.csv")).unwrap();
    let num = |s: &str| (!s.is_empty()).then(|| s.parse::<f64>().unwrap());
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), (num(&r[1]), num(&r[2])))
        })
        .collect()
}

fn image_uplift(report: &mut Report, aucs: &AucTable) {
    let with = aucs["extra_trees"].1.unwrap();
    let without = aucs["extra_trees_no_image"].1.unwrap();
    report.record(
        3,
        "image-feature uplift",
        with - without >= MIN_IMAGE_UPLIFT,
        format!(
            "extra trees test AUC {with:.4} vs {without:.4} without image features (+{:.4})",
            with - without
        ),
    );
}

fn ensemble_dominance(report: &mut Report, aucs: &AucTable) {
    let (ens_val, ens_test) = aucs["ensemble"];
    let (ens_val, ens_test) = (ens_val.unwrap(), ens_test.unwrap());
    let best = |pick: fn(&AucPair) -> Option<f64>| {
        MEMBERS
            .iter()
            .map(|m| (pick(&aucs[*m]).unwrap(), *m))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
    };
    let (best_val, val_name) = best(|a| a.0);
    let (best_test, test_name) = best(|a| a.1);
    report.record(
        4,
        "ensemble dominance",
        ens_val >= best_val && ens_test >= best_test - ENSEMBLE_TEST_SLACK,
        format!(
            "val {ens_val:.4} vs best member {val_name} {best_val:.4}; test {ens_test:.4} vs {test_name} {best_test:.4}"
        ),
    );
}

fn coverage_monotone(report: &mut Report, run: &Path) {
    let mut bad = Vec::new();
    let mut n_curves = 0;
    for entry in std::fs::read_dir(run.join("reports/curves")).unwrap() {
        let path = entry.unwrap().path();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let cov: Vec<f64> = rdr
            .records()
            .map(|r| r.unwrap()[1].parse().unwrap())
            .collect();
        n_curves += 1;
        if cov.len() != THETA_POINTS || cov.windows(2).any(|w| w[1] > w[0]) {
            bad.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    report.record(
        5,
        "coverage monotonicity",
        bad.is_empty() && n_curves > 0,
        format!("{n_curves} curves of {THETA_POINTS} points checked; violations: {bad:?}"),
    );
}

fn ensemble_scores(run: &Path) -> (ScoreTable, Vec<f64>) {
    let table = ScoreTable::read(std::fs::File::open(run.join(SCORES_FILE)).unwrap()).unwrap();
    let spec = EnsembleSpec::load(&run.join(ENSEMBLE_FILE)).unwrap();
    let rows: Vec<usize> = (0..table.len()).collect();
    let ens = table
        .members(&rows)
        .unwrap()
        .iter()
        .map(|s| combine(&spec, s).unwrap())
        .collect();
    (table, ens)
}

fn read_split(run: &Path) -> SplitAssignment {
    SplitAssignment::read(std::fs::File::open(run.join(SPLIT_FILE)).unwrap()).unwrap()
}

fn convexity(report: &mut Report, run: &Path) {
    let ds = load_parcels(run.join(PARCELS_FILE)).unwrap();
    let split = read_split(run);
    let (table, ens) = ensemble_scores(run);
    let pairs = table.scored_pairs(&ens);
    let cands = Candidates::new(&ds, &split, &pairs, &[Split::Val, Split::Test]).unwrap();
    let (mut covered, mut violations) = (0usize, 0usize);
    for theta in theta_grid(THETA_POINTS) {
        for r in cands.value(theta).unwrap() {
            let Some(pred) = r.predicted_price else {
                continue;
            };
            covered += 1;
            let lo = r
                .contributors
                .iter()
                .map(|c| c.price)
                .fold(f64::INFINITY, f64::min);
            let hi = r
                .contributors
                .iter()
                .map(|c| c.price)
                .fold(f64::NEG_INFINITY, f64::max);
            if !(pred >= lo * (1.0 - CONVEX_TOL) && pred <= hi * (1.0 + CONVEX_TOL)) {
                violations += 1;
            }
        }
    }
    report.record(
        6,
        "valuation convexity",
        violations == 0 && covered > 0,
        format!("{covered} covered predictions over {THETA_POINTS} thresholds, {violations} outside contributor range"),
    );
}

/// Recomputes the regression MAPE from the raw prediction file.
fn regression_mape(run: &Path) -> f64 {
    let mut rdr = csv::Reader::from_path(run.join("gbt_predictions.csv")).unwrap();
    let errs: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[1] == "test")
        .map(|r| {
            let actual: f64 = r[2].parse().unwrap();
            let pred: f64 = r[3].parse().unwrap();
            (pred - actual).abs() / actual
        })
        .collect();
    100.0 * errs.iter().sum::<f64>() / errs.len() as f64
}

/// MAPE at the highest threshold whose coverage still reaches the floor, read from the curve file.
fn pipeline_mape(run: &Path) -> Option<f64> {
    let mut rdr = csv::Reader::from_path(run.join("reports/curves/ensemble.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let last = rows
        .iter()
        .rfind(|r| r[1].parse::<f64>().unwrap() >= MIN_COVERAGE)?;
    last[2].parse().ok()
}

fn mape_vs_regression(report: &mut Report, run: &Path) {
    let gbt = regression_mape(run);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("reports/summary.json")).unwrap())
            .unwrap();
    let reported_gbt = summary["regression_mape"].as_f64().unwrap();
    let reported = summary["mape_at_min_coverage"].as_f64();
    match pipeline_mape(run) {
        Some(m) => report.record(
            7,
            "pipeline vs regression MAPE",
            m < gbt && (reported_gbt - gbt).abs() < 1e-9 && reported == Some(m),
            format!(
                "similarity MAPE {m:.2}% at >= {MIN_COVERAGE}% coverage vs regression {gbt:.2}%"
            ),
        ),
        None => report.record(
            7,
            "pipeline vs regression MAPE",
            false,
            format!("no threshold reaches {MIN_COVERAGE}% coverage"),
        ),
    }
}

fn split_contract(report: &mut Report, run: &Path) {
    let ds = load_parcels(run.join(PARCELS_FILE)).unwrap();
    let split = read_split(run);
    let mut problems = String::new();
    for (province, members) in ds.by_province() {
        let n = members.len() as f64;
        let count = |s: Split| {
            members
                .iter()
                .filter(|p| split.get(&p.id) == Some(s))
                .count() as f64
        };
        for (s, share) in [(Split::Train, 0.8), (Split::Val, 0.1), (Split::Test, 0.1)] {
            if (count(s) - share * n).abs() > SPLIT_SLACK {
                let _ = write!(problems, "{province} {s}: {} of {n}; ", count(s));
            }
        }
        let mut dates: Vec<_> = members.iter().map(|p| p.appraisal_date).collect();
        dates.sort();
        // Nearest-rank percentile.
        let p80 = dates[(0.8 * n).ceil() as usize - 1];
        let early = members
            .iter()
            .filter(|p| split.get(&p.id) != Some(Split::Train) && p.appraisal_date < p80)
            .count();
        if early > 0 {
            let _ = write!(
                problems,
                "{province}: {early} held-out parcels before {p80}; "
            );
        }
    }
    report.record(
        8,
        "split contract",
        problems.is_empty() && split.len() == ds.len(),
        format!(
            "{} parcels in {} provinces, 80/10/10 within {SPLIT_SLACK} parcel and held-out dates at or after the 80th percentile; problems: [{}]",
            ds.len(),
            ds.by_province().len(),
            problems.trim_end_matches("; ")
        ),
    );
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(report: &mut Report, a: &Path, b: &Path) {
    let files = csv_files(a);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let same_set = files == csv_files(b);
    report.record(
        9,
        "determinism",
        differing.is_empty() && same_set && !files.is_empty(),
        format!(
            "{} CSV files compared byte for byte; differing: {differing:?}",
            files.len()
        ),
    );
}

fn main() {
    let mut report = Report {
        lines: Vec::new(),
        failed: 0,
    };
    auc_oracle(&mut report);
    gradcheck(&mut report);

    let tmp = tempfile::tempdir().unwrap();
    let first = run_pipeline(&tmp.path().join("a"));
    let second = run_pipeline(&tmp.path().join("b"));
    let aucs = read_model_auc(&first.dir);
    image_uplift(&mut report, &aucs);
    ensemble_dominance(&mut report, &aucs);
    coverage_monotone(&mut report, &first.dir);
    convexity(&mut report, &first.dir);
    mape_vs_regression(&mut report, &first.dir);
    split_contract(&mut report, &first.dir);
    determinism(&mut report, &first.dir, &second.dir);
    report.record(
        10,
        "desk-scale budget",
        first.elapsed < PIPELINE_BUDGET,
        format!(
            "full pipeline in {:.1?} and {:.1?} on {} thread(s)",
            first.elapsed,
            second.elapsed,
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    );

    println!(
        "{} of {} criteria passed",
        report.lines.len() - report.failed,
        report.lines.len()
    );
    if report.failed > 0 {
        eprintln!(
            "failed criteria:\n{}",
            report
                .lines
                .iter()
                .filter(|l| l.starts_with("[FAIL]"))
                .cloned()
                .collect::<Vec<_>>()
                .join("\n")
        );
        std::process::exit(1);
    }
}
