//! Acceptance criteria. Each test prints one PASS/FAIL line to standard
//! output (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rationale::classifier::{LogisticProblem, Provenance};
use rationale::eval::{
    bucket_of, evaluate_documents, remove_rationale_tokens, score_reduction_report,
    ScoreReductionReport, BUCKETS,
};
use rationale::features::information_gain;
use rationale::rationale::{
    select_responsive_snippets, train_document_model_tokenized, train_iterative_method_from,
    train_snippet_method_from, IterConfig, MethodConfig, SelectionConfig, TokenizedCorpus,
};
use rationale::synth::{benchmark_split, generate, rationale_recall, GenConfig};
use rationale::tokenize::{tokenize_doc, window_snippets, Snippet, TokenSeq};
use rationale::ScoredSnippet;

fn verdict(criterion: &str, pass: bool, detail: String) {
    let line = format!(
        "acceptance {criterion}: {} - {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let out = std::io::stdout();
    let mut lock = out.lock();
    let _ = lock.write_all(line.as_bytes());
    let _ = lock.flush();
}

#[test]
fn criterion_01_window_invariants() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    for case in 0..1_000 {
        let len = rng.random_range(1..=2_000);
        let size = 2 * rng.random_range(1..=150);
        let seq = TokenSeq::new("d", vec![String::new(); len]);
        let windows = window_snippets(&seq, size).unwrap();
        let mut covered = vec![false; len];
        for w in &windows {
            covered[w.start..w.end()].iter_mut().for_each(|c| *c = true);
        }
        let ok_cover = covered.iter().all(|&c| c);
        let ok_order = windows.windows(2).all(|p| p[0].start < p[1].start);
        let ok_len = windows
            .iter()
            .all(|w| w.length == size.min(len) && w.end() <= len);
        // every window but an end-anchored last one sits on the stride
        let aligned = windows.len()
            - usize::from(
                windows.len() > 1 && !windows.last().unwrap().start.is_multiple_of(size / 2),
            );
        let ok_stride = windows[..aligned]
            .iter()
            .enumerate()
            .all(|(i, w)| w.start == i * size / 2)
            && windows[..aligned]
                .windows(2)
                .all(|p| p[0].end() - p[1].start == size / 2);
        if !(ok_cover && ok_order && ok_len && ok_stride) {
            failures.push((case, len, size));
        }
    }
    let elapsed = clock.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(5);
    verdict(
        "1",
        pass,
        format!(
            "1000 (L, N) cases, {} violations, {elapsed:.2?}",
            failures.len()
        ),
    );
    assert!(pass, "{failures:?}");
}

fn entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

#[test]
fn criterion_02_information_gain_oracle() {
    let clock = Instant::now();
    let mut tables = 0;
    let mut worst: f64 = 0.0;
    for tp in 1..20u64 {
        for tn in 1..=(20 - tp) {
            for pp in 0..=tp {
                for pn in 0..=tn {
                    let present = pp + pn;
                    let absent = tp + tn - present;
                    let conditional = present as f64 / (tp + tn) as f64 * entropy(&[pp, pn])
                        + absent as f64 / (tp + tn) as f64 * entropy(&[tp - pp, tn - pn]);
                    let oracle = entropy(&[tp, tn]) - conditional;
                    let got = information_gain(pp, pn, tp, tn).unwrap();
                    worst = worst.max((got - oracle).abs());
                    tables += 1;
                }
            }
        }
    }
    let elapsed = clock.elapsed();
    let pass = worst < 1e-10 && elapsed < Duration::from_secs(5);
    verdict(
        "2",
        pass,
        format!("{tables} tables, max |error| {worst:e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_gradient_check() {
    let rows = vec![
        vec![(0, 1.0), (1, 0.5)],
        vec![(0, 0.3)],
        vec![(1, 1.2)],
        vec![(0, 0.6), (1, 0.9)],
    ];
    let problem = LogisticProblem::new(rows, vec![1.0, 1.0, 0.0, 0.0], 2, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let w: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b = rng.random_range(-2.0..2.0);
        let (gw, gb) = problem.gradient(&w, b);
        let mut numeric = Vec::new();
        for j in 0..2 {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            numeric.push((problem.loss(&up, b) - problem.loss(&down, b)) / (2.0 * h));
        }
        numeric.push((problem.loss(&w, b + h) - problem.loss(&w, b - h)) / (2.0 * h));
        for (a, n) in [gw[0], gw[1], gb].iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    let pass = worst < 1e-4;
    verdict(
        "3",
        pass,
        format!("10 random points, max relative error {worst:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_selection_conformance() {
    let clock = Instant::now();
    let cfg = SelectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut problems = Vec::new();
    for case in 0..200 {
        let docs = rng.random_range(1..40);
        let mut scored = Vec::new();
        for d in 0..docs {
            for k in 0..rng.random_range(1..30) {
                // coarse scores so ties are common
                let score = (rng.random_range(1..100) as f64) / 100.0;
                scored.push(ScoredSnippet {
                    snippet: Snippet {
                        doc_id: format!("doc{d:02}"),
                        start: k * 25,
                        length: 50,
                    },
                    score,
                    scoring_model: Provenance::DocumentLevel,
                });
            }
        }
        let cap = rng.random_range(1..60);
        let cfg = SelectionConfig {
            max_num: cap,
            ..cfg.clone()
        };
        let sel = select_responsive_snippets(&scored, &cfg);
        let phase_one = &sel.snippets[..sel.phase_one];
        let mut seen = std::collections::BTreeSet::new();
        let one_per_doc = phase_one
            .iter()
            .all(|s| seen.insert(s.snippet.doc_id.clone()));
        let maxima = phase_one.iter().all(|s| {
            scored
                .iter()
                .filter(|o| o.snippet.doc_id == s.snippet.doc_id)
                .all(|o| o.score <= s.score)
        });
        let base = sel.snippets.iter().all(|s| s.score >= 0.5);
        let phase_two = sel.snippets[sel.phase_one..]
            .iter()
            .all(|s| s.score >= cfg.min_score_th);
        let mut shuffled = scored.clone();
        shuffled.shuffle(&mut rng);
        let permuted = select_responsive_snippets(&shuffled, &cfg) == sel;
        if !(one_per_doc && maxima && base && phase_two && permuted) {
            problems.push(case);
        }
    }
    let elapsed = clock.elapsed();
    let pass = problems.is_empty() && elapsed < Duration::from_secs(5);
    verdict(
        "4",
        pass,
        format!(
            "200 collections, {} violations, {elapsed:.2?}",
            problems.len()
        ),
    );
    assert!(pass, "{problems:?}");
}

#[test]
fn criterion_05_iterative_schedule() {
    let schedule = IterConfig::default().schedule();
    let schedule_ok = schedule == [1000, 500, 250, 125, 62, 50];

    let (corpus, _) = generate(&GenConfig {
        n_responsive: 40,
        n_nonresponsive: 120,
        seed: 5,
        ..GenConfig::default()
    })
    .unwrap();
    let data = TokenizedCorpus::new(&corpus);
    let cfg = MethodConfig::default();
    let doc = train_document_model_tokenized(&data, &cfg.train).unwrap();
    let snippet = train_snippet_method_from(&doc, &data, 50, &cfg).unwrap();
    let collapsed = IterConfig {
        start_size: 50,
        min_size: 50,
    };
    let iterative = train_iterative_method_from(&doc, &data, &collapsed, &cfg).unwrap();
    let same = snippet.model.space == iterative.model.space
        && snippet.model.weights == iterative.model.weights
        && snippet.model.bias == iterative.model.bias
        && snippet.rounds == iterative.rounds;
    let pass = schedule_ok && same;
    verdict(
        "5",
        pass,
        format!("schedule {schedule:?}, start = min = 50 identical to snippet method: {same}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_evaluation_mechanics() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut union_errors = 0;
    for _ in 0..500 {
        let len = rng.random_range(1..500);
        let seq = TokenSeq::new("d", (0..len).map(|i| format!("t{i}")).collect());
        let snippets: Vec<Snippet> = (0..rng.random_range(0..8))
            .map(|_| {
                let start = rng.random_range(0..len);
                Snippet {
                    doc_id: "d".into(),
                    start,
                    length: rng.random_range(1..=len - start),
                }
            })
            .collect();
        let mut keep = vec![true; len];
        for s in &snippets {
            keep[s.start..s.end()].iter_mut().for_each(|k| *k = false);
        }
        let expected: Vec<String> = (0..len)
            .filter(|&i| keep[i])
            .map(|i| format!("t{i}"))
            .collect();
        if remove_rationale_tokens(&seq, &snippets).unwrap().tokens != expected {
            union_errors += 1;
        }
    }

    let (split, _) = benchmark_split(
        &GenConfig {
            n_responsive: 60,
            n_nonresponsive: 180,
            seed: 6,
            ..GenConfig::default()
        },
        (60, 120),
    )
    .unwrap();
    let data = TokenizedCorpus::new(&split.train);
    let cfg = MethodConfig::default();
    let doc = train_document_model_tokenized(&data, &cfg.train).unwrap();
    let mut exact = true;
    for d in split.test.documents() {
        let seq = tokenize_doc(d.id.clone(), &d.text);
        let untouched = remove_rationale_tokens(&seq, &[]).unwrap();
        exact &= doc.score_tokens(&untouched.tokens).to_bits()
            == doc.score_tokens(&seq.tokens).to_bits();
    }
    let snippet = train_snippet_method_from(&doc, &data, 50, &cfg).unwrap();
    let mut partition = true;
    let mut covered = 0;
    for model in [&doc, &snippet.model] {
        let outcomes = evaluate_documents(&doc, model, &split.test, 50).unwrap();
        let report = ScoreReductionReport::from_outcomes("m", 50, &outcomes);
        for o in &outcomes {
            let m = o.max_snippet_score.unwrap();
            let containing = BUCKETS.iter().filter(|b| b.contains(m)).count();
            partition &= match o.bucket {
                Some(b) => containing == 1 && BUCKETS[b].contains(m) && bucket_of(m) == Some(b),
                None => containing == 0 && m < 0.5,
            };
        }
        let in_rows: usize = report.rows.iter().map(|r| r.n_docs).sum();
        partition &= in_rows == report.total.n_docs
            && report.total.n_docs + report.n_uncovered == report.n_eligible;
        covered += report.total.n_docs;
    }
    let pass = union_errors == 0 && exact && partition && covered > 0;
    verdict(
        "6",
        pass,
        format!("500 removal cases, {union_errors} mismatches; zero removal exact: {exact}; bucket partition holds: {partition}"),
    );
    assert!(pass);
}

/// Reports of the three methods on the default benchmark corpus, computed
/// once on a single worker thread.
struct Benchmark {
    reports: [ScoreReductionReport; 3],
    elapsed: Duration,
}

fn benchmark() -> &'static Benchmark {
    static CELL: OnceLock<Benchmark> = OnceLock::new();
    CELL.get_or_init(|| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        pool.install(|| {
            let clock = Instant::now();
            let (split, _) = benchmark_split(&GenConfig::default(), (600, 2_000)).unwrap();
            let data = TokenizedCorpus::new(&split.train);
            let cfg = MethodConfig::default();
            let doc = train_document_model_tokenized(&data, &cfg.train).unwrap();
            let snippet = train_snippet_method_from(&doc, &data, 50, &cfg).unwrap();
            let iterative =
                train_iterative_method_from(&doc, &data, &IterConfig::default(), &cfg).unwrap();
            let report =
                |name: &str, m| score_reduction_report(name, &doc, m, &split.test, 50).unwrap();
            let reports = [
                report("Document-Level Model", &doc),
                report("Snippet Model", &snippet.model),
                report("Iterative Snippet Model", &iterative.model),
            ];
            Benchmark {
                reports,
                elapsed: clock.elapsed(),
            }
        })
    })
}

#[test]
fn criterion_07_directional_reproduction() {
    let b = benchmark();
    let [base, snippet, iterative] = &b.reports;
    println!("{}", rationale::eval::render_comparison(&b.reports));
    let red = |r: &ScoreReductionReport| r.total.avg_reduction.unwrap_or(f64::NAN);
    let top = |r: &ScoreReductionReport| r.top_bucket().n_docs as f64;

    let a = red(snippet) >= red(base) + 0.10;
    verdict(
        "7a",
        a,
        format!(
            "Tot/Avg reduction snippet {:.3} vs document-level {:.3} (+0.10 required)",
            red(snippet),
            red(base)
        ),
    );
    let bb = top(snippet) >= 1.25 * top(base) && top(iterative) >= 1.25 * top(base);
    verdict(
        "7b",
        bb,
        format!(
            "[0.9, 1] docs snippet {} iterative {} vs document-level {} (x1.25 required)",
            top(snippet),
            top(iterative),
            top(base)
        ),
    );
    let c = red(snippet) >= red(iterative) - 0.05;
    verdict(
        "7c",
        c,
        format!(
            "reduction snippet {:.3} vs iterative {:.3} (-0.05 allowed)",
            red(snippet),
            red(iterative)
        ),
    );
    let fast = b.elapsed < Duration::from_secs(120);
    verdict(
        "7 runtime",
        fast,
        format!("{:.2?} single-threaded (< 120 s)", b.elapsed),
    );
    assert!(a && bb && c && fast, "directional criteria not met");
}

#[test]
fn criterion_08_rationale_recovery() {
    let mut recalls = Vec::new();
    for signal in [1.0, 0.7, 0.4] {
        let cfg = GenConfig {
            signal_strength: signal,
            ..GenConfig::default()
        };
        let (split, truth) = benchmark_split(&cfg, (200, 600)).unwrap();
        let data = TokenizedCorpus::new(&split.train);
        let method = MethodConfig::default();
        let doc = train_document_model_tokenized(&data, &method.train).unwrap();
        let model = train_snippet_method_from(&doc, &data, 50, &method)
            .unwrap()
            .model;
        let mut total = 0.0;
        let mut n = 0;
        for d in split.test.responsive() {
            let seq = tokenize_doc(d.id.clone(), &d.text);
            let mut ranked: Vec<ScoredSnippet> = window_snippets(&seq, 50)
                .unwrap()
                .into_iter()
                .map(|s| ScoredSnippet {
                    score: model.score_tokens(s.tokens(&seq).unwrap()),
                    snippet: s,
                    scoring_model: model.provenance,
                })
                .collect();
            ranked.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.snippet.start.cmp(&b.snippet.start))
            });
            total += rationale_recall(&d.id, &ranked, &truth, 2).unwrap();
            n += 1;
        }
        recalls.push(total / n as f64);
    }
    let strong = recalls[0] >= 0.8;
    let monotone = recalls.windows(2).all(|w| w[1] <= w[0]);
    let pass = strong && monotone;
    verdict(
        "8",
        pass,
        format!(
            "top-2 recall at signal 1.0/0.7/0.4 = {:.3}/{:.3}/{:.3}",
            recalls[0], recalls[1], recalls[2]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_token_removal() {
    let b = benchmark();
    let [base, snippet, iterative] = &b.reports;
    let removed = |r: &ScoreReductionReport| r.total.avg_tokens_removed.unwrap_or(f64::NAN);
    let pass = removed(snippet) > removed(base);
    verdict(
        "9",
        pass,
        format!(
            "avg tokens removed snippet {:.1} (iterative {:.1}) vs document-level {:.1}",
            removed(snippet),
            removed(iterative),
            removed(base)
        ),
    );
    assert!(pass);
}

fn cli(args: &[&str]) -> i32 {
    rationale::cli::execute(std::iter::once("rationale").chain(args.iter().copied()))
}

fn read_all(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names
        .iter()
        .map(|n| std::fs::read(dir.join(n)).unwrap())
        .collect()
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let s = |n: &str| d.join(n).to_string_lossy().into_owned();
    assert_eq!(
        cli(&[
            "gen",
            "--out",
            &s("corpus.jsonl"),
            "--n-responsive",
            "80",
            "--n-nonresponsive",
            "240",
            "--seed",
            "10",
        ]),
        0
    );
    assert_eq!(
        cli(&[
            "split",
            "--corpus",
            &s("corpus.jsonl"),
            "--train",
            &s("train.jsonl"),
            "--test",
            &s("test.jsonl"),
            "--seed",
            "10"
        ]),
        0
    );
    assert_eq!(
        cli(&[
            "pipeline",
            "--train",
            &s("train.jsonl"),
            "--test",
            &s("test.jsonl"),
            "--report-dir",
            &s("run"),
            "--seed",
            "10",
            "--threads",
            "1",
        ]),
        0
    );
    let files = [
        "doc_model.json",
        "snippet_model.json",
        "iterative_model.json",
        "report.txt",
        "report.csv",
        "report.json",
        "pr_curve.csv",
    ];
    let first = read_all(&d.join("run"), &files);
    let manifest = s("run/manifest.json");
    let mut results = Vec::new();
    for threads in ["4", "2"] {
        let status = cli(&["rerun", "--manifest", &manifest, "--threads", threads]);
        results.push((
            threads,
            status == 0 && read_all(&d.join("run"), &files) == first,
        ));
    }
    let pass = results.iter().all(|r| r.1);
    verdict(
        "10",
        pass,
        format!("pipeline at 1 thread replayed from its manifest at 4 and 2 threads, byte-identical: {results:?}"),
    );
    assert!(pass);
}
